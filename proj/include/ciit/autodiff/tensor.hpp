#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "ciit/errors.hpp"

namespace ciit::ad {

using Shape = std::vector<int>;

inline std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    return n;
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

struct TensorStorage {
    Shape shape;
    std::vector<float> data;
    std::vector<float> grad;  // empty until first accumulation
    std::optional<std::size_t> node;
    bool requires_grad = false;

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0f);
    }
};

/// Shared handle to a dense row-major float32 array. Copies alias the same
/// storage; use `clone()` for a detached deep copy.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape, float fill = 0.0f) : impl_(std::make_shared<TensorStorage>()) {
        for (int d : shape) {
            if (d <= 0) throw DimensionError("non-positive extent in shape " + shape_str(shape));
        }
        impl_->data.assign(shape_numel(shape), fill);
        impl_->shape = std::move(shape);
    }

    Tensor(Shape shape, std::vector<float> values) : impl_(std::make_shared<TensorStorage>()) {
        for (int d : shape) {
            if (d <= 0) throw DimensionError("non-positive extent in shape " + shape_str(shape));
        }
        if (shape_numel(shape) != values.size()) {
            throw DimensionError("shape " + shape_str(shape) + " does not match " + std::to_string(values.size()) +
                                 " values");
        }
        impl_->shape = std::move(shape);
        impl_->data = std::move(values);
    }

    static Tensor scalar(float v) { return Tensor(Shape{1}, std::vector<float>{v}); }

    static Tensor parameter(Shape shape, std::vector<float> values) {
        Tensor t(std::move(shape), std::move(values));
        t.impl_->requires_grad = true;
        return t;
    }

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    int rank() const { return static_cast<int>(impl_->shape.size()); }
    int dim(int i) const { return impl_->shape.at(static_cast<std::size_t>(i < 0 ? rank() + i : i)); }
    std::size_t numel() const { return impl_->data.size(); }

    std::span<float> data() { return impl_->data; }
    std::span<const float> data() const { return impl_->data; }
    float operator[](std::size_t i) const { return impl_->data[i]; }
    float item() const {
        if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
        return impl_->data[0];
    }
    float at(int r, int c) const { return impl_->data[static_cast<std::size_t>(r) * dim(-1) + c]; }

    bool has_grad() const { return impl_->grad.size() == impl_->data.size(); }
    // Handles share storage, so a const handle still exposes a writable grad.
    std::span<float> grad() const {
        impl_->ensure_grad();
        return impl_->grad;
    }
    void zero_grad() {
        if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0f);
    }

    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool v) { impl_->requires_grad = v; }
    std::optional<std::size_t> node() const { return impl_->node; }

    Tensor clone() const {
        Tensor t(shape(), std::vector<float>(impl_->data));
        t.impl_->requires_grad = impl_->requires_grad;
        return t;
    }

    /// Same values, new shape with equal element count. Shares nothing.
    Tensor reshaped(Shape shape) const {
        Tensor t(std::move(shape), std::vector<float>(impl_->data));
        return t;
    }

    const std::shared_ptr<TensorStorage>& storage() const { return impl_; }

private:
    std::shared_ptr<TensorStorage> impl_;
};

enum class OpKind {
    matmul,
    linear,
    add,
    mul,
    scale,
    relu,
    gelu,
    softmax_rows,
    cross_entropy,
    slice_patch,
    gather_slices,
    layer_norm,
    embedding,
    attention,
    sum,
    reshape,
};

/// Define-by-run record of differentiable operations. Nodes are appended in
/// execution order, so inputs always precede consumers.
class Tape {
public:
    struct Node {
        OpKind kind;
        std::vector<std::shared_ptr<TensorStorage>> inputs;
        std::shared_ptr<TensorStorage> output;
        std::function<void()> backward;
    };

    explicit Tape(bool recording = true) : recording_(recording) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    bool recording() const { return recording_; }
    std::size_t size() const { return nodes_.size(); }
    const Node& node(std::size_t i) const { return nodes_.at(i); }

    /// True when an op over `inputs` must be recorded.
    bool wants(std::initializer_list<const Tensor*> inputs) const {
        if (!recording_) return false;
        return std::any_of(inputs.begin(), inputs.end(), [](const Tensor* t) { return t->requires_grad(); });
    }

    /// Append a node producing `out`. `backward` reads out's grad and
    /// accumulates into the inputs that require grad.
    void record(OpKind kind, std::initializer_list<const Tensor*> inputs, Tensor& out,
                std::function<void()> backward) {
        Node n{kind, {}, out.storage(), std::move(backward)};
        for (const Tensor* t : inputs) n.inputs.push_back(t->storage());
        out.set_requires_grad(true);
        out.storage()->node = nodes_.size();
        nodes_.push_back(std::move(n));
    }

    /// Reverse sweep from a scalar loss. Each node is visited once.
    void backward(Tensor& loss) {
        if (loss.numel() != 1) throw DimensionError("backward needs a scalar loss, got " + shape_str(loss.shape()));
        if (!loss.node()) throw IndexError("loss tensor was not produced on this tape");
        loss.grad()[0] += 1.0f;
        for (std::size_t i = *loss.node() + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (n.output->grad.empty()) continue;
            n.backward();
        }
    }

    /// Zero the gradient of every tensor this tape touched, parameters included.
    void zero_grad() {
        for (auto& n : nodes_) {
            std::fill(n.output->grad.begin(), n.output->grad.end(), 0.0f);
            for (auto& in : n.inputs) std::fill(in->grad.begin(), in->grad.end(), 0.0f);
        }
    }

    void clear() { nodes_.clear(); }

private:
    bool recording_;
    std::vector<Node> nodes_;
};

}  // namespace ciit::ad
