#pragma once

#include <stdexcept>
#include <string>

namespace ciit {

/// Base for every error raised by the library. `exit_code()` is what the CLI
/// returns when the error escapes a command.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
    virtual int exit_code() const noexcept { return 3; }
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& what) : Error("configuration error: " + what) {}
    int exit_code() const noexcept override { return 2; }
};

class DataError : public Error {
public:
    explicit DataError(const std::string& what) : Error(what) {}
};

class DimensionError : public DataError {
public:
    explicit DimensionError(const std::string& what) : DataError("dimension error: " + what) {}
};

class IndexError : public DataError {
public:
    explicit IndexError(const std::string& what) : DataError("index error: " + what) {}
};

class EncodingError : public DataError {
public:
    explicit EncodingError(const std::string& what) : DataError("encoding error: " + what) {}
};

class AlignmentError : public DataError {
public:
    explicit AlignmentError(const std::string& what) : DataError("alignment error: " + what) {}
};

class GrammarError : public DataError {
public:
    explicit GrammarError(const std::string& what) : DataError("grammar error: " + what) {}
};

class GenerationError : public DataError {
public:
    explicit GenerationError(const std::string& what) : DataError("generation error: " + what) {}
};

class SubstitutionError : public DataError {
public:
    explicit SubstitutionError(const std::string& what) : DataError("substitution error: " + what) {}
};

class DegenerateDataError : public DataError {
public:
    explicit DegenerateDataError(const std::string& what) : DataError("degenerate data: " + what) {}
};

class PathError : public Error {
public:
    explicit PathError(const std::string& what) : Error("path error: " + what) {}
    int exit_code() const noexcept override { return 2; }
};

class NumericError : public Error {
public:
    explicit NumericError(const std::string& what) : Error("numeric failure: " + what) {}
    int exit_code() const noexcept override { return 4; }
};

}  // namespace ciit
