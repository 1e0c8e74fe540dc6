#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>

namespace efcn {

/// Base class for every error raised by the engine.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

/// A forward or loss evaluation produced NaN/Inf. `layer()` is the index of the
/// offending layer in the model, or -1 when the loss itself is non-finite.
class NonFiniteError : public Error {
public:
    NonFiniteError(int layer, const std::string& what)
        : Error(what), layer_(layer) {}
    int layer() const noexcept { return layer_; }

private:
    int layer_;
};

/// Training or relaxation blew up. Carries where it happened.
class DivergenceError : public Error {
public:
    DivergenceError(int epoch, int batch, const std::string& what)
        : Error(what), epoch_(epoch), batch_(batch) {}
    int epoch() const noexcept { return epoch_; }
    int batch() const noexcept { return batch_; }

private:
    int epoch_;
    int batch_;
};

class ConfigError : public Error {
public:
    ConfigError(std::string key, const std::string& what)
        : Error(what), key_(std::move(key)) {}
    const std::string& key() const noexcept { return key_; }

private:
    std::string key_;
};

/// Malformed file (dataset or checkpoint). `offset()` is the byte offset where
/// parsing failed.
class FormatError : public Error {
public:
    FormatError(std::uint64_t offset, const std::string& what)
        : Error(what), offset_(offset) {}
    std::uint64_t offset() const noexcept { return offset_; }

private:
    std::uint64_t offset_;
};

class MemoryBudgetError : public Error {
public:
    MemoryBudgetError(std::uint64_t required, std::uint64_t budget, const std::string& what)
        : Error(what), required_(required), budget_(budget) {}
    std::uint64_t required_bytes() const noexcept { return required_; }
    std::uint64_t budget_bytes() const noexcept { return budget_; }

private:
    std::uint64_t required_;
    std::uint64_t budget_;
};

}  // namespace efcn
