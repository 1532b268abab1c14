#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace lnm {

inline constexpr int kPatchSize = 32;
inline constexpr int kPatchPixels = kPatchSize * kPatchSize;

/// Base error. Each subclass maps to one CLI exit code.
class Error : public std::runtime_error {
 public:
    using std::runtime_error::runtime_error;
    virtual int exit_code() const noexcept { return 1; }
};

/// Invalid configuration or parameters (exit code 2).
class ConfigError : public Error {
 public:
    using Error::Error;
    int exit_code() const noexcept override { return 2; }
};

/// Malformed, missing or inconsistent data (exit code 3).
class DataError : public Error {
 public:
    using Error::Error;
    int exit_code() const noexcept override { return 3; }
};

/// Input violates an operation's precondition (shape, range, finiteness).
class ValidationError : public DataError {
 public:
    using DataError::DataError;
};

/// Morphometric feature cannot be computed (e.g. empty mask).
class FeatureError : public DataError {
 public:
    using DataError::DataError;
};

/// Training diverged or produced non-finite values (exit code 4).
class NumericalError : public Error {
 public:
    using Error::Error;
    int exit_code() const noexcept override { return 4; }
};

/// Dense row-major 2D array.
template <typename T>
class Grid {
 public:
    Grid() = default;
    Grid(int height, int width, T fill = T{})
        : height_(height), width_(width), data_(static_cast<size_t>(height) * width, fill) {}

    int height() const noexcept { return height_; }
    int width() const noexcept { return width_; }
    size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    T& operator()(int row, int col) { return data_[static_cast<size_t>(row) * width_ + col]; }
    const T& operator()(int row, int col) const {
        return data_[static_cast<size_t>(row) * width_ + col];
    }
    bool in_bounds(int row, int col) const noexcept {
        return row >= 0 && col >= 0 && row < height_ && col < width_;
    }

    std::vector<T>& values() noexcept { return data_; }
    const std::vector<T>& values() const noexcept { return data_; }

    friend bool operator==(const Grid&, const Grid&) = default;

 private:
    int height_ = 0;
    int width_ = 0;
    std::vector<T> data_;
};

using Image = Grid<float>;
using Mask = Grid<std::uint8_t>;

inline Image make_patch_image() { return Image(kPatchSize, kPatchSize, 0.0f); }
inline Mask make_patch_mask() { return Mask(kPatchSize, kPatchSize, 0); }

inline size_t foreground_count(const Mask& mask) {
    size_t n = 0;
    for (auto v : mask.values()) n += v != 0;
    return n;
}

/// Per-component seed: splitmix64 of the global seed xor FNV-1a of the component name.
std::uint64_t derive_seed(std::uint64_t global_seed, std::string_view component);

}  // namespace lnm
