#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstddef>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace seenet {

/// Raised when operand shapes do not conform for an operation.
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Raised when a caller breaks an API precondition (non-scalar loss, unknown parameter, ...).
class ContractError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// Bad configuration values (ratios, sizes, file layouts).
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Bad user input (unknown node, unreadable file, malformed record).
class InputError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ']';
    return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>{});
}

/// Dense row-major array of doubles with rank 0, 1 or 2.
class Tensor {
public:
    Tensor() : shape_{}, data_(1, 0.0) {}

    explicit Tensor(Shape shape, double fill = 0.0)
        : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {
        check_rank();
    }

    Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)), data_(std::move(values)) {
        check_rank();
        if (data_.size() != shape_numel(shape_))
            throw DimensionError("tensor: " + std::to_string(data_.size()) + " values for shape " +
                                 shape_str(shape_));
    }

    static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }
    static Tensor vector(std::vector<double> v) {
        const std::size_t n = v.size();
        return Tensor(Shape{n}, std::move(v));
    }
    static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0) {
        return Tensor(Shape{rows, cols}, fill);
    }
    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> v) {
        return Tensor(Shape{rows, cols}, std::move(v));
    }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t size() const noexcept { return data_.size(); }

    /// Rank-2 views use (rows, cols); a vector is one row; a scalar is 1x1.
    std::size_t rows() const noexcept { return rank() == 2 ? shape_[0] : 1; }
    std::size_t cols() const noexcept {
        return rank() == 2 ? shape_[1] : (rank() == 1 ? shape_[0] : 1);
    }

    std::span<double> values() noexcept { return data_; }
    std::span<const double> values() const noexcept { return data_; }
    std::vector<double>& raw() noexcept { return data_; }
    const std::vector<double>& raw() const noexcept { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }
    double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
    double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

    double item() const {
        if (data_.size() != 1) throw ContractError("tensor: item() on shape " + shape_str(shape_));
        return data_[0];
    }

    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols(), cols()}; }
    std::span<double> row(std::size_t r) { return {data_.data() + r * cols(), cols()}; }

    bool all_finite() const noexcept {
        std::uint64_t bad = 0;
        for (double v : data_) bad |= std::uint64_t((std::bit_cast<std::uint64_t>(v) >> 52 & 0x7ff) == 0x7ff);
        return bad == 0;
    }

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

    Tensor reshaped(Shape s) const { return Tensor(std::move(s), data_); }

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

private:
    void check_rank() const {
        if (shape_.size() > 2) throw DimensionError("tensor: rank > 2 unsupported, got " + shape_str(shape_));
    }

    Shape shape_;
    std::vector<double> data_;
};

}  // namespace seenet
