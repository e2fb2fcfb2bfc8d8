#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace gft {

// Structured error roots. Everything thrown by the library derives from
// GftError so callers can distinguish library failures from std ones.
class GftError : public std::runtime_error {
public:
    explicit GftError(const std::string& msg) : std::runtime_error(msg) {}
};

class ShapeError : public GftError {
public:
    explicit ShapeError(const std::string& msg) : GftError(msg) {}
};

class DomainError : public GftError {
public:
    explicit DomainError(const std::string& msg) : GftError(msg) {}
};

class ConfigError : public GftError {
public:
    explicit ConfigError(const std::string& msg) : GftError(msg) {}
};

class IoError : public GftError {
public:
    explicit IoError(const std::string& msg) : GftError(msg) {}
};

// Raised when training encounters a non-finite loss or gradient; carries
// enough context to identify the offending step/group.
class NumericAbort : public GftError {
public:
    explicit NumericAbort(const std::string& msg) : GftError(msg) {}
};

struct Shape {
    int rows{1};
    int cols{1};

    bool operator==(const Shape&) const = default;
    std::int64_t numel() const { return static_cast<std::int64_t>(rows) * cols; }
    bool is_scalar() const { return rows == 1 && cols == 1; }

    std::string str() const {
        return "[" + std::to_string(rows) + "x" + std::to_string(cols) + "]";
    }
};

// Dense row-major matrix of 64-bit floats. Vectors are 1xN rows; scalars 1x1.
class Array {
public:
    Array() : shape_{1, 1}, v_(1, 0.0) {}
    Array(int rows, int cols, double fill = 0.0)
        : shape_{rows, cols}, v_(static_cast<std::size_t>(rows) * cols, fill) {
        if (rows <= 0 || cols <= 0)
            throw ShapeError("Array: non-positive dimensions " + Shape{rows, cols}.str());
    }

    static Array scalar(double x) {
        Array a(1, 1);
        a.v_[0] = x;
        return a;
    }

    static Array row(std::vector<double> xs) {
        if (xs.empty()) throw ShapeError("Array::row: empty vector");
        Array a;
        a.shape_ = Shape{1, static_cast<int>(xs.size())};
        a.v_ = std::move(xs);
        return a;
    }

    const Shape& shape() const { return shape_; }
    int rows() const { return shape_.rows; }
    int cols() const { return shape_.cols; }
    std::size_t size() const { return v_.size(); }

    double& operator[](std::size_t i) { return v_[i]; }
    double operator[](std::size_t i) const { return v_[i]; }
    double& at(int r, int c) { return v_[static_cast<std::size_t>(r) * shape_.cols + c]; }
    double at(int r, int c) const { return v_[static_cast<std::size_t>(r) * shape_.cols + c]; }

    double* data() { return v_.data(); }
    const double* data() const { return v_.data(); }

    double item() const {
        if (!shape_.is_scalar())
            throw ShapeError("Array::item: not scalar, shape " + shape_.str());
        return v_[0];
    }

    void fill(double x) { std::fill(v_.begin(), v_.end(), x); }

    bool all_finite() const {
        for (double x : v_)
            if (!std::isfinite(x)) return false;
        return true;
    }

    double l2_norm() const {
        double s = 0.0;
        for (double x : v_) s += x * x;
        return std::sqrt(s);
    }

    bool operator==(const Array& o) const { return shape_ == o.shape_ && v_ == o.v_; }

private:
    Shape shape_;
    std::vector<double> v_;
};

}  // namespace gft
