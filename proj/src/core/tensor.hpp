#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <vector>

#include "core/error.hpp"

namespace fasdiff {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

// Dense row-major tensor. Plain value type; all layers/ops build on it.
template <typename T>
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape) : shape_(std::move(shape)), v_(shape_numel(shape_), T(0)) {}
    Tensor(Shape shape, T fill) : shape_(std::move(shape)), v_(shape_numel(shape_), fill) {}
    Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), v_(std::move(data)) {
        check_arg(static_cast<int64_t>(v_.size()) == shape_numel(shape_),
                  "tensor data size does not match shape " + shape_str(shape_));
    }

    static Tensor zeros(Shape s) { return Tensor(std::move(s)); }
    static Tensor full(Shape s, T v) { return Tensor(std::move(s), v); }
    static Tensor scalar(T v) { return Tensor(Shape{1}, std::vector<T>{v}); }

    const Shape& shape() const { return shape_; }
    int64_t dim(size_t i) const { return shape_.at(i); }
    size_t ndim() const { return shape_.size(); }
    int64_t numel() const { return static_cast<int64_t>(v_.size()); }
    bool empty() const { return v_.empty(); }

    T* data() { return v_.data(); }
    const T* data() const { return v_.data(); }
    std::vector<T>& vec() { return v_; }
    const std::vector<T>& vec() const { return v_; }

    T& operator[](int64_t i) { return v_[static_cast<size_t>(i)]; }
    const T& operator[](int64_t i) const { return v_[static_cast<size_t>(i)]; }

    // 4-d accessors (N,C,H,W); used heavily by conv paths.
    T& at4(int64_t n, int64_t c, int64_t h, int64_t w) {
        return v_[static_cast<size_t>(((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
    }
    const T& at4(int64_t n, int64_t c, int64_t h, int64_t w) const {
        return v_[static_cast<size_t>(((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
    }
    T& at3(int64_t a, int64_t b, int64_t c) {
        return v_[static_cast<size_t>((a * shape_[1] + b) * shape_[2] + c)];
    }
    const T& at3(int64_t a, int64_t b, int64_t c) const {
        return v_[static_cast<size_t>((a * shape_[1] + b) * shape_[2] + c)];
    }
    T& at2(int64_t r, int64_t c) { return v_[static_cast<size_t>(r * shape_[1] + c)]; }
    const T& at2(int64_t r, int64_t c) const { return v_[static_cast<size_t>(r * shape_[1] + c)]; }

    Tensor reshaped(Shape s) const {
        check_arg(shape_numel(s) == numel(), "reshape " + shape_str(shape_) + " -> " + shape_str(s));
        Tensor out;
        out.shape_ = std::move(s);
        out.v_ = v_;
        return out;
    }

    bool all_finite() const {
        for (const T& x : v_)
            if (!std::isfinite(static_cast<double>(x))) return false;
        return true;
    }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out;
        out.shape_ = shape_;
        out.v_.resize(v_.size());
        for (size_t i = 0; i < v_.size(); ++i) out.v_[i] = static_cast<U>(v_[i]);
        return out;
    }

    Shape shape_;
    std::vector<T> v_;
};

template <typename T>
inline bool same_shape(const Tensor<T>& a, const Tensor<T>& b) {
    return a.shape() == b.shape();
}

}  // namespace fasdiff
