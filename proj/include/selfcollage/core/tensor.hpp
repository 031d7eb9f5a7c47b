#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <vector>

#include "selfcollage/core/error.hpp"
#include "selfcollage/core/rng.hpp"

namespace selfcollage {

// Dense row-major double tensor. Small fixed feature set; Eigen maps are used
// for the matmul-shaped work.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
        data_.assign(static_cast<std::size_t>(numel_of(shape_)), 0.0);
    }
    Tensor(std::initializer_list<int> shape) : Tensor(std::vector<int>(shape)) {}

    static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

    static Tensor full(std::vector<int> shape, double value) {
        Tensor t(std::move(shape));
        std::fill(t.data_.begin(), t.data_.end(), value);
        return t;
    }

    const std::vector<int>& shape() const { return shape_; }
    int dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
    int ndim() const { return static_cast<int>(shape_.size()); }
    std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& vec() { return data_; }
    const std::vector<double>& vec() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double& at2(int i, int j) { return data_[static_cast<std::size_t>(i) * dim(1) + j]; }
    double at2(int i, int j) const { return data_[static_cast<std::size_t>(i) * dim(1) + j]; }

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

    void fill_trunc_normal(Rng& rng, double stddev) {
        for (auto& x : data_) x = rng.trunc_normal(stddev);
    }

    static std::int64_t numel_of(const std::vector<int>& shape) {
        std::int64_t n = 1;
        for (int d : shape) {
            if (d < 0) throw InvalidInput("Tensor: negative dimension");
            n *= d;
        }
        return n;
    }

private:
    std::vector<int> shape_;
    std::vector<double> data_;
};

using MatMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

inline ConstMatMap as_mat(const Tensor& t, int rows, int cols) {
    if (static_cast<std::int64_t>(rows) * cols != t.numel())
        throw InvalidInput("as_mat: shape mismatch");
    return ConstMatMap(t.data(), rows, cols);
}

inline MatMap as_mat(Tensor& t, int rows, int cols) {
    if (static_cast<std::int64_t>(rows) * cols != t.numel())
        throw InvalidInput("as_mat: shape mismatch");
    return MatMap(t.data(), rows, cols);
}

// C = A[m,k] * B[k,n]
inline Tensor matmul(const Tensor& a, int m, int k, const Tensor& b, int n) {
    Tensor c({m, n});
    as_mat(c, m, n).noalias() = as_mat(a, m, k) * as_mat(b, k, n);
    return c;
}

}  // namespace selfcollage
