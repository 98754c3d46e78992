// Dense row-major arrays, the only tensor type the network uses.
#pragma once

#include <cassert>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace walsnet {

template <class Real>
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<Real> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> s)
      : shape(std::move(s)), data(size_of(shape), Real(0)) {}

  static std::size_t size_of(const std::vector<std::size_t>& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
  }

  std::size_t size() const { return data.size(); }
  std::size_t dim(std::size_t i) const { return shape[i]; }

  Real& operator[](std::size_t i) { return data[i]; }
  Real operator[](std::size_t i) const { return data[i]; }

  Real& at(std::size_t i, std::size_t j) {
    assert(shape.size() == 2 && i < shape[0] && j < shape[1]);
    return data[i * shape[1] + j];
  }
  const Real& at(std::size_t i, std::size_t j) const {
    assert(shape.size() == 2 && i < shape[0] && j < shape[1]);
    return data[i * shape[1] + j];
  }
  Real& at(std::size_t i, std::size_t j, std::size_t k) {
    assert(shape.size() == 3);
    return data[(i * shape[1] + j) * shape[2] + k];
  }
  const Real& at(std::size_t i, std::size_t j, std::size_t k) const {
    assert(shape.size() == 3);
    return data[(i * shape[1] + j) * shape[2] + k];
  }

  // Pointer to row i of a 2-D tensor.
  Real* row(std::size_t i) {
    assert(shape.size() == 2);
    return data.data() + i * shape[1];
  }
  const Real* row(std::size_t i) const {
    assert(shape.size() == 2);
    return data.data() + i * shape[1];
  }

  void fill(Real v) { std::fill(data.begin(), data.end(), v); }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (Real v : data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  template <class Other>
  Tensor<Other> cast() const {
    Tensor<Other> out;
    out.shape = shape;
    out.data.resize(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<Other>(data[i]);
    return out;
  }
};

template <class Real>
Tensor<Real> zeros_like(const Tensor<Real>& t) {
  return Tensor<Real>(t.shape);
}

// y += W x for row-major W [rows x cols].
template <class Real>
void add_matvec(const Tensor<Real>& w, const Real* x, Real* y) {
  const std::size_t rows = w.shape[0];
  const std::size_t cols = w.shape[1];
  const Real* wp = w.data.data();
  for (std::size_t r = 0; r < rows; ++r) {
    Real acc = 0;
    const Real* wr = wp + r * cols;
    for (std::size_t c = 0; c < cols; ++c) acc += wr[c] * x[c];
    y[r] += acc;
  }
}

// y += W^T v, i.e. y[c] += sum_r W[r,c] * v[r].
template <class Real>
void add_matvec_transposed(const Tensor<Real>& w, const Real* v, Real* y) {
  const std::size_t rows = w.shape[0];
  const std::size_t cols = w.shape[1];
  const Real* wp = w.data.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const Real vr = v[r];
    if (vr == Real(0)) continue;
    const Real* wr = wp + r * cols;
    for (std::size_t c = 0; c < cols; ++c) y[c] += wr[c] * vr;
  }
}

// W += v x^T (outer product accumulate).
template <class Real>
void add_outer(Tensor<Real>& w, const Real* v, const Real* x) {
  const std::size_t rows = w.shape[0];
  const std::size_t cols = w.shape[1];
  Real* wp = w.data.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const Real vr = v[r];
    if (vr == Real(0)) continue;
    Real* wr = wp + r * cols;
    for (std::size_t c = 0; c < cols; ++c) wr[c] += vr * x[c];
  }
}

}  // namespace walsnet
