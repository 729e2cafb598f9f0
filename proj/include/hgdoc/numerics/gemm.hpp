#pragma once

#include <cstddef>

#include <Eigen/Core>

// Dense matrix-product kernels over row-major flat buffers.
namespace hgdoc::gemm {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

// c[m x n] (+)= a[m x k] * b[k x n]
inline void nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
               std::size_t n, bool accumulate) {
  ConstMap A(a, m, k);
  ConstMap B(b, k, n);
  MutMap C(c, m, n);
  if (accumulate) {
    C.noalias() += A * B;
  } else {
    C.noalias() = A * B;
  }
}

// c[m x n] (+)= a[m x k] * b[n x k]^T
inline void nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
               std::size_t n, bool accumulate) {
  ConstMap A(a, m, k);
  ConstMap B(b, n, k);
  MutMap C(c, m, n);
  if (accumulate) {
    C.noalias() += A * B.transpose();
  } else {
    C.noalias() = A * B.transpose();
  }
}

// c[m x n] (+)= a[k x m]^T * b[k x n]
inline void tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
               std::size_t n, bool accumulate) {
  ConstMap A(a, k, m);
  ConstMap B(b, k, n);
  MutMap C(c, m, n);
  if (accumulate) {
    C.noalias() += A.transpose() * B;
  } else {
    C.noalias() = A.transpose() * B;
  }
}

}  // namespace hgdoc::gemm
