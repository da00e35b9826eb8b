#pragma once

#include <Eigen/Core>

#include <cstddef>

namespace specknet::detail {

template <typename T>
using EMat =
    Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using EMap = Eigen::Map<EMat<T>>;
template <typename T>
using ECMap = Eigen::Map<const EMat<T>>;

// C = op(A) * op(B) + beta * C with row-major buffers.
// op(A) is [m x k], op(B) is [k x n], C is [m x n].
template <typename T>
inline void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n,
                 std::size_t k, const T* a, const T* b, T* c, T beta = T(0)) {
  using Index = Eigen::Index;
  EMap<T> C(c, Index(m), Index(n));
  ECMap<T> A(a, trans_a ? Index(k) : Index(m), trans_a ? Index(m) : Index(k));
  ECMap<T> B(b, trans_b ? Index(n) : Index(k), trans_b ? Index(k) : Index(n));
  if (beta == T(0)) {
    if (!trans_a && !trans_b)
      C.noalias() = A * B;
    else if (trans_a && !trans_b)
      C.noalias() = A.transpose() * B;
    else if (!trans_a && trans_b)
      C.noalias() = A * B.transpose();
    else
      C.noalias() = A.transpose() * B.transpose();
  } else {
    C *= beta;
    if (!trans_a && !trans_b)
      C.noalias() += A * B;
    else if (trans_a && !trans_b)
      C.noalias() += A.transpose() * B;
    else if (!trans_a && trans_b)
      C.noalias() += A * B.transpose();
    else
      C.noalias() += A.transpose() * B.transpose();
  }
}

}  // namespace specknet::detail
