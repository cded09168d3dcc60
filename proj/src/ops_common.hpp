#pragma once

#include <initializer_list>
#include <span>
#include <string_view>

#include "inrn/autodiff.hpp"

namespace inrn::detail {

/// Wraps a freshly computed value as an op result, recording a tape node when
/// any input is tracked.
Tensor make_result(std::string_view kind, Tensor value, std::span<const Tensor* const> inputs,
                   BackwardFn backward);

inline Tensor make_result(std::string_view kind, Tensor value,
                          std::initializer_list<const Tensor*> inputs, BackwardFn backward) {
  return make_result(kind, std::move(value),
                     std::span<const Tensor* const>(inputs.begin(), inputs.size()),
                     std::move(backward));
}

/// Row-major C = alpha * op(A) * op(B) + beta * C.
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, double alpha,
          const double* a, std::size_t lda, const double* b, std::size_t ldb, double beta, double* c,
          std::size_t ldc);

void require_rank(const Tensor& x, std::size_t rank, std::string_view op);

}  // namespace inrn::detail
