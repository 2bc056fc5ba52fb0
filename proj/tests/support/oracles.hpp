#pragma once

#include <vector>

#include "lbi/model.hpp"
#include "lbi/tensor.hpp"

// Independent reference implementations the library is checked against.
// Everything here is written in the most obvious way possible, on purpose.
namespace oracle {

// plain triple loop, [m, k] x [k, n]
lbi::Tensor naive_matmul(const lbi::Tensor& a, const lbi::Tensor& b);

lbi::Tensor naive_transpose(const lbi::Tensor& a);

// per-row mean/variance recomputed with scalar arithmetic
lbi::Tensor naive_layer_norm(const lbi::Tensor& x, double eps);

lbi::Tensor naive_mean_pool(const lbi::Tensor& x);  // [B, L, D] -> [B, D]

// right fold of transposed factors: P[K] = I, P[k] = J[k]^T P[k+1]
std::vector<lbi::Tensor> naive_suffix_fold(const std::vector<lbi::Tensor>& j);

// all singular values, descending, via one-sided Jacobi rotations
std::vector<double> svd_singular_values(const lbi::Tensor& a);

double naive_frobenius(const lbi::Tensor& a);

// d loss / d params[name] by central differences on the forward loss.
// Exhaustive over elements, so keep the parameter small.
lbi::Tensor fd_param_gradient(const lbi::Model& model,
                              const std::vector<int32_t>& tokens, int64_t B,
                              const std::vector<int32_t>& targets,
                              const std::string& name, double h = 1e-5);

}  // namespace oracle
