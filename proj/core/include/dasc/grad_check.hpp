#pragma once

#include <functional>
#include <vector>

#include "dasc/tensor.hpp"

namespace dasc {

class Rng;

// f builds a scalar loss on the given tape from the given input tensor.
using ScalarFn = std::function<Tensor(Tape&, const Tensor&)>;
// Variant closing over its own parameter tensors.
using LossFn = std::function<Tensor(Tape&)>;

// Central-difference check of every coordinate of `at` against the analytic
// gradient. Returns max_i |a_i - n_i| / max(1e-8, |a_i| + |n_i|). The function
// is evaluated twice at the base point first; a non-deterministic f throws.
double grad_check(const ScalarFn& f, const Tensor& at, double eps = 1e-5);

// Same check restricted to `coords_per_tensor` randomly chosen coordinates of
// each parameter (all coordinates when the tensor is at most that size).
// Used for composite losses where the full sweep would be wasteful.
double grad_check_params(const LossFn& f, const std::vector<Tensor>& params,
                         std::size_t coords_per_tensor, Rng& rng,
                         double eps = 1e-5);

} // namespace dasc
