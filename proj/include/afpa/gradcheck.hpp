#pragma once

#include <cstddef>
#include <functional>

#include "afpa/tensor.hpp"

namespace afpa {

// Compares the reverse-mode gradient of a scalar function with central
// differences at step h. Returns max |analytic - numeric| / max(1, |numeric|)
// over the probed coordinates. `max_coords` of 0 probes every coordinate;
// otherwise an evenly strided subset of that size is probed.
//
// `x` must be a leaf with requires_grad set; `f` must rebuild its graph from
// x's current values on every call.
double grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, double h = 1e-6,
                  std::size_t max_coords = 0);

}  // namespace afpa
