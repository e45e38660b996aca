#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "afpa/tensor.hpp"

namespace afpa {

struct NamedParam {
    std::string name;
    Tensor tensor;
};

using ParamList = std::vector<NamedParam>;

using Rng = std::mt19937_64;

// Leaf tensor with i.i.d. N(0, stddev^2) entries.
Tensor randn(Shape shape, double stddev, Rng& rng);

// Rounds every parameter value to the nearest 32-bit float, the checkpoint storage precision.
void round_to_f32(ParamList& params);

}  // namespace afpa
