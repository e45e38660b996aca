#include "afpa/params.hpp"

namespace afpa {

Tensor randn(Shape shape, double stddev, Rng& rng) {
    std::normal_distribution<double> dist(0.0, stddev);
    std::vector<double> values(shape_numel(shape));
    for (auto& v : values) v = dist(rng);
    return Tensor::from(std::move(shape), std::move(values), true);
}

void round_to_f32(ParamList& params) {
    for (auto& p : params) {
        for (auto& v : p.tensor.mutable_values()) v = static_cast<double>(static_cast<float>(v));
    }
}

}  // namespace afpa
