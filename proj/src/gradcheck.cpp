#include "afpa/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "afpa/error.hpp"

namespace afpa {

double grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, double h, std::size_t max_coords) {
    if (!(h > 0.0)) throw ContractError("grad_check: step must be positive");
    if (!x.requires_grad()) throw ContractError("grad_check: input must require grad");

    x.zero_grad();
    auto y = f(x);
    if (!std::isfinite(y.item())) throw NumericError("grad_check: f(x) is not finite");
    y.backward();
    std::vector<double> analytic(x.numel(), 0.0);
    if (x.has_grad()) std::copy(x.grad().begin(), x.grad().end(), analytic.begin());

    const auto n = x.numel();
    const auto probes = max_coords == 0 ? n : std::min(n, max_coords);
    auto values = x.mutable_values();
    double worst = 0.0;
    NoGradGuard no_grad;
    for (std::size_t p = 0; p < probes; ++p) {
        const auto i = probes == n ? p : p * n / probes;
        const double saved = values[i];
        values[i] = saved + h;
        const double plus = f(x).item();
        values[i] = saved - h;
        const double minus = f(x).item();
        values[i] = saved;
        if (!std::isfinite(plus) || !std::isfinite(minus)) throw NumericError("grad_check: f is not finite near x");
        const double numeric = (plus - minus) / (2.0 * h);
        worst = std::max(worst, std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(numeric)));
    }
    return worst;
}

}  // namespace afpa
