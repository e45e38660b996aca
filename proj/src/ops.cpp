#include "afpa/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numbers>

#include "afpa/error.hpp"

namespace afpa::ops {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MutMap = Eigen::Map<RowMat>;
using detail::Node;

MutMap as_mat(std::vector<double>& v, std::size_t rows, std::size_t cols) {
    return MutMap(v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
    if (t.rank() != rank) {
        throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_str(t.shape()));
    }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
}

Node* input(Node& self, std::size_t i) { return self.inputs.size() > i ? self.inputs[i].get() : nullptr; }

bool wants_grad(const Node* n) { return n != nullptr && n->requires_grad; }

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank(a, 2, "matmul");
    require_rank(b, 2, "matmul");
    const auto p = a.dim(0), q = a.dim(1), r = b.dim(1);
    if (b.dim(0) != q) {
        throw ShapeError("matmul: inner dimensions differ for " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
    }
    std::vector<double> out(p * r);
    as_mat(out, p, r).noalias() = as_mat(a.node()->value, p, q) * as_mat(b.node()->value, q, r);
    return detail::make_result({p, r}, std::move(out), {a, b}, [p, q, r](Node& self) {
        auto g = as_mat(self.grad, p, r);
        auto* na = input(self, 0);
        auto* nb = input(self, 1);
        if (wants_grad(na)) as_mat(na->ensure_grad(), p, q).noalias() += g * as_mat(nb->value, q, r).transpose();
        if (wants_grad(nb)) as_mat(nb->ensure_grad(), q, r).noalias() += as_mat(na->value, p, q).transpose() * g;
    });
}

Tensor transpose(const Tensor& a) {
    require_rank(a, 2, "transpose");
    const auto rows = a.dim(0), cols = a.dim(1);
    std::vector<double> out(rows * cols);
    as_mat(out, cols, rows) = as_mat(a.node()->value, rows, cols).transpose();
    return detail::make_result({cols, rows}, std::move(out), {a}, [rows, cols](Node& self) {
        auto* na = input(self, 0);
        as_mat(na->ensure_grad(), rows, cols) += as_mat(self.grad, cols, rows).transpose();
    });
}

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    const auto& av = a.node()->value;
    const auto& bv = b.node()->value;
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
    return detail::make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
        for (std::size_t k = 0; k < 2; ++k) {
            auto* n = input(self, k);
            if (!wants_grad(n)) continue;
            auto& g = n->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    const auto& av = a.node()->value;
    const auto& bv = b.node()->value;
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
    return detail::make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
        if (auto* n = input(self, 0); wants_grad(n)) {
            auto& g = n->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (auto* n = input(self, 1); wants_grad(n)) {
            auto& g = n->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    const auto& av = a.node()->value;
    const auto& bv = b.node()->value;
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
    return detail::make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
        auto* na = input(self, 0);
        auto* nb = input(self, 1);
        if (wants_grad(na)) {
            auto& g = na->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * nb->value[i];
        }
        if (wants_grad(nb)) {
            auto& g = nb->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * na->value[i];
        }
    });
}

Tensor scale(const Tensor& a, double factor) {
    std::vector<double> out(a.values().begin(), a.values().end());
    for (auto& v : out) v *= factor;
    return detail::make_result(a.shape(), std::move(out), {a}, [factor](Node& self) {
        auto& g = input(self, 0)->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * self.grad[i];
    });
}

Tensor add_scalar(const Tensor& a, double offset) {
    std::vector<double> out(a.values().begin(), a.values().end());
    for (auto& v : out) v += offset;
    return detail::make_result(a.shape(), std::move(out), {a}, [](Node& self) {
        auto& g = input(self, 0)->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
}

Tensor sum(const Tensor& a) {
    double total = 0.0;
    for (double v : a.values()) total += v;
    return detail::make_result({1}, {total}, {a}, [](Node& self) {
        auto& g = input(self, 0)->ensure_grad();
        for (auto& v : g) v += self.grad[0];
    });
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

Tensor softmax_rows(const Tensor& a) {
    require_rank(a, 2, "softmax_rows");
    const auto rows = a.dim(0), cols = a.dim(1);
    const auto& x = a.node()->value;
    std::vector<double> out(x.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* in = x.data() + r * cols;
        double* y = out.data() + r * cols;
        double mx = -INFINITY;
        for (std::size_t c = 0; c < cols; ++c) {
            if (!std::isfinite(in[c])) throw NumericError("softmax_rows: non-finite input in row " + std::to_string(r));
            mx = std::max(mx, in[c]);
        }
        double z = 0.0;
        for (std::size_t c = 0; c < cols; ++c) {
            y[c] = std::exp(in[c] - mx);
            z += y[c];
        }
        for (std::size_t c = 0; c < cols; ++c) y[c] /= z;
    }
    return detail::make_result(a.shape(), std::move(out), {a}, [rows, cols](Node& self) {
        auto& g = input(self, 0)->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r) {
            const double* y = self.value.data() + r * cols;
            const double* gy = self.grad.data() + r * cols;
            double dot = 0.0;
            for (std::size_t c = 0; c < cols; ++c) dot += gy[c] * y[c];
            for (std::size_t c = 0; c < cols; ++c) g[r * cols + c] += y[c] * (gy[c] - dot);
        }
    });
}

Tensor leaky_relu(const Tensor& a, double slope) {
    // min/max rather than a branch so the loops vectorize
    const auto& x = a.node()->value;
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::max(x[i], 0.0) + slope * std::min(x[i], 0.0);
    return detail::make_result(a.shape(), std::move(out), {a}, [slope](Node& self) {
        auto* n = input(self, 0);
        auto& g = n->ensure_grad();
        const auto& xv = n->value;
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double pos = static_cast<double>(xv[i] > 0.0);
            g[i] += self.grad[i] * (pos + slope * (1.0 - pos));
        }
    });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, std::size_t axis, double eps) {
    require_rank(x, 2, "layer_norm");
    if (axis > 1) throw ShapeError("layer_norm: axis must be 0 or 1");
    const auto rows = x.dim(0), cols = x.dim(1);
    // Each group is one normalized slice; members are the elements inside it.
    // Element (member m, group g) lives at m * member_stride + g * group_stride.
    const std::size_t groups = axis == 0 ? cols : rows;
    const std::size_t members = axis == 0 ? rows : cols;
    const std::size_t group_stride = axis == 0 ? 1 : cols;
    const std::size_t member_stride = axis == 0 ? cols : 1;
    const bool affine = gamma.defined();
    if (affine) {
        if (!beta.defined() || gamma.shape() != Shape{members} || beta.shape() != Shape{members}) {
            throw ShapeError("layer_norm: affine parameters must both have shape [" + std::to_string(members) + "]");
        }
    }
    const double inv_members = 1.0 / static_cast<double>(members);

    // Member-outer, group-inner, so axis 0 streams through memory. The body
    // gets raw pointers; vector references would block vectorization.
    auto for_members = [=](auto&& fn) {
        for (std::size_t m = 0; m < members; ++m) {
            if (group_stride == 1) {
                const std::size_t base = m * member_stride;
                for (std::size_t g = 0; g < groups; ++g) fn(m, g, base + g);
            } else {
                for (std::size_t g = 0; g < groups; ++g) fn(m, g, m + g * group_stride);
            }
        }
    };

    const double* xv = x.node()->value.data();
    const std::size_t n = x.numel();
    std::vector<double> mu_v(groups, 0.0), inv_std_v(groups, 0.0);
    double* mu = mu_v.data();
    double* inv_std = inv_std_v.data();
    for_members([=](std::size_t, std::size_t g, std::size_t i) { mu[g] += xv[i]; });
    for (std::size_t g = 0; g < groups; ++g) mu[g] *= inv_members;
    for_members([=](std::size_t, std::size_t g, std::size_t i) {
        const double d = xv[i] - mu[g];
        inv_std[g] += d * d;
    });
    for (std::size_t g = 0; g < groups; ++g) inv_std[g] = 1.0 / std::sqrt(inv_std[g] * inv_members + eps);

    std::vector<double> xhat_v(n), out_v(n);
    const std::vector<double> gamma_v = affine ? gamma.node()->value : std::vector<double>(members, 1.0);
    const std::vector<double> beta_v = affine ? beta.node()->value : std::vector<double>(members, 0.0);
    {
        double* xhat = xhat_v.data();
        double* out = out_v.data();
        const double* gv = gamma_v.data();
        const double* bv = beta_v.data();
        for_members([=](std::size_t m, std::size_t g, std::size_t i) {
            xhat[i] = (xv[i] - mu[g]) * inv_std[g];
            out[i] = gv[m] * xhat[i] + bv[m];
        });
    }

    std::vector<Tensor> inputs{x};
    if (affine) {
        inputs.push_back(gamma);
        inputs.push_back(beta);
    }
    return detail::make_result(
        x.shape(), std::move(out_v), std::move(inputs),
        [xhat_v = std::move(xhat_v), inv_std_v = std::move(inv_std_v), gamma_v, for_members, groups, inv_members,
         affine](Node& self) {
            auto* nx = input(self, 0);
            auto* ng = affine ? input(self, 1) : nullptr;
            auto* nb = affine ? input(self, 2) : nullptr;
            const double* G = self.grad.data();
            const double* xhat = xhat_v.data();
            const double* inv_std = inv_std_v.data();
            if (wants_grad(ng)) {
                double* dg = ng->ensure_grad().data();
                for_members([=](std::size_t m, std::size_t, std::size_t i) { dg[m] += G[i] * xhat[i]; });
            }
            if (wants_grad(nb)) {
                double* db = nb->ensure_grad().data();
                for_members([=](std::size_t m, std::size_t, std::size_t i) { db[m] += G[i]; });
            }
            if (!wants_grad(nx)) return;
            double* dx = nx->ensure_grad().data();
            // the forward gamma; parameters do not change during backward
            const double* gv = gamma_v.data();
            std::vector<double> mean_d_v(groups, 0.0), mean_dx_v(groups, 0.0);
            double* mean_d = mean_d_v.data();
            double* mean_dx = mean_dx_v.data();
            for_members([=](std::size_t m, std::size_t g, std::size_t i) {
                const double d = G[i] * gv[m];
                mean_d[g] += d;
                mean_dx[g] += d * xhat[i];
            });
            for (std::size_t g = 0; g < groups; ++g) {
                mean_d[g] *= inv_members;
                mean_dx[g] *= inv_members;
            }
            for_members([=](std::size_t m, std::size_t g, std::size_t i) {
                dx[i] += inv_std[g] * (G[i] * gv[m] - mean_d[g] - xhat[i] * mean_dx[g]);
            });
        });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    const auto& first = parts.front().shape();
    if (axis >= first.size()) throw ShapeError("concat: axis out of range for " + shape_str(first));
    std::size_t outer = 1, inner = 1;
    for (std::size_t d = 0; d < axis; ++d) outer *= first[d];
    for (std::size_t d = axis + 1; d < first.size(); ++d) inner *= first[d];
    std::vector<std::size_t> widths;
    std::size_t total = 0;
    for (const auto& p : parts) {
        const auto& s = p.shape();
        bool ok = s.size() == first.size();
        for (std::size_t d = 0; ok && d < s.size(); ++d) ok = d == axis || s[d] == first[d];
        if (!ok) throw ShapeError("concat: incompatible shapes " + shape_str(first) + " and " + shape_str(s));
        widths.push_back(s[axis]);
        total += s[axis];
    }
    Shape out_shape = first;
    out_shape[axis] = total;
    std::vector<double> out(outer * total * inner);
    std::size_t offset = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const auto& v = parts[k].node()->value;
        const auto block = widths[k] * inner;
        for (std::size_t o = 0; o < outer; ++o) {
            std::copy_n(v.data() + o * block, block, out.data() + o * total * inner + offset * inner);
        }
        offset += widths[k];
    }
    return detail::make_result(std::move(out_shape), std::move(out), parts,
                               [widths, outer, inner, total](Node& self) {
                                   std::size_t offset = 0;
                                   for (std::size_t k = 0; k < widths.size(); ++k) {
                                       auto* n = input(self, k);
                                       const auto block = widths[k] * inner;
                                       if (wants_grad(n)) {
                                           auto& g = n->ensure_grad();
                                           for (std::size_t o = 0; o < outer; ++o) {
                                               const double* src =
                                                   self.grad.data() + o * total * inner + offset * inner;
                                               double* dst = g.data() + o * block;
                                               for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
                                           }
                                       }
                                       offset += widths[k];
                                   }
                               });
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end) {
    const auto& s = a.shape();
    if (axis >= s.size()) throw ShapeError("slice: axis out of range for " + shape_str(s));
    if (begin >= end || end > s[axis]) {
        throw ShapeError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") invalid for axis of size " + std::to_string(s[axis]));
    }
    std::size_t outer = 1, inner = 1;
    for (std::size_t d = 0; d < axis; ++d) outer *= s[d];
    for (std::size_t d = axis + 1; d < s.size(); ++d) inner *= s[d];
    const auto full = s[axis];
    const auto width = end - begin;
    Shape out_shape = s;
    out_shape[axis] = width;
    const auto& v = a.node()->value;
    std::vector<double> out(outer * width * inner);
    for (std::size_t o = 0; o < outer; ++o) {
        std::copy_n(v.data() + (o * full + begin) * inner, width * inner, out.data() + o * width * inner);
    }
    return detail::make_result(std::move(out_shape), std::move(out), {a},
                               [outer, inner, full, begin, width](Node& self) {
                                   auto& g = input(self, 0)->ensure_grad();
                                   for (std::size_t o = 0; o < outer; ++o) {
                                       const double* src = self.grad.data() + o * width * inner;
                                       double* dst = g.data() + (o * full + begin) * inner;
                                       for (std::size_t i = 0; i < width * inner; ++i) dst[i] += src[i];
                                   }
                               });
}

Tensor reshape(const Tensor& a, Shape shape) {
    if (shape_numel(shape) != a.numel()) {
        throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
    }
    std::vector<double> out(a.values().begin(), a.values().end());
    return detail::make_result(std::move(shape), std::move(out), {a}, [](Node& self) {
        auto& g = input(self, 0)->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
}

Tensor mean_pool(const Tensor& a, std::size_t axis) {
    require_rank(a, 2, "mean_pool");
    if (axis > 1) throw ShapeError("mean_pool: axis must be 0 or 1");
    const auto rows = a.dim(0), cols = a.dim(1);
    const auto& v = a.node()->value;
    const std::size_t out_n = axis == 0 ? cols : rows;
    const double inv = 1.0 / static_cast<double>(axis == 0 ? rows : cols);
    std::vector<double> out(out_n, 0.0);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) out[axis == 0 ? c : r] += v[r * cols + c];
    for (auto& o : out) o *= inv;
    return detail::make_result({out_n}, std::move(out), {a}, [rows, cols, axis, inv](Node& self) {
        auto& g = input(self, 0)->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) g[r * cols + c] += inv * self.grad[axis == 0 ? c : r];
    });
}

Tensor global_avg_pool(const Tensor& x) {
    require_rank(x, 3, "global_avg_pool");
    const auto c = x.dim(0);
    return mean_pool(reshape(x, {c, x.dim(1) * x.dim(2)}), 1);
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    require_rank(x, 1, "linear");
    require_rank(weight, 2, "linear");
    const auto out_n = weight.dim(0), in_n = weight.dim(1);
    if (x.dim(0) != in_n) {
        throw ShapeError("linear: input " + shape_str(x.shape()) + " does not fit weight " +
                         shape_str(weight.shape()));
    }
    if (bias.defined() && bias.shape() != Shape{out_n}) {
        throw ShapeError("linear: bias " + shape_str(bias.shape()) + " does not fit weight " +
                         shape_str(weight.shape()));
    }
    auto y = reshape(matmul(weight, reshape(x, {in_n, 1})), {out_n});
    return bias.defined() ? add(y, bias) : y;
}

namespace {

// y[c, ...] + bias[c]
Tensor add_channel_bias(const Tensor& y, const Tensor& bias) {
    const auto channels = y.dim(0);
    const auto spatial = y.numel() / channels;
    if (bias.shape() != Shape{channels}) {
        throw ShapeError("bias " + shape_str(bias.shape()) + " does not match " + std::to_string(channels) +
                         " channels");
    }
    std::vector<double> out(y.values().begin(), y.values().end());
    const auto& b = bias.node()->value;
    for (std::size_t c = 0; c < channels; ++c)
        for (std::size_t s = 0; s < spatial; ++s) out[c * spatial + s] += b[c];
    return detail::make_result(y.shape(), std::move(out), {y, bias}, [channels, spatial](Node& self) {
        if (auto* n = input(self, 0); wants_grad(n)) {
            auto& g = n->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (auto* n = input(self, 1); wants_grad(n)) {
            auto& g = n->ensure_grad();
            for (std::size_t c = 0; c < channels; ++c)
                for (std::size_t s = 0; s < spatial; ++s) g[c] += self.grad[c * spatial + s];
        }
    });
}

}  // namespace

Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t stride, std::size_t padding) {
    require_rank(x, 2, "conv1d");
    require_rank(w, 3, "conv1d");
    if (stride == 0) throw ShapeError("conv1d: stride must be >= 1");
    const auto c_in = x.dim(0), length = x.dim(1);
    const auto c_out = w.dim(0), k = w.dim(2);
    if (w.dim(1) != c_in) {
        throw ShapeError("conv1d: weight " + shape_str(w.shape()) + " does not fit input " + shape_str(x.shape()));
    }
    if (length + 2 * padding < k) {
        throw ShapeError("conv1d: kernel " + std::to_string(k) + " larger than padded input " +
                         std::to_string(length + 2 * padding));
    }
    const auto out_len = (length + 2 * padding - k) / stride + 1;
    const auto rows = c_in * k;

    // im2col: cols[(ci*k + j), t] = x[ci, t*stride + j - padding]
    auto cols = std::make_shared<std::vector<double>>(rows * out_len, 0.0);
    const auto& xv = x.node()->value;
    for (std::size_t ci = 0; ci < c_in; ++ci) {
        for (std::size_t j = 0; j < k; ++j) {
            double* dst = cols->data() + (ci * k + j) * out_len;
            for (std::size_t t = 0; t < out_len; ++t) {
                const auto pos = static_cast<std::ptrdiff_t>(t * stride + j) - static_cast<std::ptrdiff_t>(padding);
                if (pos >= 0 && pos < static_cast<std::ptrdiff_t>(length)) dst[t] = xv[ci * length + pos];
            }
        }
    }
    std::vector<double> out(c_out * out_len);
    as_mat(out, c_out, out_len).noalias() = as_mat(w.node()->value, c_out, rows) * as_mat(*cols, rows, out_len);

    auto y = detail::make_result(
        {c_out, out_len}, std::move(out), {x, w},
        [cols, c_in, length, c_out, k, rows, out_len, stride, padding](Node& self) {
            auto g = as_mat(self.grad, c_out, out_len);
            auto* nx = input(self, 0);
            auto* nw = input(self, 1);
            if (wants_grad(nw)) as_mat(nw->ensure_grad(), c_out, rows).noalias() += g * as_mat(*cols, rows, out_len).transpose();
            if (wants_grad(nx)) {
                std::vector<double> dcols(rows * out_len);
                as_mat(dcols, rows, out_len).noalias() = as_mat(nw->value, c_out, rows).transpose() * g;
                auto& dx = nx->ensure_grad();
                for (std::size_t ci = 0; ci < c_in; ++ci)
                    for (std::size_t j = 0; j < k; ++j) {
                        const double* src = dcols.data() + (ci * k + j) * out_len;
                        for (std::size_t t = 0; t < out_len; ++t) {
                            const auto pos = static_cast<std::ptrdiff_t>(t * stride + j) -
                                             static_cast<std::ptrdiff_t>(padding);
                            if (pos >= 0 && pos < static_cast<std::ptrdiff_t>(length)) dx[ci * length + pos] += src[t];
                        }
                    }
            }
        });
    return bias.defined() ? add_channel_bias(y, bias) : y;
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t stride, std::size_t padding) {
    require_rank(x, 3, "conv2d");
    require_rank(w, 4, "conv2d");
    if (stride == 0) throw ShapeError("conv2d: stride must be >= 1");
    const auto c_in = x.dim(0), h = x.dim(1), wd = x.dim(2);
    const auto c_out = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    if (w.dim(1) != c_in) {
        throw ShapeError("conv2d: weight " + shape_str(w.shape()) + " does not fit input " + shape_str(x.shape()));
    }
    if (h + 2 * padding < kh || wd + 2 * padding < kw) {
        throw ShapeError("conv2d: kernel larger than padded input " + shape_str(x.shape()));
    }
    const auto ho = (h + 2 * padding - kh) / stride + 1;
    const auto wo = (wd + 2 * padding - kw) / stride + 1;
    const auto rows = c_in * kh * kw;
    const auto spatial = ho * wo;

    auto cols = std::make_shared<std::vector<double>>(rows * spatial, 0.0);
    const auto& xv = x.node()->value;
    const auto pad = static_cast<std::ptrdiff_t>(padding);
    for (std::size_t ci = 0; ci < c_in; ++ci)
        for (std::size_t i = 0; i < kh; ++i)
            for (std::size_t j = 0; j < kw; ++j) {
                double* dst = cols->data() + ((ci * kh + i) * kw + j) * spatial;
                for (std::size_t oy = 0; oy < ho; ++oy) {
                    const auto iy = static_cast<std::ptrdiff_t>(oy * stride + i) - pad;
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                    for (std::size_t ox = 0; ox < wo; ++ox) {
                        const auto ix = static_cast<std::ptrdiff_t>(ox * stride + j) - pad;
                        if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(wd)) dst[oy * wo + ox] = xv[(ci * h + iy) * wd + ix];
                    }
                }
            }
    std::vector<double> out(c_out * spatial);
    as_mat(out, c_out, spatial).noalias() = as_mat(w.node()->value, c_out, rows) * as_mat(*cols, rows, spatial);

    auto y = detail::make_result(
        {c_out, ho, wo}, std::move(out), {x, w},
        [cols, c_in, h, wd, c_out, kh, kw, ho, wo, rows, spatial, stride, pad](Node& self) {
            auto g = as_mat(self.grad, c_out, spatial);
            auto* nx = input(self, 0);
            auto* nw = input(self, 1);
            if (wants_grad(nw)) as_mat(nw->ensure_grad(), c_out, rows).noalias() += g * as_mat(*cols, rows, spatial).transpose();
            if (!wants_grad(nx)) return;
            std::vector<double> dcols(rows * spatial);
            as_mat(dcols, rows, spatial).noalias() = as_mat(nw->value, c_out, rows).transpose() * g;
            auto& dx = nx->ensure_grad();
            for (std::size_t ci = 0; ci < c_in; ++ci)
                for (std::size_t i = 0; i < kh; ++i)
                    for (std::size_t j = 0; j < kw; ++j) {
                        const double* src = dcols.data() + ((ci * kh + i) * kw + j) * spatial;
                        for (std::size_t oy = 0; oy < ho; ++oy) {
                            const auto iy = static_cast<std::ptrdiff_t>(oy * stride + i) - pad;
                            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                            for (std::size_t ox = 0; ox < wo; ++ox) {
                                const auto ix = static_cast<std::ptrdiff_t>(ox * stride + j) - pad;
                                if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(wd)) dx[(ci * h + iy) * wd + ix] += src[oy * wo + ox];
                            }
                        }
                    }
        });
    return bias.defined() ? add_channel_bias(y, bias) : y;
}

Tensor depthwise_conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t stride,
                        std::size_t padding) {
    require_rank(x, 3, "depthwise_conv2d");
    require_rank(w, 3, "depthwise_conv2d");
    if (stride == 0) throw ShapeError("depthwise_conv2d: stride must be >= 1");
    const auto channels = x.dim(0), h = x.dim(1), wd = x.dim(2);
    const auto kh = w.dim(1), kw = w.dim(2);
    if (w.dim(0) != channels) {
        throw ShapeError("depthwise_conv2d: weight " + shape_str(w.shape()) + " does not fit input " +
                         shape_str(x.shape()));
    }
    if (h + 2 * padding < kh || wd + 2 * padding < kw) {
        throw ShapeError("depthwise_conv2d: kernel larger than padded input " + shape_str(x.shape()));
    }
    const auto ho = (h + 2 * padding - kh) / stride + 1;
    const auto wo = (wd + 2 * padding - kw) / stride + 1;
    const auto pad = static_cast<std::ptrdiff_t>(padding);
    const auto& xv = x.node()->value;
    const auto& wv = w.node()->value;
    std::vector<double> out(channels * ho * wo, 0.0);

    // Visits every (tap, output row) pair as a run of n outputs starting at o,
    // reading inputs from `in` with step `stride`.
    auto for_each_run = [=](auto&& fn) {
        for (std::size_t c = 0; c < channels; ++c)
            for (std::size_t i = 0; i < kh; ++i)
                for (std::size_t j = 0; j < kw; ++j) {
                    if (wd - 1 + padding < j) continue;
                    const std::size_t ox_lo = j < padding ? (padding - j + stride - 1) / stride : 0;
                    const std::size_t ox_hi = std::min(wo, (wd - 1 + padding - j) / stride + 1);
                    if (ox_lo >= ox_hi) continue;
                    const auto tap = (c * kh + i) * kw + j;
                    for (std::size_t oy = 0; oy < ho; ++oy) {
                        const auto iy = static_cast<std::ptrdiff_t>(oy * stride + i) - pad;
                        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                        const auto ix = ox_lo * stride + j - padding;
                        fn((c * ho + oy) * wo + ox_lo, (c * h + static_cast<std::size_t>(iy)) * wd + ix, tap,
                           ox_hi - ox_lo);
                    }
                }
    };
    for_each_run([&](std::size_t o, std::size_t in, std::size_t tap, std::size_t n) {
        const double wt = wv[tap];
        double* dst = out.data() + o;
        const double* src = xv.data() + in;
        for (std::size_t k = 0; k < n; ++k) dst[k] += wt * src[k * stride];
    });

    auto y = detail::make_result({channels, ho, wo}, std::move(out), {x, w}, [for_each_run, stride](Node& self) {
        auto* nx = input(self, 0);
        auto* nw = input(self, 1);
        const auto& g = self.grad;
        if (wants_grad(nw)) {
            auto& dw = nw->ensure_grad();
            const auto& xv = nx->value;
            for_each_run([&](std::size_t o, std::size_t in, std::size_t tap, std::size_t n) {
                double acc = 0.0;
                for (std::size_t k = 0; k < n; ++k) acc += g[o + k] * xv[in + k * stride];
                dw[tap] += acc;
            });
        }
        if (wants_grad(nx)) {
            auto& dx = nx->ensure_grad();
            const auto& wv = nw->value;
            for_each_run([&](std::size_t o, std::size_t in, std::size_t tap, std::size_t n) {
                const double wt = wv[tap];
                for (std::size_t k = 0; k < n; ++k) dx[in + k * stride] += g[o + k] * wt;
            });
        }
    });
    return bias.defined() ? add_channel_bias(y, bias) : y;
}

Tensor pointwise_conv2d(const Tensor& x, const Tensor& w, const Tensor& bias) {
    require_rank(x, 3, "pointwise_conv2d");
    require_rank(w, 2, "pointwise_conv2d");
    const auto c_in = x.dim(0), h = x.dim(1), wd = x.dim(2);
    if (w.dim(1) != c_in) {
        throw ShapeError("pointwise_conv2d: weight " + shape_str(w.shape()) + " does not fit input " +
                         shape_str(x.shape()));
    }
    auto y = reshape(matmul(w, reshape(x, {c_in, h * wd})), {w.dim(0), h, wd});
    return bias.defined() ? add_channel_bias(y, bias) : y;
}

Tensor cross_entropy_with_logits(const Tensor& logits, std::size_t target) {
    require_rank(logits, 1, "cross_entropy_with_logits");
    const auto classes = logits.dim(0);
    if (target >= classes) {
        throw ContractError("cross_entropy_with_logits: target " + std::to_string(target) + " out of range for " +
                            std::to_string(classes) + " classes");
    }
    const auto& z = logits.node()->value;
    double mx = -INFINITY;
    for (double v : z) {
        if (!std::isfinite(v)) throw NumericError("cross_entropy_with_logits: non-finite logit");
        mx = std::max(mx, v);
    }
    double total = 0.0;
    for (double v : z) total += std::exp(v - mx);
    const double lse = mx + std::log(total);
    return detail::make_result({1}, {lse - z[target]}, {logits}, [lse, target](Node& self) {
        auto* n = input(self, 0);
        auto& g = n->ensure_grad();
        for (std::size_t c = 0; c < g.size(); ++c) {
            double p = std::exp(n->value[c] - lse);
            g[c] += self.grad[0] * (p - (c == target ? 1.0 : 0.0));
        }
    });
}

Tensor l2_normalize(const Tensor& a, double eps) {
    if (a.rank() != 1 && a.rank() != 2) throw ShapeError("l2_normalize: expected rank 1 or 2, got " + shape_str(a.shape()));
    const auto rows = a.rank() == 1 ? 1 : a.dim(0);
    const auto cols = a.rank() == 1 ? a.dim(0) : a.dim(1);
    const auto& v = a.node()->value;
    std::vector<double> out(v.size());
    std::vector<double> norms(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        double ss = 0.0;
        for (std::size_t c = 0; c < cols; ++c) ss += v[r * cols + c] * v[r * cols + c];
        norms[r] = std::max(std::sqrt(ss), eps);
        for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = v[r * cols + c] / norms[r];
    }
    return detail::make_result(a.shape(), std::move(out), {a}, [norms = std::move(norms), rows, cols, eps](Node& self) {
        auto& g = input(self, 0)->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r) {
            const double* y = self.value.data() + r * cols;
            const double* gy = self.grad.data() + r * cols;
            // below eps the op is a plain scaling
            double dot = 0.0;
            if (norms[r] > eps)
                for (std::size_t c = 0; c < cols; ++c) dot += y[c] * gy[c];
            for (std::size_t c = 0; c < cols; ++c) g[r * cols + c] += (gy[c] - y[c] * dot) / norms[r];
        }
    });
}

Tensor fit_columns(const Tensor& a, std::size_t width) {
    require_rank(a, 2, "fit_columns");
    if (width == 0) throw ShapeError("fit_columns: width must be positive");
    const auto rows = a.dim(0), cols = a.dim(1);
    const auto& v = a.node()->value;
    std::vector<double> out(rows * width);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < width; ++c) out[r * width + c] = v[r * cols + std::min(c, cols - 1)];
    return detail::make_result({rows, width}, std::move(out), {a}, [rows, cols, width](Node& self) {
        auto& g = input(self, 0)->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < width; ++c) g[r * cols + std::min(c, cols - 1)] += self.grad[r * width + c];
    });
}

Tensor arc_margin(const Tensor& cosines, std::size_t target, double margin, double scale_factor) {
    require_rank(cosines, 1, "arc_margin");
    const auto classes = cosines.dim(0);
    if (target >= classes) {
        throw ContractError("arc_margin: target " + std::to_string(target) + " out of range for " +
                            std::to_string(classes) + " classes");
    }
    constexpr double kClamp = 1.0 - 1e-7;
    const auto& c = cosines.node()->value;
    std::vector<double> out(classes);
    for (std::size_t k = 0; k < classes; ++k) {
        if (!std::isfinite(c[k])) throw NumericError("arc_margin: non-finite cosine");
        out[k] = scale_factor * c[k];
    }
    // cos(theta + m) as c cos m - sin(theta) sin m
    const double raw = std::clamp(c[target], -1.0, 1.0);
    const double ct = std::clamp(raw, -kClamp, kClamp);
    const double theta = std::acos(ct);
    const bool wrapped = theta + margin > std::numbers::pi;
    const double fallback_slope = margin * std::sin(margin);
    const double sin_exact = std::sqrt(1.0 - raw * raw);
    const double sin_clamped = std::sqrt(1.0 - ct * ct);
    out[target] = wrapped ? scale_factor * (raw - fallback_slope * theta)
                          : scale_factor * (raw * std::cos(margin) - sin_exact * std::sin(margin));
    const double dtarget = wrapped ? scale_factor * (1.0 + fallback_slope / sin_clamped)
                                   : scale_factor * (std::cos(margin) + ct * std::sin(margin) / sin_clamped);
    return detail::make_result({classes}, std::move(out), {cosines},
                               [target, dtarget, scale_factor](Node& self) {
                                   auto& g = input(self, 0)->ensure_grad();
                                   for (std::size_t k = 0; k < g.size(); ++k) {
                                       g[k] += self.grad[k] * (k == target ? dtarget : scale_factor);
                                   }
                               });
}

}  // namespace afpa::ops
