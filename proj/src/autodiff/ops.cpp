#include "percep_tl/autodiff/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "percep_tl/error.hpp"

namespace percep::ad {

namespace {

[[noreturn]] void shape_fail(std::string_view op, const std::string& detail) {
    throw ShapeError(std::string(op) + ": " + detail);
}

// Size of the repeated block when b broadcasts over a's leading dims.
std::size_t broadcast_block(std::string_view op, const Tensor& a, const Tensor& b) {
    const auto& sa = a.shape();
    const auto& sb = b.shape();
    if (sb.size() > sa.size() || !std::equal(sb.rbegin(), sb.rend(), sa.rbegin())) {
        shape_fail(op, "shapes " + to_string(sa) + " and " + to_string(sb) +
                           " are not equal and the right shape is not a trailing suffix");
    }
    return numel(sb);
}

template <typename F, typename DF>
Tensor unary(const Tensor& a, std::string op, F f, DF df) {
    const auto x = a.values();
    std::vector<double> y(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        y[i] = f(x[i]);
    }
    return Tensor::make_result(a.shape(), y, std::move(op), {a},
                               [df, yv = y](Node& n) {
                                   Node& in = *n.inputs[0];
                                   if (!in.requires_grad) {
                                       return;
                                   }
                                   auto& g = in.grad_buffer();
                                   for (std::size_t i = 0; i < g.size(); ++i) {
                                       g[i] += n.grad[i] * df(in.values[i], yv[i]);
                                   }
                               });
}

std::size_t axis_checked(std::string_view op, const Tensor& a, std::size_t axis) {
    if (axis >= a.dim()) {
        shape_fail(op, "axis " + std::to_string(axis) + " out of range for shape " +
                           to_string(a.shape()));
    }
    return axis;
}

// outer x extent x inner decomposition around an axis.
struct AxisSplit {
    std::size_t outer = 1;
    std::size_t extent = 1;
    std::size_t inner = 1;
};

AxisSplit split_at(const Shape& s, std::size_t axis) {
    AxisSplit r;
    for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
    r.extent = s[axis];
    for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
    return r;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    const std::size_t block = broadcast_block("add", a, b);
    const auto x = a.values();
    const auto z = b.values();
    std::vector<double> y(x.size());
    for (std::size_t i = 0; i < y.size(); ++i) {
        y[i] = x[i] + z[i % block];
    }
    return Tensor::make_result(a.shape(), std::move(y), "add", {a, b}, [block](Node& n) {
        Node& l = *n.inputs[0];
        Node& r = *n.inputs[1];
        if (l.requires_grad) {
            l.accumulate(n.grad);
        }
        if (r.requires_grad) {
            auto& g = r.grad_buffer();
            for (std::size_t i = 0; i < n.grad.size(); ++i) {
                g[i % block] += n.grad[i];
            }
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    const std::size_t block = broadcast_block("sub", a, b);
    const auto x = a.values();
    const auto z = b.values();
    std::vector<double> y(x.size());
    for (std::size_t i = 0; i < y.size(); ++i) {
        y[i] = x[i] - z[i % block];
    }
    return Tensor::make_result(a.shape(), std::move(y), "sub", {a, b}, [block](Node& n) {
        Node& l = *n.inputs[0];
        Node& r = *n.inputs[1];
        if (l.requires_grad) {
            l.accumulate(n.grad);
        }
        if (r.requires_grad) {
            auto& g = r.grad_buffer();
            for (std::size_t i = 0; i < n.grad.size(); ++i) {
                g[i % block] -= n.grad[i];
            }
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    const std::size_t block = broadcast_block("mul", a, b);
    const auto x = a.values();
    const auto z = b.values();
    std::vector<double> y(x.size());
    for (std::size_t i = 0; i < y.size(); ++i) {
        y[i] = x[i] * z[i % block];
    }
    return Tensor::make_result(a.shape(), std::move(y), "mul", {a, b}, [block](Node& n) {
        Node& l = *n.inputs[0];
        Node& r = *n.inputs[1];
        if (l.requires_grad) {
            auto& g = l.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) {
                g[i] += n.grad[i] * r.values[i % block];
            }
        }
        if (r.requires_grad) {
            auto& g = r.grad_buffer();
            for (std::size_t i = 0; i < n.grad.size(); ++i) {
                g[i % block] += n.grad[i] * l.values[i];
            }
        }
    });
}

Tensor scale(const Tensor& a, double factor) {
    return unary(
        a, "scale", [factor](double x) { return x * factor; },
        [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& a, double offset) {
    return unary(
        a, "add_scalar", [offset](double x) { return x + offset; },
        [](double, double) { return 1.0; });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    const auto& sa = a.shape();
    const auto& sb = b.shape();
    const bool batched = sa.size() == 3 && sb.size() == 3;
    if (!batched && !(sa.size() == 2 && sb.size() == 2)) {
        shape_fail("matmul", "expected two 2-D or two 3-D operands, got " + to_string(sa) +
                                 " and " + to_string(sb));
    }
    const std::size_t batch = batched ? sa[0] : 1;
    const std::size_t m = sa[sa.size() - 2];
    const std::size_t k = sa[sa.size() - 1];
    const std::size_t k2 = sb[sb.size() - 2];
    const std::size_t n = sb[sb.size() - 1];
    if (k != k2 || (batched && sb[0] != batch)) {
        shape_fail("matmul", "inner dimensions disagree: " + to_string(sa) + " x " + to_string(sb));
    }
    const auto x = a.values();
    const auto w = b.values();
    std::vector<double> y(batch * m * n, 0.0);
    for (std::size_t q = 0; q < batch; ++q) {
        const double* xa = x.data() + q * m * k;
        const double* wb = w.data() + q * k * n;
        double* yo = y.data() + q * m * n;
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t p = 0; p < k; ++p) {
                const double xv = xa[i * k + p];
                for (std::size_t j = 0; j < n; ++j) {
                    yo[i * n + j] += xv * wb[p * n + j];
                }
            }
        }
    }
    Shape out = batched ? Shape{batch, m, n} : Shape{m, n};
    return Tensor::make_result(std::move(out), std::move(y), "matmul", {a, b},
                               [batch, m, k, n](Node& node) {
                                   Node& l = *node.inputs[0];
                                   Node& r = *node.inputs[1];
                                   const double* g = node.grad.data();
                                   if (l.requires_grad) {
                                       auto& gl = l.grad_buffer();
                                       for (std::size_t q = 0; q < batch; ++q) {
                                           for (std::size_t i = 0; i < m; ++i) {
                                               for (std::size_t p = 0; p < k; ++p) {
                                                   double s = 0.0;
                                                   for (std::size_t j = 0; j < n; ++j) {
                                                       s += g[q * m * n + i * n + j] *
                                                            r.values[q * k * n + p * n + j];
                                                   }
                                                   gl[q * m * k + i * k + p] += s;
                                               }
                                           }
                                       }
                                   }
                                   if (r.requires_grad) {
                                       auto& gr = r.grad_buffer();
                                       for (std::size_t q = 0; q < batch; ++q) {
                                           for (std::size_t i = 0; i < m; ++i) {
                                               for (std::size_t p = 0; p < k; ++p) {
                                                   const double xv = l.values[q * m * k + i * k + p];
                                                   for (std::size_t j = 0; j < n; ++j) {
                                                       gr[q * k * n + p * n + j] +=
                                                           xv * g[q * m * n + i * n + j];
                                                   }
                                               }
                                           }
                                       }
                                   }
                               });
}

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t padding) {
    const auto& sx = x.shape();
    const auto& sw = weight.shape();
    if (sx.size() != 4 || sw.size() != 4 || sx[1] != sw[1]) {
        shape_fail("conv2d", "expected x [N,C,H,W] and weight [O,C,kh,kw] with matching C, got " +
                                 to_string(sx) + " and " + to_string(sw));
    }
    const std::size_t N = sx[0], C = sx[1], H = sx[2], W = sx[3];
    const std::size_t O = sw[0], KH = sw[2], KW = sw[3];
    if (H + 2 * padding < KH || W + 2 * padding < KW) {
        shape_fail("conv2d", "kernel " + to_string(sw) + " does not fit input " + to_string(sx) +
                                 " with padding " + std::to_string(padding));
    }
    const bool has_bias = bias.defined();
    if (has_bias && bias.shape() != Shape{O}) {
        shape_fail("conv2d", "bias shape " + to_string(bias.shape()) + " must be [" +
                                 std::to_string(O) + "]");
    }
    const std::size_t OH = H + 2 * padding - KH + 1;
    const std::size_t OW = W + 2 * padding - KW + 1;
    const auto xv = x.values();
    const auto wv = weight.values();
    std::vector<double> y(N * O * OH * OW, 0.0);
    const auto pad = static_cast<std::ptrdiff_t>(padding);

    // Visits every (output, input, weight) triple that contributes to the sum.
    auto for_each_tap = [=](auto&& fn) {
        for (std::size_t nn = 0; nn < N; ++nn)
            for (std::size_t o = 0; o < O; ++o)
                for (std::size_t c = 0; c < C; ++c)
                    for (std::size_t ki = 0; ki < KH; ++ki)
                        for (std::size_t kj = 0; kj < KW; ++kj) {
                            const std::size_t wi = ((o * C + c) * KH + ki) * KW + kj;
                            for (std::size_t i = 0; i < OH; ++i) {
                                const auto hi = static_cast<std::ptrdiff_t>(i + ki) - pad;
                                if (hi < 0 || hi >= static_cast<std::ptrdiff_t>(H)) continue;
                                for (std::size_t j = 0; j < OW; ++j) {
                                    const auto wj = static_cast<std::ptrdiff_t>(j + kj) - pad;
                                    if (wj < 0 || wj >= static_cast<std::ptrdiff_t>(W)) continue;
                                    const std::size_t xi =
                                        ((nn * C + c) * H + static_cast<std::size_t>(hi)) * W +
                                        static_cast<std::size_t>(wj);
                                    const std::size_t yi = ((nn * O + o) * OH + i) * OW + j;
                                    fn(yi, xi, wi);
                                }
                            }
                        }
    };

    for_each_tap([&](std::size_t yi, std::size_t xi, std::size_t wi) { y[yi] += xv[xi] * wv[wi]; });
    if (has_bias) {
        const auto bv = bias.values();
        for (std::size_t i = 0; i < y.size(); ++i) {
            y[i] += bv[(i / (OH * OW)) % O];
        }
    }
    std::vector<Tensor> inputs{x, weight};
    if (has_bias) {
        inputs.push_back(bias);
    }
    return Tensor::make_result(
        {N, O, OH, OW}, std::move(y), "conv2d", std::move(inputs),
        [for_each_tap, O, OH, OW, has_bias](Node& n) {
            Node& in = *n.inputs[0];
            Node& w = *n.inputs[1];
            const auto& g = n.grad;
            if (in.requires_grad) {
                auto& gx = in.grad_buffer();
                for_each_tap([&](std::size_t yi, std::size_t xi, std::size_t wi) {
                    gx[xi] += g[yi] * w.values[wi];
                });
            }
            if (w.requires_grad) {
                auto& gw = w.grad_buffer();
                for_each_tap([&](std::size_t yi, std::size_t xi, std::size_t wi) {
                    gw[wi] += g[yi] * in.values[xi];
                });
            }
            if (has_bias && n.inputs[2]->requires_grad) {
                auto& gb = n.inputs[2]->grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) {
                    gb[(i / (OH * OW)) % O] += g[i];
                }
            }
        });
}

Tensor relu(const Tensor& a) {
    return unary(
        a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
        [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& a) {
    return unary(
        a, "sigmoid",
        [](double x) {
            if (x >= 0.0) {
                return 1.0 / (1.0 + std::exp(-x));
            }
            const double e = std::exp(x);
            return e / (1.0 + e);
        },
        [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& a) {
    return unary(
        a, "tanh", [](double x) { return std::tanh(x); },
        [](double, double y) { return 1.0 - y * y; });
}

Tensor log(const Tensor& a) {
    for (double v : a.values()) {
        if (!(v > 0.0)) {
            throw Error("log: input must be positive, got " + std::to_string(v));
        }
    }
    return unary(
        a, "log", [](double x) { return std::log(x); },
        [](double x, double) { return 1.0 / x; });
}

Tensor abs(const Tensor& a) {
    return unary(
        a, "abs", [](double x) { return std::fabs(x); },
        [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Tensor square(const Tensor& a) {
    return unary(
        a, "square", [](double x) { return x * x; },
        [](double x, double) { return 2.0 * x; });
}

Tensor sqrt(const Tensor& a) {
    for (double v : a.values()) {
        if (v < 0.0) {
            throw Error("sqrt: input must be nonnegative, got " + std::to_string(v));
        }
    }
    return unary(
        a, "sqrt", [](double x) { return std::sqrt(x); },
        [](double, double y) { return y > 0.0 ? 0.5 / y : 0.0; });
}

Tensor softmax(const Tensor& a) {
    if (a.dim() == 0) {
        shape_fail("softmax", "no axis to normalize over (scalar input)");
    }
    const std::size_t cols = a.shape().back();
    const std::size_t rows = a.numel() / cols;
    const auto x = a.values();
    std::vector<double> y(x.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = x.data() + r * cols;
        double* yr = y.data() + r * cols;
        const double m = *std::max_element(xr, xr + cols);
        double s = 0.0;
        for (std::size_t c = 0; c < cols; ++c) {
            yr[c] = std::exp(xr[c] - m);
            s += yr[c];
        }
        for (std::size_t c = 0; c < cols; ++c) {
            yr[c] /= s;
        }
    }
    return Tensor::make_result(a.shape(), y, "softmax", {a}, [rows, cols, yv = y](Node& n) {
        Node& in = *n.inputs[0];
        if (!in.requires_grad) return;
        auto& g = in.grad_buffer();
        for (std::size_t r = 0; r < rows; ++r) {
            double dot = 0.0;
            for (std::size_t c = 0; c < cols; ++c) dot += n.grad[r * cols + c] * yv[r * cols + c];
            for (std::size_t c = 0; c < cols; ++c) {
                const std::size_t i = r * cols + c;
                g[i] += yv[i] * (n.grad[i] - dot);
            }
        }
    });
}

Tensor log_softmax(const Tensor& a) {
    if (a.dim() == 0) {
        shape_fail("log_softmax", "no axis to normalize over (scalar input)");
    }
    const std::size_t cols = a.shape().back();
    const std::size_t rows = a.numel() / cols;
    const auto x = a.values();
    std::vector<double> y(x.size());
    std::vector<double> p(x.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = x.data() + r * cols;
        const double m = *std::max_element(xr, xr + cols);
        double s = 0.0;
        for (std::size_t c = 0; c < cols; ++c) s += std::exp(xr[c] - m);
        const double lse = m + std::log(s);
        for (std::size_t c = 0; c < cols; ++c) {
            y[r * cols + c] = xr[c] - lse;
            p[r * cols + c] = std::exp(xr[c] - lse);
        }
    }
    return Tensor::make_result(a.shape(), std::move(y), "log_softmax", {a},
                               [rows, cols, p = std::move(p)](Node& n) {
                                   Node& in = *n.inputs[0];
                                   if (!in.requires_grad) return;
                                   auto& g = in.grad_buffer();
                                   for (std::size_t r = 0; r < rows; ++r) {
                                       double s = 0.0;
                                       for (std::size_t c = 0; c < cols; ++c) s += n.grad[r * cols + c];
                                       for (std::size_t c = 0; c < cols; ++c) {
                                           const std::size_t i = r * cols + c;
                                           g[i] += n.grad[i] - p[i] * s;
                                       }
                                   }
                               });
}

Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (double v : a.values()) s += v;
    return Tensor::make_result({}, {s}, "sum", {a}, [](Node& n) {
        Node& in = *n.inputs[0];
        if (!in.requires_grad) return;
        auto& g = in.grad_buffer();
        for (auto& v : g) v += n.grad[0];
    });
}

Tensor sum(const Tensor& a, std::size_t axis) {
    axis_checked("sum", a, axis);
    const auto sp = split_at(a.shape(), axis);
    Shape out = a.shape();
    out.erase(out.begin() + static_cast<std::ptrdiff_t>(axis));
    const auto x = a.values();
    std::vector<double> y(sp.outer * sp.inner, 0.0);
    for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t e = 0; e < sp.extent; ++e)
            for (std::size_t i = 0; i < sp.inner; ++i)
                y[o * sp.inner + i] += x[(o * sp.extent + e) * sp.inner + i];
    return Tensor::make_result(std::move(out), std::move(y), "sum", {a}, [sp](Node& n) {
        Node& in = *n.inputs[0];
        if (!in.requires_grad) return;
        auto& g = in.grad_buffer();
        for (std::size_t o = 0; o < sp.outer; ++o)
            for (std::size_t e = 0; e < sp.extent; ++e)
                for (std::size_t i = 0; i < sp.inner; ++i)
                    g[(o * sp.extent + e) * sp.inner + i] += n.grad[o * sp.inner + i];
    });
}

Tensor mean(const Tensor& a) {
    return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor mean(const Tensor& a, std::size_t axis) {
    axis_checked("mean", a, axis);
    return scale(sum(a, axis), 1.0 / static_cast<double>(a.extent(axis)));
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
    if (parts.empty()) {
        shape_fail("concat", "no inputs");
    }
    const Shape& first = parts[0].shape();
    axis_checked("concat", parts[0], axis);
    Shape out = first;
    out[axis] = 0;
    std::vector<std::size_t> extents;
    for (const auto& p : parts) {
        const Shape& s = p.shape();
        bool ok = s.size() == first.size();
        for (std::size_t d = 0; ok && d < s.size(); ++d) {
            ok = d == axis || s[d] == first[d];
        }
        if (!ok) {
            shape_fail("concat", "shape " + to_string(s) + " incompatible with " + to_string(first) +
                                     " along axis " + std::to_string(axis));
        }
        extents.push_back(s[axis]);
        out[axis] += s[axis];
    }
    const auto sp = split_at(out, axis);
    std::vector<double> y(numel(out));
    std::size_t offset = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const auto x = parts[k].values();
        const std::size_t chunk = extents[k] * sp.inner;
        for (std::size_t o = 0; o < sp.outer; ++o) {
            std::copy_n(x.data() + o * chunk, chunk, y.data() + o * sp.extent * sp.inner + offset);
        }
        offset += chunk;
    }
    std::vector<Tensor> inputs(parts.begin(), parts.end());
    return Tensor::make_result(std::move(out), std::move(y), "concat", std::move(inputs),
                               [sp, extents](Node& n) {
                                   std::size_t off = 0;
                                   for (std::size_t k = 0; k < n.inputs.size(); ++k) {
                                       Node& in = *n.inputs[k];
                                       const std::size_t chunk = extents[k] * sp.inner;
                                       if (in.requires_grad) {
                                           auto& g = in.grad_buffer();
                                           for (std::size_t o = 0; o < sp.outer; ++o)
                                               for (std::size_t i = 0; i < chunk; ++i)
                                                   g[o * chunk + i] +=
                                                       n.grad[o * sp.extent * sp.inner + off + i];
                                       }
                                       off += chunk;
                                   }
                               });
}

Tensor reshape(const Tensor& a, Shape shape) {
    if (numel(shape) != a.numel()) {
        shape_fail("reshape", "cannot reshape " + to_string(a.shape()) + " to " + to_string(shape));
    }
    std::vector<double> y(a.values().begin(), a.values().end());
    return Tensor::make_result(std::move(shape), std::move(y), "reshape", {a}, [](Node& n) {
        Node& in = *n.inputs[0];
        if (in.requires_grad) in.accumulate(n.grad);
    });
}

Tensor permute(const Tensor& a, std::span<const std::size_t> order) {
    const Shape& s = a.shape();
    std::vector<bool> used(s.size(), false);
    bool ok = order.size() == s.size();
    for (std::size_t i = 0; ok && i < order.size(); ++i) {
        ok = order[i] < s.size() && !used[order[i]];
        if (ok) used[order[i]] = true;
    }
    if (!ok) {
        shape_fail("permute", "invalid axis order for shape " + to_string(s));
    }
    std::vector<std::size_t> in_stride(s.size(), 1);
    for (std::size_t d = s.size(); d-- > 1;) in_stride[d - 1] = in_stride[d] * s[d];
    Shape out(s.size());
    for (std::size_t d = 0; d < s.size(); ++d) out[d] = s[order[d]];
    // src[i] is the input offset of output element i.
    const std::size_t total = numel(s);
    std::vector<std::size_t> src(total);
    std::vector<std::size_t> idx(s.size(), 0);
    for (std::size_t i = 0; i < total; ++i) {
        std::size_t off = 0;
        for (std::size_t d = 0; d < s.size(); ++d) off += idx[d] * in_stride[order[d]];
        src[i] = off;
        for (std::size_t d = s.size(); d-- > 0;) {
            if (++idx[d] < out[d]) break;
            idx[d] = 0;
        }
    }
    const auto x = a.values();
    std::vector<double> y(total);
    for (std::size_t i = 0; i < total; ++i) y[i] = x[src[i]];
    return Tensor::make_result(std::move(out), std::move(y), "permute", {a},
                               [src = std::move(src)](Node& n) {
                                   Node& in = *n.inputs[0];
                                   if (!in.requires_grad) return;
                                   auto& g = in.grad_buffer();
                                   for (std::size_t i = 0; i < src.size(); ++i) g[src[i]] += n.grad[i];
                               });
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end) {
    axis_checked("slice", a, axis);
    if (begin >= end || end > a.extent(axis)) {
        shape_fail("slice", "range [" + std::to_string(begin) + ", " + std::to_string(end) +
                                ") invalid for axis " + std::to_string(axis) + " of " +
                                to_string(a.shape()));
    }
    const auto sp = split_at(a.shape(), axis);
    Shape out = a.shape();
    out[axis] = end - begin;
    const std::size_t len = end - begin;
    const auto x = a.values();
    std::vector<double> y(sp.outer * len * sp.inner);
    for (std::size_t o = 0; o < sp.outer; ++o) {
        std::copy_n(x.data() + (o * sp.extent + begin) * sp.inner, len * sp.inner,
                    y.data() + o * len * sp.inner);
    }
    return Tensor::make_result(std::move(out), std::move(y), "slice", {a},
                               [sp, begin, len](Node& n) {
                                   Node& in = *n.inputs[0];
                                   if (!in.requires_grad) return;
                                   auto& g = in.grad_buffer();
                                   for (std::size_t o = 0; o < sp.outer; ++o)
                                       for (std::size_t i = 0; i < len * sp.inner; ++i)
                                           g[(o * sp.extent + begin) * sp.inner + i] +=
                                               n.grad[o * len * sp.inner + i];
                               });
}

Tensor pick(const Tensor& a, std::span<const std::size_t> index) {
    if (a.dim() != 2 || index.size() != a.extent(0)) {
        shape_fail("pick", "expected [N,C] input with N indices, got " + to_string(a.shape()) +
                               " and " + std::to_string(index.size()) + " indices");
    }
    const std::size_t cols = a.extent(1);
    std::vector<std::size_t> idx(index.begin(), index.end());
    std::vector<double> y(idx.size());
    const auto x = a.values();
    for (std::size_t r = 0; r < idx.size(); ++r) {
        if (idx[r] >= cols) {
            shape_fail("pick", "index " + std::to_string(idx[r]) + " out of range for " +
                                   std::to_string(cols) + " columns");
        }
        y[r] = x[r * cols + idx[r]];
    }
    const std::size_t rows = idx.size();
    return Tensor::make_result({rows}, std::move(y), "pick", {a},
                               [cols, idx = std::move(idx)](Node& n) {
                                   Node& in = *n.inputs[0];
                                   if (!in.requires_grad) return;
                                   auto& g = in.grad_buffer();
                                   for (std::size_t r = 0; r < idx.size(); ++r)
                                       g[r * cols + idx[r]] += n.grad[r];
                               });
}

std::string_view to_string(OpKind kind) {
    switch (kind) {
        case OpKind::matmul: return "matmul";
        case OpKind::conv2d: return "conv2d";
        case OpKind::add: return "add";
        case OpKind::mul: return "mul";
        case OpKind::relu: return "relu";
        case OpKind::softmax: return "softmax";
        case OpKind::log: return "log";
        case OpKind::sum: return "sum";
        case OpKind::mean: return "mean";
        case OpKind::abs: return "abs";
        case OpKind::square: return "square";
        case OpKind::sqrt: return "sqrt";
        case OpKind::sigmoid: return "sigmoid";
        case OpKind::concat: return "concat";
        case OpKind::reshape: return "reshape";
    }
    return "unknown";
}

Tensor forward_op(OpKind kind, std::span<const Tensor> inputs, const OpAttrs& attrs) {
    auto arity = [&](std::size_t lo, std::size_t hi) {
        if (inputs.size() < lo || inputs.size() > hi) {
            throw ShapeError(std::string(to_string(kind)) + ": expected " + std::to_string(lo) +
                             (lo == hi ? "" : "-" + std::to_string(hi)) + " inputs, got " +
                             std::to_string(inputs.size()));
        }
    };
    switch (kind) {
        case OpKind::matmul: arity(2, 2); return matmul(inputs[0], inputs[1]);
        case OpKind::conv2d:
            arity(2, 3);
            if (attrs.stride != 1) {
                throw ShapeError("conv2d: only stride 1 is supported, got " + std::to_string(attrs.stride));
            }
            return conv2d(inputs[0], inputs[1], inputs.size() == 3 ? inputs[2] : Tensor{}, attrs.padding);
        case OpKind::add: arity(2, 2); return add(inputs[0], inputs[1]);
        case OpKind::mul: arity(2, 2); return mul(inputs[0], inputs[1]);
        case OpKind::relu: arity(1, 1); return relu(inputs[0]);
        case OpKind::softmax: arity(1, 1); return softmax(inputs[0]);
        case OpKind::log: arity(1, 1); return log(inputs[0]);
        case OpKind::sum:
            arity(1, 1);
            return attrs.axis < 0 ? sum(inputs[0]) : sum(inputs[0], static_cast<std::size_t>(attrs.axis));
        case OpKind::mean:
            arity(1, 1);
            return attrs.axis < 0 ? mean(inputs[0]) : mean(inputs[0], static_cast<std::size_t>(attrs.axis));
        case OpKind::abs: arity(1, 1); return abs(inputs[0]);
        case OpKind::square: arity(1, 1); return square(inputs[0]);
        case OpKind::sqrt: arity(1, 1); return sqrt(inputs[0]);
        case OpKind::sigmoid: arity(1, 1); return sigmoid(inputs[0]);
        case OpKind::concat:
            arity(1, inputs.size());
            return concat(inputs, attrs.axis < 0 ? 0 : static_cast<std::size_t>(attrs.axis));
        case OpKind::reshape: arity(1, 1); return reshape(inputs[0], attrs.shape);
    }
    throw Error("forward_op: unknown op kind");
}

}  // namespace percep::ad
