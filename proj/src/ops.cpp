#include "ibt/ops.hpp"

#include "ibt/errors.hpp"
#include "ibt/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace ibt {

using detail::make_result;
using detail::Node;

namespace {

// Gradient buffer of parent `i`, or nullptr when it does not need one.
std::vector<double>* parent_grad(Node& self, std::size_t i) {
    Node& p = *self.parents[i];
    return p.requires_grad ? &p.grad_buffer() : nullptr;
}

void check_axis(const Shape& s, std::size_t axis, const char* op) {
    if (axis >= s.size()) {
        throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for shape " +
                             shape_str(s));
    }
}

// Splits a shape around `axis` into outer * len * inner.
struct AxisSplit {
    std::size_t outer = 1, len = 1, inner = 1;
};

AxisSplit split_at(const Shape& s, std::size_t axis) {
    AxisSplit r;
    for (std::size_t d = 0; d < axis; ++d) r.outer *= s[d];
    r.len = s[axis];
    for (std::size_t d = axis + 1; d < s.size(); ++d) r.inner *= s[d];
    return r;
}

Shape drop_axis(const Shape& s, std::size_t axis) {
    Shape out;
    for (std::size_t d = 0; d < s.size(); ++d)
        if (d != axis) out.push_back(s[d]);
    return out;
}

std::vector<std::size_t> row_major_strides(const Shape& s) {
    std::vector<std::size_t> st(s.size(), 1);
    for (std::size_t d = s.size(); d-- > 1;) st[d - 1] = st[d] * s[d];
    return st;
}

// Per-output-axis strides into an operand aligned to `out` (0 where broadcast).
std::vector<std::size_t> broadcast_strides(const Shape& in, const Shape& out) {
    std::vector<std::size_t> st(out.size(), 0);
    const auto own = row_major_strides(in);
    const std::size_t shift = out.size() - in.size();
    for (std::size_t d = 0; d < in.size(); ++d) st[d + shift] = in[d] == 1 ? 0 : own[d];
    return st;
}

struct BroadcastPlan {
    Shape out;
    std::vector<std::size_t> sa, sb;
};

BroadcastPlan plan_broadcast(const Shape& a, const Shape& b) {
    BroadcastPlan p;
    p.out = broadcast_shapes(a, b);
    p.sa = broadcast_strides(a, p.out);
    p.sb = broadcast_strides(b, p.out);
    return p;
}

// Calls f(out_offset, a_offset, b_offset, len, a_last_stride, b_last_stride) for
// every contiguous run along the last output axis.
template <class F>
void broadcast_loop(const BroadcastPlan& p, F&& f) {
    const std::size_t rank = p.out.size();
    if (rank == 0) {
        f(std::size_t{0}, std::size_t{0}, std::size_t{0}, std::size_t{1}, std::size_t{0}, std::size_t{0});
        return;
    }
    const std::size_t last = p.out.back();
    const std::size_t total = shape_numel(p.out);
    if (last == 0 || total == 0) return;
    const std::size_t outer = total / last;
    std::vector<std::size_t> idx(rank - 1, 0);
    std::size_t oa = 0, ob = 0;
    for (std::size_t o = 0; o < outer; ++o) {
        f(o * last, oa, ob, last, p.sa.back(), p.sb.back());
        for (std::size_t d = rank - 1; d-- > 0;) {
            ++idx[d];
            oa += p.sa[d];
            ob += p.sb[d];
            if (idx[d] < p.out[d]) break;
            oa -= p.sa[d] * p.out[d];
            ob -= p.sb[d] * p.out[d];
            idx[d] = 0;
        }
    }
}

enum class BinaryKind { add, sub, mul };

Tensor binary(const Tensor& a, const Tensor& b, BinaryKind kind) {
    const auto& ad = a.data();
    const auto& bd = b.data();
    if (a.shape() == b.shape()) {
        const std::size_t n = ad.size();
        std::vector<double> out(n);
        switch (kind) {
            case BinaryKind::add:
                for (std::size_t i = 0; i < n; ++i) out[i] = ad[i] + bd[i];
                break;
            case BinaryKind::sub:
                for (std::size_t i = 0; i < n; ++i) out[i] = ad[i] - bd[i];
                break;
            case BinaryKind::mul:
                for (std::size_t i = 0; i < n; ++i) out[i] = ad[i] * bd[i];
                break;
        }
        return make_result(a.shape(), std::move(out), {a, b}, [kind](Node& self) {
            const auto& g = self.grad;
            const auto& av = self.parents[0]->data;
            const auto& bv = self.parents[1]->data;
            if (auto* ga = parent_grad(self, 0)) {
                if (kind == BinaryKind::mul)
                    for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * bv[i];
                else
                    for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
            }
            if (auto* gb = parent_grad(self, 1)) {
                if (kind == BinaryKind::mul)
                    for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * av[i];
                else if (kind == BinaryKind::sub)
                    for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] -= g[i];
                else
                    for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i];
            }
        });
    }

    auto plan = plan_broadcast(a.shape(), b.shape());
    std::vector<double> out(shape_numel(plan.out));
    broadcast_loop(plan, [&](std::size_t o, std::size_t oa, std::size_t ob, std::size_t len, std::size_t la,
                             std::size_t lb) {
        for (std::size_t j = 0; j < len; ++j) {
            const double x = ad[oa + j * la];
            const double y = bd[ob + j * lb];
            out[o + j] = kind == BinaryKind::add ? x + y : kind == BinaryKind::sub ? x - y : x * y;
        }
    });
    Shape out_shape = plan.out;
    return make_result(std::move(out_shape), std::move(out), {a, b}, [kind, plan](Node& self) {
        const auto& g = self.grad;
        const auto& av = self.parents[0]->data;
        const auto& bv = self.parents[1]->data;
        auto* ga = parent_grad(self, 0);
        auto* gb = parent_grad(self, 1);
        broadcast_loop(plan, [&](std::size_t o, std::size_t oa, std::size_t ob, std::size_t len, std::size_t la,
                                 std::size_t lb) {
            for (std::size_t j = 0; j < len; ++j) {
                const double gj = g[o + j];
                if (ga) (*ga)[oa + j * la] += kind == BinaryKind::mul ? gj * bv[ob + j * lb] : gj;
                if (gb) {
                    (*gb)[ob + j * lb] += kind == BinaryKind::mul   ? gj * av[oa + j * la]
                                          : kind == BinaryKind::sub ? -gj
                                                                    : gj;
                }
            }
        });
    });
}

template <class Fwd, class Deriv>
Tensor unary(const Tensor& x, Fwd fwd, Deriv deriv) {
    const auto& xd = x.data();
    std::vector<double> out(xd.size());
    for (std::size_t i = 0; i < xd.size(); ++i) out[i] = fwd(xd[i]);
    return make_result(x.shape(), std::move(out), {x}, [deriv](Node& self) {
        auto* gx = parent_grad(self, 0);
        if (!gx) return;
        const auto& xin = self.parents[0]->data;
        for (std::size_t i = 0; i < self.grad.size(); ++i) (*gx)[i] += self.grad[i] * deriv(xin[i], self.data[i]);
    });
}

}  // namespace

Shape broadcast_shapes(const Shape& a, const Shape& b) {
    const std::size_t rank = std::max(a.size(), b.size());
    Shape out(rank);
    for (std::size_t i = 0; i < rank; ++i) {
        const std::size_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
        const std::size_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
        if (da != db && da != 1 && db != 1) {
            throw DimensionError("cannot broadcast shapes " + shape_str(a) + " and " + shape_str(b));
        }
        out[i] = da == 1 ? db : da;
    }
    return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    const Shape& as = a.shape();
    const Shape& bs = b.shape();
    if (as.size() < 2 || bs.size() < 2) {
        throw DimensionError("matmul needs rank >= 2 operands, got " + shape_str(as) + " and " + shape_str(bs));
    }
    const std::size_t m = as[as.size() - 2], k = as.back(), p = bs.back();
    if (bs[bs.size() - 2] != k) {
        throw DimensionError("matmul inner dimensions differ: " + shape_str(as) + " x " + shape_str(bs));
    }

    if (bs.size() == 2) {
        // Fold every leading axis of `a` into rows: one GEMM.
        const std::size_t rows = a.numel() / k;
        Shape out_shape(as.begin(), as.end() - 1);
        out_shape.push_back(p);
        std::vector<double> out(rows * p);
        kernels::gemm({rows, p, k, a.data().data(), b.data().data(), out.data()});
        return make_result(std::move(out_shape), std::move(out), {a, b}, [rows, k, p](Node& self) {
            const double* g = self.grad.data();
            if (auto* ga = parent_grad(self, 0)) {
                kernels::gemm({rows, k, p, g, self.parents[1]->data.data(), ga->data(), false, true, true});
            }
            if (auto* gb = parent_grad(self, 1)) {
                kernels::gemm({k, p, rows, self.parents[0]->data.data(), g, gb->data(), true, false, true});
            }
        });
    }

    const Shape a_batch(as.begin(), as.end() - 2);
    const Shape b_batch(bs.begin(), bs.end() - 2);
    const Shape batch = broadcast_shapes(a_batch, b_batch);
    const auto sa = broadcast_strides(a_batch, batch);
    const auto sb = broadcast_strides(b_batch, batch);
    const std::size_t nbatch = shape_numel(batch);

    // Matrix offsets (in matrices, not elements) of each batch entry.
    std::vector<std::size_t> a_off(nbatch), b_off(nbatch);
    {
        std::vector<std::size_t> idx(batch.size(), 0);
        for (std::size_t t = 0; t < nbatch; ++t) {
            std::size_t oa = 0, ob = 0;
            for (std::size_t d = 0; d < batch.size(); ++d) {
                oa += idx[d] * sa[d];
                ob += idx[d] * sb[d];
            }
            a_off[t] = oa;
            b_off[t] = ob;
            for (std::size_t d = batch.size(); d-- > 0;) {
                if (++idx[d] < batch[d]) break;
                idx[d] = 0;
            }
        }
    }

    Shape out_shape = batch;
    out_shape.push_back(m);
    out_shape.push_back(p);
    std::vector<double> out(nbatch * m * p);
    const double* ad = a.data().data();
    const double* bd = b.data().data();
    for (std::size_t t = 0; t < nbatch; ++t) {
        kernels::gemm({m, p, k, ad + a_off[t] * m * k, bd + b_off[t] * k * p, out.data() + t * m * p});
    }
    return make_result(std::move(out_shape), std::move(out), {a, b},
                       [m, k, p, nbatch, a_off = std::move(a_off), b_off = std::move(b_off)](Node& self) {
                           const double* g = self.grad.data();
                           const double* av = self.parents[0]->data.data();
                           const double* bv = self.parents[1]->data.data();
                           auto* ga = parent_grad(self, 0);
                           auto* gb = parent_grad(self, 1);
                           for (std::size_t t = 0; t < nbatch; ++t) {
                               const double* gt = g + t * m * p;
                               if (ga) {
                                   kernels::gemm({m, k, p, gt, bv + b_off[t] * k * p, ga->data() + a_off[t] * m * k,
                                                  false, true, true});
                               }
                               if (gb) {
                                   kernels::gemm({k, p, m, av + a_off[t] * m * k, gt, gb->data() + b_off[t] * k * p,
                                                  true, false, true});
                               }
                           }
                       });
}

Tensor transpose_last(const Tensor& x) {
    const Shape& s = x.shape();
    if (s.size() < 2) throw DimensionError("transpose_last needs rank >= 2, got " + shape_str(s));
    const std::size_t r = s[s.size() - 2], c = s.back();
    const std::size_t nb = x.numel() / (r * c);
    Shape out_shape = s;
    std::swap(out_shape[s.size() - 2], out_shape[s.size() - 1]);
    const auto& xd = x.data();
    std::vector<double> out(xd.size());
    for (std::size_t t = 0; t < nb; ++t)
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) out[t * r * c + j * r + i] = xd[t * r * c + i * c + j];
    return make_result(std::move(out_shape), std::move(out), {x}, [nb, r, c](Node& self) {
        auto* gx = parent_grad(self, 0);
        if (!gx) return;
        for (std::size_t t = 0; t < nb; ++t)
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) (*gx)[t * r * c + i * c + j] += self.grad[t * r * c + j * r + i];
    });
}

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::add); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::sub); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::mul); }

Tensor scale(const Tensor& x, double factor) {
    return unary(
        x, [factor](double v) { return v * factor; }, [factor](double, double) { return factor; });
}

Tensor relu(const Tensor& x) {
    return unary(
        x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
    return unary(
        x,
        [](double v) {
            if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
            const double e = std::exp(v);
            return e / (1.0 + e);
        },
        [](double, double y) { return y * (1.0 - y); });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
    check_axis(x.shape(), axis, "softmax");
    const auto sp = split_at(x.shape(), axis);
    const auto& xd = x.data();
    std::vector<double> out(xd.size());
    for (std::size_t o = 0; o < sp.outer; ++o) {
        for (std::size_t in = 0; in < sp.inner; ++in) {
            const std::size_t base = o * sp.len * sp.inner + in;
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t l = 0; l < sp.len; ++l) mx = std::max(mx, xd[base + l * sp.inner]);
            double total = 0.0;
            for (std::size_t l = 0; l < sp.len; ++l) {
                const double e = std::exp(xd[base + l * sp.inner] - mx);
                out[base + l * sp.inner] = e;
                total += e;
            }
            if (!std::isfinite(total) || total <= 0.0) throw NumericError("softmax: non-finite input");
            for (std::size_t l = 0; l < sp.len; ++l) out[base + l * sp.inner] /= total;
        }
    }
    return make_result(x.shape(), std::move(out), {x}, [sp](Node& self) {
        auto* gx = parent_grad(self, 0);
        if (!gx) return;
        const auto& y = self.data;
        const auto& g = self.grad;
        for (std::size_t o = 0; o < sp.outer; ++o) {
            for (std::size_t in = 0; in < sp.inner; ++in) {
                const std::size_t base = o * sp.len * sp.inner + in;
                double dot = 0.0;
                for (std::size_t l = 0; l < sp.len; ++l) dot += g[base + l * sp.inner] * y[base + l * sp.inner];
                for (std::size_t l = 0; l < sp.len; ++l) {
                    const std::size_t i = base + l * sp.inner;
                    (*gx)[i] += y[i] * (g[i] - dot);
                }
            }
        }
    });
}

Tensor log_softmax(const Tensor& x, std::size_t axis) {
    check_axis(x.shape(), axis, "log_softmax");
    const auto sp = split_at(x.shape(), axis);
    const auto& xd = x.data();
    std::vector<double> out(xd.size());
    for (std::size_t o = 0; o < sp.outer; ++o) {
        for (std::size_t in = 0; in < sp.inner; ++in) {
            const std::size_t base = o * sp.len * sp.inner + in;
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t l = 0; l < sp.len; ++l) mx = std::max(mx, xd[base + l * sp.inner]);
            double total = 0.0;
            for (std::size_t l = 0; l < sp.len; ++l) total += std::exp(xd[base + l * sp.inner] - mx);
            if (!std::isfinite(total)) throw NumericError("log_softmax: non-finite input");
            const double lse = mx + std::log(total);
            for (std::size_t l = 0; l < sp.len; ++l) out[base + l * sp.inner] = xd[base + l * sp.inner] - lse;
        }
    }
    return make_result(x.shape(), std::move(out), {x}, [sp](Node& self) {
        auto* gx = parent_grad(self, 0);
        if (!gx) return;
        const auto& y = self.data;
        const auto& g = self.grad;
        for (std::size_t o = 0; o < sp.outer; ++o) {
            for (std::size_t in = 0; in < sp.inner; ++in) {
                const std::size_t base = o * sp.len * sp.inner + in;
                double gsum = 0.0;
                for (std::size_t l = 0; l < sp.len; ++l) gsum += g[base + l * sp.inner];
                for (std::size_t l = 0; l < sp.len; ++l) {
                    const std::size_t i = base + l * sp.inner;
                    (*gx)[i] += g[i] - std::exp(y[i]) * gsum;
                }
            }
        }
    });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
    if (parts.empty()) throw DimensionError("concat of zero tensors");
    const Shape& first = parts.front().shape();
    check_axis(first, axis, "concat");
    std::vector<std::size_t> lens;
    std::size_t total_len = 0;
    for (const auto& t : parts) {
        const Shape& s = t.shape();
        bool ok = s.size() == first.size();
        for (std::size_t d = 0; ok && d < s.size(); ++d) ok = d == axis || s[d] == first[d];
        if (!ok) {
            throw DimensionError("concat along axis " + std::to_string(axis) + ": incompatible shapes " +
                                 shape_str(first) + " and " + shape_str(s));
        }
        lens.push_back(s[axis]);
        total_len += s[axis];
    }
    Shape out_shape = first;
    out_shape[axis] = total_len;
    const auto sp = split_at(out_shape, axis);
    std::vector<double> out(shape_numel(out_shape));
    std::size_t offset = 0;
    for (std::size_t p = 0; p < parts.size(); ++p) {
        const auto& src = parts[p].data();
        const std::size_t block = lens[p] * sp.inner;
        for (std::size_t o = 0; o < sp.outer; ++o) {
            std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(o * block), block,
                        out.begin() + static_cast<std::ptrdiff_t>(o * total_len * sp.inner + offset));
        }
        offset += block;
    }
    return make_result(std::move(out_shape), std::move(out), parts, [sp, lens, total_len](Node& self) {
        std::size_t offset = 0;
        for (std::size_t p = 0; p < lens.size(); ++p) {
            const std::size_t block = lens[p] * sp.inner;
            if (auto* gp = parent_grad(self, p)) {
                for (std::size_t o = 0; o < sp.outer; ++o) {
                    const double* g = self.grad.data() + o * total_len * sp.inner + offset;
                    double* dst = gp->data() + o * block;
                    for (std::size_t i = 0; i < block; ++i) dst[i] += g[i];
                }
            }
            offset += block;
        }
    });
}

Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) {
        throw DimensionError("cannot reshape " + shape_str(x.shape()) + " to " + shape_str(shape));
    }
    std::vector<double> out(x.data().begin(), x.data().end());
    return make_result(std::move(shape), std::move(out), {x}, [](Node& self) {
        auto* gx = parent_grad(self, 0);
        if (!gx) return;
        for (std::size_t i = 0; i < self.grad.size(); ++i) (*gx)[i] += self.grad[i];
    });
}

Tensor broadcast_to(const Tensor& x, const Shape& shape) {
    if (broadcast_shapes(x.shape(), shape) != shape) {
        throw DimensionError("cannot broadcast " + shape_str(x.shape()) + " to " + shape_str(shape));
    }
    BroadcastPlan plan{shape, broadcast_strides(x.shape(), shape), std::vector<std::size_t>(shape.size(), 0)};
    const auto& xd = x.data();
    std::vector<double> out(shape_numel(shape));
    broadcast_loop(plan, [&](std::size_t o, std::size_t oa, std::size_t, std::size_t len, std::size_t la,
                             std::size_t) {
        for (std::size_t j = 0; j < len; ++j) out[o + j] = xd[oa + j * la];
    });
    return make_result(shape, std::move(out), {x}, [plan](Node& self) {
        auto* gx = parent_grad(self, 0);
        if (!gx) return;
        broadcast_loop(plan, [&](std::size_t o, std::size_t oa, std::size_t, std::size_t len, std::size_t la,
                                 std::size_t) {
            for (std::size_t j = 0; j < len; ++j) (*gx)[oa + j * la] += self.grad[o + j];
        });
    });
}

MaxResult reduce_max(const Tensor& x, std::size_t axis) {
    check_axis(x.shape(), axis, "reduce_max");
    const auto sp = split_at(x.shape(), axis);
    if (sp.len == 0) throw DomainError("reduce_max over an empty axis");
    const auto& xd = x.data();
    std::vector<double> out(sp.outer * sp.inner);
    std::vector<std::size_t> arg(out.size(), 0);
    for (std::size_t o = 0; o < sp.outer; ++o) {
        const std::size_t base = o * sp.len * sp.inner;
        double* orow = out.data() + o * sp.inner;
        std::size_t* arow = arg.data() + o * sp.inner;
        std::copy_n(xd.data() + base, sp.inner, orow);
        for (std::size_t l = 1; l < sp.len; ++l) {
            const double* xr = xd.data() + base + l * sp.inner;
            for (std::size_t in = 0; in < sp.inner; ++in) {
                if (xr[in] > orow[in]) {
                    orow[in] = xr[in];
                    arow[in] = l;
                }
            }
        }
    }
    auto values = make_result(drop_axis(x.shape(), axis), std::move(out), {x}, [sp, arg](Node& self) {
        auto* gx = parent_grad(self, 0);
        if (!gx) return;
        for (std::size_t o = 0; o < sp.outer; ++o)
            for (std::size_t in = 0; in < sp.inner; ++in) {
                const std::size_t r = o * sp.inner + in;
                (*gx)[o * sp.len * sp.inner + arg[r] * sp.inner + in] += self.grad[r];
            }
    });
    return {std::move(values), std::move(arg)};
}

namespace {

Tensor reduce_sum_scaled(const Tensor& x, std::size_t axis, bool average, const char* name) {
    check_axis(x.shape(), axis, name);
    const auto sp = split_at(x.shape(), axis);
    if (sp.len == 0) throw DomainError(std::string(name) + " over an empty axis");
    const double factor = average ? 1.0 / static_cast<double>(sp.len) : 1.0;
    const auto& xd = x.data();
    std::vector<double> out(sp.outer * sp.inner, 0.0);
    for (std::size_t o = 0; o < sp.outer; ++o) {
        double* orow = out.data() + o * sp.inner;
        for (std::size_t l = 0; l < sp.len; ++l) {
            const double* xr = xd.data() + (o * sp.len + l) * sp.inner;
            for (std::size_t in = 0; in < sp.inner; ++in) orow[in] += xr[in];
        }
        if (average)
            for (std::size_t in = 0; in < sp.inner; ++in) orow[in] *= factor;
    }
    return make_result(drop_axis(x.shape(), axis), std::move(out), {x}, [sp, factor](Node& self) {
        auto* gx = parent_grad(self, 0);
        if (!gx) return;
        for (std::size_t o = 0; o < sp.outer; ++o)
            for (std::size_t l = 0; l < sp.len; ++l) {
                double* gr = gx->data() + (o * sp.len + l) * sp.inner;
                const double* g = self.grad.data() + o * sp.inner;
                for (std::size_t in = 0; in < sp.inner; ++in) gr[in] += g[in] * factor;
            }
    });
}

}  // namespace

Tensor reduce_sum(const Tensor& x, std::size_t axis) { return reduce_sum_scaled(x, axis, false, "reduce_sum"); }
Tensor reduce_mean(const Tensor& x, std::size_t axis) { return reduce_sum_scaled(x, axis, true, "reduce_mean"); }

Tensor sum(const Tensor& x) { return reduce_sum(reshape(x, {x.numel()}), 0); }
Tensor mean(const Tensor& x) { return reduce_mean(reshape(x, {x.numel()}), 0); }

Tensor gather_rows(const Tensor& x, const IndexTable& idx) {
    if (x.rank() != 2) throw DimensionError("gather_rows expects a rank-2 source, got " + shape_str(x.shape()));
    if (idx.data.size() != idx.rows * idx.cols) throw DimensionError("gather_rows: malformed index table");
    const std::size_t m = x.dim(0), width = x.dim(1);
    for (auto v : idx.data) {
        if (v >= m) {
            throw IndexError("gather_rows: index " + std::to_string(v) + " out of range for " + std::to_string(m) +
                             " rows");
        }
    }
    std::vector<double> out(idx.data.size() * width);
    kernels::gather_rows({x.data(), m, width, idx.data, out});
    return make_result({idx.rows, idx.cols, width}, std::move(out), {x}, [idx, width](Node& self) {
        auto* gx = parent_grad(self, 0);
        if (!gx) return;
        kernels::scatter_add_rows({self.grad, width, idx.data, *gx});
    });
}

NormState NormState::create(std::size_t channels) {
    NormState s;
    s.gamma = Tensor::full({channels}, 1.0, true);
    s.beta = Tensor::zeros({channels}, true);
    s.running_mean = Tensor::zeros({channels});
    s.running_var = Tensor::full({channels}, 1.0);
    return s;
}

Tensor batch_norm(const Tensor& x, NormState& state, bool training) {
    const std::size_t c = state.channels();
    if (x.rank() == 0 || x.shape().back() != c) {
        throw DimensionError("batch_norm: channel axis of " + shape_str(x.shape()) + " does not match " +
                             std::to_string(c) + " channels");
    }
    const std::size_t rows = x.numel() / c;
    if (rows == 0) throw DomainError("batch_norm over zero rows");
    const double* xd = x.data().data();
    const double* gamma = state.gamma.data().data();
    const double* beta = state.beta.data().data();

    std::vector<double> mu(c, 0.0), var(c, 0.0);
    if (training) {
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < c; ++j) mu[j] += xd[r * c + j];
        for (auto& v : mu) v /= static_cast<double>(rows);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < c; ++j) {
                const double d = xd[r * c + j] - mu[j];
                var[j] += d * d;
            }
        for (auto& v : var) v /= static_cast<double>(rows);
        auto rm = state.running_mean.mutable_data();
        auto rv = state.running_var.mutable_data();
        const double unbias = rows > 1 ? static_cast<double>(rows) / static_cast<double>(rows - 1) : 1.0;
        for (std::size_t j = 0; j < c; ++j) {
            rm[j] = (1.0 - state.momentum) * rm[j] + state.momentum * mu[j];
            rv[j] = (1.0 - state.momentum) * rv[j] + state.momentum * var[j] * unbias;
        }
    } else {
        std::copy_n(state.running_mean.data().data(), c, mu.begin());
        std::copy_n(state.running_var.data().data(), c, var.begin());
    }

    std::vector<double> inv_std(c);
    for (std::size_t j = 0; j < c; ++j) inv_std[j] = 1.0 / std::sqrt(var[j] + state.eps);
    std::vector<double> xhat(x.numel()), out(x.numel());
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < c; ++j) {
            const std::size_t i = r * c + j;
            xhat[i] = (xd[i] - mu[j]) * inv_std[j];
            out[i] = gamma[j] * xhat[i] + beta[j];
        }

    return make_result(
        x.shape(), std::move(out), {x, state.gamma, state.beta},
        [rows, c, training, inv_std = std::move(inv_std), xhat = std::move(xhat)](Node& self) {
            const auto& g = self.grad;
            const double* gamma = self.parents[1]->data.data();
            std::vector<double> gsum(c, 0.0), gxhat(c, 0.0);
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t j = 0; j < c; ++j) {
                    gsum[j] += g[r * c + j];
                    gxhat[j] += g[r * c + j] * xhat[r * c + j];
                }
            if (auto* gg = parent_grad(self, 1))
                for (std::size_t j = 0; j < c; ++j) (*gg)[j] += gxhat[j];
            if (auto* gb = parent_grad(self, 2))
                for (std::size_t j = 0; j < c; ++j) (*gb)[j] += gsum[j];
            auto* gx = parent_grad(self, 0);
            if (!gx) return;
            if (training) {
                const double n = static_cast<double>(rows);
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < c; ++j) {
                        const std::size_t i = r * c + j;
                        (*gx)[i] += gamma[j] * inv_std[j] / n * (n * g[i] - gsum[j] - xhat[i] * gxhat[j]);
                    }
            } else {
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < c; ++j) (*gx)[r * c + j] += g[r * c + j] * gamma[j] * inv_std[j];
            }
        });
}

Tensor dropout(const Tensor& x, double rate, std::mt19937_64& rng, bool training) {
    if (rate < 0.0 || rate >= 1.0) throw DomainError("dropout rate must lie in [0, 1)");
    if (!training || rate == 0.0) return x;
    const double keep_scale = 1.0 / (1.0 - rate);
    std::bernoulli_distribution keep(1.0 - rate);
    std::vector<double> mask(x.numel());
    for (auto& m : mask) m = keep(rng) ? keep_scale : 0.0;
    return mul(x, Tensor::from(x.shape(), std::move(mask)));
}

}  // namespace ibt
