#include "pbp/numerics.hpp"

#include <cmath>
#include <stdexcept>

#include <Eigen/Core>

#include "pbp/tokenizer.hpp"

namespace pbp {

namespace {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<MatRM>;
using MapC = Eigen::Map<const MatRM>;

using Index = Eigen::Index;

std::size_t shape_product(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

[[noreturn]] void shape_error(const char* op) {
    throw std::runtime_error(std::string(op) + ": shape mismatch");
}

constexpr double kMaskPenalty = -1e30;

}  // namespace

Tensor Tensor::zeros(std::vector<std::size_t> shape, bool requires_grad) {
    Tensor t;
    t.impl_ = std::make_shared<Impl>();
    t.impl_->value.assign(shape_product(shape), 0.0);
    t.impl_->shape = std::move(shape);
    t.impl_->requires_grad = requires_grad;
    return t;
}

Tensor Tensor::full(std::vector<std::size_t> shape, double value, bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    for (double& v : t.impl_->value) v = value;
    return t;
}

Tensor Tensor::from_data(std::vector<std::size_t> shape, std::vector<double> data,
                         bool requires_grad) {
    if (shape_product(shape) != data.size()) shape_error("from_data");
    Tensor t;
    t.impl_ = std::make_shared<Impl>();
    t.impl_->shape = std::move(shape);
    t.impl_->value = std::move(data);
    t.impl_->requires_grad = requires_grad;
    return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from_data({1}, {value}, requires_grad);
}

double Tensor::scalar_value() const {
    if (size() != 1) throw std::runtime_error("scalar_value: tensor is not scalar");
    return impl_->value[0];
}

std::vector<double>& Tensor::grad() {
    if (impl_->grad.empty()) impl_->grad.assign(impl_->value.size(), 0.0);
    return impl_->grad;
}

const std::vector<double>& Tensor::grad() const {
    if (impl_->grad.empty()) impl_->grad.assign(impl_->value.size(), 0.0);
    return impl_->grad;
}

void Tape::backward(const Tensor& loss) {
    if (!loss.defined() || loss.size() != 1) {
        throw std::runtime_error("backward: loss must be a defined scalar");
    }
    loss.impl_->grad.assign(1, 1.0);
    for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
}

namespace {

// Shared helper: true when the op must build a backward step.
inline bool tracked(const Tape* tape, std::initializer_list<const Tensor*> inputs) {
    if (tape == nullptr) return false;
    for (const Tensor* t : inputs) {
        if (t->requires_grad()) return true;
    }
    return false;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b, Tape* tape) {
    if (a.ndim() < 2 || b.ndim() != 2) shape_error("matmul");
    const std::size_t k = a.dim(a.ndim() - 1);
    if (k != b.dim(0)) shape_error("matmul");
    const std::size_t m = a.size() / k;
    const std::size_t n = b.dim(1);

    std::vector<std::size_t> out_shape(a.shape().begin(), a.shape().end() - 1);
    out_shape.push_back(n);
    Tensor out = Tensor::zeros(std::move(out_shape));

    MapC am(a.values().data(), static_cast<Index>(m), static_cast<Index>(k));
    MapC bm(b.values().data(), static_cast<Index>(k), static_cast<Index>(n));
    MapM om(out.values().data(), static_cast<Index>(m), static_cast<Index>(n));
    om.noalias() = am * bm;

    if (tracked(tape, {&a, &b})) {
        out.set_requires_grad(true);
        Tensor ac = a, bc = b, oc = out;
        tape->record([ac, bc, oc, m, k, n]() mutable {
            if (!oc.has_grad()) return;
            MapC g(oc.grad().data(), static_cast<Index>(m), static_cast<Index>(n));
            if (ac.requires_grad()) {
                MapC bm2(bc.values().data(), static_cast<Index>(k), static_cast<Index>(n));
                MapM ga(ac.grad().data(), static_cast<Index>(m), static_cast<Index>(k));
                ga.noalias() += g * bm2.transpose();
            }
            if (bc.requires_grad()) {
                MapC am2(ac.values().data(), static_cast<Index>(m), static_cast<Index>(k));
                MapM gb(bc.grad().data(), static_cast<Index>(k), static_cast<Index>(n));
                gb.noalias() += am2.transpose() * g;
            }
        });
    }
    return out;
}

Tensor batched_matmul(const Tensor& a, const Tensor& b, bool trans_b, Tape* tape) {
    if (a.ndim() < 3 || a.ndim() != b.ndim()) shape_error("batched_matmul");
    const std::size_t nd = a.ndim();
    std::size_t batch = 1;
    for (std::size_t i = 0; i + 2 < nd; ++i) {
        if (a.dim(i) != b.dim(i)) shape_error("batched_matmul");
        batch *= a.dim(i);
    }
    const std::size_t m = a.dim(nd - 2), k = a.dim(nd - 1);
    const std::size_t bk = trans_b ? b.dim(nd - 1) : b.dim(nd - 2);
    const std::size_t n = trans_b ? b.dim(nd - 2) : b.dim(nd - 1);
    if (k != bk) shape_error("batched_matmul");

    std::vector<std::size_t> out_shape(a.shape().begin(), a.shape().end() - 2);
    out_shape.push_back(m);
    out_shape.push_back(n);
    Tensor out = Tensor::zeros(std::move(out_shape));

    const std::size_t bstride = trans_b ? n * k : k * n;
    for (std::size_t i = 0; i < batch; ++i) {
        MapC am(a.values().data() + i * m * k, static_cast<Index>(m), static_cast<Index>(k));
        MapM om(out.values().data() + i * m * n, static_cast<Index>(m), static_cast<Index>(n));
        if (trans_b) {
            MapC bm(b.values().data() + i * bstride, static_cast<Index>(n), static_cast<Index>(k));
            om.noalias() = am * bm.transpose();
        } else {
            MapC bm(b.values().data() + i * bstride, static_cast<Index>(k), static_cast<Index>(n));
            om.noalias() = am * bm;
        }
    }

    if (tracked(tape, {&a, &b})) {
        out.set_requires_grad(true);
        Tensor ac = a, bc = b, oc = out;
        tape->record([ac, bc, oc, batch, m, k, n, bstride, trans_b]() mutable {
            if (!oc.has_grad()) return;
            for (std::size_t i = 0; i < batch; ++i) {
                MapC g(oc.grad().data() + i * m * n, static_cast<Index>(m), static_cast<Index>(n));
                MapC am(ac.values().data() + i * m * k, static_cast<Index>(m), static_cast<Index>(k));
                if (trans_b) {
                    // out = a * b^T
                    MapC bm(bc.values().data() + i * bstride, static_cast<Index>(n),
                            static_cast<Index>(k));
                    if (ac.requires_grad()) {
                        MapM ga(ac.grad().data() + i * m * k, static_cast<Index>(m),
                                static_cast<Index>(k));
                        ga.noalias() += g * bm;
                    }
                    if (bc.requires_grad()) {
                        MapM gb(bc.grad().data() + i * bstride, static_cast<Index>(n),
                                static_cast<Index>(k));
                        gb.noalias() += g.transpose() * am;
                    }
                } else {
                    MapC bm(bc.values().data() + i * bstride, static_cast<Index>(k),
                            static_cast<Index>(n));
                    if (ac.requires_grad()) {
                        MapM ga(ac.grad().data() + i * m * k, static_cast<Index>(m),
                                static_cast<Index>(k));
                        ga.noalias() += g * bm.transpose();
                    }
                    if (bc.requires_grad()) {
                        MapM gb(bc.grad().data() + i * bstride, static_cast<Index>(k),
                                static_cast<Index>(n));
                        gb.noalias() += am.transpose() * g;
                    }
                }
            }
        });
    }
    return out;
}

Tensor add(const Tensor& a, const Tensor& b, Tape* tape) {
    const bool broadcast = b.ndim() == 1 && a.ndim() > 1 && b.size() == a.dim(a.ndim() - 1);
    if (!broadcast && a.shape() != b.shape()) shape_error("add");

    Tensor out = Tensor::zeros(a.shape());
    const auto& av = a.values();
    const auto& bv = b.values();
    auto& ov = out.values();
    const std::size_t d = b.size();
    for (std::size_t i = 0; i < av.size(); ++i) ov[i] = av[i] + bv[broadcast ? i % d : i];

    if (tracked(tape, {&a, &b})) {
        out.set_requires_grad(true);
        Tensor ac = a, bc = b, oc = out;
        tape->record([ac, bc, oc, broadcast, d]() mutable {
            if (!oc.has_grad()) return;
            const auto& g = oc.grad();
            if (ac.requires_grad()) {
                auto& ga = ac.grad();
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (bc.requires_grad()) {
                auto& gb = bc.grad();
                for (std::size_t i = 0; i < g.size(); ++i) gb[broadcast ? i % d : i] += g[i];
            }
        });
    }
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b, Tape* tape) {
    if (a.shape() != b.shape()) shape_error("mul");
    Tensor out = Tensor::zeros(a.shape());
    const auto& av = a.values();
    const auto& bv = b.values();
    auto& ov = out.values();
    for (std::size_t i = 0; i < av.size(); ++i) ov[i] = av[i] * bv[i];

    if (tracked(tape, {&a, &b})) {
        out.set_requires_grad(true);
        Tensor ac = a, bc = b, oc = out;
        tape->record([ac, bc, oc]() mutable {
            if (!oc.has_grad()) return;
            const auto& g = oc.grad();
            if (ac.requires_grad()) {
                auto& ga = ac.grad();
                const auto& bv2 = bc.values();
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv2[i];
            }
            if (bc.requires_grad()) {
                auto& gb = bc.grad();
                const auto& av2 = ac.values();
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av2[i];
            }
        });
    }
    return out;
}

Tensor scale(const Tensor& a, double c, Tape* tape) {
    Tensor out = Tensor::zeros(a.shape());
    const auto& av = a.values();
    auto& ov = out.values();
    for (std::size_t i = 0; i < av.size(); ++i) ov[i] = av[i] * c;

    if (tracked(tape, {&a})) {
        out.set_requires_grad(true);
        Tensor ac = a, oc = out;
        tape->record([ac, oc, c]() mutable {
            if (!oc.has_grad()) return;
            const auto& g = oc.grad();
            auto& ga = ac.grad();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c;
        });
    }
    return out;
}

Tensor softmax_lastdim(const Tensor& x, Tape* tape) {
    if (x.ndim() < 1) shape_error("softmax");
    const std::size_t d = x.dim(x.ndim() - 1);
    const std::size_t rows = x.size() / d;
    Tensor out = Tensor::zeros(x.shape());
    const auto& xv = x.values();
    auto& ov = out.values();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* in = xv.data() + r * d;
        double* o = ov.data() + r * d;
        double mx = in[0];
        for (std::size_t i = 1; i < d; ++i) mx = std::max(mx, in[i]);
        double z = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            o[i] = std::exp(in[i] - mx);
            z += o[i];
        }
        for (std::size_t i = 0; i < d; ++i) o[i] /= z;
    }

    if (tracked(tape, {&x})) {
        out.set_requires_grad(true);
        Tensor xc = x, oc = out;
        tape->record([xc, oc, rows, d]() mutable {
            if (!oc.has_grad()) return;
            const auto& g = oc.grad();
            const auto& p = oc.values();
            auto& gx = xc.grad();
            for (std::size_t r = 0; r < rows; ++r) {
                const double* gr = g.data() + r * d;
                const double* pr = p.data() + r * d;
                double dot = 0.0;
                for (std::size_t i = 0; i < d; ++i) dot += gr[i] * pr[i];
                double* gxr = gx.data() + r * d;
                for (std::size_t i = 0; i < d; ++i) gxr[i] += pr[i] * (gr[i] - dot);
            }
        });
    }
    return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps,
                  Tape* tape) {
    if (x.ndim() < 1) shape_error("layer_norm");
    const std::size_t d = x.dim(x.ndim() - 1);
    if (gain.size() != d || bias.size() != d) shape_error("layer_norm");
    const std::size_t rows = x.size() / d;

    Tensor out = Tensor::zeros(x.shape());
    // Normalized activations and inverse stddevs are needed again in backward.
    auto xhat = std::make_shared<std::vector<double>>(x.size());
    auto istd = std::make_shared<std::vector<double>>(rows);

    const auto& xv = x.values();
    const auto& gv = gain.values();
    const auto& bv = bias.values();
    auto& ov = out.values();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* in = xv.data() + r * d;
        double mean = 0.0;
        for (std::size_t i = 0; i < d; ++i) mean += in[i];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t i = 0; i < d; ++i) var += (in[i] - mean) * (in[i] - mean);
        var /= static_cast<double>(d);
        const double is = 1.0 / std::sqrt(var + eps);
        (*istd)[r] = is;
        double* xh = xhat->data() + r * d;
        double* o = ov.data() + r * d;
        for (std::size_t i = 0; i < d; ++i) {
            xh[i] = (in[i] - mean) * is;
            o[i] = gv[i] * xh[i] + bv[i];
        }
    }

    if (tracked(tape, {&x, &gain, &bias})) {
        out.set_requires_grad(true);
        Tensor xc = x, gc = gain, bc = bias, oc = out;
        tape->record([xc, gc, bc, oc, xhat, istd, rows, d]() mutable {
            if (!oc.has_grad()) return;
            const auto& g = oc.grad();
            const auto& gv2 = gc.values();
            const double dn = static_cast<double>(d);
            for (std::size_t r = 0; r < rows; ++r) {
                const double* gr = g.data() + r * d;
                const double* xh = xhat->data() + r * d;
                if (gc.requires_grad()) {
                    auto& gg = gc.grad();
                    for (std::size_t i = 0; i < d; ++i) gg[i] += gr[i] * xh[i];
                }
                if (bc.requires_grad()) {
                    auto& gb = bc.grad();
                    for (std::size_t i = 0; i < d; ++i) gb[i] += gr[i];
                }
                if (xc.requires_grad()) {
                    // dx = istd/d * (d*gxh - sum(gxh) - xhat * sum(gxh*xhat))
                    double s1 = 0.0, s2 = 0.0;
                    for (std::size_t i = 0; i < d; ++i) {
                        const double gxh = gr[i] * gv2[i];
                        s1 += gxh;
                        s2 += gxh * xh[i];
                    }
                    auto& gx = xc.grad();
                    double* gxr = gx.data() + r * d;
                    const double is = (*istd)[r];
                    for (std::size_t i = 0; i < d; ++i) {
                        const double gxh = gr[i] * gv2[i];
                        gxr[i] += is * (gxh - (s1 + xh[i] * s2) / dn);
                    }
                }
            }
        });
    }
    return out;
}

Tensor gelu(const Tensor& x, Tape* tape) {
    static constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
    static constexpr double a3 = 0.044715;
    Tensor out = Tensor::zeros(x.shape());
    const auto& xv = x.values();
    auto& ov = out.values();
    for (std::size_t i = 0; i < xv.size(); ++i) {
        const double v = xv[i];
        ov[i] = 0.5 * v * (1.0 + std::tanh(c * (v + a3 * v * v * v)));
    }

    if (tracked(tape, {&x})) {
        out.set_requires_grad(true);
        Tensor xc = x, oc = out;
        tape->record([xc, oc]() mutable {
            if (!oc.has_grad()) return;
            const auto& g = oc.grad();
            const auto& xv2 = xc.values();
            auto& gx = xc.grad();
            for (std::size_t i = 0; i < g.size(); ++i) {
                const double v = xv2[i];
                const double t = std::tanh(c * (v + a3 * v * v * v));
                const double dv = 0.5 * (1.0 + t) +
                                  0.5 * v * (1.0 - t * t) * c * (1.0 + 3.0 * a3 * v * v);
                gx[i] += g[i] * dv;
            }
        });
    }
    return out;
}

Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids,
                        std::vector<std::size_t> out_prefix, Tape* tape) {
    if (table.ndim() != 2) shape_error("embedding_lookup");
    const std::size_t v = table.dim(0), d = table.dim(1);
    if (shape_product(out_prefix) != ids.size()) shape_error("embedding_lookup");
    for (int id : ids) {
        if (id < 0 || static_cast<std::size_t>(id) >= v) {
            throw std::runtime_error("embedding_lookup: id out of range");
        }
    }

    std::vector<std::size_t> out_shape = std::move(out_prefix);
    out_shape.push_back(d);
    Tensor out = Tensor::zeros(std::move(out_shape));
    const auto& tv = table.values();
    auto& ov = out.values();
    for (std::size_t i = 0; i < ids.size(); ++i) {
        std::copy_n(tv.data() + static_cast<std::size_t>(ids[i]) * d, d, ov.data() + i * d);
    }

    if (tracked(tape, {&table})) {
        out.set_requires_grad(true);
        Tensor tc = table, oc = out;
        auto idc = std::make_shared<std::vector<int>>(ids);
        tape->record([tc, oc, idc, d]() mutable {
            if (!oc.has_grad()) return;
            const auto& g = oc.grad();
            auto& gt = tc.grad();
            for (std::size_t i = 0; i < idc->size(); ++i) {
                double* row = gt.data() + static_cast<std::size_t>((*idc)[i]) * d;
                const double* gr = g.data() + i * d;
                for (std::size_t j = 0; j < d; ++j) row[j] += gr[j];
            }
        });
    }
    return out;
}

Tensor dropout(const Tensor& x, double rate, bool train, CounterRng& rng, Tape* tape) {
    if (rate < 0.0 || rate >= 1.0) throw std::runtime_error("dropout: rate outside [0,1)");
    if (!train || rate == 0.0) return x;

    const double keep_scale = 1.0 / (1.0 - rate);
    auto mask = std::make_shared<std::vector<double>>(x.size());
    Tensor out = Tensor::zeros(x.shape());
    const auto& xv = x.values();
    auto& ov = out.values();
    for (std::size_t i = 0; i < xv.size(); ++i) {
        const double m = rng.uniform() >= rate ? keep_scale : 0.0;
        (*mask)[i] = m;
        ov[i] = xv[i] * m;
    }

    if (tracked(tape, {&x})) {
        out.set_requires_grad(true);
        Tensor xc = x, oc = out;
        tape->record([xc, oc, mask]() mutable {
            if (!oc.has_grad()) return;
            const auto& g = oc.grad();
            auto& gx = xc.grad();
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (*mask)[i];
        });
    }
    return out;
}

Tensor split_heads(const Tensor& x, std::size_t heads, Tape* tape) {
    if (x.ndim() != 3 || x.dim(2) % heads != 0) shape_error("split_heads");
    const std::size_t b = x.dim(0), t = x.dim(1), hd = x.dim(2) / heads;
    Tensor out = Tensor::zeros({b, heads, t, hd});
    const auto& xv = x.values();
    auto& ov = out.values();
    for (std::size_t bi = 0; bi < b; ++bi) {
        for (std::size_t h = 0; h < heads; ++h) {
            for (std::size_t ti = 0; ti < t; ++ti) {
                const double* src = xv.data() + ((bi * t + ti) * heads + h) * hd;
                double* dst = ov.data() + (((bi * heads + h) * t) + ti) * hd;
                std::copy_n(src, hd, dst);
            }
        }
    }

    if (tracked(tape, {&x})) {
        out.set_requires_grad(true);
        Tensor xc = x, oc = out;
        tape->record([xc, oc, b, t, heads, hd]() mutable {
            if (!oc.has_grad()) return;
            const auto& g = oc.grad();
            auto& gx = xc.grad();
            for (std::size_t bi = 0; bi < b; ++bi) {
                for (std::size_t h = 0; h < heads; ++h) {
                    for (std::size_t ti = 0; ti < t; ++ti) {
                        const double* src = g.data() + (((bi * heads + h) * t) + ti) * hd;
                        double* dst = gx.data() + ((bi * t + ti) * heads + h) * hd;
                        for (std::size_t j = 0; j < hd; ++j) dst[j] += src[j];
                    }
                }
            }
        });
    }
    return out;
}

Tensor merge_heads(const Tensor& x, Tape* tape) {
    if (x.ndim() != 4) shape_error("merge_heads");
    const std::size_t b = x.dim(0), heads = x.dim(1), t = x.dim(2), hd = x.dim(3);
    Tensor out = Tensor::zeros({b, t, heads * hd});
    const auto& xv = x.values();
    auto& ov = out.values();
    for (std::size_t bi = 0; bi < b; ++bi) {
        for (std::size_t h = 0; h < heads; ++h) {
            for (std::size_t ti = 0; ti < t; ++ti) {
                const double* src = xv.data() + (((bi * heads + h) * t) + ti) * hd;
                double* dst = ov.data() + ((bi * t + ti) * heads + h) * hd;
                std::copy_n(src, hd, dst);
            }
        }
    }

    if (tracked(tape, {&x})) {
        out.set_requires_grad(true);
        Tensor xc = x, oc = out;
        tape->record([xc, oc, b, t, heads, hd]() mutable {
            if (!oc.has_grad()) return;
            const auto& g = oc.grad();
            auto& gx = xc.grad();
            for (std::size_t bi = 0; bi < b; ++bi) {
                for (std::size_t h = 0; h < heads; ++h) {
                    for (std::size_t ti = 0; ti < t; ++ti) {
                        const double* src = g.data() + ((bi * t + ti) * heads + h) * hd;
                        double* dst = gx.data() + (((bi * heads + h) * t) + ti) * hd;
                        for (std::size_t j = 0; j < hd; ++j) dst[j] += src[j];
                    }
                }
            }
        });
    }
    return out;
}

Tensor attention_mask(const Tensor& scores, const std::vector<std::uint8_t>& key_valid,
                      Tape* tape) {
    if (scores.ndim() != 4) shape_error("attention_mask");
    const std::size_t b = scores.dim(0), h = scores.dim(1), tq = scores.dim(2),
                      tk = scores.dim(3);
    if (key_valid.size() != b * tk) shape_error("attention_mask");

    Tensor out = Tensor::zeros(scores.shape());
    const auto& sv = scores.values();
    auto& ov = out.values();
    std::size_t idx = 0;
    for (std::size_t bi = 0; bi < b; ++bi) {
        for (std::size_t hi = 0; hi < h; ++hi) {
            for (std::size_t q = 0; q < tq; ++q) {
                const std::uint8_t* valid = key_valid.data() + bi * tk;
                for (std::size_t kpos = 0; kpos < tk; ++kpos, ++idx) {
                    ov[idx] = sv[idx] + (valid[kpos] ? 0.0 : kMaskPenalty);
                }
            }
        }
    }

    if (tracked(tape, {&scores})) {
        out.set_requires_grad(true);
        Tensor sc = scores, oc = out;
        tape->record([sc, oc]() mutable {
            if (!oc.has_grad()) return;
            const auto& g = oc.grad();
            auto& gs = sc.grad();
            for (std::size_t i = 0; i < g.size(); ++i) gs[i] += g[i];
        });
    }
    return out;
}

Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& rows, Tape* tape) {
    if (x.ndim() < 2) shape_error("gather_rows");
    const std::size_t d = x.dim(x.ndim() - 1);
    const std::size_t n = x.size() / d;
    for (std::size_t r : rows) {
        if (r >= n) throw std::runtime_error("gather_rows: row out of range");
    }
    Tensor out = Tensor::zeros({rows.size(), d});
    const auto& xv = x.values();
    auto& ov = out.values();
    for (std::size_t i = 0; i < rows.size(); ++i) {
        std::copy_n(xv.data() + rows[i] * d, d, ov.data() + i * d);
    }

    if (tracked(tape, {&x})) {
        out.set_requires_grad(true);
        Tensor xc = x, oc = out;
        auto rowsc = std::make_shared<std::vector<std::size_t>>(rows);
        tape->record([xc, oc, rowsc, d]() mutable {
            if (!oc.has_grad()) return;
            const auto& g = oc.grad();
            auto& gx = xc.grad();
            for (std::size_t i = 0; i < rowsc->size(); ++i) {
                double* dst = gx.data() + (*rowsc)[i] * d;
                const double* src = g.data() + i * d;
                for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
            }
        });
    }
    return out;
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets, Tape* tape) {
    if (logits.ndim() < 2) shape_error("cross_entropy");
    const std::size_t c = logits.dim(logits.ndim() - 1);
    const std::size_t n = logits.size() / c;
    if (c < 2) throw std::runtime_error("cross_entropy: need at least 2 classes");
    if (targets.size() != n) shape_error("cross_entropy");

    std::size_t scored = 0;
    for (int t : targets) {
        if (t == kIgnoreTarget) continue;
        if (t < 0 || static_cast<std::size_t>(t) >= c) {
            throw std::runtime_error("cross_entropy: target class out of range");
        }
        ++scored;
    }
    if (scored == 0) throw std::runtime_error("cross_entropy: all targets ignored");

    const auto& xv = logits.values();
    double total = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
        if (targets[r] == kIgnoreTarget) continue;
        const double* row = xv.data() + r * c;
        double mx = row[0];
        for (std::size_t i = 1; i < c; ++i) mx = std::max(mx, row[i]);
        double z = 0.0;
        for (std::size_t i = 0; i < c; ++i) z += std::exp(row[i] - mx);
        total += std::log(z) + mx - row[static_cast<std::size_t>(targets[r])];
    }
    Tensor out = Tensor::scalar(total / static_cast<double>(scored));

    if (tracked(tape, {&logits})) {
        out.set_requires_grad(true);
        Tensor xc = logits, oc = out;
        auto tc = std::make_shared<std::vector<int>>(targets);
        tape->record([xc, oc, tc, n, c, scored]() mutable {
            if (!oc.has_grad()) return;
            const double go = oc.grad()[0] / static_cast<double>(scored);
            const auto& xv2 = xc.values();
            auto& gx = xc.grad();
            for (std::size_t r = 0; r < n; ++r) {
                const int t = (*tc)[r];
                if (t == kIgnoreTarget) continue;
                const double* row = xv2.data() + r * c;
                double* grow = gx.data() + r * c;
                double mx = row[0];
                for (std::size_t i = 1; i < c; ++i) mx = std::max(mx, row[i]);
                double z = 0.0;
                for (std::size_t i = 0; i < c; ++i) z += std::exp(row[i] - mx);
                for (std::size_t i = 0; i < c; ++i) {
                    const double p = std::exp(row[i] - mx) / z;
                    grow[i] += go * (p - (static_cast<std::size_t>(t) == i ? 1.0 : 0.0));
                }
            }
        });
    }
    return out;
}

Tensor sum(const Tensor& x, Tape* tape) {
    double total = 0.0;
    for (double v : x.values()) total += v;
    Tensor out = Tensor::scalar(total);

    if (tracked(tape, {&x})) {
        out.set_requires_grad(true);
        Tensor xc = x, oc = out;
        tape->record([xc, oc]() mutable {
            if (!oc.has_grad()) return;
            const double g = oc.grad()[0];
            auto& gx = xc.grad();
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g;
        });
    }
    return out;
}

}  // namespace pbp
