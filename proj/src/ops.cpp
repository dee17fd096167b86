#include "tkgcn/ops.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>

namespace tkgcn {

namespace detail {

void check_finite(const Tensor& t, const char* op_name) {
    for (double v : t.values()) {
        if (!std::isfinite(v))
            throw std::runtime_error(std::string(op_name) + " produced a non-finite value");
    }
}

}  // namespace detail

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
using VecMap = Eigen::Map<Eigen::VectorXd>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;

ConstMatMap mat_view(const Tensor& t) {
    return ConstMatMap(t.values().data(), static_cast<Eigen::Index>(t.dim(0)),
                       static_cast<Eigen::Index>(t.dim(1)));
}

MatMap grad_mat_view(Tensor& t) {
    return MatMap(t.grad().data(), static_cast<Eigen::Index>(t.dim(0)),
                  static_cast<Eigen::Index>(t.dim(1)));
}

ConstMatMap grad_mat_cview(const Tensor& t) {
    return ConstMatMap(t.grad().data(), static_cast<Eigen::Index>(t.dim(0)),
                       static_cast<Eigen::Index>(t.dim(1)));
}

// Decompose a shape around one axis: out[o][j][i] with j running over `axis`.
struct AxisSplit {
    std::size_t outer = 1, n = 1, inner = 1;
};

AxisSplit split_axis(const Shape& s, std::size_t axis) {
    if (axis >= s.size())
        throw std::invalid_argument("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
    AxisSplit sp;
    for (std::size_t i = 0; i < axis; ++i) sp.outer *= s[i];
    sp.n = s[axis];
    for (std::size_t i = axis + 1; i < s.size(); ++i) sp.inner *= s[i];
    return sp;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    const std::size_t ra = a.rank(), rb = b.rank();
    Tensor out;
    if (ra == 2 && rb == 2) {
        if (a.dim(1) != b.dim(0))
            throw std::invalid_argument("matmul: inner dims differ, " + shape_str(a.shape()) + " x " +
                                        shape_str(b.shape()));
        out = Tensor::zeros({a.dim(0), b.dim(1)});
        MatMap(out.values().data(), static_cast<Eigen::Index>(a.dim(0)), static_cast<Eigen::Index>(b.dim(1)))
            .noalias() = mat_view(a) * mat_view(b);
    } else if (ra == 2 && rb == 1) {
        if (a.dim(1) != b.dim(0))
            throw std::invalid_argument("matmul: inner dims differ, " + shape_str(a.shape()) + " x " +
                                        shape_str(b.shape()));
        out = Tensor::zeros({a.dim(0)});
        VecMap(out.values().data(), static_cast<Eigen::Index>(a.dim(0))).noalias() =
            mat_view(a) * ConstVecMap(b.values().data(), static_cast<Eigen::Index>(b.dim(0)));
    } else if (ra == 1 && rb == 2) {
        if (a.dim(0) != b.dim(0))
            throw std::invalid_argument("matmul: inner dims differ, " + shape_str(a.shape()) + " x " +
                                        shape_str(b.shape()));
        out = Tensor::zeros({b.dim(1)});
        VecMap(out.values().data(), static_cast<Eigen::Index>(b.dim(1))).noalias() =
            mat_view(b).transpose() * ConstVecMap(a.values().data(), static_cast<Eigen::Index>(a.dim(0)));
    } else {
        throw std::invalid_argument("matmul: unsupported ranks " + shape_str(a.shape()) + " x " +
                                    shape_str(b.shape()));
    }
    detail::check_finite(out, "matmul");
    out.set_requires_grad(a.requires_grad() || b.requires_grad());
    if (grad_recording({&a, &b})) {
        Tensor ac = a, bc = b, oc = out;
        Tape::active()->record([ac, bc, oc]() mutable {
            if (!oc.has_grad()) return;
            const std::size_t ra = ac.rank(), rb = bc.rank();
            if (ra == 2 && rb == 2) {
                if (ac.requires_grad()) grad_mat_view(ac).noalias() += grad_mat_cview(oc) * mat_view(bc).transpose();
                if (bc.requires_grad()) grad_mat_view(bc).noalias() += mat_view(ac).transpose() * grad_mat_cview(oc);
            } else if (ra == 2 && rb == 1) {
                ConstVecMap go(oc.grad().data(), static_cast<Eigen::Index>(oc.size()));
                ConstVecMap x(bc.values().data(), static_cast<Eigen::Index>(bc.size()));
                if (ac.requires_grad()) grad_mat_view(ac).noalias() += go * x.transpose();
                if (bc.requires_grad())
                    VecMap(bc.grad().data(), static_cast<Eigen::Index>(bc.size())).noalias() +=
                        mat_view(ac).transpose() * go;
            } else {  // (k) x (k,n)
                ConstVecMap go(oc.grad().data(), static_cast<Eigen::Index>(oc.size()));
                ConstVecMap x(ac.values().data(), static_cast<Eigen::Index>(ac.size()));
                if (ac.requires_grad())
                    VecMap(ac.grad().data(), static_cast<Eigen::Index>(ac.size())).noalias() += mat_view(bc) * go;
                if (bc.requires_grad()) grad_mat_view(bc).noalias() += x * go.transpose();
            }
        });
    }
    return out;
}

namespace {

enum class AddKind { Elementwise, RowBroadcast };

AddKind classify_add(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() == b.shape()) return AddKind::Elementwise;
    if (a.rank() == 2 && b.rank() == 1 && a.dim(1) == b.dim(0)) return AddKind::RowBroadcast;
    throw std::invalid_argument(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) + " and " +
                                shape_str(b.shape()));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    const AddKind kind = classify_add(a, b, "add");
    Tensor out = Tensor::zeros(a.shape());
    const auto& av = a.values();
    const auto& bv = b.values();
    auto& ov = out.values();
    if (kind == AddKind::Elementwise) {
        for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
    } else {
        const std::size_t rows = a.dim(0), cols = a.dim(1);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) ov[r * cols + c] = av[r * cols + c] + bv[c];
    }
    detail::check_finite(out, "add");
    out.set_requires_grad(a.requires_grad() || b.requires_grad());
    if (grad_recording({&a, &b})) {
        Tensor ac = a, bc = b, oc = out;
        Tape::active()->record([ac, bc, oc, kind]() mutable {
            if (!oc.has_grad()) return;
            const auto& go = oc.grad();
            if (ac.requires_grad()) ac.accumulate_grad(go);
            if (bc.requires_grad()) {
                if (kind == AddKind::Elementwise) {
                    bc.accumulate_grad(go);
                } else {
                    auto& gb = bc.grad();
                    const std::size_t rows = ac.dim(0), cols = ac.dim(1);
                    for (std::size_t r = 0; r < rows; ++r)
                        for (std::size_t c = 0; c < cols; ++c) gb[c] += go[r * cols + c];
                }
            }
        });
    }
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw std::invalid_argument("sub: incompatible shapes " + shape_str(a.shape()) + " and " +
                                    shape_str(b.shape()));
    Tensor out = Tensor::zeros(a.shape());
    const auto& av = a.values();
    const auto& bv = b.values();
    auto& ov = out.values();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] - bv[i];
    detail::check_finite(out, "sub");
    out.set_requires_grad(a.requires_grad() || b.requires_grad());
    if (grad_recording({&a, &b})) {
        Tensor ac = a, bc = b, oc = out;
        Tape::active()->record([ac, bc, oc]() mutable {
            if (!oc.has_grad()) return;
            const auto& go = oc.grad();
            if (ac.requires_grad()) ac.accumulate_grad(go);
            if (bc.requires_grad()) {
                auto& gb = bc.grad();
                for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= go[i];
            }
        });
    }
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw std::invalid_argument("mul: incompatible shapes " + shape_str(a.shape()) + " and " +
                                    shape_str(b.shape()));
    Tensor out = Tensor::zeros(a.shape());
    const auto& av = a.values();
    const auto& bv = b.values();
    auto& ov = out.values();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
    detail::check_finite(out, "mul");
    out.set_requires_grad(a.requires_grad() || b.requires_grad());
    if (grad_recording({&a, &b})) {
        Tensor ac = a, bc = b, oc = out;
        Tape::active()->record([ac, bc, oc]() mutable {
            if (!oc.has_grad()) return;
            const auto& go = oc.grad();
            if (ac.requires_grad()) {
                auto& ga = ac.grad();
                const auto& bv = bc.values();
                for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go[i] * bv[i];
            }
            if (bc.requires_grad()) {
                auto& gb = bc.grad();
                const auto& av = ac.values();
                for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += go[i] * av[i];
            }
        });
    }
    return out;
}

Tensor scale(const Tensor& a, double c) {
    Tensor out = Tensor::zeros(a.shape());
    const auto& av = a.values();
    auto& ov = out.values();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * c;
    detail::check_finite(out, "scale");
    out.set_requires_grad(a.requires_grad());
    if (grad_recording({&a})) {
        Tensor ac = a, oc = out;
        Tape::active()->record([ac, oc, c]() mutable {
            if (!oc.has_grad()) return;
            const auto& go = oc.grad();
            auto& ga = ac.grad();
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go[i] * c;
        });
    }
    return out;
}

Tensor relu(const Tensor& x) {
    Tensor out = Tensor::zeros(x.shape());
    const auto& xv = x.values();
    auto& ov = out.values();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = xv[i] > 0.0 ? xv[i] : 0.0;
    detail::check_finite(out, "relu");
    out.set_requires_grad(x.requires_grad());
    if (grad_recording({&x})) {
        Tensor xc = x, oc = out;
        Tape::active()->record([xc, oc]() mutable {
            if (!oc.has_grad()) return;
            const auto& go = oc.grad();
            const auto& xv = xc.values();
            auto& gx = xc.grad();
            for (std::size_t i = 0; i < gx.size(); ++i)
                if (xv[i] > 0.0) gx[i] += go[i];
        });
    }
    return out;
}

Tensor elu(const Tensor& x) {
    Tensor out = Tensor::zeros(x.shape());
    const auto& xv = x.values();
    auto& ov = out.values();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = xv[i] > 0.0 ? xv[i] : std::expm1(xv[i]);
    detail::check_finite(out, "elu");
    out.set_requires_grad(x.requires_grad());
    if (grad_recording({&x})) {
        Tensor xc = x, oc = out;
        Tape::active()->record([xc, oc]() mutable {
            if (!oc.has_grad()) return;
            const auto& go = oc.grad();
            const auto& xv = xc.values();
            const auto& ov = oc.values();
            auto& gx = xc.grad();
            // d/dx elu = 1 for x > 0, exp(x) = elu(x) + 1 otherwise.
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += go[i] * (xv[i] > 0.0 ? 1.0 : ov[i] + 1.0);
        });
    }
    return out;
}

Tensor softmax(const Tensor& x) {
    if (x.rank() == 0) throw std::invalid_argument("softmax: rank-0 input");
    const AxisSplit sp = split_axis(x.shape(), x.rank() - 1);
    Tensor out = Tensor::zeros(x.shape());
    const auto& xv = x.values();
    auto& ov = out.values();
    for (std::size_t r = 0; r < sp.outer; ++r) {
        const std::size_t base = r * sp.n;
        double mx = xv[base];
        for (std::size_t j = 1; j < sp.n; ++j) mx = std::max(mx, xv[base + j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < sp.n; ++j) {
            ov[base + j] = std::exp(xv[base + j] - mx);
            sum += ov[base + j];
        }
        for (std::size_t j = 0; j < sp.n; ++j) ov[base + j] /= sum;
    }
    detail::check_finite(out, "softmax");
    out.set_requires_grad(x.requires_grad());
    if (grad_recording({&x})) {
        Tensor xc = x, oc = out;
        Tape::active()->record([xc, oc, sp]() mutable {
            if (!oc.has_grad()) return;
            const auto& go = oc.grad();
            const auto& yv = oc.values();
            auto& gx = xc.grad();
            for (std::size_t r = 0; r < sp.outer; ++r) {
                const std::size_t base = r * sp.n;
                double dot = 0.0;
                for (std::size_t j = 0; j < sp.n; ++j) dot += go[base + j] * yv[base + j];
                for (std::size_t j = 0; j < sp.n; ++j) gx[base + j] += yv[base + j] * (go[base + j] - dot);
            }
        });
    }
    return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    if (x.rank() == 0) throw std::invalid_argument("layer_norm: rank-0 input");
    const std::size_t n = x.dim(x.rank() - 1);
    if (gain.rank() != 1 || gain.dim(0) != n || bias.rank() != 1 || bias.dim(0) != n)
        throw std::invalid_argument("layer_norm: gain/bias must be rank-1 of length " + std::to_string(n) +
                                    ", got " + shape_str(gain.shape()) + " and " + shape_str(bias.shape()));
    const AxisSplit sp = split_axis(x.shape(), x.rank() - 1);
    Tensor out = Tensor::zeros(x.shape());
    // Cache per-row inverse stddev and normalized values for the backward pass.
    auto inv_std = std::make_shared<std::vector<double>>(sp.outer);
    auto xhat = std::make_shared<std::vector<double>>(x.size());
    const auto& xv = x.values();
    const auto& gv = gain.values();
    const auto& bv = bias.values();
    auto& ov = out.values();
    for (std::size_t r = 0; r < sp.outer; ++r) {
        const std::size_t base = r * n;
        double mu = 0.0;
        for (std::size_t j = 0; j < n; ++j) mu += xv[base + j];
        mu /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            const double d = xv[base + j] - mu;
            var += d * d;
        }
        var /= static_cast<double>(n);
        const double inv = 1.0 / std::sqrt(var + eps);
        (*inv_std)[r] = inv;
        for (std::size_t j = 0; j < n; ++j) {
            const double h = (xv[base + j] - mu) * inv;
            (*xhat)[base + j] = h;
            ov[base + j] = gv[j] * h + bv[j];
        }
    }
    detail::check_finite(out, "layer_norm");
    out.set_requires_grad(x.requires_grad() || gain.requires_grad() || bias.requires_grad());
    if (grad_recording({&x, &gain, &bias})) {
        Tensor xc = x, gc = gain, bc = bias, oc = out;
        Tape::active()->record([xc, gc, bc, oc, sp, n, inv_std, xhat]() mutable {
            if (!oc.has_grad()) return;
            const auto& go = oc.grad();
            const auto& gv = gc.values();
            for (std::size_t r = 0; r < sp.outer; ++r) {
                const std::size_t base = r * n;
                if (gc.requires_grad()) {
                    auto& gg = gc.grad();
                    for (std::size_t j = 0; j < n; ++j) gg[j] += go[base + j] * (*xhat)[base + j];
                }
                if (bc.requires_grad()) {
                    auto& gb = bc.grad();
                    for (std::size_t j = 0; j < n; ++j) gb[j] += go[base + j];
                }
                if (xc.requires_grad()) {
                    auto& gx = xc.grad();
                    double mean_dh = 0.0, mean_dh_h = 0.0;
                    for (std::size_t j = 0; j < n; ++j) {
                        const double dh = go[base + j] * gv[j];
                        mean_dh += dh;
                        mean_dh_h += dh * (*xhat)[base + j];
                    }
                    mean_dh /= static_cast<double>(n);
                    mean_dh_h /= static_cast<double>(n);
                    const double inv = (*inv_std)[r];
                    for (std::size_t j = 0; j < n; ++j) {
                        const double dh = go[base + j] * gv[j];
                        gx[base + j] += inv * (dh - mean_dh - (*xhat)[base + j] * mean_dh_h);
                    }
                }
            }
        });
    }
    return out;
}

Tensor transpose(const Tensor& a) {
    if (a.rank() != 2) throw std::invalid_argument("transpose: expected rank 2, got " + shape_str(a.shape()));
    const std::size_t m = a.dim(0), n = a.dim(1);
    Tensor out = Tensor::zeros({n, m});
    const auto& av = a.values();
    auto& ov = out.values();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) ov[j * m + i] = av[i * n + j];
    out.set_requires_grad(a.requires_grad());
    if (grad_recording({&a})) {
        Tensor ac = a, oc = out;
        Tape::active()->record([ac, oc, m, n]() mutable {
            if (!oc.has_grad()) return;
            const auto& go = oc.grad();
            auto& ga = ac.grad();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += go[j * m + i];
        });
    }
    return out;
}

Tensor reshape(const Tensor& a, Shape new_shape) {
    if (shape_size(new_shape) != a.size())
        throw std::invalid_argument("reshape: cannot view " + shape_str(a.shape()) + " as " +
                                    shape_str(new_shape));
    Tensor out = Tensor::from_data(std::move(new_shape), a.values());
    out.set_requires_grad(a.requires_grad());
    if (grad_recording({&a})) {
        Tensor ac = a, oc = out;
        Tape::active()->record([ac, oc]() mutable {
            if (!oc.has_grad()) return;
            ac.accumulate_grad(oc.grad());
        });
    }
    return out;
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
    if (parts.empty()) throw std::invalid_argument("concat: no inputs");
    const Shape& s0 = parts[0].shape();
    if (axis >= s0.size()) throw std::invalid_argument("concat: axis out of range for " + shape_str(s0));
    std::size_t axis_total = 0;
    for (const Tensor& p : parts) {
        if (p.rank() != s0.size())
            throw std::invalid_argument("concat: rank mismatch between inputs");
        for (std::size_t d = 0; d < s0.size(); ++d)
            if (d != axis && p.shape()[d] != s0[d])
                throw std::invalid_argument("concat: shape mismatch at non-concat axis " + std::to_string(d));
        axis_total += p.dim(axis);
    }
    Shape out_shape = s0;
    out_shape[axis] = axis_total;
    Tensor out = Tensor::zeros(out_shape);
    const AxisSplit sp = split_axis(out_shape, axis);
    auto& ov = out.values();
    std::size_t offset = 0;
    for (const Tensor& p : parts) {
        const std::size_t pn = p.dim(axis);
        const auto& pv = p.values();
        for (std::size_t o = 0; o < sp.outer; ++o)
            for (std::size_t j = 0; j < pn; ++j)
                for (std::size_t i = 0; i < sp.inner; ++i)
                    ov[(o * sp.n + offset + j) * sp.inner + i] = pv[(o * pn + j) * sp.inner + i];
        offset += pn;
    }
    bool any_grad = false;
    for (const Tensor& p : parts) any_grad = any_grad || p.requires_grad();
    out.set_requires_grad(any_grad);
    bool record = Tape::active() != nullptr && any_grad;
    if (record) {
        std::vector<Tensor> pc = parts;
        Tensor oc = out;
        Tape::active()->record([pc, oc, sp, axis]() mutable {
            if (!oc.has_grad()) return;
            const auto& go = oc.grad();
            std::size_t offset = 0;
            for (Tensor& p : pc) {
                const std::size_t pn = p.dim(axis);
                if (p.requires_grad()) {
                    auto& gp = p.grad();
                    for (std::size_t o = 0; o < sp.outer; ++o)
                        for (std::size_t j = 0; j < pn; ++j)
                            for (std::size_t i = 0; i < sp.inner; ++i)
                                gp[(o * pn + j) * sp.inner + i] += go[(o * sp.n + offset + j) * sp.inner + i];
                }
                offset += pn;
            }
        });
    }
    return out;
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end) {
    const Shape& s = a.shape();
    if (axis >= s.size()) throw std::invalid_argument("slice: axis out of range for " + shape_str(s));
    if (begin >= end || end > s[axis])
        throw std::invalid_argument("slice: range [" + std::to_string(begin) + "," + std::to_string(end) +
                                    ") invalid for axis of size " + std::to_string(s[axis]));
    Shape out_shape = s;
    out_shape[axis] = end - begin;
    Tensor out = Tensor::zeros(out_shape);
    const AxisSplit sp = split_axis(s, axis);
    const std::size_t pn = end - begin;
    const auto& av = a.values();
    auto& ov = out.values();
    for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t j = 0; j < pn; ++j)
            for (std::size_t i = 0; i < sp.inner; ++i)
                ov[(o * pn + j) * sp.inner + i] = av[(o * sp.n + begin + j) * sp.inner + i];
    out.set_requires_grad(a.requires_grad());
    if (grad_recording({&a})) {
        Tensor ac = a, oc = out;
        Tape::active()->record([ac, oc, sp, begin, pn]() mutable {
            if (!oc.has_grad()) return;
            const auto& go = oc.grad();
            auto& ga = ac.grad();
            for (std::size_t o = 0; o < sp.outer; ++o)
                for (std::size_t j = 0; j < pn; ++j)
                    for (std::size_t i = 0; i < sp.inner; ++i)
                        ga[(o * sp.n + begin + j) * sp.inner + i] += go[(o * pn + j) * sp.inner + i];
        });
    }
    return out;
}

Tensor mean(const Tensor& a, std::size_t axis) {
    const Shape& s = a.shape();
    if (axis >= s.size()) throw std::invalid_argument("mean: axis out of range for " + shape_str(s));
    Shape out_shape;
    for (std::size_t d = 0; d < s.size(); ++d)
        if (d != axis) out_shape.push_back(s[d]);
    if (out_shape.empty()) out_shape = {1};
    const AxisSplit sp = split_axis(s, axis);
    Tensor out = Tensor::zeros(out_shape);
    const auto& av = a.values();
    auto& ov = out.values();
    const double inv_n = 1.0 / static_cast<double>(sp.n);
    for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t j = 0; j < sp.n; ++j)
            for (std::size_t i = 0; i < sp.inner; ++i)
                ov[o * sp.inner + i] += av[(o * sp.n + j) * sp.inner + i] * inv_n;
    detail::check_finite(out, "mean");
    out.set_requires_grad(a.requires_grad());
    if (grad_recording({&a})) {
        Tensor ac = a, oc = out;
        Tape::active()->record([ac, oc, sp, inv_n]() mutable {
            if (!oc.has_grad()) return;
            const auto& go = oc.grad();
            auto& ga = ac.grad();
            for (std::size_t o = 0; o < sp.outer; ++o)
                for (std::size_t j = 0; j < sp.n; ++j)
                    for (std::size_t i = 0; i < sp.inner; ++i)
                        ga[(o * sp.n + j) * sp.inner + i] += go[o * sp.inner + i] * inv_n;
        });
    }
    return out;
}

Tensor sum_sq(const Tensor& a) {
    double total = 0.0;
    for (double v : a.values()) total += v * v;
    Tensor out = Tensor::scalar(total);
    detail::check_finite(out, "sum_sq");
    out.set_requires_grad(a.requires_grad());
    if (grad_recording({&a})) {
        Tensor ac = a, oc = out;
        Tape::active()->record([ac, oc]() mutable {
            if (!oc.has_grad()) return;
            const double g = oc.grad()[0];
            const auto& av = ac.values();
            auto& ga = ac.grad();
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += 2.0 * av[i] * g;
        });
    }
    return out;
}

Tensor matpow(const Tensor& k, std::size_t n) {
    if (k.rank() != 2 || k.dim(0) != k.dim(1))
        throw std::invalid_argument("matpow: expected a square matrix, got " + shape_str(k.shape()));
    if (n == 0) return Tensor::identity(k.dim(0));
    Tensor result = k;
    for (std::size_t i = 1; i < n; ++i) result = matmul(result, k);
    return result;
}

}  // namespace tkgcn
