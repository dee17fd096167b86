#include "tkgcn/spline.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>
#include <utility>

#include "tkgcn/ops.hpp"
#include "tkgcn/tape.hpp"

namespace tkgcn {

namespace {

using ConstMat = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using Mat = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

double init_scale(std::size_t in_channels, std::size_t basis_count) {
    return 1.0 / std::sqrt(static_cast<double>(in_channels * basis_count));
}

}  // namespace

std::vector<BasisEntry> bspline_basis(const std::array<double, 3>& w, int degree,
                                      const std::array<int, 3>& kernel_size) {
    if (degree != 1)
        throw std::invalid_argument("bspline_basis: only degree-1 bases are supported, got " +
                                    std::to_string(degree));
    for (int d = 0; d < 3; ++d) {
        if (kernel_size[d] < 2)
            throw std::invalid_argument("bspline_basis: kernel size must be >= 2, got " +
                                        std::to_string(kernel_size[d]));
        if (!(w[d] >= 0.0 && w[d] <= 1.0))
            throw std::invalid_argument("bspline_basis: coordinate " + std::to_string(w[d]) +
                                        " outside [0,1]");
    }

    // Per dimension, w lands in one knot interval; the two hats at its ends
    // are the only nonzero ones. Clamp the cell so w = 1 uses the last
    // interval with local coordinate 1.
    std::size_t knot[3][2];
    double val[3][2];
    for (int d = 0; d < 3; ++d) {
        const std::size_t k = static_cast<std::size_t>(kernel_size[d]);
        const double t = w[d] * static_cast<double>(k - 1);
        std::size_t cell = std::min(static_cast<std::size_t>(t), k - 2);
        const double u = t - static_cast<double>(cell);
        knot[d][0] = cell;
        knot[d][1] = cell + 1;
        val[d][0] = 1.0 - u;
        val[d][1] = u;
    }

    const std::size_t k2 = static_cast<std::size_t>(kernel_size[1]);
    const std::size_t k3 = static_cast<std::size_t>(kernel_size[2]);
    std::vector<BasisEntry> entries;
    entries.reserve(8);
    for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b)
            for (int c = 0; c < 2; ++c)
                entries.push_back({(knot[0][a] * k2 + knot[1][b]) * k3 + knot[2][c],
                                   val[0][a] * val[1][b] * val[2][c]});
    return entries;
}

SplineConv::SplineConv(const SplineConvConfig& config, const MeshGraph& graph, Rng& rng)
    : config_(config), node_count_(graph.node_count) {
    if (config_.in_channels == 0 || config_.out_channels == 0)
        throw std::invalid_argument("SplineConv: channel counts must be positive");
    basis_count_ = 1;
    for (int d = 0; d < 3; ++d) {
        if (config_.kernel_size[d] < 2)
            throw std::invalid_argument("SplineConv: kernel size must be >= 2");
        basis_count_ *= static_cast<std::size_t>(config_.kernel_size[d]);
    }

    const double s = init_scale(config_.in_channels, basis_count_);
    theta_ = Tensor::uniform(rng, -s, s, {basis_count_, config_.in_channels, config_.out_channels},
                             true);
    root_ = Tensor::uniform(rng, -s, s, {config_.in_channels, config_.out_channels}, true);
    bias_ = Tensor::zeros({config_.out_channels}, true);

    // Fold the neighborhood average into the scatter coefficients so the
    // forward pass is a plain gather/mix per basis function.
    auto table = std::make_shared<std::vector<std::vector<Link>>>(basis_count_);
    for (std::size_t i = 0; i < graph.node_count; ++i) {
        const std::size_t deg = graph.degree(i);
        if (deg == 0) continue;
        const double inv_deg = 1.0 / static_cast<double>(deg);
        for (std::size_t k = graph.adj_offsets[i]; k < graph.adj_offsets[i + 1]; ++k) {
            const std::size_t j = graph.adj_nodes[k];
            const auto& w = graph.pseudo[graph.adj_edge[k]];
            for (const BasisEntry& e : bspline_basis(w, config_.degree, config_.kernel_size))
                if (e.value != 0.0) (*table)[e.index].push_back({i, j, e.value * inv_deg});
        }
    }
    table_ = std::move(table);
}

std::vector<Tensor> SplineConv::parameters() {
    if (config_.root_weight) return {theta_, root_, bias_};
    return {theta_, bias_};
}

void SplineConv::collect_parameters(const std::string& prefix, NamedParams& out) {
    out.emplace_back(prefix + ".theta", theta_);
    if (config_.root_weight) out.emplace_back(prefix + ".root", root_);
    out.emplace_back(prefix + ".bias", bias_);
}

// Neighbor term of the convolution as one taped op. For each basis function p
// the scatter list accumulates Y_p = S_p x (rows of neighbors weighted by
// B_p(w)/deg), and the output is sum_p Y_p * theta_p. The gathered Y_p stack
// is kept for the backward pass, which needs it for d(theta).
Tensor SplineConv::neighbor_mix(const Tensor& x) const {
    const std::size_t n = node_count_;
    const std::size_t cin = config_.in_channels;
    const std::size_t cout = config_.out_channels;
    Tensor out = Tensor::zeros({n, cout});

    auto gathered = std::make_shared<std::vector<double>>(basis_count_ * n * cin, 0.0);
    {
        const auto& xv = x.values();
        auto& g = *gathered;
        for (std::size_t p = 0; p < basis_count_; ++p) {
            double* yp = g.data() + p * n * cin;
            for (const Link& l : (*table_)[p]) {
                const double* src = xv.data() + l.j * cin;
                double* dst = yp + l.i * cin;
                for (std::size_t f = 0; f < cin; ++f) dst[f] += l.coeff * src[f];
            }
        }
        const auto& tv = theta_.values();
        Mat ov(out.values().data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(cout));
        for (std::size_t p = 0; p < basis_count_; ++p) {
            ConstMat yp(g.data() + p * n * cin, static_cast<Eigen::Index>(n),
                        static_cast<Eigen::Index>(cin));
            ConstMat th(tv.data() + p * cin * cout, static_cast<Eigen::Index>(cin),
                        static_cast<Eigen::Index>(cout));
            ov.noalias() += yp * th;
        }
    }
    detail::check_finite(out, "spline_conv");
    out.set_requires_grad(x.requires_grad() || theta_.requires_grad());
    if (grad_recording({&x, &theta_})) {
        Tensor xc = x, tc = theta_, oc = out;
        auto table = table_;
        const std::size_t bc = basis_count_;
        Tape::active()->record([xc, tc, oc, gathered, table, bc, n, cin, cout]() mutable {
            if (!oc.has_grad()) return;
            const auto& go = oc.grad();
            ConstMat gom(go.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(cout));
            if (tc.requires_grad()) {
                auto& gt = tc.grad();
                for (std::size_t p = 0; p < bc; ++p) {
                    ConstMat yp(gathered->data() + p * n * cin, static_cast<Eigen::Index>(n),
                                static_cast<Eigen::Index>(cin));
                    Mat gtp(gt.data() + p * cin * cout, static_cast<Eigen::Index>(cin),
                            static_cast<Eigen::Index>(cout));
                    gtp.noalias() += yp.transpose() * gom;
                }
            }
            if (xc.requires_grad()) {
                auto& gx = xc.grad();
                const auto& tv = tc.values();
                std::vector<double> gy(n * cin);
                for (std::size_t p = 0; p < bc; ++p) {
                    ConstMat th(tv.data() + p * cin * cout, static_cast<Eigen::Index>(cin),
                                static_cast<Eigen::Index>(cout));
                    Mat gym(gy.data(), static_cast<Eigen::Index>(n),
                            static_cast<Eigen::Index>(cin));
                    gym.noalias() = gom * th.transpose();
                    // Transpose of the gather: credit flows from row i of the
                    // output back to neighbor j.
                    for (const Link& l : (*table)[p]) {
                        const double* src = gy.data() + l.i * cin;
                        double* dst = gx.data() + l.j * cin;
                        for (std::size_t f = 0; f < cin; ++f) dst[f] += l.coeff * src[f];
                    }
                }
            }
        });
    }
    return out;
}

Tensor SplineConv::forward(const Tensor& x) const {
    if (x.rank() != 2 || x.dim(0) != node_count_ || x.dim(1) != config_.in_channels)
        throw std::invalid_argument("SplineConv: expected shape (" + std::to_string(node_count_) +
                                    ", " + std::to_string(config_.in_channels) + "), got " +
                                    shape_str(x.shape()));
    Tensor out = neighbor_mix(x);
    if (config_.root_weight) out = add(out, matmul(x, root_));
    return add(out, bias_);
}

SpatialBlock::SpatialBlock(std::size_t channels, const MeshGraph& graph, Rng& rng, bool root_weight)
    : conv_([&] {
          SplineConvConfig c;
          c.in_channels = channels;
          c.out_channels = channels;
          c.root_weight = root_weight;
          return c;
      }(),
            graph, rng) {}

Tensor SpatialBlock::forward(const Tensor& x) const { return add(x, elu(conv_.forward(x))); }

PointwiseConv::PointwiseConv(std::size_t in_channels, std::size_t out_channels, Rng& rng,
                             bool activation)
    : activation_(activation) {
    if (in_channels == 0 || out_channels == 0)
        throw std::invalid_argument("PointwiseConv: channel counts must be positive");
    const double s = 1.0 / std::sqrt(static_cast<double>(in_channels));
    weight_ = Tensor::uniform(rng, -s, s, {in_channels, out_channels}, true);
    bias_ = Tensor::zeros({out_channels}, true);
}

void PointwiseConv::collect_parameters(const std::string& prefix, NamedParams& out) {
    out.emplace_back(prefix + ".weight", weight_);
    out.emplace_back(prefix + ".bias", bias_);
}

Tensor PointwiseConv::forward(const Tensor& x) const {
    Tensor y = add(matmul(x, weight_), bias_);
    return activation_ ? elu(y) : y;
}

}  // namespace tkgcn
