#pragma once

#include <array>
#include <cstddef>
#include <memory>
#include <string>
#include <vector>

#include "tkgcn/checkpoint.hpp"
#include "tkgcn/graph.hpp"
#include "tkgcn/tensor.hpp"
#include "tkgcn/util.hpp"

namespace tkgcn {

struct BasisEntry {
    // Row-major linear index over the per-dimension knot triples (k1, k2, k3).
    std::size_t index = 0;
    double value = 0.0;
};

// Tensor-product B-spline basis at pseudo-coordinate w. Degree-1 hats on
// kernel_size[d] equidistant knots spanning [0,1] per dimension; the product
// has a 2x2x2 support cell, so exactly 8 entries come back (some may be zero
// when w sits on a knot). Entry values sum to 1 for any w in [0,1]^3.
// Throws std::invalid_argument for w outside the unit cube, degree != 1, or
// kernel sizes < 2.
std::vector<BasisEntry> bspline_basis(const std::array<double, 3>& w, int degree,
                                      const std::array<int, 3>& kernel_size);

struct SplineConvConfig {
    std::size_t in_channels = 0;
    std::size_t out_channels = 0;
    std::array<int, 3> kernel_size = {3, 3, 3};
    int degree = 1;
    // Adds x_i * root to each node's output; switchable so the pure
    // neighbor-mixing behaviour stays testable and configurable.
    bool root_weight = true;
};

// Continuous-kernel graph convolution bound to one fixed graph. Each node
// averages its neighbors' features mixed by a kernel matrix interpolated from
// `theta` at the edge's pseudo-coordinate, then adds a root transform of its
// own features and a bias:
//
//   out_i = (1/|N(i)|) * sum_j x_j * g(w_ij) + x_i * root + bias,
//   g(w)  = sum_p B_p(w) * theta_p.
//
// Nodes without neighbors contribute a zero neighbor term. The basis table is
// precomputed per edge at construction; forward passes are differentiable in
// x, theta, root, and bias.
class SplineConv {
public:
    SplineConv(const SplineConvConfig& config, const MeshGraph& graph, Rng& rng);

    // x has shape (N, in_channels); the result has shape (N, out_channels).
    Tensor forward(const Tensor& x) const;

    const SplineConvConfig& config() const { return config_; }
    std::size_t basis_count() const { return basis_count_; }
    Tensor& theta() { return theta_; }
    Tensor& root() { return root_; }
    Tensor& bias() { return bias_; }

    std::vector<Tensor> parameters();
    void collect_parameters(const std::string& prefix, NamedParams& out);

private:
    Tensor neighbor_mix(const Tensor& x) const;

    SplineConvConfig config_;
    std::size_t node_count_ = 0;
    std::size_t basis_count_ = 0;  // product of kernel sizes
    // theta has shape (basis_count, in, out); root (in, out); bias (out).
    Tensor theta_, root_, bias_;
    // One scatter list per basis function p: out_i gains coeff * x_j, with
    // coeff = B_p(w_ij) / |N(i)| folded in at construction. Shared with
    // recorded backward closures, which may outlive the layer.
    struct Link {
        std::size_t i = 0, j = 0;
        double coeff = 0.0;
    };
    std::shared_ptr<const std::vector<std::vector<Link>>> table_;
};

// Residual unit: x + ELU(conv(x)). Channel count is preserved, so the
// convolution is built with in == out channels.
class SpatialBlock {
public:
    SpatialBlock(std::size_t channels, const MeshGraph& graph, Rng& rng, bool root_weight = true);

    Tensor forward(const Tensor& x) const;

    SplineConv& conv() { return conv_; }
    std::vector<Tensor> parameters() { return conv_.parameters(); }
    void collect_parameters(const std::string& prefix, NamedParams& out) {
        conv_.collect_parameters(prefix, out);
    }

private:
    SplineConv conv_;
};

// Per-node channel mixer: x * weight + bias, optionally followed by ELU.
class PointwiseConv {
public:
    PointwiseConv(std::size_t in_channels, std::size_t out_channels, Rng& rng,
                  bool activation = true);

    Tensor forward(const Tensor& x) const;

    Tensor& weight() { return weight_; }
    Tensor& bias() { return bias_; }

    std::vector<Tensor> parameters() { return {weight_, bias_}; }
    void collect_parameters(const std::string& prefix, NamedParams& out);

private:
    Tensor weight_, bias_;
    bool activation_ = true;
};

}  // namespace tkgcn
