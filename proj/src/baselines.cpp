#include "tkgcn/baselines.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <cmath>
#include <stdexcept>
#include <string>

#include "tkgcn/ops.hpp"

namespace tkgcn {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatMap = Eigen::Map<const RowMat>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;

ConstMatMap as_matrix(const Tensor& t) {
    return ConstMatMap(t.values().data(), static_cast<Eigen::Index>(t.dim(0)),
                       static_cast<Eigen::Index>(t.dim(1)));
}

Eigen::VectorXd as_state_vector(const Tensor& t, std::size_t expect, const char* who) {
    const bool flat = t.shape().size() == 1 && t.dim(0) == expect;
    const bool column = t.shape().size() == 2 && t.dim(0) == expect && t.dim(1) == 1;
    if (!flat && !column)
        throw std::invalid_argument(std::string(who) + ": expected a state of length " +
                                    std::to_string(expect));
    return ConstVecMap(t.values().data(), static_cast<Eigen::Index>(expect));
}

Tensor from_eigen(const RowMat& m) {
    Tensor out = Tensor::zeros({static_cast<std::size_t>(m.rows()),
                                static_cast<std::size_t>(m.cols())});
    Eigen::Map<RowMat>(out.values().data(), m.rows(), m.cols()) = m;
    return out;
}

Tensor from_eigen(const Eigen::VectorXd& v) {
    Tensor out = Tensor::zeros({static_cast<std::size_t>(v.size())});
    Eigen::Map<Eigen::VectorXd>(out.values().data(), v.size()) = v;
    return out;
}

std::size_t checked_horizon(long long horizon, const char* who) {
    if (horizon < 0)
        throw std::invalid_argument(std::string(who) + ": horizon must be non-negative, got " +
                                    std::to_string(horizon));
    return static_cast<std::size_t>(horizon);
}

}  // namespace

Tensor DMDModel::predict(const Tensor& state) const {
    const std::size_t n = basis.dim(0);
    Eigen::VectorXd x = as_state_vector(state, n, "DMDModel::predict");
    ConstMatMap u = as_matrix(basis);
    ConstMatMap a = as_matrix(reduced_operator);
    return from_eigen(Eigen::VectorXd(u * (a * (u.transpose() * x))));
}

DMDModel dmd_fit(const Tensor& snapshots, const DMDConfig& config) {
    if (snapshots.shape().size() != 2)
        throw std::invalid_argument("dmd_fit: snapshots must be a (state, time) matrix");
    const std::size_t t = snapshots.dim(1);
    if (t < 2) throw std::invalid_argument("dmd_fit: need at least 2 snapshots, got " +
                                           std::to_string(t));
    if (config.rank == 0) throw std::invalid_argument("dmd_fit: rank must be at least 1");

    ConstMatMap x = as_matrix(snapshots);
    RowMat x1 = x.leftCols(static_cast<Eigen::Index>(t - 1));
    RowMat x2 = x.rightCols(static_cast<Eigen::Index>(t - 1));

    Eigen::BDCSVD<RowMat> svd(x1, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Eigen::VectorXd& sigma = svd.singularValues();

    std::size_t r = std::min<std::size_t>(config.rank, static_cast<std::size_t>(sigma.size()));
    while (r > 0 && sigma(static_cast<Eigen::Index>(r - 1)) <= config.singular_value_floor) --r;
    if (r == 0)
        throw std::invalid_argument(
            "dmd_fit: all singular values are at or below the floor; the data is "
            "numerically zero");

    const Eigen::Index ri = static_cast<Eigen::Index>(r);
    RowMat u = svd.matrixU().leftCols(ri);
    RowMat v = svd.matrixV().leftCols(ri);
    Eigen::VectorXd inv_sigma = sigma.head(ri).cwiseInverse();
    RowMat atilde = u.transpose() * x2 * v * inv_sigma.asDiagonal();

    DMDModel model;
    model.requested_rank = config.rank;
    model.rank = r;
    model.basis = from_eigen(u);
    model.reduced_operator = from_eigen(atilde);
    model.last_state = from_eigen(Eigen::VectorXd(x.col(static_cast<Eigen::Index>(t - 1))));
    return model;
}

Tensor dmd_forecast(const DMDModel& model, const Tensor& initial, long long horizon) {
    const std::size_t steps = checked_horizon(horizon, "dmd_forecast");
    const std::size_t n = model.basis.dim(0);
    Eigen::VectorXd x = as_state_vector(initial, n, "dmd_forecast");
    ConstMatMap u = as_matrix(model.basis);
    ConstMatMap a = as_matrix(model.reduced_operator);

    Tensor out = Tensor::zeros({steps, n});
    Eigen::VectorXd z = u.transpose() * x;
    for (std::size_t i = 0; i < steps; ++i) {
        z = a * z;
        Eigen::Map<Eigen::VectorXd>(out.values().data() + i * n,
                                    static_cast<Eigen::Index>(n)) = u * z;
    }
    return out;
}

Tensor VARModel::predict(const Tensor& recent) const {
    if (recent.shape().size() != 2 || recent.dim(0) != order || recent.dim(1) != dimension)
        throw std::invalid_argument("VARModel::predict: expected the " + std::to_string(order) +
                                    " most recent states as a (" + std::to_string(order) + ", " +
                                    std::to_string(dimension) + ") tensor");
    ConstMatMap r = as_matrix(recent);
    Eigen::VectorXd next = ConstVecMap(intercept.values().data(),
                                       static_cast<Eigen::Index>(dimension));
    for (std::size_t i = 0; i < order; ++i) {
        // Row order-1 is the newest state and pairs with A_1.
        next += as_matrix(coefficients[i]) *
                r.row(static_cast<Eigen::Index>(order - 1 - i)).transpose();
    }
    return from_eigen(next);
}

VARModel var_fit(const Tensor& series, const VARConfig& config) {
    if (config.order == 0) throw std::invalid_argument("var_fit: order must be at least 1");
    if (config.ridge < 0.0) throw std::invalid_argument("var_fit: ridge must be non-negative");
    if (series.shape().size() != 2)
        throw std::invalid_argument("var_fit: series must be a (time, dim) matrix");
    const std::size_t t = series.dim(0);
    const std::size_t d = series.dim(1);
    const std::size_t p = config.order;
    if (t <= p)
        throw std::invalid_argument("var_fit: need more than " + std::to_string(p) +
                                    " states to fit order " + std::to_string(p) + ", got " +
                                    std::to_string(t));

    // Regression rows: for each target x(s), predictors are the p preceding
    // states laid out newest first. The intercept is handled by centering so
    // the ridge penalty never touches it.
    const std::size_t rows = t - p;
    const std::size_t cols = p * d;
    ConstMatMap x = as_matrix(series);
    RowMat y(rows, d);
    RowMat z(rows, cols);
    for (std::size_t s = 0; s < rows; ++s) {
        y.row(static_cast<Eigen::Index>(s)) = x.row(static_cast<Eigen::Index>(p + s));
        for (std::size_t i = 0; i < p; ++i)
            z.block(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(i * d), 1,
                    static_cast<Eigen::Index>(d)) =
                x.row(static_cast<Eigen::Index>(p + s - 1 - i));
    }
    Eigen::RowVectorXd y_mean = y.colwise().mean();
    Eigen::RowVectorXd z_mean = z.colwise().mean();
    y.rowwise() -= y_mean;
    z.rowwise() -= z_mean;

    Eigen::BDCSVD<RowMat> svd(z, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Eigen::VectorXd& sigma = svd.singularValues();
    const double sigma_max = sigma.size() > 0 ? sigma(0) : 0.0;
    if (config.ridge == 0.0 &&
        (sigma_max == 0.0 || sigma(sigma.size() - 1) <= 1e-12 * sigma_max))
        throw std::runtime_error(
            "var_fit: normal equations are singular with ridge = 0; set a positive "
            "ridge (e.g. 1e-6) to regularize");

    // Ridge solution through the SVD: W = V diag(s/(s^2 + ridge)) U^T Y.
    Eigen::VectorXd shrink(sigma.size());
    for (Eigen::Index i = 0; i < sigma.size(); ++i) {
        const double s2 = sigma(i) * sigma(i) + config.ridge;
        shrink(i) = s2 > 0.0 ? sigma(i) / s2 : 0.0;
    }
    RowMat w = svd.matrixV() * shrink.asDiagonal() * (svd.matrixU().transpose() * y);

    VARModel model;
    model.order = p;
    model.dimension = d;
    model.coefficients.reserve(p);
    for (std::size_t i = 0; i < p; ++i) {
        RowMat a_i = w.block(static_cast<Eigen::Index>(i * d), 0,
                             static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d))
                         .transpose();
        model.coefficients.push_back(from_eigen(a_i));
    }
    Eigen::VectorXd c = y_mean.transpose() - w.transpose() * z_mean.transpose();
    model.intercept = from_eigen(c);
    return model;
}

Tensor var_forecast(const VARModel& model, const Tensor& history, long long horizon) {
    const std::size_t steps = checked_horizon(horizon, "var_forecast");
    const std::size_t p = model.order;
    const std::size_t d = model.dimension;
    if (history.shape().size() != 2 || history.dim(1) != d)
        throw std::invalid_argument("var_forecast: history must be a (time, " +
                                    std::to_string(d) + ") matrix");
    if (history.dim(0) < p)
        throw std::invalid_argument("var_forecast: history holds " +
                                    std::to_string(history.dim(0)) + " states but order " +
                                    std::to_string(p) + " needs at least " + std::to_string(p));

    // Sliding buffer of the p newest states, newest in the last row.
    RowMat recent = as_matrix(history).bottomRows(static_cast<Eigen::Index>(p));
    ConstVecMap c(model.intercept.values().data(), static_cast<Eigen::Index>(d));

    Tensor out = Tensor::zeros({steps, d});
    for (std::size_t s = 0; s < steps; ++s) {
        Eigen::VectorXd next = c;
        for (std::size_t i = 0; i < p; ++i)
            next += as_matrix(model.coefficients[i]) *
                    recent.row(static_cast<Eigen::Index>(p - 1 - i)).transpose();
        for (std::size_t i = 0; i + 1 < p; ++i) recent.row(static_cast<Eigen::Index>(i)) =
            recent.row(static_cast<Eigen::Index>(i + 1));
        recent.row(static_cast<Eigen::Index>(p - 1)) = next.transpose();
        Eigen::Map<Eigen::VectorXd>(out.values().data() + s * d,
                                    static_cast<Eigen::Index>(d)) = next;
    }
    return out;
}

Tensor pure_koopman_forecast(const KoopmanAutoencoder& model, const Tensor& frame,
                             long long horizon) {
    const std::size_t steps = checked_horizon(horizon, "pure_koopman_forecast");
    const std::size_t n = model.fine_nodes();
    Tensor x = frame;
    if (x.shape().size() == 1 && x.dim(0) == n) x = reshape(x, {n, 1});
    if (x.shape().size() != 2 || x.dim(0) != n || x.dim(1) != 1)
        throw std::invalid_argument("pure_koopman_forecast: expected a frame of length " +
                                    std::to_string(n));

    Tensor z = model.encode(x);
    Tensor out = Tensor::zeros({steps, n});
    for (std::size_t i = 0; i < steps; ++i) {
        z = model.advance(z, 1);
        Tensor decoded = model.decode(z);
        std::copy(decoded.values().begin(), decoded.values().end(),
                  out.values().begin() + static_cast<std::ptrdiff_t>(i * n));
    }
    return out;
}

}  // namespace tkgcn
