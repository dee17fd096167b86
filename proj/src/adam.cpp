#include "tkgcn/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace tkgcn {

Adam::Adam(std::vector<Tensor> params, AdamConfig config)
    : params_(std::move(params)), config_(config) {
    if (params_.empty()) throw std::invalid_argument("Adam: no parameters registered");
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const Tensor& p : params_) {
        if (!p.defined()) throw std::invalid_argument("Adam: undefined parameter tensor");
        m_.emplace_back(p.size(), 0.0);
        v_.emplace_back(p.size(), 0.0);
    }
}

void Adam::step() {
    for (std::size_t i = 0; i < params_.size(); ++i) {
        if (!params_[i].has_grad())
            throw std::runtime_error("Adam::step: parameter " + std::to_string(i) +
                                     " has no gradient; did backward run over a graph containing it?");
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Tensor& p = params_[i];
        auto& val = p.values();
        auto& g = p.grad();
        auto& m = m_[i];
        auto& v = v_[i];
        for (std::size_t j = 0; j < val.size(); ++j) {
            m[j] = config_.beta1 * m[j] + (1.0 - config_.beta1) * g[j];
            v[j] = config_.beta2 * v[j] + (1.0 - config_.beta2) * g[j] * g[j];
            const double m_hat = m[j] / bc1;
            const double v_hat = v[j] / bc2;
            val[j] -= config_.learning_rate * m_hat / (std::sqrt(v_hat) + config_.epsilon);
        }
        p.zero_grad();
    }
}

void Adam::set_learning_rate(double lr) {
    if (lr <= 0.0) throw std::invalid_argument("Adam: learning rate must be positive");
    config_.learning_rate = lr;
}

}  // namespace tkgcn
