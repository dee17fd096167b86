#pragma once

#include <cstdint>
#include <vector>

#include "tkgcn/tensor.hpp"

namespace tkgcn {

struct AdamConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

// Adam with bias-corrected first and second moments. Each step consumes the
// accumulated gradients of the registered parameters and zeroes them.
class Adam {
public:
    Adam(std::vector<Tensor> params, AdamConfig config = {});

    // Applies one update. Throws std::runtime_error if any registered
    // parameter has no accumulated gradient (typically a detached graph).
    void step();

    std::int64_t step_count() const { return t_; }
    const AdamConfig& config() const { return config_; }

    // For schedules; takes effect from the next step.
    void set_learning_rate(double lr);

private:
    std::vector<Tensor> params_;
    std::vector<std::vector<double>> m_, v_;
    AdamConfig config_;
    std::int64_t t_ = 0;
};

}  // namespace tkgcn
