#pragma once

#include "disc/tensor.hpp"

#include <cstdint>
#include <vector>

namespace disc {

struct AdamState {
    Matrix m;
    Matrix v;
    std::int64_t step = 0;
};

struct AdamWOptions {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-4;
};

/// One AdamW update on a single tensor. Weight decay is applied to the
/// parameter directly (p *= 1 - lr*wd), never folded into the gradient.
void adamw_step(Matrix& param, const Matrix& grad, AdamState& state, double lr, const AdamWOptions& opts = {});

class AdamW {
public:
    AdamW() = default;
    AdamW(std::vector<Parameter*> params, AdamWOptions opts);

    /// Updates every parameter from its accumulated grad using `lr`.
    void step(double lr);
    void zero_grad();

    const AdamWOptions& options() const { return opts_; }
    std::int64_t steps() const { return states_.empty() ? 0 : states_.front().step; }
    const std::vector<AdamState>& states() const { return states_; }

private:
    std::vector<Parameter*> params_;
    std::vector<AdamState> states_;
    AdamWOptions opts_;
};

/// base_lr * 0.5 * (1 + cos(pi * step / total_steps)). Steps past the end
/// return 0 and print a one-time warning.
double cosine_lr(std::int64_t step, std::int64_t total_steps, double base_lr);

} // namespace disc
