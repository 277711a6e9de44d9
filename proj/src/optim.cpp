#include "disc/optim.hpp"

#include "disc/errors.hpp"

#include <atomic>
#include <cmath>
#include <iostream>
#include <numbers>

namespace disc {

void adamw_step(Matrix& param, const Matrix& grad, AdamState& state, double lr, const AdamWOptions& opts) {
    if (param.rows() != grad.rows() || param.cols() != grad.cols())
        throw ContractError("adamw_step: parameter " + shape_str(param) + " vs gradient " + shape_str(grad));
    if (!(lr > 0.0)) throw ContractError("adamw_step: learning rate must be positive");
    if (state.m.size() == 0) {
        state.m = Matrix::Zero(param.rows(), param.cols());
        state.v = Matrix::Zero(param.rows(), param.cols());
    } else if (state.m.rows() != param.rows() || state.m.cols() != param.cols()) {
        throw ContractError("adamw_step: moment shape " + shape_str(state.m) + " vs parameter " + shape_str(param));
    }
    ++state.step;
    state.m = opts.beta1 * state.m + (1.0 - opts.beta1) * grad;
    state.v = opts.beta2 * state.v + (1.0 - opts.beta2) * grad.cwiseProduct(grad);
    const double t = static_cast<double>(state.step);
    const double bc1 = 1.0 - std::pow(opts.beta1, t);
    const double bc2 = 1.0 - std::pow(opts.beta2, t);
    if (opts.weight_decay != 0.0) param *= (1.0 - lr * opts.weight_decay);
    param.array() -= lr * (state.m.array() / bc1) / ((state.v.array() / bc2).sqrt() + opts.eps);
}

AdamW::AdamW(std::vector<Parameter*> params, AdamWOptions opts)
    : params_(std::move(params)), states_(params_.size()), opts_(opts) {}

void AdamW::step(double lr) {
    for (std::size_t i = 0; i < params_.size(); ++i) adamw_step(params_[i]->value, params_[i]->grad, states_[i], lr, opts_);
}

void AdamW::zero_grad() {
    for (Parameter* p : params_) p->zero_grad();
}

double cosine_lr(std::int64_t step, std::int64_t total_steps, double base_lr) {
    if (total_steps <= 0 || step < 0) throw ContractError("cosine_lr: need 0 <= step and total_steps > 0");
    if (step > total_steps) {
        static std::atomic<bool> warned{false};
        if (!warned.exchange(true))
            std::cerr << "warning: cosine_lr step " << step << " past total " << total_steps << ", using lr 0\n";
        return 0.0;
    }
    return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / static_cast<double>(total_steps)));
}

} // namespace disc
