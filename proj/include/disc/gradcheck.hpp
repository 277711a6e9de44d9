#pragma once

#include "disc/tensor.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace disc {

/// Builds a scalar from freshly-created input Vars on the given graph.
using TensorFn = std::function<Var(Graph&, std::span<const Var>)>;

struct GradCheckResult {
    double max_rel_error = 0.0;
    /// Input index and flat coordinate where the maximum occurred.
    std::size_t input = 0;
    Index coord = 0;
};

/// Compares reverse-mode gradients against central differences.
/// Error per coordinate is |analytic - numeric| / max(1, |analytic|).
/// Any non-finite value yields an error of +inf.
GradCheckResult grad_check_detail(const TensorFn& f, const std::vector<Matrix>& inputs, double h = 1e-5);

inline double grad_check(const TensorFn& f, const std::vector<Matrix>& inputs, double h = 1e-5) {
    return grad_check_detail(f, inputs, h).max_rel_error;
}

/// Gradient check restricted to a subset of coordinates of a set of Parameters.
/// `loss` must build the scalar from the current Parameter values.
/// Each entry of `coords` is (parameter index, flat coordinate).
double grad_check_params(const std::function<Var(Graph&)>& loss, std::span<Parameter* const> params,
                         const std::vector<std::pair<std::size_t, Index>>& coords, double h = 1e-5);

struct OpCheck {
    std::string op;
    double max_rel_error = 0.0;
    int worst_case = 0;
};

/// Gradient check of every differentiable op on `shapes_per_op` random shapes,
/// each output reduced through a random linear projection.
std::vector<OpCheck> op_gradcheck_suite(int shapes_per_op = 20, std::uint64_t seed = 0);

} // namespace disc
