#pragma once

// The compact generated controller and its canonical flat parameter layout.
//
// Layer i is stored as an out_i x (in_i + 1) block whose row r is
// [W_i row r | b_i[r]]; blocks are concatenated in layer order, row-major.

#include "disc/nn.hpp"
#include "disc/tensor.hpp"

#include <span>
#include <vector>

namespace disc {

struct PolicyArch {
    std::vector<Index> dims;   // {obs_dim, h1, ..., act_dim}

    PolicyArch() = default;
    explicit PolicyArch(std::vector<Index> d);

    int layers() const { return static_cast<int>(dims.size()) - 1; }
    Index rows(int layer) const { return dims[static_cast<std::size_t>(layer) + 1]; }
    Index cols(int layer) const { return dims[static_cast<std::size_t>(layer)] + 1; }
    Index offset(int layer) const;
    Index total_rows() const;
    Index obs_dim() const { return dims.front(); }
    Index act_dim() const { return dims.back(); }

    friend bool operator==(const PolicyArch&, const PolicyArch&) = default;
};

Index param_count(const PolicyArch& arch);

struct PolicyParams {
    PolicyArch arch;
    Vector flat;

    PolicyParams() = default;
    PolicyParams(PolicyArch a, Vector f);
    static PolicyParams zeros(const PolicyArch& a);

    /// View of layer i as out_i x (in_i + 1).
    Eigen::Map<const Matrix> layer(int i) const;
    Eigen::Map<Matrix> layer(int i);
};

/// Assembles flat parameters from per-layer row blocks.
PolicyParams flatten(const PolicyArch& arch, std::span<const Matrix> layers);
std::vector<Matrix> unflatten(const PolicyParams& p);

/// Standard random init: LeCun-normal weights, zero bias.
PolicyParams random_policy(const PolicyArch& arch, Rng& rng);

/// Plain evaluation: tanh hidden layers, identity output.
Vector policy_forward(const Eigen::Ref<const Vector>& obs, const PolicyParams& theta);

/// Differentiable batch evaluation. obs is B x obs_dim; layers[i] is out_i x (in_i+1).
Var policy_forward(Graph& g, Var obs, std::span<const Var> layers);

} // namespace disc
