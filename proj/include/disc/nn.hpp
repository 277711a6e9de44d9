#pragma once

// Parameter containers and the small set of layers every model is built from.

#include "disc/tensor.hpp"

#include <cstdint>
#include <deque>
#include <random>
#include <string>
#include <vector>

namespace disc {

using Rng = std::mt19937_64;

/// Owns named Parameters at stable addresses, in creation order.
class ParamSet {
public:
    ParamSet() = default;
    ParamSet(const ParamSet&) = delete;
    ParamSet& operator=(const ParamSet&) = delete;
    ParamSet(ParamSet&&) = default;
    ParamSet& operator=(ParamSet&&) = default;

    Parameter& add(std::string name, Matrix init);
    Parameter* find(std::string_view name);
    const Parameter* find(std::string_view name) const;

    std::vector<Parameter*> all();
    std::vector<const Parameter*> all() const;
    std::size_t size() const { return params_.size(); }
    /// Total number of scalars.
    std::size_t count() const;
    void zero_grad();
    /// FNV-1a over names, shapes and raw bytes of every value.
    std::uint64_t hash() const;

private:
    std::deque<Parameter> params_;
};

Matrix normal_matrix(Index rows, Index cols, double stddev, Rng& rng);

/// y = x W + b with W stored in x in_features x out_features.
struct Linear {
    Parameter* weight = nullptr;
    Parameter* bias = nullptr;

    Var operator()(Graph& g, Var x) const;
    Index in_features() const { return weight->value.rows(); }
    Index out_features() const { return weight->value.cols(); }
};

/// LeCun-normal weights (std = gain/sqrt(in)); zero bias. `gain` = 0 gives a zero map.
Linear make_linear(ParamSet& ps, const std::string& name, Index in, Index out, Rng& rng, double gain = 1.0);

enum class Activation { tanh, relu, identity };

Var activate(Var x, Activation a);

/// Stack of Linear layers with an activation between them (none after the last).
struct Mlp {
    std::vector<Linear> layers;
    Activation hidden = Activation::tanh;

    Var operator()(Graph& g, Var x) const;
};

/// dims = {in, h1, ..., out}. `last_gain` scales the final layer init (0 => zero-initialized output).
Mlp make_mlp(ParamSet& ps, const std::string& name, const std::vector<Index>& dims, Rng& rng,
             Activation hidden = Activation::tanh, double last_gain = 1.0);

struct LayerNorm {
    Parameter* gain = nullptr;
    Parameter* bias = nullptr;
    Var operator()(Graph& g, Var x) const;
};

LayerNorm make_layer_norm(ParamSet& ps, const std::string& name, Index width);

/// One multi-head cross-attention layer with residual and post-norm:
/// out = LN(q + Attn(q Wq, kv Wk, kv Wv) Wo + bo).
struct CrossAttention {
    Parameter* wq = nullptr;
    Parameter* wk = nullptr;
    Parameter* wv = nullptr;
    Linear out;
    LayerNorm norm;
    int heads = 1;

    Var operator()(Graph& g, Var queries, Var keys_values, int groups) const;
};

CrossAttention make_cross_attention(ParamSet& ps, const std::string& name, Index width, int heads, Rng& rng);

/// Tiles a parameter's rows `groups` times (block-major). Gradient sums over copies.
Var tile_rows(Graph& g, Var x, int groups);

/// Row-interleaves two group-major stacks: for each group g, rows of a[g] then b[g].
Var concat_rows_grouped(Var a, Var b, int groups);

/// Rows [begin, begin+count) of every group of a group-major stack with `per_group` rows each.
Var slice_rows_grouped(Var x, int groups, Index per_group, Index begin, Index count);

} // namespace disc
