#include "disc/nn.hpp"

#include "disc/errors.hpp"

#include <cmath>
#include <cstring>

namespace disc {

Parameter& ParamSet::add(std::string name, Matrix init) {
    if (find(name)) throw ContractError("duplicate parameter name '" + name + "'");
    params_.emplace_back(std::move(name), std::move(init));
    return params_.back();
}

Parameter* ParamSet::find(std::string_view name) {
    for (auto& p : params_)
        if (p.name == name) return &p;
    return nullptr;
}

const Parameter* ParamSet::find(std::string_view name) const {
    for (const auto& p : params_)
        if (p.name == name) return &p;
    return nullptr;
}

std::vector<Parameter*> ParamSet::all() {
    std::vector<Parameter*> out;
    out.reserve(params_.size());
    for (auto& p : params_) out.push_back(&p);
    return out;
}

std::vector<const Parameter*> ParamSet::all() const {
    std::vector<const Parameter*> out;
    out.reserve(params_.size());
    for (const auto& p : params_) out.push_back(&p);
    return out;
}

std::size_t ParamSet::count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
    return n;
}

void ParamSet::zero_grad() {
    for (auto& p : params_) p.zero_grad();
}

std::uint64_t ParamSet::hash() const {
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&h](const void* data, std::size_t n) {
        const auto* b = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= b[i];
            h *= 1099511628211ULL;
        }
    };
    for (const auto& p : params_) {
        mix(p.name.data(), p.name.size());
        Index shape[2] = {p.value.rows(), p.value.cols()};
        mix(shape, sizeof(shape));
        mix(p.value.data(), static_cast<std::size_t>(p.value.size()) * sizeof(double));
    }
    return h;
}

Matrix normal_matrix(Index rows, Index cols, double stddev, Rng& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    Matrix m(rows, cols);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = stddev * n(rng);
    return m;
}

Var Linear::operator()(Graph& g, Var x) const {
    return add(matmul(x, g.param(*weight)), g.param(*bias));
}

Linear make_linear(ParamSet& ps, const std::string& name, Index in, Index out, Rng& rng, double gain) {
    Matrix w = gain == 0.0 ? Matrix::Zero(in, out)
                           : normal_matrix(in, out, gain / std::sqrt(static_cast<double>(in)), rng);
    Linear l;
    l.weight = &ps.add(name + ".w", std::move(w));
    l.bias = &ps.add(name + ".b", Matrix::Zero(1, out));
    return l;
}

Var activate(Var x, Activation a) {
    switch (a) {
    case Activation::tanh: return tanh(x);
    case Activation::relu: return relu(x);
    case Activation::identity: return x;
    }
    return x;
}

Var Mlp::operator()(Graph& g, Var x) const {
    for (std::size_t i = 0; i < layers.size(); ++i) {
        x = layers[i](g, x);
        if (i + 1 < layers.size()) x = activate(x, hidden);
    }
    return x;
}

Mlp make_mlp(ParamSet& ps, const std::string& name, const std::vector<Index>& dims, Rng& rng, Activation hidden,
             double last_gain) {
    if (dims.size() < 2) throw ContractError("make_mlp: need at least input and output width");
    Mlp m;
    m.hidden = hidden;
    for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
        double gain = (i + 2 == dims.size()) ? last_gain : 1.0;
        m.layers.push_back(make_linear(ps, name + "." + std::to_string(i), dims[i], dims[i + 1], rng, gain));
    }
    return m;
}

Var LayerNorm::operator()(Graph& g, Var x) const { return layer_norm(x, g.param(*gain), g.param(*bias)); }

LayerNorm make_layer_norm(ParamSet& ps, const std::string& name, Index width) {
    LayerNorm ln;
    ln.gain = &ps.add(name + ".gain", Matrix::Ones(1, width));
    ln.bias = &ps.add(name + ".bias", Matrix::Zero(1, width));
    return ln;
}

Var CrossAttention::operator()(Graph& g, Var queries, Var keys_values, int groups) const {
    Var q = matmul(queries, g.param(*wq));
    Var k = matmul(keys_values, g.param(*wk));
    Var v = matmul(keys_values, g.param(*wv));
    Var a = attention(q, k, v, heads, groups);
    return norm(g, add(queries, out(g, a)));
}

CrossAttention make_cross_attention(ParamSet& ps, const std::string& name, Index width, int heads, Rng& rng) {
    if (heads <= 0 || width % heads != 0)
        throw ContractError("cross-attention width " + std::to_string(width) + " not divisible by heads");
    CrossAttention ca;
    const double s = 1.0 / std::sqrt(static_cast<double>(width));
    ca.wq = &ps.add(name + ".wq", normal_matrix(width, width, s, rng));
    ca.wk = &ps.add(name + ".wk", normal_matrix(width, width, s, rng));
    ca.wv = &ps.add(name + ".wv", normal_matrix(width, width, s, rng));
    ca.out = make_linear(ps, name + ".o", width, width, rng);
    ca.norm = make_layer_norm(ps, name + ".ln", width);
    ca.heads = heads;
    return ca;
}

Var tile_rows(Graph&, Var x, int groups) {
    if (groups == 1) return x;
    std::vector<Index> idx;
    idx.reserve(static_cast<std::size_t>(groups * x.rows()));
    for (int g = 0; g < groups; ++g)
        for (Index r = 0; r < x.rows(); ++r) idx.push_back(r);
    return gather_rows(x, std::move(idx));
}

Var concat_rows_grouped(Var a, Var b, int groups) {
    if (a.rows() % groups != 0 || b.rows() % groups != 0)
        throw DimensionError("concat_rows_grouped: rows not divisible into groups");
    const Index na = a.rows() / groups;
    const Index nb = b.rows() / groups;
    std::vector<Var> parts{a, b};
    Var stacked = concat_rows(parts);
    std::vector<Index> idx;
    idx.reserve(static_cast<std::size_t>(stacked.rows()));
    for (int g = 0; g < groups; ++g) {
        for (Index r = 0; r < na; ++r) idx.push_back(g * na + r);
        for (Index r = 0; r < nb; ++r) idx.push_back(groups * na + g * nb + r);
    }
    return gather_rows(stacked, std::move(idx));
}

Var slice_rows_grouped(Var x, int groups, Index per_group, Index begin, Index count) {
    if (x.rows() != groups * per_group || begin < 0 || begin + count > per_group)
        throw DimensionError("slice_rows_grouped: bad range for " + shape_str(x.value()));
    if (groups == 1) return slice(x, begin, count, 0, x.cols());
    std::vector<Index> idx;
    idx.reserve(static_cast<std::size_t>(groups * count));
    for (int g = 0; g < groups; ++g)
        for (Index r = 0; r < count; ++r) idx.push_back(g * per_group + begin + r);
    return gather_rows(x, std::move(idx));
}

} // namespace disc
