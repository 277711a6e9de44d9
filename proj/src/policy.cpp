#include "disc/policy.hpp"

#include "disc/errors.hpp"

#include <cmath>

namespace disc {

PolicyArch::PolicyArch(std::vector<Index> d) : dims(std::move(d)) {
    if (dims.size() < 2) throw ContractError("policy arch needs at least one layer");
    for (Index x : dims)
        if (x < 1) throw ContractError("policy arch dims must be >= 1");
}

Index PolicyArch::offset(int layer) const {
    Index off = 0;
    for (int i = 0; i < layer; ++i) off += rows(i) * cols(i);
    return off;
}

Index PolicyArch::total_rows() const {
    Index n = 0;
    for (int i = 0; i < layers(); ++i) n += rows(i);
    return n;
}

Index param_count(const PolicyArch& arch) { return arch.offset(arch.layers()); }

PolicyParams::PolicyParams(PolicyArch a, Vector f) : arch(std::move(a)), flat(std::move(f)) {
    if (flat.size() != param_count(arch))
        throw ContractError("policy params: flat length " + std::to_string(flat.size()) + " != param_count " +
                            std::to_string(param_count(arch)));
}

PolicyParams PolicyParams::zeros(const PolicyArch& a) { return PolicyParams(a, Vector::Zero(param_count(a))); }

Eigen::Map<const Matrix> PolicyParams::layer(int i) const {
    return Eigen::Map<const Matrix>(flat.data() + arch.offset(i), arch.rows(i), arch.cols(i));
}

Eigen::Map<Matrix> PolicyParams::layer(int i) {
    return Eigen::Map<Matrix>(flat.data() + arch.offset(i), arch.rows(i), arch.cols(i));
}

PolicyParams flatten(const PolicyArch& arch, std::span<const Matrix> layers) {
    if (static_cast<int>(layers.size()) != arch.layers())
        throw ContractError("flatten: expected " + std::to_string(arch.layers()) + " layers");
    PolicyParams p = PolicyParams::zeros(arch);
    for (int i = 0; i < arch.layers(); ++i) {
        const Matrix& m = layers[static_cast<std::size_t>(i)];
        if (m.rows() != arch.rows(i) || m.cols() != arch.cols(i))
            throw DimensionError("flatten: layer " + std::to_string(i) + " has shape " + shape_str(m));
        p.layer(i) = m;
    }
    return p;
}

std::vector<Matrix> unflatten(const PolicyParams& p) {
    std::vector<Matrix> out;
    for (int i = 0; i < p.arch.layers(); ++i) out.emplace_back(p.layer(i));
    return out;
}

PolicyParams random_policy(const PolicyArch& arch, Rng& rng) {
    PolicyParams p = PolicyParams::zeros(arch);
    for (int i = 0; i < arch.layers(); ++i) {
        const Index in = arch.cols(i) - 1;
        p.layer(i).leftCols(in) = normal_matrix(arch.rows(i), in, 1.0 / std::sqrt(static_cast<double>(in)), rng);
    }
    return p;
}

Vector policy_forward(const Eigen::Ref<const Vector>& obs, const PolicyParams& theta) {
    if (obs.size() != theta.arch.obs_dim())
        throw ContractError("policy_forward: observation has " + std::to_string(obs.size()) + " entries, expected " +
                            std::to_string(theta.arch.obs_dim()));
    Vector h = obs;
    const int L = theta.arch.layers();
    for (int i = 0; i < L; ++i) {
        auto W = theta.layer(i);
        const Index in = W.cols() - 1;
        Vector z = W.leftCols(in) * h + W.col(in);
        h = (i + 1 < L) ? Vector(z.array().tanh()) : z;
    }
    return h;
}

Var policy_forward(Graph& g, Var obs, std::span<const Var> layers) {
    if (layers.empty()) throw ContractError("policy_forward: no layers");
    Var h = obs;
    Var ones = g.constant(Matrix::Ones(obs.rows(), 1));
    for (std::size_t i = 0; i < layers.size(); ++i) {
        if (layers[i].cols() != h.cols() + 1)
            throw DimensionError("policy_forward: layer " + std::to_string(i) + " " + shape_str(layers[i].value()) +
                                 " cannot consume input " + shape_str(h.value()));
        std::vector<Var> parts{h, ones};
        Var z = matmul(concat_cols(parts), transpose(layers[i]));
        h = (i + 1 < layers.size()) ? tanh(z) : z;
    }
    return h;
}

} // namespace disc
