#include "disc/model.hpp"

#include "disc/errors.hpp"

namespace disc {

Matrix stack_tokens(std::span<const TaskEmbedding* const> instr) {
    if (instr.empty()) throw ContractError("no instructions given");
    const Index L = instr[0]->tokens.rows();
    const Index d = instr[0]->tokens.cols();
    if (L == 0) throw ContractError("instruction has no tokens");
    Matrix out(L * static_cast<Index>(instr.size()), d);
    for (std::size_t i = 0; i < instr.size(); ++i) {
        if (instr[i]->tokens.rows() != L || instr[i]->tokens.cols() != d)
            throw DimensionError("instructions in one batch must share token shape " + shape_str(instr[0]->tokens));
        out.middleRows(static_cast<Index>(i) * L, L) = instr[i]->tokens;
    }
    return out;
}

Matrix stack_pooled(std::span<const TaskEmbedding* const> instr) {
    if (instr.empty()) throw ContractError("no instructions given");
    Matrix out(static_cast<Index>(instr.size()), instr[0]->pooled.cols());
    for (std::size_t i = 0; i < instr.size(); ++i) out.row(static_cast<Index>(i)) = instr[i]->pooled;
    return out;
}

std::vector<Var> group_layers(std::span<const Var> stacked, const PolicyArch& arch, int groups, int gi) {
    std::vector<Var> out;
    for (int i = 0; i < arch.layers(); ++i) {
        const Var& s = stacked[static_cast<std::size_t>(i)];
        if (s.rows() != groups * arch.rows(i) || s.cols() != arch.cols(i))
            throw DimensionError("generated layer " + std::to_string(i) + " has shape " + shape_str(s.value()));
        out.push_back(groups == 1 ? s : slice(s, gi * arch.rows(i), arch.rows(i), 0, arch.cols(i)));
    }
    return out;
}

PolicyParams GeneratorModel::generate_policy(const TaskEmbedding& e) const {
    ++generations_;
    Graph g(Graph::Options{.check_finite = false, .no_grad = true});
    const TaskEmbedding* one[] = {&e};
    std::vector<Var> layers = generate(g, one);
    PolicyParams p = PolicyParams::zeros(arch_);
    for (int i = 0; i < arch_.layers(); ++i) p.layer(i) = layers[static_cast<std::size_t>(i)].value();
    return p;
}

Var GeneratorModel::predict(Graph& g, std::span<const TaskEmbedding* const> instr, std::span<const Matrix> obs) {
    if (obs.size() != instr.size()) throw ContractError("predict: one observation block per instruction required");
    std::vector<Var> stacked = generate(g, instr);
    const int groups = static_cast<int>(instr.size());
    std::vector<Var> preds;
    for (int gi = 0; gi < groups; ++gi) {
        const Matrix& o = obs[static_cast<std::size_t>(gi)];
        if (o.rows() == 0) continue;
        if (o.cols() != arch_.obs_dim())
            throw DimensionError("predict: observations " + shape_str(o) + " vs policy input width " +
                                 std::to_string(arch_.obs_dim()));
        std::vector<Var> layers = group_layers(stacked, arch_, groups, gi);
        preds.push_back(policy_forward(g, g.constant(o), layers));
    }
    if (preds.empty()) throw ContractError("predict: empty batch");
    return preds.size() == 1 ? preds[0] : concat_rows(preds);
}

std::unique_ptr<Controller> GeneratorModel::controller(const TaskEmbedding& e) const {
    return std::make_unique<PolicyController>(generate_policy(e));
}

} // namespace disc
