#include "disc/hypernet.hpp"

#include "disc/errors.hpp"

#include <cmath>

namespace disc {

nlohmann::json to_json(const HypernetConfig& c) {
    return {{"d", c.d},
            {"heads", c.heads},
            {"attn_layers_per_block", c.attn_layers_per_block},
            {"win_blocks", c.win_blocks},
            {"refine_steps", c.refine_steps},
            {"d_lang", c.d_lang},
            {"arch", c.arch.dims},
            {"use_win", c.use_win},
            {"seed", c.seed}};
}

HypernetConfig hypernet_config_from_json(const nlohmann::json& j) {
    HypernetConfig c;
    c.d = j.at("d").get<int>();
    c.heads = j.at("heads").get<int>();
    c.attn_layers_per_block = j.at("attn_layers_per_block").get<int>();
    c.win_blocks = j.at("win_blocks").get<int>();
    c.refine_steps = j.at("refine_steps").get<int>();
    c.d_lang = j.at("d_lang").get<int>();
    c.arch = PolicyArch(j.at("arch").get<std::vector<Index>>());
    c.use_win = j.at("use_win").get<bool>();
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
}

Hypernet::Hypernet(const HypernetConfig& cfg) : GeneratorModel(cfg.arch), cfg_(cfg) {
    if (cfg.d <= 0 || cfg.heads <= 0 || cfg.d % cfg.heads != 0)
        throw ConfigError("hypernet token width " + std::to_string(cfg.d) + " must be divisible by " +
                          std::to_string(cfg.heads) + " heads");
    if (cfg.attn_layers_per_block != 1) throw ConfigError("only one attention layer per cross-attention block is supported");
    if (cfg.refine_steps < 0 || cfg.win_blocks < 0) throw ConfigError("negative hypernet depth");
    if (cfg.d_lang <= 0) throw ConfigError("d_lang must be positive");

    Rng rng(cfg.seed);
    const Index d = cfg.d;
    const PolicyArch& arch = cfg.arch;
    const int L = arch.layers();

    std::size_t before = params_.count();
    if (cfg.use_win) {
        win_.lang_proj = make_linear(params_, "win.lang_proj", cfg.d_lang, d, rng);
        win_.queries = &params_.add("win.queries", normal_matrix(arch.total_rows(), d, 1.0, rng));
        for (int b = 0; b < cfg.win_blocks; ++b) {
            const std::string p = "win.block" + std::to_string(b);
            Win::Block blk;
            blk.self_attn = make_cross_attention(params_, p + ".self", d, cfg.heads, rng);
            blk.cross_attn = make_cross_attention(params_, p + ".cross", d, cfg.heads, rng);
            blk.ffn = make_mlp(params_, p + ".ffn", {d, 2 * d, d}, rng);
            blk.ffn_norm = make_layer_norm(params_, p + ".ffn_ln", d);
            win_.blocks.push_back(std::move(blk));
        }
        for (int i = 0; i < L; ++i) {
            double gain = 1.6 / std::sqrt(static_cast<double>(arch.cols(i)));
            win_.decoders.push_back(
                make_mlp(params_, "win.decoder" + std::to_string(i), {d, d, arch.cols(i)}, rng, Activation::tanh, gain));
        }
    } else {
        for (int i = 0; i < L; ++i) {
            PolicyParams init = random_policy(arch, rng);
            init_const_.push_back(&params_.add("init.layer" + std::to_string(i), Matrix(init.layer(i))));
        }
    }
    win_count_ = params_.count() - before;

    before = params_.count();
    if (cfg.refine_steps > 0) {
        ref_.lang_proj = make_linear(params_, "refine.lang_proj", cfg.d_lang, d, rng);
        ref_.tau0_queries = &params_.add("refine.tau0_queries", normal_matrix(arch.obs_dim(), d, 1.0, rng));
        ref_.tau0 = make_cross_attention(params_, "refine.tau0", d, cfg.heads, rng);
        ref_.top_grad = make_cross_attention(params_, "refine.top_grad", d, cfg.heads, rng);
        for (int i = 0; i < L; ++i) {
            const std::string s = std::to_string(i);
            ref_.encoders.push_back(make_mlp(params_, "refine.encoder" + s, {arch.cols(i), d, d}, rng));
            ref_.forward.push_back(make_cross_attention(params_, "refine.forward" + s, d, cfg.heads, rng));
            // Jh of the first layer would only feed dL/dz_0, which does not exist.
            ref_.jac_h.push_back(i == 0 ? CrossAttention{}
                                        : make_cross_attention(params_, "refine.jac_h" + s, d, cfg.heads, rng));
            ref_.jac_theta.push_back(make_cross_attention(params_, "refine.jac_theta" + s, d, cfg.heads, rng));
            ref_.grad_omega.push_back(make_cross_attention(params_, "refine.grad_omega" + s, d, cfg.heads, rng));
            if (i + 1 < L)
                ref_.grad_z.push_back(make_cross_attention(params_, "refine.grad_z" + s, d, cfg.heads, rng));
            ref_.decoders.push_back(
                make_mlp(params_, "refine.decoder" + s, {d, d, arch.cols(i)}, rng, Activation::tanh, 0.0));
        }
    }
    refine_count_ = params_.count() - before;
}

std::string Hypernet::kind() const {
    if (!cfg_.use_win) return "disc-no-win";
    if (cfg_.refine_steps == 0) return "disc-win-only";
    return "disc";
}

nlohmann::json Hypernet::config_json() const {
    nlohmann::json j = to_json(cfg_);
    j["kind"] = kind();
    return j;
}

std::size_t Hypernet::win_param_count() const { return win_count_; }
std::size_t Hypernet::refine_param_count() const { return refine_count_; }

std::vector<Var> Hypernet::generate(Graph& g, std::span<const TaskEmbedding* const> instr) const {
    const int groups = static_cast<int>(instr.size());
    Var lang = g.constant(stack_tokens(instr));
    if (lang.cols() != cfg_.d_lang)
        throw DimensionError("hypernet expects language width " + std::to_string(cfg_.d_lang) + ", got " +
                             std::to_string(lang.cols()));
    std::vector<Var> layers = cfg_.use_win ? win_generate(g, lang, groups) : constant_init(g, groups);
    for (int t = 0; t < cfg_.refine_steps; ++t) layers = refine_step(g, layers, lang, groups);
    return layers;
}

std::vector<Var> Hypernet::win_generate(Graph& g, Var lang, int groups) const {
    if (!cfg_.use_win) throw ContractError("win_generate called on a model without a WIN");
    if (lang.rows() == 0 || lang.rows() % groups != 0) throw ContractError("win_generate: empty or ragged token sequence");
    const PolicyArch& arch = cfg_.arch;
    Var lang_w = win_.lang_proj(g, lang);
    Var x = tile_rows(g, g.param(*win_.queries), groups);
    for (const auto& blk : win_.blocks) {
        x = blk.self_attn(g, x, x, groups);
        x = blk.cross_attn(g, x, lang_w, groups);
        x = blk.ffn_norm(g, add(x, blk.ffn(g, x)));
    }
    std::vector<Var> layers;
    Index begin = 0;
    for (int i = 0; i < arch.layers(); ++i) {
        Var rows = slice_rows_grouped(x, groups, arch.total_rows(), begin, arch.rows(i));
        Var out = win_.decoders[static_cast<std::size_t>(i)](g, rows);
        if (out.cols() != arch.cols(i)) throw ContractError("WIN decoder width does not match policy arch");
        layers.push_back(out);
        begin += arch.rows(i);
    }
    return layers;
}

std::vector<Var> Hypernet::constant_init(Graph& g, int groups) const {
    std::vector<Var> layers;
    for (Parameter* p : init_const_) layers.push_back(tile_rows(g, g.param(*p), groups));
    return layers;
}

Var Hypernet::refine_language(Graph& g, Var lang) const { return ref_.lang_proj(g, lang); }

ParamTokens Hypernet::tokenize_params(Graph& g, std::span<const Var> layers) const {
    const PolicyArch& arch = cfg_.arch;
    if (static_cast<int>(layers.size()) != arch.layers()) throw ContractError("tokenize_params: wrong layer count");
    ParamTokens w;
    for (int i = 0; i < arch.layers(); ++i) {
        const Var& l = layers[static_cast<std::size_t>(i)];
        if (l.cols() != arch.cols(i) || l.rows() % arch.rows(i) != 0)
            throw DimensionError("tokenize_params: layer " + std::to_string(i) + " has shape " + shape_str(l.value()));
        w.omega.push_back(ref_.encoders[static_cast<std::size_t>(i)](g, l));
    }
    return w;
}

ActivationTokens Hypernet::forward_simulate(Graph& g, const ParamTokens& w, Var lang_ref, int groups) const {
    ActivationTokens t;
    t.tau.push_back(ref_.tau0(g, tile_rows(g, g.param(*ref_.tau0_queries), groups), lang_ref, groups));
    for (std::size_t i = 0; i < w.omega.size(); ++i) t.tau.push_back(ref_.forward[i](g, w.omega[i], t.tau[i], groups));
    return t;
}

GradTokens Hypernet::backward_simulate(Graph& g, const ParamTokens& w, const ActivationTokens& t, Var lang_ref,
                                       int groups) const {
    const std::size_t L = w.omega.size();
    GradTokens gt;
    gt.dz.resize(L);
    gt.grad_omega.resize(L);
    for (std::size_t i = 0; i < L; ++i) {
        gt.jac_h.push_back(i == 0 ? Var{} : ref_.jac_h[i](g, w.omega[i], t.tau[i], groups));
        gt.jac_theta.push_back(ref_.jac_theta[i](g, t.tau[i], w.omega[i], groups));
    }
    gt.dz[L - 1] = ref_.top_grad(g, t.tau[L], lang_ref, groups);
    for (std::size_t li = L; li-- > 0;) {
        gt.grad_omega[li] = ref_.grad_omega[li](g, gt.dz[li], gt.jac_theta[li], groups);
        if (li > 0) {
            Var upstream = concat_rows_grouped(gt.dz[li], gt.jac_h[li], groups);
            gt.dz[li - 1] = ref_.grad_z[li - 1](g, t.tau[li], upstream, groups);
        }
    }
    return gt;
}

std::vector<Var> Hypernet::meta_update(Graph& g, const GradTokens& grads) const {
    std::vector<Var> delta;
    for (std::size_t i = 0; i < grads.grad_omega.size(); ++i) delta.push_back(ref_.decoders[i](g, grads.grad_omega[i]));
    return delta;
}

std::vector<Var> Hypernet::refine_step(Graph& g, std::span<const Var> layers, Var lang, int groups) const {
    if (cfg_.refine_steps == 0) throw ContractError("refine_step called on a model without refinement");
    Var lang_ref = refine_language(g, lang);
    ParamTokens w = tokenize_params(g, layers);
    ActivationTokens t = forward_simulate(g, w, lang_ref, groups);
    GradTokens gt = backward_simulate(g, w, t, lang_ref, groups);
    std::vector<Var> delta = meta_update(g, gt);
    std::vector<Var> next;
    for (std::size_t i = 0; i < layers.size(); ++i) next.push_back(add(layers[i], delta[i]));
    return next;
}

} // namespace disc
