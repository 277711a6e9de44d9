#include "disc/baselines.hpp"

#include "disc/errors.hpp"

#include <cmath>

namespace disc {

namespace {

Matrix apply_activation(Matrix z, Activation a) {
    switch (a) {
    case Activation::tanh: return z.array().tanh().matrix();
    case Activation::relu: return z.cwiseMax(0.0);
    case Activation::identity: return z;
    }
    return z;
}

void check_blocks(std::span<const TaskEmbedding* const> instr, std::span<const Matrix> obs, Index obs_dim) {
    if (instr.empty()) throw ContractError("predict: no instructions");
    if (obs.size() != instr.size()) throw ContractError("predict: one observation block per instruction required");
    for (const auto& o : obs)
        if (o.rows() > 0 && o.cols() != obs_dim)
            throw DimensionError("predict: observations " + shape_str(o) + " vs input width " + std::to_string(obs_dim));
}

class MatrixFnController : public Controller {
public:
    explicit MatrixFnController(std::function<Matrix(const Matrix&)> f) : f_(std::move(f)) {}
    Vector act(const Eigen::Ref<const Vector>& obs) override {
        Matrix row = obs.transpose();
        return f_(row).row(0).transpose();
    }

private:
    std::function<Matrix(const Matrix&)> f_;
};

std::vector<Index> hidden_from_json(const nlohmann::json& j) { return j.at("hidden").get<std::vector<Index>>(); }

} // namespace

Matrix mlp_eval(const Mlp& m, const Matrix& x) {
    Matrix h = x;
    for (std::size_t i = 0; i < m.layers.size(); ++i) {
        Matrix z = h * m.layers[i].weight->value;
        z.rowwise() += m.layers[i].bias->value.row(0);
        h = (i + 1 < m.layers.size()) ? apply_activation(std::move(z), m.hidden) : std::move(z);
    }
    return h;
}

// ---------------------------------------------------------------------------

ConcatMlp::ConcatMlp(const MlpBaselineConfig& cfg) : cfg_(cfg) {
    if (cfg.obs_dim <= 0 || cfg.act_dim <= 0 || cfg.d_lang <= 0) throw ConfigError("concat-mlp: bad dimensions");
    Rng rng(cfg.seed);
    std::vector<Index> dims{cfg.obs_dim + cfg.d_lang};
    for (Index h : cfg.hidden) dims.push_back(h);
    dims.push_back(cfg.act_dim);
    net_ = make_mlp(params_, "concat", dims, rng);
}

nlohmann::json ConcatMlp::config_json() const {
    return {{"kind", kind()},      {"obs_dim", cfg_.obs_dim}, {"act_dim", cfg_.act_dim},
            {"d_lang", cfg_.d_lang}, {"hidden", cfg_.hidden},  {"seed", cfg_.seed}};
}

Matrix ConcatMlp::build_input(std::span<const TaskEmbedding* const> instr, std::span<const Matrix> obs, Index d_lang) {
    Index rows = 0;
    for (const auto& o : obs) rows += o.rows();
    if (rows == 0) throw ContractError("predict: empty batch");
    const Index od = obs[0].cols();
    Matrix in(rows, od + d_lang);
    Index r = 0;
    for (std::size_t i = 0; i < obs.size(); ++i) {
        const Matrix& o = obs[i];
        if (o.rows() == 0) continue;
        if (instr[i]->pooled.cols() != d_lang)
            throw DimensionError("predict: language width " + std::to_string(instr[i]->pooled.cols()) + " vs " +
                                 std::to_string(d_lang));
        in.block(r, 0, o.rows(), od) = o;
        in.block(r, od, o.rows(), d_lang) = instr[i]->pooled.replicate(o.rows(), 1);
        r += o.rows();
    }
    return in;
}

Var ConcatMlp::predict(Graph& g, std::span<const TaskEmbedding* const> instr, std::span<const Matrix> obs) {
    check_blocks(instr, obs, cfg_.obs_dim);
    return net_(g, g.constant(build_input(instr, obs, cfg_.d_lang)));
}

std::unique_ptr<Controller> ConcatMlp::controller(const TaskEmbedding& e) const {
    if (e.pooled.cols() != cfg_.d_lang) throw DimensionError("controller: language width mismatch");
    Matrix pooled = e.pooled;
    const Mlp* net = &net_;
    const Index od = cfg_.obs_dim;
    return std::make_unique<MatrixFnController>([net, pooled, od](const Matrix& o) {
        if (o.cols() != od) throw DimensionError("act: observation width mismatch");
        Matrix in(o.rows(), od + pooled.cols());
        in << o, pooled.replicate(o.rows(), 1);
        return mlp_eval(*net, in);
    });
}

// ---------------------------------------------------------------------------

FilmMlp::FilmMlp(const MlpBaselineConfig& cfg) : cfg_(cfg) {
    if (cfg.obs_dim <= 0 || cfg.act_dim <= 0 || cfg.d_lang <= 0 || cfg.hidden.empty())
        throw ConfigError("film-mlp: bad dimensions");
    Rng rng(cfg.seed);
    Index in = cfg.obs_dim;
    for (std::size_t i = 0; i < cfg.hidden.size(); ++i) {
        backbone_.push_back(make_linear(params_, "film.backbone" + std::to_string(i), in, cfg.hidden[i], rng));
        in = cfg.hidden[i];
    }
    backbone_.push_back(make_linear(params_, "film.out", in, cfg.act_dim, rng));
    head_ = make_linear(params_, "film.head", cfg.d_lang, modulation_count(), rng, 0.0);
}

Index FilmMlp::modulation_count() const {
    Index s = 0;
    for (Index h : cfg_.hidden) s += h;
    return 2 * s;
}

nlohmann::json FilmMlp::config_json() const {
    return {{"kind", kind()},      {"obs_dim", cfg_.obs_dim}, {"act_dim", cfg_.act_dim},
            {"d_lang", cfg_.d_lang}, {"hidden", cfg_.hidden},  {"seed", cfg_.seed}};
}

std::pair<Matrix, Matrix> FilmMlp::modulation(const Matrix& pooled) const {
    Matrix m = pooled * head_.weight->value + head_.bias->value;
    const Index half = modulation_count() / 2;
    Matrix gamma = (m.leftCols(half).array() + 1.0).matrix();
    return {gamma, m.rightCols(half)};
}

Var FilmMlp::predict(Graph& g, std::span<const TaskEmbedding* const> instr, std::span<const Matrix> obs) {
    check_blocks(instr, obs, cfg_.obs_dim);
    const Index half = modulation_count() / 2;
    Matrix pooled = stack_pooled(instr);
    if (pooled.cols() != cfg_.d_lang) throw DimensionError("predict: language width mismatch");
    Var mod = head_(g, g.constant(pooled));   // groups x 2*sum(h)
    std::vector<Index> rows;
    Index total = 0;
    for (std::size_t i = 0; i < obs.size(); ++i) {
        for (Index r = 0; r < obs[i].rows(); ++r) rows.push_back(static_cast<Index>(i));
        total += obs[i].rows();
    }
    if (total == 0) throw ContractError("predict: empty batch");
    Var per_row = gather_rows(mod, rows);   // batch x 2*sum(h)
    std::vector<Var> obs_parts;
    for (const auto& o : obs)
        if (o.rows() > 0) obs_parts.push_back(g.constant(o));
    Var h = obs_parts.size() == 1 ? obs_parts[0] : concat_rows(obs_parts);
    Index off = 0;
    for (std::size_t i = 0; i < cfg_.hidden.size(); ++i) {
        const Index w = cfg_.hidden[i];
        Var gamma = slice(per_row, 0, total, off, w);
        Var beta = slice(per_row, 0, total, half + off, w);
        Var z = backbone_[i](g, h);
        // gamma = 1 + head output
        h = tanh(add(add(z, mul(z, gamma)), beta));
        off += w;
    }
    return backbone_.back()(g, h);
}

Matrix FilmMlp::eval(const Matrix& obs, const Matrix& pooled) const {
    auto [gamma, beta] = modulation(pooled);
    Matrix h = obs;
    Index off = 0;
    for (std::size_t i = 0; i < cfg_.hidden.size(); ++i) {
        const Index w = cfg_.hidden[i];
        Matrix z = h * backbone_[i].weight->value;
        z.rowwise() += backbone_[i].bias->value.row(0);
        z.array().rowwise() *= gamma.block(0, off, 1, w).row(0).array();
        z.rowwise() += beta.block(0, off, 1, w).row(0);
        h = z.array().tanh().matrix();
        off += w;
    }
    Matrix out = h * backbone_.back().weight->value;
    out.rowwise() += backbone_.back().bias->value.row(0);
    return out;
}

std::unique_ptr<Controller> FilmMlp::controller(const TaskEmbedding& e) const {
    if (e.pooled.cols() != cfg_.d_lang) throw DimensionError("controller: language width mismatch");
    Matrix pooled = e.pooled;
    const Index od = cfg_.obs_dim;
    return std::make_unique<MatrixFnController>([this, pooled, od](const Matrix& o) {
        if (o.cols() != od) throw DimensionError("act: observation width mismatch");
        return eval(o, pooled);
    });
}

// ---------------------------------------------------------------------------

DirectHypernet::DirectHypernet(const DirectHypernetConfig& cfg) : GeneratorModel(cfg.arch), cfg_(cfg) {
    if (cfg.layers < 1 || cfg.hidden <= 0 || cfg.d_lang <= 0) throw ConfigError("direct-hypernet: bad dimensions");
    Rng rng(cfg.seed);
    const Index P = param_count(cfg.arch);
    std::vector<Index> dims{cfg.d_lang};
    for (int i = 0; i + 1 < cfg.layers; ++i) dims.push_back(cfg.hidden);
    dims.push_back(P);
    net_ = make_mlp(params_, "direct", dims, rng, Activation::relu);
    out_scale_.resize(1, P);
    for (int i = 0; i < cfg.arch.layers(); ++i) {
        const Index n = cfg.arch.rows(i) * cfg.arch.cols(i);
        out_scale_.block(0, cfg.arch.offset(i), 1, n).setConstant(1.0 / std::sqrt(static_cast<double>(cfg.arch.cols(i))));
    }
}

nlohmann::json DirectHypernet::config_json() const {
    return {{"kind", kind()},          {"arch", cfg_.arch.dims}, {"d_lang", cfg_.d_lang},
            {"hidden", cfg_.hidden},   {"layers", cfg_.layers},  {"seed", cfg_.seed}};
}

std::vector<Var> DirectHypernet::generate(Graph& g, std::span<const TaskEmbedding* const> instr) const {
    Matrix pooled = stack_pooled(instr);
    if (pooled.cols() != cfg_.d_lang) throw DimensionError("direct-hypernet: language width mismatch");
    const int groups = static_cast<int>(instr.size());
    Var flat = mul(net_(g, g.constant(pooled)), g.constant(out_scale_.replicate(groups, 1)));
    std::vector<Var> layers;
    const PolicyArch& arch = cfg_.arch;
    for (int i = 0; i < arch.layers(); ++i) {
        std::vector<Var> per_group;
        for (int gi = 0; gi < groups; ++gi) {
            Var row = slice(flat, gi, 1, arch.offset(i), arch.rows(i) * arch.cols(i));
            per_group.push_back(reshape(row, arch.rows(i), arch.cols(i)));
        }
        layers.push_back(groups == 1 ? per_group[0] : concat_rows(per_group));
    }
    return layers;
}

// ---------------------------------------------------------------------------

LoraConcat::LoraConcat(const ConcatMlp& base, int rank, std::uint64_t seed) : base_(base), rank_(rank) {
    if (rank < 0) throw ConfigError("lora rank must be non-negative");
    Rng rng(seed);
    const auto& layers = base.net().layers;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const Index in = layers[i].in_features(), out = layers[i].out_features();
        const std::string p = "lora" + std::to_string(i);
        a_.push_back(&params_.add(p + ".a", normal_matrix(in, rank, 1.0 / std::sqrt(static_cast<double>(in)), rng)));
        b_.push_back(&params_.add(p + ".b", Matrix::Zero(rank, out)));
    }
}

nlohmann::json LoraConcat::config_json() const {
    return {{"kind", kind()}, {"rank", rank_}, {"base", base_.config_json()}};
}

Var LoraConcat::predict(Graph& g, std::span<const TaskEmbedding* const> instr, std::span<const Matrix> obs) {
    check_blocks(instr, obs, base_.config().obs_dim);
    Var h = g.constant(ConcatMlp::build_input(instr, obs, base_.config().d_lang));
    const auto& layers = base_.net().layers;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        Var z = add(matmul(h, g.constant(layers[i].weight->value)), g.constant(layers[i].bias->value));
        if (rank_ > 0) z = add(z, matmul(matmul(h, g.param(*a_[i])), g.param(*b_[i])));
        h = (i + 1 < layers.size()) ? activate(z, base_.net().hidden) : z;
    }
    return h;
}

Matrix LoraConcat::eval(const Matrix& input) const {
    Matrix h = input;
    const auto& layers = base_.net().layers;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        Matrix z = h * layers[i].weight->value;
        if (rank_ > 0) z += (h * a_[i]->value) * b_[i]->value;
        z.rowwise() += layers[i].bias->value.row(0);
        h = (i + 1 < layers.size()) ? apply_activation(std::move(z), base_.net().hidden) : std::move(z);
    }
    return h;
}

std::unique_ptr<Controller> LoraConcat::controller(const TaskEmbedding& e) const {
    Matrix pooled = e.pooled;
    const Index od = base_.config().obs_dim;
    return std::make_unique<MatrixFnController>([this, pooled, od](const Matrix& o) {
        if (o.cols() != od) throw DimensionError("act: observation width mismatch");
        Matrix in(o.rows(), od + pooled.cols());
        in << o, pooled.replicate(o.rows(), 1);
        return eval(in);
    });
}

std::size_t lora_param_count(const ConcatMlp& base, int rank) {
    std::size_t n = 0;
    for (const auto& l : base.net().layers)
        n += static_cast<std::size_t>(rank) * static_cast<std::size_t>(l.in_features() + l.out_features());
    return n;
}

int solve_lora_rank(const ConcatMlp& base, std::size_t target, double tol) {
    const std::size_t per_rank = lora_param_count(base, 1);
    if (per_rank == 0) throw ConfigError("lora: base model has no weights");
    int best = static_cast<int>(std::llround(static_cast<double>(target) / static_cast<double>(per_rank)));
    if (best < 1) best = 1;
    double err = std::abs(static_cast<double>(lora_param_count(base, best)) - static_cast<double>(target)) /
                 static_cast<double>(target);
    if (err > tol)
        throw ConfigError("no lora rank within " + std::to_string(tol * 100) + "% of " + std::to_string(target) +
                          " trainable parameters (best rank " + std::to_string(best) + ", " +
                          std::to_string(lora_param_count(base, best)) + ")");
    return best;
}

Index solve_width(const std::function<std::size_t(Index)>& count, std::size_t target, double tol) {
    if (target == 0) throw ConfigError("width solver: zero target");
    Index best = 1;
    double best_err = 1e300;
    // Parameter counts grow monotonically in width; scan until they pass the target.
    for (Index h = 1; h <= 65536; ++h) {
        const auto c = static_cast<double>(count(h));
        double err = std::abs(c - static_cast<double>(target));
        if (err < best_err) {
            best_err = err;
            best = h;
        }
        if (c > static_cast<double>(target)) break;
    }
    if (best_err / static_cast<double>(target) > tol)
        throw ConfigError("width solver: no width within " + std::to_string(tol * 100) + "% of " +
                          std::to_string(target) + " parameters");
    return best;
}

std::size_t concat_param_count(Index obs_dim, int d_lang, Index act_dim, Index width, int hidden_layers) {
    Index in = obs_dim + d_lang;
    std::size_t n = 0;
    for (int i = 0; i < hidden_layers; ++i) {
        n += static_cast<std::size_t>(in * width + width);
        in = width;
    }
    return n + static_cast<std::size_t>(in * act_dim + act_dim);
}

std::size_t film_param_count(Index obs_dim, int d_lang, Index act_dim, Index width, int hidden_layers) {
    Index in = obs_dim;
    std::size_t n = 0;
    for (int i = 0; i < hidden_layers; ++i) {
        n += static_cast<std::size_t>(in * width + width);
        in = width;
    }
    n += static_cast<std::size_t>(in * act_dim + act_dim);
    const Index mod = 2 * width * hidden_layers;
    return n + static_cast<std::size_t>(d_lang * mod + mod);
}

// ---------------------------------------------------------------------------

std::size_t disc_budget(const HypernetConfig& cfg) {
    Hypernet h(cfg);
    return h.trainable_count() + static_cast<std::size_t>(param_count(cfg.arch));
}

std::vector<std::string> model_kinds() {
    return {"disc", "disc-win-only", "disc-no-win", "direct-hypernet", "concat-mlp", "film-mlp"};
}

std::unique_ptr<Model> make_model(const ModelSpec& spec) {
    HypernetConfig hc = spec.hypernet;
    hc.arch = spec.arch;
    hc.d_lang = spec.d_lang;
    hc.seed = spec.seed;
    if (spec.kind == "disc") return std::make_unique<Hypernet>(hc);
    if (spec.kind == "disc-win-only") {
        hc.refine_steps = 0;
        return std::make_unique<Hypernet>(hc);
    }
    if (spec.kind == "disc-no-win") {
        hc.use_win = false;
        return std::make_unique<Hypernet>(hc);
    }
    if (spec.kind == "direct-hypernet") {
        DirectHypernetConfig dc;
        dc.arch = spec.arch;
        dc.d_lang = spec.d_lang;
        dc.hidden = spec.direct_hidden;
        dc.seed = spec.seed;
        return std::make_unique<DirectHypernet>(dc);
    }
    if (spec.kind == "concat-mlp" || spec.kind == "film-mlp") {
        const int depth = spec.arch.layers() - 1;
        MlpBaselineConfig mc;
        mc.obs_dim = spec.arch.obs_dim();
        mc.act_dim = spec.arch.act_dim();
        mc.d_lang = spec.d_lang;
        mc.seed = spec.seed;
        Index width = spec.baseline_width;
        if (width == 0) {
            HypernetConfig full = spec.hypernet;
            full.arch = spec.arch;
            full.d_lang = spec.d_lang;
            const std::size_t budget = disc_budget(full);
            const bool concat = spec.kind == "concat-mlp";
            width = solve_width(
                [&](Index h) {
                    return concat ? concat_param_count(mc.obs_dim, mc.d_lang, mc.act_dim, h, depth)
                                  : film_param_count(mc.obs_dim, mc.d_lang, mc.act_dim, h, depth);
                },
                budget);
        }
        mc.hidden.assign(static_cast<std::size_t>(depth), width);
        if (spec.kind == "concat-mlp") return std::make_unique<ConcatMlp>(mc);
        return std::make_unique<FilmMlp>(mc);
    }
    throw ConfigError("unknown model kind '" + spec.kind + "'");
}

std::unique_ptr<Model> make_model(const nlohmann::json& j) {
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "disc" || kind == "disc-win-only" || kind == "disc-no-win")
        return std::make_unique<Hypernet>(hypernet_config_from_json(j));
    if (kind == "direct-hypernet") {
        DirectHypernetConfig dc;
        dc.arch = PolicyArch(j.at("arch").get<std::vector<Index>>());
        dc.d_lang = j.at("d_lang").get<int>();
        dc.hidden = j.at("hidden").get<Index>();
        dc.layers = j.at("layers").get<int>();
        dc.seed = j.at("seed").get<std::uint64_t>();
        return std::make_unique<DirectHypernet>(dc);
    }
    if (kind == "concat-mlp" || kind == "film-mlp") {
        MlpBaselineConfig mc;
        mc.obs_dim = j.at("obs_dim").get<Index>();
        mc.act_dim = j.at("act_dim").get<Index>();
        mc.d_lang = j.at("d_lang").get<int>();
        mc.hidden = hidden_from_json(j);
        mc.seed = j.at("seed").get<std::uint64_t>();
        if (kind == "concat-mlp") return std::make_unique<ConcatMlp>(mc);
        return std::make_unique<FilmMlp>(mc);
    }
    throw ConfigError("cannot rebuild model kind '" + kind + "'");
}

} // namespace disc
