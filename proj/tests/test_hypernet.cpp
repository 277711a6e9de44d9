#include "disc/baselines.hpp"
#include "disc/errors.hpp"
#include "disc/gradcheck.hpp"
#include "disc/hypernet.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace disc;

namespace {

HypernetConfig toy_config(int T = 2) {
    HypernetConfig c;
    c.d = 8;
    c.heads = 2;
    c.win_blocks = 1;
    c.refine_steps = T;
    c.d_lang = 6;
    c.arch = PolicyArch({4, 5, 3, 2});
    c.seed = 17;
    return c;
}

TaskEmbedding toy_embedding(std::uint64_t seed, Index d_lang = 6, Index len = 4) {
    Rng rng(seed);
    TaskEmbedding e;
    e.tokens = normal_matrix(len, d_lang, 1.0, rng);
    e.tokens.rowwise().normalize();
    e.pooled = e.tokens.colwise().mean();
    return e;
}

/// Gives every zero-initialized decoder output layer small random weights so
/// the refinement path is exercised.
void wake_decoders(Model& m, double scale = 0.05) {
    Rng rng(99);
    for (Parameter* p : m.params().all())
        if (p->name.rfind("refine.decoder", 0) == 0 && p->name.ends_with(".1.w"))
            p->value = normal_matrix(p->value.rows(), p->value.cols(), scale, rng);
}

std::vector<Matrix> values(std::span<const Var> vs) {
    std::vector<Matrix> out;
    for (const Var& v : vs) out.push_back(v.value());
    return out;
}

} // namespace

TEST(Hypernet, TokenCountBookkeeping) {
    Hypernet h(toy_config());
    const PolicyArch& a = h.arch();
    const int G = 3;
    TaskEmbedding e[] = {toy_embedding(1), toy_embedding(2), toy_embedding(3)};
    const TaskEmbedding* ip[] = {&e[0], &e[1], &e[2]};
    Graph g;
    Var lang = g.constant(stack_tokens(ip));
    auto layers = h.win_generate(g, lang, G);
    Var lr = h.refine_language(g, lang);
    ParamTokens w = h.tokenize_params(g, layers);
    ActivationTokens t = h.forward_simulate(g, w, lr, G);
    GradTokens gt = h.backward_simulate(g, w, t, lr, G);
    ASSERT_EQ(t.tau.size(), static_cast<std::size_t>(a.layers() + 1));
    EXPECT_EQ(t.tau[0].rows(), G * a.obs_dim());
    for (int i = 0; i < a.layers(); ++i) {
        const auto k = static_cast<std::size_t>(i);
        const Index out_i = a.rows(i), out_prev = a.dims[k];
        EXPECT_EQ(w.omega[k].rows(), G * out_i);
        EXPECT_EQ(t.tau[k + 1].rows(), G * out_i);
        EXPECT_EQ(gt.grad_omega[k].rows(), G * out_i);
        EXPECT_EQ(gt.dz[k].rows(), G * out_i);           // dL/dz of layer i
        if (i > 0) EXPECT_EQ(gt.jac_h[k].rows(), G * out_i);
        else EXPECT_FALSE(gt.jac_h[k].valid());
        EXPECT_EQ(gt.jac_theta[k].rows(), G * out_prev);
        if (i > 0) EXPECT_EQ(gt.dz[k - 1].rows(), G * out_prev);   // dL/dz_{i-1}
        for (const Var* v : {&w.omega[k], &t.tau[k + 1], &gt.grad_omega[k], &gt.dz[k]}) EXPECT_EQ(v->cols(), 8);
    }
}

TEST(Hypernet, FullWidthTokens) {
    HypernetConfig c = toy_config(1);
    c.d = 128;
    c.heads = 4;
    c.arch = PolicyArch({4, 32, 3});
    Hypernet h(c);
    TaskEmbedding e = toy_embedding(1);
    const TaskEmbedding* ip[] = {&e};
    Graph g;
    auto layers = h.win_generate(g, g.constant(stack_tokens(ip)), 1);
    ParamTokens w = h.tokenize_params(g, layers);
    EXPECT_EQ(w.omega[0].rows(), 32);
    EXPECT_EQ(w.omega[0].cols(), 128);
}

TEST(Hypernet, TokenizeIsRowLocal) {
    Hypernet h(toy_config());
    Rng rng(4);
    PolicyParams p = random_policy(h.arch(), rng);
    auto layers = unflatten(p);
    layers[0].row(1) = layers[0].row(0);
    Graph g;
    std::vector<Var> vs;
    for (auto& m : layers) vs.push_back(g.constant(m));
    Matrix w0 = h.tokenize_params(g, vs).omega[0].value();
    EXPECT_EQ(Matrix(w0.row(0)), Matrix(w0.row(1)));

    layers[0](2, 3) += 0.5;
    Graph g2;
    std::vector<Var> vs2;
    for (auto& m : layers) vs2.push_back(g2.constant(m));
    Matrix w1 = h.tokenize_params(g2, vs2).omega[0].value();
    for (Index r = 0; r < w0.rows(); ++r) {
        if (r == 2) EXPECT_NE(Matrix(w0.row(r)), Matrix(w1.row(r)));
        else EXPECT_EQ(Matrix(w0.row(r)), Matrix(w1.row(r)));
    }
}

TEST(Hypernet, LanguageChangesTau0) {
    Hypernet h(toy_config());
    TaskEmbedding e = toy_embedding(1);
    auto tau0 = [&](const Matrix& tokens) {
        Graph g;
        Var lr = h.refine_language(g, g.constant(tokens));
        Rng rng(1);
        auto ls = unflatten(random_policy(h.arch(), rng));
        std::vector<Var> vs;
        for (auto& m : ls) vs.push_back(g.constant(m));
        return Matrix(h.forward_simulate(g, h.tokenize_params(g, vs), lr, 1).tau[0].value());
    };
    Matrix a = tau0(e.tokens), b = tau0(Matrix::Zero(e.tokens.rows(), e.tokens.cols()));
    EXPECT_GT((a - b).norm(), 1e-6);
    EXPECT_EQ(a, tau0(e.tokens));
}

TEST(Hypernet, ZeroInitDecodersGiveIdentityRefinement) {
    Hypernet h(toy_config(3));
    TaskEmbedding e = toy_embedding(5);
    const TaskEmbedding* ip[] = {&e};
    Graph g;
    Var lang = g.constant(stack_tokens(ip));
    auto win = h.win_generate(g, lang, 1);
    auto full = h.generate(g, ip);
    for (std::size_t i = 0; i < win.size(); ++i) EXPECT_EQ(win[i].value(), full[i].value());

    Var lr = h.refine_language(g, lang);
    ParamTokens w = h.tokenize_params(g, win);
    auto delta = h.meta_update(g, h.backward_simulate(g, w, h.forward_simulate(g, w, lr, 1), lr, 1));
    Index total = 0;
    for (auto& d : delta) {
        EXPECT_EQ(d.value().cwiseAbs().maxCoeff(), 0.0);
        total += d.value().size();
    }
    EXPECT_EQ(total, param_count(h.arch()));
}

TEST(Hypernet, ZeroTEqualsWinOnly) {
    HypernetConfig c = toy_config(0);
    Hypernet h(c);
    TaskEmbedding e = toy_embedding(8);
    const TaskEmbedding* ip[] = {&e};
    Graph g;
    auto win = h.win_generate(g, g.constant(stack_tokens(ip)), 1);
    PolicyParams p = h.generate_policy(e);
    EXPECT_EQ(flatten(h.arch(), values(win)).flat, p.flat);
    EXPECT_EQ(h.refine_param_count(), 0u);
    EXPECT_THROW(h.refine_step(g, win, g.constant(e.tokens), 1), ContractError);
    auto m = make_model(ModelSpec{"disc-win-only", c.arch, c, c.d_lang, 48, 0, c.seed});
    EXPECT_EQ(m->kind(), "disc-win-only");
}

TEST(Hypernet, GenerateDeterministicAndTaskDependent) {
    Hypernet h(toy_config());
    wake_decoders(h);
    TaskEmbedding a = toy_embedding(1), b = toy_embedding(2);
    PolicyParams pa = h.generate_policy(a), pa2 = h.generate_policy(a), pb = h.generate_policy(b);
    EXPECT_EQ(pa.flat, pa2.flat);
    EXPECT_GT((pa.flat - pb.flat).norm(), 0.0);
    EXPECT_EQ(pa.flat.size(), param_count(h.arch()));
}

TEST(Hypernet, RefinementChangesThetaOnceDecodersAreNonzero) {
    Hypernet h(toy_config(1));
    wake_decoders(h);
    TaskEmbedding e = toy_embedding(3);
    const TaskEmbedding* ip[] = {&e};
    Graph g;
    auto win = h.win_generate(g, g.constant(stack_tokens(ip)), 1);
    EXPECT_GT((flatten(h.arch(), values(win)).flat - h.generate_policy(e).flat).norm(), 1e-8);
}

TEST(Hypernet, GroupedGenerationMatchesSingle) {
    Hypernet h(toy_config());
    wake_decoders(h);
    TaskEmbedding a = toy_embedding(1), b = toy_embedding(2);
    const TaskEmbedding* ip[] = {&a, &b};
    Graph g;
    auto stacked = h.generate(g, ip);
    for (int gi = 0; gi < 2; ++gi) {
        auto mine = group_layers(stacked, h.arch(), 2, gi);
        PolicyParams single = h.generate_policy(gi == 0 ? a : b);
        EXPECT_LT((flatten(h.arch(), values(mine)).flat - single.flat).cwiseAbs().maxCoeff(), 1e-12);
    }
}

TEST(Hypernet, NoWinInitIdenticalAcrossTasks) {
    HypernetConfig c = toy_config();
    c.use_win = false;
    Hypernet h(c);
    Graph g;
    auto a = h.constant_init(g, 1), b = h.constant_init(g, 1);
    EXPECT_EQ(flatten(h.arch(), values(a)).flat, flatten(h.arch(), values(b)).flat);
    // Before training the refinement is the identity, so every task gets the constant.
    EXPECT_EQ(h.generate_policy(toy_embedding(1)).flat, h.generate_policy(toy_embedding(2)).flat);
    EXPECT_THROW(h.win_generate(g, g.constant(toy_embedding(1).tokens), 1), ContractError);
}

TEST(Hypernet, StageParameterCountsPartition) {
    Hypernet h(toy_config());
    EXPECT_GT(h.win_param_count(), 0u);
    EXPECT_GT(h.refine_param_count(), 0u);
    EXPECT_EQ(h.win_param_count() + h.refine_param_count(), h.trainable_count());
}

TEST(Hypernet, MetaUpdateDifferentiable) {
    Hypernet h(toy_config(1));
    wake_decoders(h, 0.2);
    TaskEmbedding e = toy_embedding(4);
    const TaskEmbedding* ip[] = {&e};
    Rng rng(6);
    Matrix w0 = normal_matrix(5, 5, 1.0, rng);
    auto loss = [&](Graph& g) {
        Var lang = g.constant(stack_tokens(ip));
        Var lr = h.refine_language(g, lang);
        auto win = h.win_generate(g, lang, 1);
        ParamTokens w = h.tokenize_params(g, win);
        auto delta = h.meta_update(g, h.backward_simulate(g, w, h.forward_simulate(g, w, lr, 1), lr, 1));
        return mean(mul(delta[0], g.constant(w0)));
    };
    std::vector<Parameter*> ps = h.params().all();
    std::vector<std::pair<std::size_t, Index>> coords;
    for (std::size_t i = 0; i < ps.size(); ++i)
        if (ps[i]->name.rfind("refine.", 0) == 0)
            for (Index c = 0; c < std::min<Index>(3, ps[i]->value.size()); ++c) coords.push_back({i, c});
    EXPECT_LT(grad_check_params(loss, ps, coords), 1e-5);
}

TEST(Hypernet, EndToEndBcLossGradCheck) {
    Hypernet h(toy_config(2));
    wake_decoders(h, 0.2);
    TaskEmbedding a = toy_embedding(1), b = toy_embedding(2);
    const TaskEmbedding* ip[] = {&a, &b};
    Rng rng(7);
    const Matrix obs[] = {normal_matrix(3, 4, 1.0, rng), normal_matrix(2, 4, 1.0, rng)};
    Matrix target = normal_matrix(5, 2, 1.0, rng);
    auto loss = [&](Graph& g) { return mse(h.predict(g, ip, obs), g.constant(target)); };
    std::vector<Parameter*> ps = h.params().all();
    std::vector<std::pair<std::size_t, Index>> coords;
    std::uniform_int_distribution<std::size_t> pick_p(0, ps.size() - 1);
    while (coords.size() < 240) {
        const std::size_t pi = pick_p(rng);
        std::uniform_int_distribution<Index> pick_c(0, ps[pi]->value.size() - 1);
        coords.push_back({pi, pick_c(rng)});
    }
    EXPECT_LT(grad_check_params(loss, ps, coords), 1e-4);
}

TEST(Hypernet, SixParameterPipeline) {
    // Hypernet -> policy -> mse with only six free scalars: the first three
    // entries of the WIN query table and of one refinement decoder.
    Hypernet h(toy_config(1));
    wake_decoders(h, 0.2);
    TaskEmbedding e = toy_embedding(2);
    const TaskEmbedding* ip[] = {&e};
    Rng rng(3);
    const Matrix obs[] = {normal_matrix(4, 4, 1.0, rng)};
    Matrix target = normal_matrix(4, 2, 1.0, rng);
    std::vector<Parameter*> ps = {h.params().find("win.queries"), h.params().find("refine.decoder1.1.w")};
    ASSERT_NE(ps[0], nullptr);
    ASSERT_NE(ps[1], nullptr);
    std::vector<std::pair<std::size_t, Index>> coords = {{0, 0}, {0, 1}, {0, 2}, {1, 0}, {1, 1}, {1, 2}};
    auto loss = [&](Graph& g) { return mse(h.predict(g, ip, obs), g.constant(target)); };
    EXPECT_LT(grad_check_params(loss, ps, coords), 1e-4);
}

TEST(Hypernet, ConfigJsonRoundTrip) {
    Hypernet h(toy_config());
    auto m = make_model(h.config_json());
    EXPECT_EQ(m->kind(), "disc");
    EXPECT_EQ(m->params().hash(), h.params().hash());
}

TEST(Hypernet, InvalidConfig) {
    HypernetConfig c = toy_config();
    c.heads = 3;   // 8 not divisible by 3
    EXPECT_THROW(Hypernet{c}, ConfigError);
    c = toy_config();
    c.refine_steps = -1;
    EXPECT_THROW(Hypernet{c}, ConfigError);
}

// ---------------------------------------------------------------------------

namespace {

ModelSpec desk_spec(const std::string& kind) {
    ModelSpec s;
    s.kind = kind;
    s.arch = PolicyArch({19, 32, 32, 32, 3});
    s.hypernet.d = 16;
    s.hypernet.heads = 4;
    s.d_lang = 64;
    s.seed = 3;
    return s;
}

} // namespace

TEST(Baselines, EveryKindBuildsAndPredicts) {
    TaskEmbedding e = toy_embedding(1, 64);
    const TaskEmbedding* ip[] = {&e};
    Rng rng(1);
    const Matrix obs[] = {normal_matrix(2, 19, 1.0, rng)};
    for (const auto& kind : model_kinds()) {
        auto m = make_model(desk_spec(kind));
        EXPECT_EQ(m->kind(), kind);
        Graph g;
        Var y = m->predict(g, ip, obs);
        EXPECT_EQ(y.rows(), 2);
        EXPECT_EQ(y.cols(), 3);
        Vector a = m->controller(e)->act(obs[0].row(1).transpose());
        EXPECT_LT((a - y.value().row(1).transpose()).norm(), 1e-12) << kind;
        auto rebuilt = make_model(m->config_json());
        EXPECT_EQ(rebuilt->params().hash(), m->params().hash()) << kind;
    }
}

TEST(Baselines, ConcatAndFilmMatchDiscBudget) {
    const std::size_t budget = disc_budget([] {
        HypernetConfig c = desk_spec("disc").hypernet;
        c.arch = desk_spec("disc").arch;
        c.d_lang = 64;
        return c;
    }());
    for (const char* kind : {"concat-mlp", "film-mlp"}) {
        auto m = make_model(desk_spec(kind));
        const double rel = std::abs(static_cast<double>(m->trainable_count()) - static_cast<double>(budget)) /
                           static_cast<double>(budget);
        EXPECT_LE(rel, 0.10) << kind << " " << m->trainable_count() << " vs " << budget;
    }
}

TEST(Baselines, ConcatInputWidthAndShortcut) {
    auto m = make_model(desk_spec("concat-mlp"));
    auto* c = dynamic_cast<ConcatMlp*>(m.get());
    ASSERT_NE(c, nullptr);
    EXPECT_EQ(c->input_dim(), 19 + 64);
    TaskEmbedding zero = toy_embedding(1, 64);
    zero.tokens.setZero();
    zero.pooled.setZero();
    Vector a = m->controller(zero)->act(Vector::Constant(19, 0.3));
    EXPECT_GT(a.norm(), 0.0);
}

TEST(Baselines, FilmZeroInitIsUnconditioned) {
    auto m = make_model(desk_spec("film-mlp"));
    auto* f = dynamic_cast<FilmMlp*>(m.get());
    ASSERT_NE(f, nullptr);
    auto [gamma, beta] = f->modulation(toy_embedding(1, 64).pooled);
    EXPECT_EQ(gamma, Matrix::Ones(1, gamma.cols()));
    EXPECT_EQ(beta, Matrix::Zero(1, beta.cols()));
    Vector o = Vector::Constant(19, 0.2);
    EXPECT_EQ(m->controller(toy_embedding(1, 64))->act(o), m->controller(toy_embedding(2, 64))->act(o));
    Index hsum = 0;
    for (Index h : m->config_json().at("hidden").get<std::vector<Index>>()) hsum += h;
    EXPECT_EQ(f->modulation_count(), 2 * hsum);
    EXPECT_EQ(gamma.cols(), hsum);
}

TEST(Baselines, DirectHypernetShape) {
    auto m = make_model(desk_spec("direct-hypernet"));
    auto* d = dynamic_cast<DirectHypernet*>(m.get());
    ASSERT_NE(d, nullptr);
    PolicyParams p = d->generate_policy(toy_embedding(1, 64));
    EXPECT_EQ(p.flat.size(), param_count(desk_spec("disc").arch));
    EXPECT_EQ(d->generate_policy(toy_embedding(1, 64)).flat, p.flat);
    EXPECT_EQ(d->config_json().at("hidden").get<int>(), 48);
    EXPECT_EQ(d->config_json().at("layers").get<int>(), 5);
}

TEST(Baselines, LoraRankMatchesPolicySize) {
    auto m = make_model(desk_spec("concat-mlp"));
    const auto& base = dynamic_cast<const ConcatMlp&>(*m);
    const auto target = static_cast<std::size_t>(param_count(desk_spec("disc").arch));
    const int r = solve_lora_rank(base, target);
    const double rel = std::abs(static_cast<double>(lora_param_count(base, r)) - static_cast<double>(target)) /
                       static_cast<double>(target);
    EXPECT_LE(rel, 0.10);
    LoraConcat lora(base, r, 1);
    EXPECT_EQ(lora.trainable_count(), lora_param_count(base, r));
    EXPECT_THROW(solve_lora_rank(base, 5), ConfigError);
}

TEST(Baselines, LoraZeroRankAndFreshAdapterLeaveModelUnchanged) {
    auto m = make_model(desk_spec("concat-mlp"));
    const auto& base = dynamic_cast<const ConcatMlp&>(*m);
    TaskEmbedding e = toy_embedding(1, 64);
    Vector o = Vector::Constant(19, 0.4);
    const Vector ref = base.controller(e)->act(o);
    LoraConcat zero(base, 0, 1);
    EXPECT_EQ(zero.controller(e)->act(o), ref);
    LoraConcat fresh(base, 3, 1);   // B starts at zero
    EXPECT_EQ(fresh.controller(e)->act(o), ref);
}

TEST(Baselines, WidthSolverErrors) {
    EXPECT_EQ(solve_width([](Index h) { return static_cast<std::size_t>(10 * h); }, 500), 50);
    EXPECT_THROW(solve_width([](Index h) { return static_cast<std::size_t>(1000 * h * h); }, 1500), ConfigError);
}
