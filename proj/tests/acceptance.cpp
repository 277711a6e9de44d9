// Acceptance run on the desk benchmark: one PASS/FAIL line per criterion.
//
// Trained models are cached under $DISC_ACCEPTANCE_CACHE (default: the build
// tree), keyed by training config hash and seed, so only the first run pays
// for training. Exit status is 0 only if every criterion passes.

#include "disc/errors.hpp"
#include "disc/gradcheck.hpp"
#include "disc/hash.hpp"
#include "disc/hypernet.hpp"
#include "disc/pipeline.hpp"
#include "disc/weights_io.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <map>
#include <numeric>

using namespace disc;
namespace fs = std::filesystem;

namespace {

// Tolerances.
constexpr double kOpGradTol = 1e-6;
constexpr double kPipelineGradTol = 1e-4;
constexpr double kGradRuntimeS = 60.0;
constexpr double kStructRuntimeS = 10.0;
constexpr double kMinDiscSuccess = 0.80;
constexpr double kTrainBudgetS = 45.0 * 60.0;
constexpr double kAblationMargin = 0.03;
constexpr double kMinTimingRatio = 10.0;
constexpr int kAdaptStep = 200;
const std::vector<int> kAdaptGrid = {0, 50, 200, 500, 1000};
const std::uint64_t kSeeds[] = {0, 1, 2};

using Clock = std::chrono::steady_clock;
double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

int failures = 0;

void report(int id, bool pass, const std::string& detail) {
    failures += !pass;
    std::printf("criterion %2d: %s  %s\n", id, pass ? "PASS" : "FAIL", detail.c_str());
    std::fflush(stdout);
}

double mean(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()); }

std::string list(const std::vector<double>& v) {
    std::string s;
    for (double x : v) s += (s.empty() ? "" : "/") + fmt("%.3f", x);
    return s;
}

fs::path cache_dir() {
    if (const char* env = std::getenv("DISC_ACCEPTANCE_CACHE")) return env;
    return DISC_ACCEPTANCE_CACHE;
}

RunConfig desk(const std::map<std::string, std::string>& overrides = {}) {
    RunConfig cfg = RunConfig::load(DISC_SOURCE_DIR "/configs/desk.cfg");
    for (const auto& [k, v] : overrides) cfg.set(k, v);
    return cfg;
}

struct Run {
    std::unique_ptr<Workspace> ws;
    TrainedModel tm;
};

Run trained(const std::map<std::string, std::string>& overrides, std::uint64_t seed) {
    Run r;
    r.ws = std::make_unique<Workspace>(desk(overrides));
    const auto t0 = Clock::now();
    r.tm = cached_model(*r.ws, seed, cache_dir());
    std::fprintf(stderr, "[%s seed %llu] %s loss %.4f -> %.4f, %.0f s training%s\n",
                 r.ws->config().raw("model.kind").c_str(), static_cast<unsigned long long>(seed),
                 r.ws->config().raw("env.layout").c_str(), r.tm.summary.initial_loss, r.tm.summary.final_loss,
                 r.tm.summary.seconds, r.tm.summary.from_cache ? " (cached)" : fmt(", now %.0f s", since(t0)).c_str());
    return r;
}

// ---------------------------------------------------------------------------

void criterion_gradients() {
    const auto t0 = Clock::now();
    const auto ops = op_gradcheck_suite(20, 0);
    double worst = 0.0;
    std::string worst_op;
    for (const auto& o : ops)
        if (!(o.max_rel_error <= worst)) {
            worst = o.max_rel_error;
            worst_op = o.op;
        }
    const double pipe = pipeline_gradcheck(0);
    const double secs = since(t0);
    report(1, worst < kOpGradTol && pipe < kPipelineGradTol && secs < kGradRuntimeS,
           fmt("%zu ops, worst %.2e (%s) < %.0e; toy DISC pipeline %.2e < %.0e; %.1f s < %.0f s", ops.size(), worst,
               worst_op.c_str(), kOpGradTol, pipe, kPipelineGradTol, secs, kGradRuntimeS));
}

TaskEmbedding toy_embedding(std::uint64_t seed, Index d_lang) {
    Rng rng(seed);
    TaskEmbedding e;
    e.tokens = normal_matrix(4, d_lang, 1.0, rng);
    e.tokens.rowwise().normalize();
    e.pooled = e.tokens.colwise().mean();
    return e;
}

void criterion_structure() {
    const auto t0 = Clock::now();
    std::vector<std::string> broken;
    auto check = [&](bool ok, const char* what) {
        if (!ok) broken.push_back(what);
    };

    HypernetConfig c;
    c.d = 8;
    c.heads = 2;
    c.win_blocks = 1;
    c.refine_steps = 3;
    c.d_lang = 6;
    c.arch = PolicyArch({4, 5, 3, 2});
    c.seed = 11;
    Hypernet h(c);
    const TaskEmbedding e[] = {toy_embedding(1, c.d_lang), toy_embedding(2, c.d_lang)};
    const TaskEmbedding* ip[] = {&e[0], &e[1]};
    const int G = 2;
    {
        Graph g;
        Var lang = g.constant(stack_tokens(ip));
        auto win = h.win_generate(g, lang, G);
        Var lr = h.refine_language(g, lang);
        ParamTokens w = h.tokenize_params(g, win);
        ActivationTokens t = h.forward_simulate(g, w, lr, G);
        GradTokens gt = h.backward_simulate(g, w, t, lr, G);
        const PolicyArch& a = h.arch();
        bool counts = t.tau[0].rows() == G * a.obs_dim();
        for (int i = 0; i < a.layers(); ++i) {
            const auto k = static_cast<std::size_t>(i);
            counts = counts && w.omega[k].rows() == G * a.rows(i) && t.tau[k + 1].rows() == G * a.rows(i) &&
                     gt.grad_omega[k].rows() == G * a.rows(i) && gt.dz[k].rows() == G * a.rows(i) &&
                     gt.jac_theta[k].rows() == G * a.dims[k] && (i == 0 || gt.jac_h[k].rows() == G * a.rows(i));
        }
        check(counts, "token counts");

        auto delta = h.meta_update(g, gt);
        double dmax = 0.0;
        Index total = 0;
        for (auto& d : delta) {
            dmax = std::max(dmax, d.value().cwiseAbs().maxCoeff());
            total += d.value().size();
        }
        check(dmax == 0.0 && total == G * param_count(a), "zero-init identity");
        auto full = h.generate(g, ip);
        bool same = true;
        for (std::size_t i = 0; i < win.size(); ++i) same = same && win[i].value() == full[i].value();
        check(same, "untrained refinement leaves WIN output unchanged");
    }
    {
        HypernetConfig c0 = c;
        c0.refine_steps = 0;
        Hypernet h0(c0);
        Graph g;
        auto win = h0.win_generate(g, g.constant(e[0].tokens), 1);
        std::vector<Matrix> vals;
        for (auto& v : win) vals.push_back(v.value());
        check(flatten(h0.arch(), vals).flat == h0.generate_policy(e[0]).flat && h0.refine_param_count() == 0,
              "T=0 equals WIN-only");
    }
    {
        RunConfig cfg = desk({{"data.n_demos", "2"}, {"train.steps", "5"}, {"train.checkpoint_every", "0"},
                              {"hypernet.d", "8"}, {"hypernet.heads", "2"}, {"hypernet.win_blocks", "1"},
                              {"adapt.steps", "5"}, {"adapt.checkpoints", "0,5"}, {"adapt.eval_episodes", "1"},
                              {"adapt.val_demos", "1"}});
        Workspace ws(cfg);
        const auto lex_hash = ws.lexicon().table_hash();
        const Matrix tokens = ws.embeddings().get({1, 1}, 0).tokens;
        TrainedModel tm = train_model(ws, make_dataset(ws, 0), 0, std::nullopt);
        check(ws.lexicon().table_hash() == lex_hash && ws.embeddings().get({1, 1}, 0).tokens == tokens,
              "frozen encoder");
        const auto phi = tm.model->params().hash();
        adapt_generator(ws, dynamic_cast<const GeneratorModel&>(*tm.model), 0);
        check(tm.model->params().hash() == phi, "frozen hypernetwork during adaptation");
    }
    const double secs = since(t0);
    std::string detail = broken.empty() ? "token counts, zero-init identity, T=0 == WIN-only, frozen encoder and "
                                          "frozen hypernetwork hashes hold"
                                        : "broken:";
    for (const auto& b : broken) detail += " [" + b + "]";
    report(2, broken.empty() && secs < kStructRuntimeS, detail + fmt("; %.1f s < %.0f s", secs, kStructRuntimeS));
}

// ---------------------------------------------------------------------------

struct Evaluated {
    std::vector<double> success, train_seconds, off_diag, para_gap, same_obj, unrelated;
};

Evaluated evaluate_kind(const std::string& kind, const std::string& layout, bool leakage, bool paraphrase,
                        bool manifold) {
    Evaluated out;
    for (std::uint64_t seed : kSeeds) {
        Run r = trained({{"model.kind", kind}, {"env.layout", layout}}, seed);
        const Model& m = *r.tm.model;
        out.train_seconds.push_back(r.tm.summary.seconds);
        if (leakage) {
            out.off_diag.push_back(evaluate_leakage(*r.ws, m, seed).off_diagonal_mass());
        } else {
            out.success.push_back(evaluate(*r.ws, m, seed).overall);
        }
        if (paraphrase) out.para_gap.push_back(evaluate_paraphrase(*r.ws, m, seed).gap());
        if (manifold) {
            const auto tasks = r.ws->all();
            Manifold mf = manifold_export(dynamic_cast<const GeneratorModel&>(m), r.ws->embeddings(), tasks,
                                          r.ws->lexicon().split().train.front());
            out.same_obj.push_back(mf.same_object_mean);
            out.unrelated.push_back(mf.unrelated_mean);
        }
    }
    return out;
}

void criterion_timing() {
    Run r = trained({{"model.kind", "disc"}}, kSeeds[0]);
    Run b = trained({{"model.kind", "concat-mlp"}}, kSeeds[0]);
    const auto& gm = dynamic_cast<const GeneratorModel&>(*r.tm.model);
    const RunConfig& cfg = r.ws->config();
    TimingReport t = timing_bench(gm, r.ws->embeddings(), cfg.adapt_task(), b.tm.model.get(),
                                  static_cast<int>(cfg.get_int("bench.trials")),
                                  static_cast<int>(cfg.get_int("bench.warmup")));
    // More episodes than training surfaces: every (task, surface) pair is used at least once.
    const auto tasks = r.ws->all();
    const std::size_t surfaces = r.ws->lexicon().split().train.size();
    const int episodes = static_cast<int>(surfaces) + 10;
    const_cast<GeneratorModel&>(gm).reset_generation_calls();
    EvalReport e = rollout_eval(gm, r.ws->embeddings(), r.ws->env(), tasks, episodes, Split::train, 0);
    const std::size_t expected = tasks.size() * surfaces;
    const bool once = e.generations == expected && gm.generation_calls() == expected;
    report(9, t.ratio() >= kMinTimingRatio && once,
           fmt("median weight generation %.3f ms / target step %.5f ms = %.0fx >= %.0fx (concat step %.5f ms); "
               "%zu generations for %zu episodes over %zu (task, surface) pairs",
               t.weight_gen.median_ms, t.target_step.median_ms, t.ratio(), kMinTimingRatio, t.baseline_step.median_ms,
               gm.generation_calls(), tasks.size() * static_cast<std::size_t>(episodes), expected));
}

void criterion_determinism() {
    RunConfig cfg = desk({{"train.steps", "200"}, {"train.checkpoint_every", "0"}});
    std::string data[2], model[2], curve[2], eval[2];
    for (int k = 0; k < 2; ++k) {
        Workspace ws(cfg);
        const Dataset d = make_dataset(ws, 9);
        data[k] = dataset_to_jsonl(d);
        const fs::path dir = cache_dir() / fmt("determinism_%d", k);
        fs::remove_all(dir);
        TrainedModel tm = train_model(ws, d, 9, dir);
        model[k] = read_text(dir / "model.bin");
        curve[k] = read_text(dir / "loss_curve.csv");
        eval[k] = report_json(evaluate(ws, *tm.model, 9)).dump();
    }
    const bool ok = data[0] == data[1] && model[0] == model[1] && curve[0] == curve[1] && eval[0] == eval[1];
    report(10, ok,
           fmt("two runs (seed 9, 200 steps): dataset %s, model.bin %s, loss curve %s, eval report %s",
               data[0] == data[1] ? "identical" : "DIFFERS", model[0] == model[1] ? "identical" : "DIFFERS",
               curve[0] == curve[1] ? "identical" : "DIFFERS", eval[0] == eval[1] ? "identical" : "DIFFERS"));
}

} // namespace

int main() {
    try {
        std::printf("acceptance cache: %s\n", cache_dir().c_str());
        criterion_gradients();
        criterion_structure();

        // Decorrelated multi-task runs.
        const Evaluated disc = evaluate_kind("disc", "decorrelated", false, true, true);
        const Evaluated direct = evaluate_kind("direct-hypernet", "decorrelated", false, false, false);
        const double disc_mean = mean(disc.success), direct_mean = mean(direct.success);
        const double disc_secs = mean(disc.train_seconds);
        report(3, disc_mean >= kMinDiscSuccess && disc_mean >= direct_mean && disc_secs <= kTrainBudgetS,
               fmt("DISC success %s mean %.3f >= %.2f; direct hypernet %s mean %.3f; DISC training %.1f min per seed "
                   "<= %.0f min",
                   list(disc.success).c_str(), disc_mean, kMinDiscSuccess, list(direct.success).c_str(), direct_mean,
                   disc_secs / 60.0, kTrainBudgetS / 60.0));

        const Evaluated win = evaluate_kind("disc-win-only", "decorrelated", false, false, false);
        const Evaluated nowin = evaluate_kind("disc-no-win", "decorrelated", false, false, false);
        const double win_mean = mean(win.success), nowin_mean = mean(nowin.success);
        report(4, disc_mean >= win_mean + kAblationMargin && disc_mean >= nowin_mean + kAblationMargin,
               fmt("DISC %.3f vs WIN-only %s mean %.3f and no-WIN %s mean %.3f; required margin %.2f", disc_mean,
                   list(win.success).c_str(), win_mean, list(nowin.success).c_str(), nowin_mean, kAblationMargin));

        const Evaluated disc_corr = evaluate_kind("disc", "correlated", true, false, false);
        const Evaluated concat_corr = evaluate_kind("concat-mlp", "correlated", true, false, false);
        report(5, mean(disc_corr.off_diag) < mean(concat_corr.off_diag),
               fmt("off-diagonal confusion mass, trained correlated, evaluated decorrelated: DISC %s mean %.3f < "
                   "concat %s mean %.3f",
                   list(disc_corr.off_diag).c_str(), mean(disc_corr.off_diag), list(concat_corr.off_diag).c_str(),
                   mean(concat_corr.off_diag)));

        const Evaluated concat = evaluate_kind("concat-mlp", "decorrelated", false, true, false);
        report(6, mean(disc.para_gap) <= mean(concat.para_gap),
               fmt("train - heldout success gap: DISC %s mean %.3f <= concat %s mean %.3f (concat success %s)",
                   list(disc.para_gap).c_str(), mean(disc.para_gap), list(concat.para_gap).c_str(),
                   mean(concat.para_gap), list(concat.success).c_str()));

        {
            std::vector<double> hyper, random;
            bool grid = true;
            for (std::uint64_t seed : kSeeds) {
                Run r = trained({{"model.kind", "disc"}, {"data.exclude_adapt_task", "true"}}, seed);
                grid = grid && r.ws->config().adapt(seed).checkpoints == kAdaptGrid;
                AdaptComparison a = adapt_generator(*r.ws, dynamic_cast<const GeneratorModel&>(*r.tm.model), seed);
                hyper.push_back(a.hypernet.at(kAdaptStep).val_loss);
                random.push_back(a.random.at(kAdaptStep).val_loss);
            }
            bool all = grid;
            for (std::size_t i = 0; i < hyper.size(); ++i) all = all && hyper[i] < random[i];
            report(7, all,
                   fmt("K=3 on held-out task, validation loss at step %d: hypernet init %s < random init %s on every "
                       "seed; checkpoint grid {0,50,200,500,1000} %s",
                       kAdaptStep, list(hyper).c_str(), list(random).c_str(), grid ? "used" : "NOT used"));
        }

        report(8, mean(disc.same_obj) > mean(disc.unrelated),
               fmt("cosine of generated parameters: same-object pairs %s mean %.4f > unrelated pairs %s mean %.4f",
                   list(disc.same_obj).c_str(), mean(disc.same_obj), list(disc.unrelated).c_str(),
                   mean(disc.unrelated)));

        criterion_timing();
        criterion_determinism();
    } catch (const std::exception& e) {
        std::printf("acceptance aborted: %s\n", e.what());
        return 2;
    }
    std::printf("%d of 10 criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}
