#include "disc/eval.hpp"

#include "disc/errors.hpp"
#include "disc/hash.hpp"

#include <algorithm>
#include <cstdio>
#include <map>

namespace disc {

EpisodeResult run_episode(const EnvConfig& cfg, const Task& task, std::uint64_t seed, const Actor& actor) {
    SceneState s = env_reset(cfg, task, seed);
    EpisodeResult r;
    while (s.step < cfg.horizon) {
        Vector obs = observe(cfg, s);
        Vector a = actor(s, obs);
        s = env_step(cfg, s, a);
        if (s.placed) {
            r.placement = s.placed;
            break;
        }
    }
    r.steps = s.step;
    r.success = r.placement && r.placement->object == task.object && r.placement->container == task.container;
    return r;
}

std::uint64_t episode_seed(std::uint64_t seed, int task_index, int episode) {
    return mix_seed(mix_seed(seed, 0x6576616cULL + static_cast<std::uint64_t>(task_index)),
                    static_cast<std::uint64_t>(episode));
}

double EvalReport::off_diagonal_mass() const {
    if (tasks.empty()) return 0.0;
    double total = 0.0;
    for (std::size_t i = 0; i < tasks.size(); ++i) {
        double row = 0.0;
        for (double c : confusion[i]) row += c;
        total += row - confusion[i][static_cast<std::size_t>(cell(tasks[i]))];
    }
    return total / static_cast<double>(tasks.size());
}

Actor expert_actor(const EnvConfig& env, const Task& task) {
    return [env, task](const SceneState& s, const Vector&) { return expert_action(env, s, task); };
}

Actor controller_actor(const EnvConfig& env, std::shared_ptr<Controller> c) {
    return [env, c](const SceneState&, const Vector& obs) { return denormalize_action(env, c->act(obs)); };
}

namespace {

EnvConfig eval_env(EnvConfig env) {
    env.layout = LayoutMode::decorrelated;
    validate(env);
    return env;
}

const std::vector<int>& split_surfaces(const Lexicon& lex, Split split) {
    const auto& s = split == Split::train ? lex.split().train : lex.split().heldout;
    if (s.empty()) throw ContractError("evaluation split has no surfaces");
    return s;
}

EvalReport evaluate(const std::function<Actor(const Task&, int surface)>& make_actor, const Lexicon& lex,
                    const EnvConfig& env_in, std::span<const Task> tasks, int n_episodes, Split split,
                    std::uint64_t seed) {
    if (n_episodes <= 0) throw ContractError("evaluation needs at least one episode per task");
    const EnvConfig env = eval_env(env_in);
    const auto& surfaces = split_surfaces(lex, split);
    const std::size_t cells = static_cast<std::size_t>(env.n_objects * env.n_containers);

    EvalReport r;
    r.split = split == Split::train ? "train" : "heldout";
    for (const Task& task : tasks) {
        const int ti = lex.task_index(task);
        std::map<int, Actor> actors;
        std::vector<double> row(cells, 0.0);
        int successes = 0, none = 0;
        for (int e = 0; e < n_episodes; ++e) {
            const int s = surfaces[static_cast<std::size_t>(e) % surfaces.size()];
            auto it = actors.find(s);
            if (it == actors.end()) it = actors.emplace(s, make_actor(task, s)).first;
            EpisodeResult er = run_episode(env, task, episode_seed(seed, ti, e), it->second);
            if (er.success) ++successes;
            if (er.placement)
                row[static_cast<std::size_t>(er.placement->object * env.n_containers + er.placement->container)] += 1.0;
            else
                ++none;
        }
        for (double& c : row) c /= n_episodes;
        r.tasks.push_back(task);
        r.episodes.push_back(n_episodes);
        r.success.push_back(static_cast<double>(successes) / n_episodes);
        r.confusion.push_back(std::move(row));
        r.no_placement.push_back(static_cast<double>(none) / n_episodes);
    }
    double sum = 0.0;
    for (double s : r.success) sum += s;
    r.overall = r.success.empty() ? 0.0 : sum / static_cast<double>(r.success.size());
    return r;
}

} // namespace

int EvalReport::cell(const Task& t) const { return t.object * n_containers + t.container; }

EvalReport actor_eval(const std::function<Actor(const Task&, int surface)>& make_actor, const Lexicon& lex,
                      const EnvConfig& env, std::span<const Task> tasks, int n_episodes, Split split,
                      std::uint64_t seed) {
    EvalReport r = evaluate(make_actor, lex, env, tasks, n_episodes, split, seed);
    r.n_containers = env.n_containers;
    return r;
}

EvalReport rollout_eval(const Model& model, const EmbeddingTable& emb, const EnvConfig& env,
                        std::span<const Task> tasks, int n_episodes, Split split, std::uint64_t seed) {
    const auto* gen = dynamic_cast<const GeneratorModel*>(&model);
    const std::size_t before = gen ? gen->generation_calls() : 0;
    auto make = [&](const Task& t, int s) {
        return controller_actor(env, std::shared_ptr<Controller>(model.controller(emb.get(t, s))));
    };
    EvalReport r = actor_eval(make, emb.lexicon(), env, tasks, n_episodes, split, seed);
    r.generations = gen ? gen->generation_calls() - before : 0;
    return r;
}

EvalReport leakage_eval(const Model& model, const EmbeddingTable& emb, const EnvConfig& env,
                        std::span<const Task> tasks, int n_episodes, std::uint64_t seed) {
    return rollout_eval(model, emb, env, tasks, n_episodes, Split::train, seed);
}

ParaphraseResult paraphrase_eval(const Model& model, const EmbeddingTable& emb, const EnvConfig& env,
                                 std::span<const Task> tasks, int n_episodes, std::uint64_t seed) {
    ParaphraseResult p;
    p.train = rollout_eval(model, emb, env, tasks, n_episodes, Split::train, seed);
    p.heldout = rollout_eval(model, emb, env, tasks, n_episodes, Split::heldout, seed);
    return p;
}

std::string report_csv(const EvalReport& r, const std::string& provenance) {
    std::string out = provenance;
    out += "task,object,container,split,episodes,success";
    const std::size_t cells = r.confusion.empty() ? 0 : r.confusion.front().size();
    for (std::size_t p = 0; p < cells; ++p) {
        const int k = static_cast<int>(p) / r.n_containers, j = static_cast<int>(p) % r.n_containers;
        out += ",c_" + std::to_string(k) + "_" + std::to_string(j);
    }
    out += ",no_placement\n";
    char buf[64];
    for (std::size_t i = 0; i < r.tasks.size(); ++i) {
        out += std::to_string(r.cell(r.tasks[i])) + "," + std::to_string(r.tasks[i].object) + "," +
               std::to_string(r.tasks[i].container) + "," + r.split + "," + std::to_string(r.episodes[i]);
        std::snprintf(buf, sizeof buf, ",%.17g", r.success[i]);
        out += buf;
        for (double c : r.confusion[i]) {
            std::snprintf(buf, sizeof buf, ",%.17g", c);
            out += buf;
        }
        std::snprintf(buf, sizeof buf, ",%.17g\n", r.no_placement[i]);
        out += buf;
    }
    return out;
}

nlohmann::json report_json(const EvalReport& r) {
    nlohmann::json tasks = nlohmann::json::array();
    for (std::size_t i = 0; i < r.tasks.size(); ++i)
        tasks.push_back({{"object", r.tasks[i].object},
                         {"container", r.tasks[i].container},
                         {"success", r.success[i]},
                         {"no_placement", r.no_placement[i]}});
    return {{"split", r.split},
            {"overall", r.overall},
            {"off_diagonal_mass", r.off_diagonal_mass()},
            {"generations", r.generations},
            {"tasks", tasks},
            {"confusion", r.confusion}};
}

// ---------------------------------------------------------------------------

const AdaptPoint& AdaptResult::at(int step) const {
    for (const auto& p : points)
        if (p.step == step) return p;
    throw LookupError("no adaptation checkpoint at step " + std::to_string(step));
}

AdaptData make_adapt_data(const EnvConfig& env, const Task& task, const Lexicon& lex, const AdaptConfig& cfg) {
    if (cfg.k <= 0) throw ContractError("few-shot adaptation needs K >= 1 demonstrations");
    if (cfg.val_demos <= 0) throw ContractError("few-shot adaptation needs validation demonstrations");
    const Task tasks[] = {task};
    AdaptData d;
    d.fit = generate_dataset(env, tasks, cfg.k, lex, mix_seed(cfg.seed, 0xad));
    d.val = generate_dataset(env, tasks, cfg.val_demos, lex, mix_seed(cfg.seed, 0x7a1));
    return d;
}

namespace {

struct Xy {
    Matrix x;
    Matrix y;
};

Xy stack(const Dataset& d) {
    if (d.transitions.empty()) throw ContractError("few-shot adaptation: empty demonstration set");
    Xy out;
    out.x.resize(static_cast<Index>(d.transitions.size()), d.env.obs_dim());
    out.y.resize(static_cast<Index>(d.transitions.size()), EnvConfig::act_dim());
    for (std::size_t i = 0; i < d.transitions.size(); ++i) {
        out.x.row(static_cast<Index>(i)) = d.transitions[i].obs.transpose();
        out.y.row(static_cast<Index>(i)) = normalize_action(d.env, d.transitions[i].act).transpose();
    }
    return out;
}

void check_config(const AdaptConfig& cfg) {
    if (cfg.k <= 0) throw ContractError("few-shot adaptation needs K >= 1 demonstrations");
    if (cfg.steps < 0) throw ConfigError("adapt.steps must be non-negative");
    if (!(cfg.lr > 0.0)) throw ConfigError("adapt.lr must be positive");
    if (cfg.eval_episodes <= 0) throw ConfigError("adapt.eval_episodes must be positive");
}

double success_rate(const EnvConfig& env, const Task& task, const AdaptConfig& cfg, const Actor& actor) {
    const EnvConfig e = eval_env(env);
    const int ti = task.object * env.n_containers + task.container;
    int ok = 0;
    for (int i = 0; i < cfg.eval_episodes; ++i)
        if (run_episode(e, task, episode_seed(cfg.seed, ti, i), actor).success) ++ok;
    return static_cast<double>(ok) / cfg.eval_episodes;
}

/// Shared loop: `loss(g, x)` builds predictions, `actor()` snapshots the current model.
AdaptResult adapt_loop(const std::vector<Parameter*>& params, const AdaptData& data, const EnvConfig& env,
                       const Task& task, const AdaptConfig& cfg, std::string init,
                       const std::function<Var(Graph&, const Matrix&)>& predict,
                       const std::function<Actor()>& actor) {
    check_config(cfg);
    const Xy fit = stack(data.fit), val = stack(data.val);
    auto loss_on = [&](const Xy& xy) {
        Graph g;
        return mse(predict(g, xy.x), g.constant(xy.y)).value()(0, 0);
    };
    AdamWOptions opts;
    opts.lr = cfg.lr;
    opts.weight_decay = 0.0;
    AdamW opt(params, opts);
    AdaptResult res;
    res.init = std::move(init);
    for (Parameter* p : params) res.trainable += static_cast<std::size_t>(p->value.size());
    auto record = [&](int step) {
        if (std::find(cfg.checkpoints.begin(), cfg.checkpoints.end(), step) == cfg.checkpoints.end()) return;
        res.points.push_back({step, loss_on(fit), loss_on(val), success_rate(env, task, cfg, actor())});
    };
    record(0);
    for (int step = 1; step <= cfg.steps; ++step) {
        opt.zero_grad();
        Graph g;
        Var loss = mse(predict(g, fit.x), g.constant(fit.y));
        if (!std::isfinite(loss.value()(0, 0)))
            throw NonFiniteError("adaptation loss became non-finite at step " + std::to_string(step));
        g.backward(loss);
        opt.step(cfg.lr);
        record(step);
    }
    return res;
}

} // namespace

AdaptResult adapt_policy(const PolicyParams& theta0, const AdaptData& data, const EnvConfig& env, const Task& task,
                         const AdaptConfig& cfg, std::string init) {
    ParamSet ps;
    std::vector<Parameter*> layers;
    for (int i = 0; i < theta0.arch.layers(); ++i)
        layers.push_back(&ps.add("theta." + std::to_string(i), Matrix(theta0.layer(i))));
    const PolicyArch arch = theta0.arch;
    auto predict = [&](Graph& g, const Matrix& x) {
        std::vector<Var> vars;
        for (Parameter* p : layers) vars.push_back(g.param(*p));
        return policy_forward(g, g.constant(x), vars);
    };
    auto actor = [&]() {
        std::vector<Matrix> ls;
        for (Parameter* p : layers) ls.push_back(p->value);
        return controller_actor(env, std::make_shared<PolicyController>(flatten(arch, ls)));
    };
    return adapt_loop(layers, data, env, task, cfg, std::move(init), predict, actor);
}

AdaptResult few_shot_adapt(const GeneratorModel& model, const TaskEmbedding& instr, const AdaptData& data,
                           const EnvConfig& env, const Task& task, const AdaptConfig& cfg) {
    check_config(cfg);
    const std::uint64_t before = model.params().hash();
    AdaptResult r = adapt_policy(model.generate_policy(instr), data, env, task, cfg, "hypernet");
    if (model.params().hash() != before) throw ContractError("hypernetwork parameters changed during adaptation");
    return r;
}

AdaptResult lowrank_adapt(const ConcatMlp& base, int rank, const TaskEmbedding& instr, const AdaptData& data,
                          const EnvConfig& env, const Task& task, const AdaptConfig& cfg) {
    check_config(cfg);
    const std::uint64_t before = base.params().hash();
    LoraConcat lora(base, rank, mix_seed(cfg.seed, 0x10a));
    const TaskEmbedding* ip[] = {&instr};
    auto predict = [&](Graph& g, const Matrix& x) {
        const Matrix obs[] = {x};
        return lora.predict(g, ip, obs);
    };
    auto actor = [&]() { return controller_actor(env, std::shared_ptr<Controller>(lora.controller(instr))); };
    AdaptResult r = adapt_loop(lora.params().all(), data, env, task, cfg, "lora", predict, actor);
    if (base.params().hash() != before) throw ContractError("frozen backbone changed during low-rank adaptation");
    return r;
}

std::string adapt_csv(std::span<const AdaptResult> results, const std::string& provenance) {
    std::string out = provenance;
    out += "init,trainable,step,train_loss,val_loss,success\n";
    char buf[160];
    for (const auto& r : results)
        for (const auto& p : r.points) {
            std::snprintf(buf, sizeof buf, ",%zu,%d,%.17g,%.17g,%.17g\n", r.trainable, p.step, p.train_loss,
                          p.val_loss, p.success);
            out += r.init + buf;
        }
    return out;
}

} // namespace disc
