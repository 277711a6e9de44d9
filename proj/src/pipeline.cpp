#include "disc/pipeline.hpp"

#include "disc/errors.hpp"
#include "disc/gradcheck.hpp"
#include "disc/hash.hpp"
#include "disc/hypernet.hpp"

#include <fstream>
#include <random>
#include <sstream>

namespace disc {

Workspace::Workspace(RunConfig cfg)
    : cfg_(std::move(cfg)),
      env_(cfg_.env()),
      lex_(std::make_unique<Lexicon>(Lexicon::build(cfg_.lexicon()))),
      emb_(std::make_unique<EmbeddingTable>(*lex_, env_)) {}

std::vector<Task> Workspace::training_tasks() const {
    std::vector<Task> tasks = all_tasks(env_);
    if (!cfg_.get_bool("data.exclude_adapt_task")) return tasks;
    const Task held = cfg_.adapt_task();
    std::erase_if(tasks, [&](const Task& t) { return t.object == held.object && t.container == held.container; });
    return tasks;
}

std::uint64_t data_seed(std::uint64_t seed) { return mix_seed(seed, 1); }
std::uint64_t eval_seed(std::uint64_t seed) { return mix_seed(seed, 4); }

Dataset make_dataset(const Workspace& ws, std::uint64_t seed) {
    const auto tasks = ws.training_tasks();
    return generate_dataset(ws.env(), tasks, static_cast<int>(ws.config().get_int("data.n_demos")), ws.lexicon(),
                            data_seed(seed));
}

nlohmann::json to_json(const TrainSummary& s) {
    return {{"kind", s.kind},
            {"seed", s.seed},
            {"trainable", s.trainable},
            {"initial_loss", s.initial_loss},
            {"final_loss", s.final_loss},
            {"seconds", s.seconds},
            {"data_hash", hex64(s.data_hash)}};
}

TrainSummary train_summary_from_json(const nlohmann::json& j) {
    TrainSummary s;
    s.kind = j.at("kind").get<std::string>();
    s.seed = j.at("seed").get<std::uint64_t>();
    s.trainable = j.at("trainable").get<std::size_t>();
    s.initial_loss = j.at("initial_loss").get<double>();
    s.final_loss = j.at("final_loss").get<double>();
    s.seconds = j.at("seconds").get<double>();
    s.data_hash = std::stoull(j.at("data_hash").get<std::string>(), nullptr, 16);
    return s;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ContractError("cannot write " + path.string());
    f << text;
    if (!f) throw ContractError("write failed: " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ContractError("cannot read " + path.string());
    std::ostringstream s;
    s << f.rdbuf();
    return s.str();
}

namespace {

/// Summary embedded in model files: everything except wall-clock time, so
/// model.bin stays bit-identical across runs.
nlohmann::json model_metadata(const TrainSummary& s) {
    nlohmann::json j = to_json(s);
    j.erase("seconds");
    return j;
}

TrainedModel train_impl(const Workspace& ws, const Dataset& data, std::uint64_t seed,
                        const std::optional<std::filesystem::path>& out_dir, bool checkpoints) {
    const RunConfig& cfg = ws.config();
    TrainedModel out;
    out.model = make_model(cfg.model_spec(seed));
    TrainConfig tc = cfg.train(seed);
    if (!checkpoints) tc.checkpoint_every = 0;
    tc.out_dir = out_dir;
    TrainResult r = train(*out.model, data, ws.embeddings(), tc);
    out.summary.kind = out.model->kind();
    out.summary.seed = seed;
    out.summary.trainable = out.model->trainable_count();
    out.summary.initial_loss = r.initial_loss;
    out.summary.final_loss = r.final_loss;
    out.summary.seconds = r.seconds;
    out.summary.data_hash = data.content_hash();
    return out;
}

/// Hash of the keys that influence a trained model.
std::uint64_t training_hash(const RunConfig& cfg) {
    std::istringstream lines(cfg.canonical());
    std::string line, kept;
    const bool exclude = cfg.get_bool("data.exclude_adapt_task");
    while (std::getline(lines, line)) {
        if (line.starts_with("eval.") || line.starts_with("bench.") || line.starts_with("train.checkpoint_every"))
            continue;
        if (line.starts_with("adapt.") && !(exclude && line.starts_with("adapt.task="))) continue;
        kept += line + "\n";
    }
    return fnv1a(kept);
}

} // namespace

TrainedModel train_model(const Workspace& ws, const Dataset& data, std::uint64_t seed,
                         const std::optional<std::filesystem::path>& out_dir) {
    TrainedModel out = train_impl(ws, data, seed, out_dir, true);
    if (out_dir) {
        save_model(*out_dir / "model.bin", *out.model, model_metadata(out.summary));
        write_text(*out_dir / "train_summary.json", to_json(out.summary).dump(2) + "\n");
    }
    return out;
}

TrainedModel cached_model(const Workspace& ws, std::uint64_t seed, const std::filesystem::path& cache_dir) {
    const std::string stem =
        ws.config().raw("model.kind") + "-" + hex64(training_hash(ws.config())) + "-" + std::to_string(seed);
    const auto bin = cache_dir / (stem + ".bin");
    const auto side = cache_dir / (stem + ".json");
    if (std::filesystem::exists(bin) && std::filesystem::exists(side)) {
        TrainedModel out;
        out.model = load_model(bin);
        out.summary = train_summary_from_json(nlohmann::json::parse(read_text(side)));
        out.summary.from_cache = true;
        return out;
    }
    const Dataset data = make_dataset(ws, seed);
    TrainedModel out = train_impl(ws, data, seed, std::nullopt, false);
    std::filesystem::create_directories(cache_dir);
    save_model(bin, *out.model, model_metadata(out.summary));
    // Sidecar last: a model counts as cached only once both files exist.
    write_text(side, to_json(out.summary).dump(2) + "\n");
    return out;
}

namespace {

Split eval_split(const RunConfig& cfg) {
    const std::string& s = cfg.raw("eval.split");
    if (s == "train") return Split::train;
    if (s == "heldout") return Split::heldout;
    throw ConfigError("eval.split must be train or heldout, got '" + s + "'");
}

int eval_episodes(const RunConfig& cfg) {
    const long long n = cfg.get_int("eval.episodes");
    if (n <= 0) throw ConfigError("eval.episodes must be positive");
    return static_cast<int>(n);
}

} // namespace

EvalReport evaluate(const Workspace& ws, const Model& model, std::uint64_t seed) {
    const auto tasks = ws.all();
    return rollout_eval(model, ws.embeddings(), ws.env(), tasks, eval_episodes(ws.config()), eval_split(ws.config()),
                        eval_seed(seed));
}

EvalReport evaluate_leakage(const Workspace& ws, const Model& model, std::uint64_t seed) {
    const auto tasks = ws.all();
    return leakage_eval(model, ws.embeddings(), ws.env(), tasks, eval_episodes(ws.config()), eval_seed(seed));
}

ParaphraseResult evaluate_paraphrase(const Workspace& ws, const Model& model, std::uint64_t seed) {
    const auto tasks = ws.all();
    return paraphrase_eval(model, ws.embeddings(), ws.env(), tasks, eval_episodes(ws.config()), eval_seed(seed));
}

AdaptComparison adapt_generator(const Workspace& ws, const GeneratorModel& model, std::uint64_t seed) {
    const Task task = ws.config().adapt_task();
    const AdaptConfig cfg = ws.config().adapt(seed);
    const AdaptData data = make_adapt_data(ws.env(), task, ws.lexicon(), cfg);
    const TaskEmbedding& instr = ws.embeddings().get(task, ws.lexicon().split().train.front());
    AdaptComparison out;
    out.hypernet = few_shot_adapt(model, instr, data, ws.env(), task, cfg);
    Rng rng(mix_seed(seed, 6));
    out.random = adapt_policy(random_policy(model.arch(), rng), data, ws.env(), task, cfg, "random");
    return out;
}

AdaptResult adapt_lowrank(const Workspace& ws, const ConcatMlp& base, std::uint64_t seed) {
    const Task task = ws.config().adapt_task();
    const AdaptConfig cfg = ws.config().adapt(seed);
    const AdaptData data = make_adapt_data(ws.env(), task, ws.lexicon(), cfg);
    const TaskEmbedding& instr = ws.embeddings().get(task, ws.lexicon().split().train.front());
    int rank = static_cast<int>(ws.config().get_int("adapt.rank"));
    if (rank < 0) throw ConfigError("adapt.rank must be >= 0");
    if (rank == 0) rank = solve_lora_rank(base, static_cast<std::size_t>(param_count(ws.config().arch())));
    return lowrank_adapt(base, rank, instr, data, ws.env(), task, cfg);
}

double pipeline_gradcheck(std::uint64_t seed, int n_coords) {
    HypernetConfig c;
    c.d = 8;
    c.heads = 2;
    c.win_blocks = 1;
    c.refine_steps = 2;
    c.d_lang = 6;
    c.arch = PolicyArch({4, 5, 3, 2});
    c.seed = mix_seed(seed, 0);
    Hypernet h(c);
    Rng rng(mix_seed(seed, 1));
    for (Parameter* p : h.params().all())
        if (p->name.starts_with("refine.decoder") && p->name.ends_with(".1.w"))
            p->value = normal_matrix(p->value.rows(), p->value.cols(), 0.2, rng);
    auto embedding = [&] {
        TaskEmbedding e;
        e.tokens = normal_matrix(4, c.d_lang, 1.0, rng);
        e.tokens.rowwise().normalize();
        e.pooled = e.tokens.colwise().mean();
        return e;
    };
    const TaskEmbedding a = embedding(), b = embedding();
    const TaskEmbedding* ip[] = {&a, &b};
    const Matrix obs[] = {normal_matrix(3, 4, 1.0, rng), normal_matrix(2, 4, 1.0, rng)};
    const Matrix target = normal_matrix(5, 2, 1.0, rng);
    auto loss = [&](Graph& g) { return mse(h.predict(g, ip, obs), g.constant(target)); };
    std::vector<Parameter*> ps = h.params().all();
    std::vector<std::pair<std::size_t, Index>> coords;
    std::uniform_int_distribution<std::size_t> pick_p(0, ps.size() - 1);
    while (static_cast<int>(coords.size()) < n_coords) {
        const std::size_t pi = pick_p(rng);
        std::uniform_int_distribution<Index> pick_c(0, ps[pi]->value.size() - 1);
        coords.push_back({pi, pick_c(rng)});
    }
    return grad_check_params(loss, ps, coords);
}

} // namespace disc
