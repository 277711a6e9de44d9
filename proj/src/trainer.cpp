#include "disc/trainer.hpp"

#include "disc/baselines.hpp"
#include "disc/errors.hpp"
#include "disc/weights_io.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace disc {

EmbeddingTable::EmbeddingTable(const Lexicon& lex, const EnvConfig& env) : lex_(&lex), n_containers_(env.n_containers) {
    if (lex.config().n_objects != env.n_objects || lex.config().n_containers != env.n_containers)
        throw ConfigError("lexicon and environment disagree on the number of objects/containers");
    for (int ti = 0; ti < lex.task_count(); ++ti) {
        std::vector<TaskEmbedding> row;
        for (int s = 0; s < lex.config().surfaces; ++s) row.push_back(encode_instruction(lex.instruction(lex.task(ti), s), lex));
        table_.push_back(std::move(row));
    }
}

const TaskEmbedding& EmbeddingTable::get(const Task& t, int surface) const {
    const int ti = lex_->task_index(t);
    const auto& row = table_[static_cast<std::size_t>(ti)];
    if (surface < 0 || surface >= static_cast<int>(row.size()))
        throw LookupError("unknown surface id " + std::to_string(surface));
    return row[static_cast<std::size_t>(surface)];
}

Batch sample_batch(const Dataset& d, int batch_size, Rng& rng, bool augment, const ParaphraseSplit& split) {
    if (d.transitions.empty()) throw ContractError("sample_batch: empty dataset");
    if (batch_size <= 0) throw ContractError("sample_batch: batch size must be positive");
    if (augment && split.train.empty()) throw ContractError("sample_batch: no training surfaces to augment with");
    std::uniform_int_distribution<std::size_t> pick(0, d.transitions.size() - 1);
    Batch b;
    for (int i = 0; i < batch_size; ++i) b.index.push_back(pick(rng));
    std::map<std::pair<int, int>, int> chosen;
    std::uniform_int_distribution<std::size_t> pick_surface(0, split.train.empty() ? 0 : split.train.size() - 1);
    for (std::size_t i : b.index) {
        const Transition& t = d.transitions[i];
        auto key = std::make_pair(t.task.object, t.task.container);
        auto it = chosen.find(key);
        if (it == chosen.end()) {
            int s = augment ? split.train[pick_surface(rng)] : t.surface;
            it = chosen.emplace(key, s).first;
        }
        b.surface.push_back(it->second);
    }
    return b;
}

GroupedBatch group_batch(const Dataset& d, const Batch& b, const EmbeddingTable& emb) {
    if (b.index.size() != b.surface.size()) throw ContractError("group_batch: malformed batch");
    std::vector<std::tuple<int, int, int>> keys;
    std::vector<std::vector<std::size_t>> members;
    for (std::size_t i = 0; i < b.index.size(); ++i) {
        const Transition& t = d.transitions[b.index[i]];
        auto key = std::make_tuple(t.task.object, t.task.container, b.surface[i]);
        std::size_t gi = 0;
        while (gi < keys.size() && keys[gi] != key) ++gi;
        if (gi == keys.size()) {
            keys.push_back(key);
            members.emplace_back();
        }
        members[gi].push_back(b.index[i]);
    }
    GroupedBatch out;
    out.targets.resize(static_cast<Index>(b.index.size()), EnvConfig::act_dim());
    Index row = 0;
    for (std::size_t gi = 0; gi < keys.size(); ++gi) {
        auto [k, j, s] = keys[gi];
        out.instr.push_back(&emb.get({k, j}, s));
        Matrix o(static_cast<Index>(members[gi].size()), d.env.obs_dim());
        for (std::size_t m = 0; m < members[gi].size(); ++m) {
            const Transition& t = d.transitions[members[gi][m]];
            o.row(static_cast<Index>(m)) = t.obs.transpose();
            out.targets.row(row++) = normalize_action(d.env, t.act).transpose();
        }
        out.obs.push_back(std::move(o));
    }
    return out;
}

Var bc_loss(Graph& g, Model& model, const GroupedBatch& b) {
    Var pred = model.predict(g, b.instr, b.obs);
    return mse(pred, g.constant(b.targets));
}

std::string loss_curve_csv(const std::vector<LossPoint>& curve, const std::string& provenance) {
    std::string out = provenance;
    out += "step,lr,loss\n";
    char buf[96];
    for (const auto& p : curve) {
        std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g\n", p.step, p.lr, p.loss);
        out += buf;
    }
    return out;
}

namespace {

void clip_gradients(ParamSet& ps, double max_norm) {
    double sq = 0.0;
    for (Parameter* p : ps.all()) sq += p->grad.squaredNorm();
    const double norm = std::sqrt(sq);
    if (norm > max_norm) {
        const double s = max_norm / norm;
        for (Parameter* p : ps.all()) p->grad *= s;
    }
}

} // namespace

TrainResult train(Model& model, const Dataset& d, const EmbeddingTable& emb, const TrainConfig& cfg) {
    if (cfg.steps <= 0) throw ConfigError("train.steps must be positive");
    if (!(cfg.lr > 0.0)) throw ConfigError("train.lr must be positive");
    if (cfg.checkpoint_every < 0) throw ConfigError("train.checkpoint_every must be non-negative");
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng(cfg.seed);
    AdamWOptions opts;
    opts.lr = cfg.lr;
    opts.weight_decay = cfg.weight_decay;
    AdamW opt(model.params().all(), opts);
    const ParaphraseSplit& split = emb.lexicon().split();

    TrainResult res;
    int above = 0;
    if (cfg.out_dir) std::filesystem::create_directories(*cfg.out_dir);
    for (int step = 0; step < cfg.steps; ++step) {
        Batch b = sample_batch(d, cfg.batch_size, rng, cfg.augment, split);
        GroupedBatch gb = group_batch(d, b, emb);
        Graph g;
        Var loss = bc_loss(g, model, gb);
        const double lv = loss.value()(0, 0);
        if (!std::isfinite(lv)) {
            throw NonFiniteError("training loss became non-finite at step " + std::to_string(step) +
                                 " (previous loss " +
                                 (res.curve.empty() ? std::string("n/a") : std::to_string(res.curve.back().loss)) +
                                 ", lr " + std::to_string(cosine_lr(step, cfg.steps, cfg.lr)) + ")");
        }
        if (step == 0) res.initial_loss = lv;
        if (lv > cfg.diverge_factor * res.initial_loss) {
            if (++above >= cfg.diverge_patience)
                throw DivergenceError("training diverged: loss " + std::to_string(lv) + " above " +
                                      std::to_string(cfg.diverge_factor) + "x the initial " +
                                      std::to_string(res.initial_loss) + " for " + std::to_string(above) +
                                      " consecutive steps (step " + std::to_string(step) + ")");
        } else {
            above = 0;
        }
        opt.zero_grad();
        g.backward(loss);
        if (cfg.grad_clip > 0.0) clip_gradients(model.params(), cfg.grad_clip);
        const double lr = cosine_lr(step, cfg.steps, cfg.lr);
        opt.step(lr);
        res.curve.push_back({step, lr, lv});

        const int done = step + 1;
        if (cfg.out_dir && cfg.checkpoint_every > 0 && (done % cfg.checkpoint_every == 0 || done == cfg.steps)) {
            char name[32];
            std::snprintf(name, sizeof name, "ckpt_%06d.bin", done);
            auto path = *cfg.out_dir / name;
            save_model(path, model, {{"step", done}, {"seed", cfg.seed}});
            res.checkpoints.push_back(path);
        }
    }
    const std::size_t tail = std::min<std::size_t>(100, res.curve.size());
    double sum = 0.0;
    for (std::size_t i = res.curve.size() - tail; i < res.curve.size(); ++i) sum += res.curve[i].loss;
    res.final_loss = sum / static_cast<double>(tail);
    res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (cfg.out_dir) {
        std::string csv = loss_curve_csv(res.curve, cfg.provenance);
        write_file(*cfg.out_dir / "loss_curve.csv",
                   std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(csv.data()), csv.size()));
    }
    return res;
}

void save_model(const std::filesystem::path& path, const Model& model, const nlohmann::json& extra) {
    nlohmann::json meta = {{"model", model.config_json()}};
    if (!extra.is_null()) meta["extra"] = extra;
    Checkpoint ck = checkpoint_from(model.params(), model.kind(), meta.dump());
    write_file(path, serialize_checkpoint(ck));
}

std::unique_ptr<Model> load_model(const std::filesystem::path& path) {
    std::vector<std::uint8_t> bytes = read_file(path);
    Checkpoint ck = deserialize_checkpoint(bytes);
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(ck.metadata);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint metadata is not JSON: ") + e.what(), 0);
    }
    auto model = make_model(meta.at("model"));
    if (model->kind() != ck.kind)
        throw FormatError("checkpoint kind '" + ck.kind + "' does not match its metadata ('" + model->kind() + "')", 0);
    restore_params(model->params(), ck);
    return model;
}

} // namespace disc
