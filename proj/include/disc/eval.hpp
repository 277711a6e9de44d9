#pragma once

// Rollout evaluation, leakage confusion, paraphrase grounding and few-shot adaptation.

#include "disc/baselines.hpp"
#include "disc/sim.hpp"
#include "disc/trainer.hpp"

#include <functional>

namespace disc {

using Actor = std::function<Vector(const SceneState&, const Vector& obs)>;

struct EpisodeResult {
    std::optional<Placement> placement;
    bool success = false;
    int steps = 0;
};

/// Runs until the first placement or the horizon. The actor returns env-unit actions.
EpisodeResult run_episode(const EnvConfig& cfg, const Task& task, std::uint64_t seed, const Actor& actor);

/// Reset seed of episode `e` of task `task_index`; shared by every model and split.
std::uint64_t episode_seed(std::uint64_t seed, int task_index, int episode);

struct EvalReport {
    std::vector<Task> tasks;
    std::vector<int> episodes;          // per task
    std::vector<double> success;        // per task
    double overall = 0.0;               // mean of per-task success
    /// confusion[i][p]: fraction of task i episodes whose first placement was
    /// (object, container) index p = object * n_containers + container.
    std::vector<std::vector<double>> confusion;
    std::vector<double> no_placement;   // fraction of episodes without any placement
    std::string split = "train";
    std::size_t generations = 0;        // generate_policy calls made by this evaluation
    int n_containers = 3;

    int cell(const Task& t) const;

    /// Mean over instructed tasks of the confusion mass off the instructed cell.
    double off_diagonal_mass() const;
};

/// Episode e of a task uses surface split[e % |split|]; controllers are built
/// once per (task, surface) and reused for every episode.
EvalReport rollout_eval(const Model& model, const EmbeddingTable& emb, const EnvConfig& env,
                        std::span<const Task> tasks, int n_episodes, Split split, std::uint64_t seed);

/// Same protocol with an arbitrary actor (expert, random policy, ...).
EvalReport actor_eval(const std::function<Actor(const Task&, int surface)>& make_actor, const Lexicon& lex,
                      const EnvConfig& env, std::span<const Task> tasks, int n_episodes, Split split,
                      std::uint64_t seed);

Actor expert_actor(const EnvConfig& env, const Task& task);
/// Wraps a controller that outputs normalized actions.
Actor controller_actor(const EnvConfig& env, std::shared_ptr<Controller> c);

/// Decorrelated evaluation of a model trained on correlated layouts.
EvalReport leakage_eval(const Model& model, const EmbeddingTable& emb, const EnvConfig& env,
                        std::span<const Task> tasks, int n_episodes, std::uint64_t seed);

struct ParaphraseResult {
    EvalReport train;
    EvalReport heldout;
    double gap() const { return train.overall - heldout.overall; }
};

ParaphraseResult paraphrase_eval(const Model& model, const EmbeddingTable& emb, const EnvConfig& env,
                                 std::span<const Task> tasks, int n_episodes, std::uint64_t seed);

std::string report_csv(const EvalReport& r, const std::string& provenance);
nlohmann::json report_json(const EvalReport& r);

// ---------------------------------------------------------------------------

struct AdaptConfig {
    int k = 3;                                       // demonstrations of the new task
    int steps = 1000;
    double lr = 1e-3;
    std::vector<int> checkpoints{0, 50, 200, 500, 1000};
    int val_demos = 10;
    int eval_episodes = 30;
    std::uint64_t seed = 0;
};

struct AdaptPoint {
    int step = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double success = 0.0;
};

struct AdaptResult {
    std::string init;   // "hypernet", "random" or "lora"
    std::vector<AdaptPoint> points;
    std::size_t trainable = 0;
    const AdaptPoint& at(int step) const;
};

/// Demonstrations of the new task: K for fitting, val_demos for validation.
struct AdaptData {
    Dataset fit;
    Dataset val;
};

AdaptData make_adapt_data(const EnvConfig& env, const Task& task, const Lexicon& lex, const AdaptConfig& cfg);

/// Adam on theta only, starting from `theta0`.
AdaptResult adapt_policy(const PolicyParams& theta0, const AdaptData& data, const EnvConfig& env, const Task& task,
                         const AdaptConfig& cfg, std::string init);

/// theta0 = generate_policy(instruction); hypernetwork parameters untouched.
AdaptResult few_shot_adapt(const GeneratorModel& model, const TaskEmbedding& instr, const AdaptData& data,
                           const EnvConfig& env, const Task& task, const AdaptConfig& cfg);

/// Low-rank adapters on a frozen concat baseline, same data and schedule.
AdaptResult lowrank_adapt(const ConcatMlp& base, int rank, const TaskEmbedding& instr, const AdaptData& data,
                          const EnvConfig& env, const Task& task, const AdaptConfig& cfg);

std::string adapt_csv(std::span<const AdaptResult> results, const std::string& provenance);

} // namespace disc
