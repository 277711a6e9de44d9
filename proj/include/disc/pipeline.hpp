#pragma once

// End-to-end steps shared by the command-line tool and the acceptance run:
// config -> dataset -> trained model -> reports. Every seed is derived from
// one run seed through mix_seed:
//   1 data, 2 model init, 3 batches, 4 evaluation, 5 adaptation.

#include "disc/analysis.hpp"
#include "disc/config.hpp"
#include "disc/eval.hpp"

#include <filesystem>
#include <memory>
#include <optional>

namespace disc {

/// Lexicon, environment and frozen embeddings for one configuration.
class Workspace {
public:
    explicit Workspace(RunConfig cfg);
    Workspace(const Workspace&) = delete;
    Workspace& operator=(const Workspace&) = delete;

    const RunConfig& config() const { return cfg_; }
    const EnvConfig& env() const { return env_; }
    const Lexicon& lexicon() const { return *lex_; }
    const EmbeddingTable& embeddings() const { return *emb_; }

    /// All tasks, minus adapt.task when data.exclude_adapt_task is set.
    std::vector<Task> training_tasks() const;
    std::vector<Task> all() const { return all_tasks(env_); }

private:
    RunConfig cfg_;
    EnvConfig env_;
    std::unique_ptr<Lexicon> lex_;
    std::unique_ptr<EmbeddingTable> emb_;
};

std::uint64_t data_seed(std::uint64_t seed);
std::uint64_t eval_seed(std::uint64_t seed);

Dataset make_dataset(const Workspace& ws, std::uint64_t seed);

struct TrainSummary {
    std::string kind;
    std::uint64_t seed = 0;
    std::size_t trainable = 0;
    double initial_loss = 0.0;
    double final_loss = 0.0;
    double seconds = 0.0;
    std::uint64_t data_hash = 0;
    bool from_cache = false;
};

nlohmann::json to_json(const TrainSummary& s);
TrainSummary train_summary_from_json(const nlohmann::json& j);

struct TrainedModel {
    std::unique_ptr<Model> model;
    TrainSummary summary;
};

/// Builds and trains a model. With `out_dir`: checkpoints, loss curve,
/// model.bin and train_summary.json are written there.
TrainedModel train_model(const Workspace& ws, const Dataset& data, std::uint64_t seed,
                         const std::optional<std::filesystem::path>& out_dir);

/// Loads <cache>/<kind>-<config hash>-<seed>.bin when present, otherwise
/// trains (without intermediate checkpoints) and stores the result.
TrainedModel cached_model(const Workspace& ws, std::uint64_t seed, const std::filesystem::path& cache_dir);

EvalReport evaluate(const Workspace& ws, const Model& model, std::uint64_t seed);
EvalReport evaluate_leakage(const Workspace& ws, const Model& model, std::uint64_t seed);
ParaphraseResult evaluate_paraphrase(const Workspace& ws, const Model& model, std::uint64_t seed);

struct AdaptComparison {
    AdaptResult hypernet;   // theta0 from the generator
    AdaptResult random;     // theta0 from random_policy, same data/schedule
};

/// Few-shot adaptation of a generator on adapt.task from its first training surface.
AdaptComparison adapt_generator(const Workspace& ws, const GeneratorModel& model, std::uint64_t seed);
AdaptResult adapt_lowrank(const Workspace& ws, const ConcatMlp& base, std::uint64_t seed);

/// End-to-end BC-loss gradient check of a toy DISC on `n_coords` random
/// coordinates of its parameters (zero-initialized decoders perturbed first).
double pipeline_gradcheck(std::uint64_t seed, int n_coords = 200);

void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

} // namespace disc
