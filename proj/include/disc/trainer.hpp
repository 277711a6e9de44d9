#pragma once

// Behaviour-cloning training shared by every model kind.

#include "disc/lang.hpp"
#include "disc/model.hpp"
#include "disc/optim.hpp"
#include "disc/sim.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace disc {

/// Frozen encoder outputs for every (task, surface) pair, computed once.
class EmbeddingTable {
public:
    EmbeddingTable(const Lexicon& lex, const EnvConfig& env);
    const TaskEmbedding& get(const Task& t, int surface) const;
    const Lexicon& lexicon() const { return *lex_; }

private:
    const Lexicon* lex_;
    int n_containers_;
    std::vector<std::vector<TaskEmbedding>> table_;   // [task index][surface]
};

struct Batch {
    std::vector<std::size_t> index;   // into Dataset::transitions, in draw order
    std::vector<int> surface;         // instruction surface used for each drawn transition
};

/// Uniform draw over the global transition list. With `augment`, the
/// instruction of each task present in the batch is re-drawn uniformly from
/// the training surfaces (one draw per task per batch); otherwise every task
/// uses the surface tagged on its first drawn transition.
Batch sample_batch(const Dataset& d, int batch_size, Rng& rng, bool augment, const ParaphraseSplit& split);

/// Batch regrouped by instruction, first-appearance order.
struct GroupedBatch {
    std::vector<const TaskEmbedding*> instr;
    std::vector<Matrix> obs;
    Matrix targets;   // normalized actions, rows in group order
};

GroupedBatch group_batch(const Dataset& d, const Batch& b, const EmbeddingTable& emb);

/// Mean over rows of the squared L2 error between predicted and normalized expert actions.
Var bc_loss(Graph& g, Model& model, const GroupedBatch& b);

struct TrainConfig {
    int steps = 20000;
    int batch_size = 128;
    double lr = 1e-3;
    double weight_decay = 1e-4;
    bool augment = true;
    int checkpoint_every = 1000;
    double grad_clip = 0.0;     // global-norm clip; 0 disables
    double diverge_factor = 10.0;
    int diverge_patience = 500;
    std::uint64_t seed = 0;
    std::optional<std::filesystem::path> out_dir;   // checkpoints and loss curve
    std::string provenance;                          // "# ..." header for emitted CSV files
};

struct LossPoint {
    int step = 0;
    double lr = 0.0;
    double loss = 0.0;
};

struct TrainResult {
    std::vector<LossPoint> curve;
    double initial_loss = 0.0;
    double final_loss = 0.0;   // mean of the last min(100, steps) step losses
    double seconds = 0.0;
    std::vector<std::filesystem::path> checkpoints;
};

class DivergenceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

TrainResult train(Model& model, const Dataset& d, const EmbeddingTable& emb, const TrainConfig& cfg);

std::string loss_curve_csv(const std::vector<LossPoint>& curve, const std::string& provenance);

/// Checkpoint round trip for any model built by make_model.
void save_model(const std::filesystem::path& path, const Model& model, const nlohmann::json& extra = {});
std::unique_ptr<Model> load_model(const std::filesystem::path& path);

} // namespace disc
