#pragma once

// Baselines compared against DISC, and the factory that builds any model
// (DISC, its ablations, baselines) from a JSON description.
//
//   concat-mlp       MLP over [obs | mean language token]; task and state share all weights
//   film-mlp         MLP over obs whose hidden pre-activations are scaled/shifted by
//                    gamma(e), beta(e) from a linear language head
//   direct-hypernet  pooled language -> 5 linear layers (hidden 48, ReLU) -> flat theta
//   disc, disc-win-only, disc-no-win   see hypernet.hpp

#include "disc/hypernet.hpp"
#include "disc/model.hpp"

#include <functional>
#include <memory>

namespace disc {

/// Eigen-only evaluation of an Mlp (no graph), batch rows.
Matrix mlp_eval(const Mlp& m, const Matrix& x);

struct MlpBaselineConfig {
    Index obs_dim = 0;
    Index act_dim = 0;
    int d_lang = 64;
    std::vector<Index> hidden;   // hidden widths; depth follows the target policy by default
    std::uint64_t seed = 0;
};

class ConcatMlp : public Model {
public:
    explicit ConcatMlp(const MlpBaselineConfig& cfg);
    std::string kind() const override { return "concat-mlp"; }
    nlohmann::json config_json() const override;
    Var predict(Graph& g, std::span<const TaskEmbedding* const> instr, std::span<const Matrix> obs) override;
    std::unique_ptr<Controller> controller(const TaskEmbedding& e) const override;

    const MlpBaselineConfig& config() const { return cfg_; }
    const Mlp& net() const { return net_; }
    Index input_dim() const { return cfg_.obs_dim + cfg_.d_lang; }
    /// Rows [obs | pooled], one block per instruction.
    static Matrix build_input(std::span<const TaskEmbedding* const> instr, std::span<const Matrix> obs, Index d_lang);

private:
    MlpBaselineConfig cfg_;
    Mlp net_;
};

class FilmMlp : public Model {
public:
    explicit FilmMlp(const MlpBaselineConfig& cfg);
    std::string kind() const override { return "film-mlp"; }
    nlohmann::json config_json() const override;
    Var predict(Graph& g, std::span<const TaskEmbedding* const> instr, std::span<const Matrix> obs) override;
    std::unique_ptr<Controller> controller(const TaskEmbedding& e) const override;

    /// Number of language-dependent scalars per step: 2 * sum(hidden).
    Index modulation_count() const;
    /// (gamma, beta) for one pooled embedding, each 1 x sum(hidden).
    std::pair<Matrix, Matrix> modulation(const Matrix& pooled) const;
    Matrix eval(const Matrix& obs, const Matrix& pooled) const;

private:
    MlpBaselineConfig cfg_;
    std::vector<Linear> backbone_;
    Linear head_;   // pooled -> [gamma offsets | betas], zero-initialized
};

struct DirectHypernetConfig {
    PolicyArch arch;
    int d_lang = 64;
    Index hidden = 48;
    int layers = 5;   // linear layers
    std::uint64_t seed = 0;
};

class DirectHypernet : public GeneratorModel {
public:
    explicit DirectHypernet(const DirectHypernetConfig& cfg);
    std::string kind() const override { return "direct-hypernet"; }
    nlohmann::json config_json() const override;
    std::vector<Var> generate(Graph& g, std::span<const TaskEmbedding* const> instr) const override;

private:
    DirectHypernetConfig cfg_;
    Mlp net_;
    Matrix out_scale_;   // 1 x param_count, 1/sqrt(fan_in) of each generated entry
};

/// Low-rank additive adapters W + A B on every weight matrix of a frozen
/// concat baseline. Only A and B are trainable; B starts at zero.
class LoraConcat : public Model {
public:
    LoraConcat(const ConcatMlp& base, int rank, std::uint64_t seed);
    std::string kind() const override { return "concat-mlp-lora"; }
    nlohmann::json config_json() const override;
    Var predict(Graph& g, std::span<const TaskEmbedding* const> instr, std::span<const Matrix> obs) override;
    std::unique_ptr<Controller> controller(const TaskEmbedding& e) const override;

    int rank() const { return rank_; }
    Matrix eval(const Matrix& input) const;

private:
    const ConcatMlp& base_;
    int rank_;
    std::vector<Parameter*> a_;
    std::vector<Parameter*> b_;
};

/// Added trainable scalars of a rank-r adapter on `base`.
std::size_t lora_param_count(const ConcatMlp& base, int rank);
/// Smallest-error rank whose adapter size is within `tol` of `target`; ConfigError if none.
int solve_lora_rank(const ConcatMlp& base, std::size_t target, double tol = 0.10);

/// Width h (all hidden layers equal) minimizing |count(h) - target|. ConfigError
/// if the best width is outside `tol` relative error.
Index solve_width(const std::function<std::size_t(Index)>& count, std::size_t target, double tol = 0.10);

std::size_t concat_param_count(Index obs_dim, int d_lang, Index act_dim, Index width, int hidden_layers);
std::size_t film_param_count(Index obs_dim, int d_lang, Index act_dim, Index width, int hidden_layers);

// ---------------------------------------------------------------------------

/// Everything needed to build any model kind.
struct ModelSpec {
    std::string kind = "disc";
    PolicyArch arch;
    HypernetConfig hypernet;        // arch/d_lang/seed overridden from this spec
    int d_lang = 64;
    Index direct_hidden = 48;
    /// Baseline hidden width; 0 = solve against the DISC budget of `hypernet`.
    Index baseline_width = 0;
    std::uint64_t seed = 0;
};

std::vector<std::string> model_kinds();
std::unique_ptr<Model> make_model(const ModelSpec& spec);
/// Rebuilds a model from Model::config_json().
std::unique_ptr<Model> make_model(const nlohmann::json& config);

/// Total trainable DISC scalars plus the size of one generated policy (the matching budget).
std::size_t disc_budget(const HypernetConfig& cfg);

} // namespace disc
