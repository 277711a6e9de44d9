#pragma once

// Uniform interface shared by DISC, its ablations and every baseline:
// (instruction, observation) -> action, trainable by one trainer.

#include "disc/lang.hpp"
#include "disc/nn.hpp"
#include "disc/policy.hpp"

#include <nlohmann/json.hpp>

#include <atomic>
#include <memory>
#include <span>
#include <string>

namespace disc {

/// Closed-loop actor bound to one instruction.
class Controller {
public:
    virtual ~Controller() = default;
    virtual Vector act(const Eigen::Ref<const Vector>& obs) = 0;
};

class Model {
public:
    virtual ~Model() = default;

    virtual std::string kind() const = 0;
    virtual nlohmann::json config_json() const = 0;

    /// Predictions for several instructions at once. obs[g] holds the
    /// observations paired with instr[g]; the result stacks them in order.
    virtual Var predict(Graph& g, std::span<const TaskEmbedding* const> instr, std::span<const Matrix> obs) = 0;

    virtual std::unique_ptr<Controller> controller(const TaskEmbedding& e) const = 0;

    ParamSet& params() { return params_; }
    const ParamSet& params() const { return params_; }
    std::size_t trainable_count() const { return params_.count(); }

protected:
    ParamSet params_;
};

/// Stacks the token matrices of `instr` row-wise; all must have equal length.
Matrix stack_tokens(std::span<const TaskEmbedding* const> instr);
Matrix stack_pooled(std::span<const TaskEmbedding* const> instr);

/// Models whose output is a full parameter vector for the target policy.
class GeneratorModel : public Model {
public:
    explicit GeneratorModel(PolicyArch arch) : arch_(std::move(arch)) {}

    const PolicyArch& arch() const { return arch_; }

    /// Generated parameters for each instruction. Element i stacks layer i of
    /// every instruction: (groups * out_i) x (in_i + 1).
    virtual std::vector<Var> generate(Graph& g, std::span<const TaskEmbedding* const> instr) const = 0;

    /// Inference-only generation of one policy.
    PolicyParams generate_policy(const TaskEmbedding& e) const;

    Var predict(Graph& g, std::span<const TaskEmbedding* const> instr, std::span<const Matrix> obs) override;

    /// Generates once, then every act() is a target-policy forward pass.
    std::unique_ptr<Controller> controller(const TaskEmbedding& e) const override;

    std::size_t generation_calls() const { return generations_.load(); }
    void reset_generation_calls() { generations_ = 0; }

private:
    PolicyArch arch_;
    mutable std::atomic<std::size_t> generations_{0};
};

/// Controller that runs fixed policy parameters.
class PolicyController : public Controller {
public:
    explicit PolicyController(PolicyParams theta) : theta_(std::move(theta)) {}
    Vector act(const Eigen::Ref<const Vector>& obs) override { return policy_forward(obs, theta_); }
    const PolicyParams& params() const { return theta_; }

private:
    PolicyParams theta_;
};

/// Splits group-stacked layers into the layers of group `gi`.
std::vector<Var> group_layers(std::span<const Var> stacked, const PolicyArch& arch, int groups, int gi);

} // namespace disc
