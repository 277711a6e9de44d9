#pragma once

// DISC generator: a Weight Initialization Network (WIN) produces coarse
// policy parameters from the instruction, then T tied refinement steps
// apply learned updates shaped like one step of gradient descent:
//
//   tokenize rows        omega_i[r]  = E_i(row r of layer i)
//   simulated forward    tau_0       = CA(q0, lang)
//                        tau_i       = CA(omega_i, tau_{i-1})
//   simulated backward   Jh_i        = CA(omega_i, tau_{i-1})     (i >= 2)
//                        Jtheta_i    = CA(tau_{i-1}, omega_i)
//                        dz_L        = CA(tau_L, lang)
//                        grad_i      = CA(dz_i, Jtheta_i)
//                        dz_{i-1}    = CA(tau_{i-1}, [dz_i ; Jh_i])
//   meta update          delta row r = D_i(grad_i[r])
//
// CA(q, kv) is one multi-head cross-attention layer with residual and
// layer-norm. Token counts: |omega_i| = |tau_i| = |grad_i| = |dz_i| = out_i,
// |Jtheta_i| = out_{i-1}, |tau_0| = obs_dim. No loss, data or true gradient
// is involved; the whole generation is one feed-forward pass.

#include "disc/model.hpp"

#include <cstdint>
#include <vector>

namespace disc {

struct HypernetConfig {
    int d = 128;
    int heads = 4;
    int attn_layers_per_block = 1;
    int win_blocks = 4;
    int refine_steps = 3;
    int d_lang = 64;
    PolicyArch arch;
    /// false: theta^(0) is a learned task-independent constant (no WIN).
    bool use_win = true;
    std::uint64_t seed = 0;
};

nlohmann::json to_json(const HypernetConfig& c);
HypernetConfig hypernet_config_from_json(const nlohmann::json& j);

/// Per-layer token stacks, each (groups * count) x d.
struct ParamTokens {
    std::vector<Var> omega;
};

struct ActivationTokens {
    std::vector<Var> tau;   // tau[0] .. tau[L]
};

struct GradTokens {
    std::vector<Var> dz;          // dz[i-1] = dL/dz_i, i = 1..L
    std::vector<Var> grad_omega;  // grad_omega[i-1] for layer i
    std::vector<Var> jac_h;       // jac_h[0] is unused and left empty
    std::vector<Var> jac_theta;
};

class Hypernet : public GeneratorModel {
public:
    explicit Hypernet(const HypernetConfig& cfg);

    const HypernetConfig& config() const { return cfg_; }
    std::string kind() const override;
    nlohmann::json config_json() const override;

    std::vector<Var> generate(Graph& g, std::span<const TaskEmbedding* const> instr) const override;

    /// Stage 1. lang is the stacked raw token matrix (groups*L x d_lang).
    std::vector<Var> win_generate(Graph& g, Var lang, int groups) const;
    /// Learned constant used in place of the WIN (no-WIN ablation).
    std::vector<Var> constant_init(Graph& g, int groups) const;

    std::vector<Var> refine_step(Graph& g, std::span<const Var> layers, Var lang, int groups) const;

    ParamTokens tokenize_params(Graph& g, std::span<const Var> layers) const;
    ActivationTokens forward_simulate(Graph& g, const ParamTokens& w, Var lang_ref, int groups) const;
    GradTokens backward_simulate(Graph& g, const ParamTokens& w, const ActivationTokens& t, Var lang_ref,
                                 int groups) const;
    std::vector<Var> meta_update(Graph& g, const GradTokens& grads) const;

    /// Projects raw language tokens into the refinement token space.
    Var refine_language(Graph& g, Var lang) const;

    /// Parameter-set sizes of the two stages (phi_1 and phi_2).
    std::size_t win_param_count() const;
    std::size_t refine_param_count() const;

private:
    struct Win {
        Linear lang_proj;
        Parameter* queries = nullptr;
        struct Block {
            CrossAttention self_attn;
            CrossAttention cross_attn;
            Mlp ffn;
            LayerNorm ffn_norm;
        };
        std::vector<Block> blocks;
        std::vector<Mlp> decoders;
    };
    struct Refiner {
        Linear lang_proj;
        Parameter* tau0_queries = nullptr;
        CrossAttention tau0;
        CrossAttention top_grad;
        std::vector<Mlp> encoders;              // E_i
        std::vector<Mlp> decoders;              // D_i
        std::vector<CrossAttention> forward;    // tau_i
        std::vector<CrossAttention> jac_h;
        std::vector<CrossAttention> jac_theta;
        std::vector<CrossAttention> grad_omega;
        std::vector<CrossAttention> grad_z;     // grad_z[i] produces dz_i from layer i+1; size L-1
    };

    HypernetConfig cfg_;
    Win win_;
    Refiner ref_;
    std::vector<Parameter*> init_const_;   // no-WIN constant theta^(0), one per layer
    std::size_t win_count_ = 0;
    std::size_t refine_count_ = 0;
};

} // namespace disc
