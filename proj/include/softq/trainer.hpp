#pragma once

#include <limits>

#include "softq/objectives.hpp"

namespace softq {

enum class OptimizerKind { Gd, Momentum, Adam };

struct OptimizerCfg {
    OptimizerKind kind = OptimizerKind::Adam;
    double step = 1e-2;
    double momentum = 0.9;   // momentum only
    double b1 = 0.9;         // adam only
    double b2 = 0.999;
    double eps = 1e-8;
};

struct OptimizerState {
    PairTable m, v;
    long t = 0;
    bool initialized = false;
};

/// One first-order update in place. Throws on non-finite gradients.
void optimizer_step(const OptimizerCfg& cfg, PairTable& params, const PairTable& grad,
                    OptimizerState& state);

struct VOptimizerState {
    VTable m, v;
    long t = 0;
    bool initialized = false;
};

void optimizer_step(const OptimizerCfg& cfg, VTable& params, const VTable& grad,
                    VOptimizerState& state);

enum class BehaviorKind { OnPolicy, FixedUniform, EpsMix };

struct BehaviorCfg {
    BehaviorKind kind = BehaviorKind::OnPolicy;
    double eps = 0.5;  // eps_mix: (1-eps) * pi_theta + eps * uniform
};

struct TrainConfig {
    double beta = 0.1;
    long iters = 100;              // T
    int prompt_batch = 4;
    int rollouts_per_prompt = 1;   // n; the DAA group size
    int grad_steps = 1;            // K optimizer steps per iteration
    OptimizerCfg optimizer;
    BehaviorCfg behavior;
    uint64_t seed = 1;
    LossKind loss = LossKind::Tbrm;
    int target_refresh_period = 1;  // iterative losses only
    VStarMode v_mode = VStarMode::Mean;
    int offline_batch = 0;          // offline_fit minibatch; 0 = full batch
    bool timing = false;            // real wall_ms in logs (off keeps logs byte-stable)

    void validate() const;
};

struct TrainRecord {
    long iter = 0;
    double loss = 0, grad_norm = 0, j_beta = 0, subopt = 0, kl_ref = 0, wall_ms = 0;
};

struct TrainLog {
    std::vector<TrainRecord> records;
    double j_beta_star = 0.0;
    double j_beta_ref = 0.0;
    double best_loss = std::numeric_limits<double>::infinity();
    double final_loss = std::numeric_limits<double>::infinity();

    double eps_opt_proxy() const { return final_loss - best_loss; }
    double final_subopt() const { return records.empty() ? j_beta_star - j_beta_ref
                                                         : records.back().subopt; }
};

struct TrainResult {
    TabularLogitModel model;
    TrainLog log;
};

/// Online training: per iteration, sample a prompt batch, roll out n
/// trajectories per prompt from the behavior policy, take K optimizer steps.
TrainResult train(const LayeredMdp& mdp, const Policy& piref, const TrainConfig& cfg);

/// Fit the configured loss to a fixed dataset; no new rollouts.
TrainResult offline_fit(const LayeredMdp& mdp, const Policy& piref, const TrajectoryDataset& data,
                        const TrainConfig& cfg);

/// Frozen-target iteration. With a q_class, every refresh evaluates the
/// frozen-target loss at each class member and moves to the argmin; without
/// one, gradient steps run against a target refreshed every
/// target_refresh_period iterations.
struct IterateLogEntry {
    long refresh = 0;
    int selected = -1;  // class index, -1 in gradient mode
    double loss = 0.0;
};

struct IterateResult {
    TabularLogitModel model;
    TrainLog log;
    std::vector<IterateLogEntry> refreshes;
};

IterateResult iterate_targets(const LayeredMdp& mdp, const Policy& piref,
                              const TrajectoryDataset& data, const TrainConfig& cfg,
                              const std::vector<PairTable>* q_class = nullptr,
                              int start_index = 0);

/// One rollout started from a fixed layer-0 state.
Trajectory rollout_from(const LayeredMdp& mdp, const Policy& policy, Rng& rng, int s0);

/// Dataset built the way train() builds its per-iteration batches: groups of
/// rollouts_per_prompt trajectories per sampled prompt.
TrajectoryDataset collect_grouped_rollouts(const LayeredMdp& mdp, const Policy& behavior,
                                           Rng& rng, int prompts, int rollouts_per_prompt);

}  // namespace softq
