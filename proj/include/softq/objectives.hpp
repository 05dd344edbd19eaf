#pragma once

#include <string>
#include <utility>
#include <vector>

#include "softq/model.hpp"

namespace softq {

/// Rollout collection; the unit of all loss evaluation. Groups collect the
/// indices of rollouts that share a prompt (for the direct-alignment losses).
struct TrajectoryDataset {
    std::vector<Trajectory> items;
    std::vector<std::vector<int>> groups;
    bool per_step_rewards_available = true;

    long size() const { return (long)items.size(); }
    bool empty() const { return items.empty(); }
    void validate(const LayeredMdp& mdp) const;
};

/// Separate state-value model V_phi over non-terminal layers; terminal is 0.
struct VTable {
    std::vector<std::vector<double>> v;  // [h][s], h in [0, H)

    static VTable zeros(const LayeredMdp& mdp);
    static VTable from_model(const LayeredMdp& mdp, const TabularLogitModel& model);
    double at(int h, int s) const { return v[h][s]; }
    double& at(int h, int s) { return v[h][s]; }
    double l2_norm() const;
};

enum class LossKind {
    Tbrm,
    Brm,
    TbrmIter,
    SqlS,
    SqlM,
    SqlTildeS,
    SqlTildeM,
    SacS,
    SacM,
    DaaPt,
    DaaPair,
};

std::string loss_kind_name(LossKind kind);
LossKind parse_loss_kind(const std::string& name);
bool loss_is_iterative(LossKind kind);          // frozen-target losses
bool loss_needs_per_step_rewards(LossKind kind);
bool loss_needs_grouping(LossKind kind);

enum class VStarMode { LiteralSum, Mean };

// Every loss below is computed in logit units (rewards divided by beta,
// log-probabilities unscaled) and averages 1/|D| over trajectories.

/// Mean squared trajectory Bellman residual.
LossResult tbrm_loss(const TabularLogitModel& model, const LayeredMdp& mdp, double beta,
                     const Policy& piref, const TrajectoryDataset& data);

/// Classical per-step Bellman residual; needs per-step rewards.
LossResult brm_loss(const TabularLogitModel& model, const LayeredMdp& mdp, double beta,
                    const Policy& piref, const TrajectoryDataset& data);

/// Frozen-target variant with V(s_1) taken from the target model.
LossResult iterative_tbrm_loss(const TabularLogitModel& model, const TabularLogitModel& target,
                               const LayeredMdp& mdp, double beta, const Policy& piref,
                               const TrajectoryDataset& data);

enum class SqlVariant { S, M, TildeS, TildeM };

LossResult sql_loss(SqlVariant variant, const TabularLogitModel& model,
                    const TabularLogitModel& target, const LayeredMdp& mdp, double beta,
                    const Policy& piref, const TrajectoryDataset& data);

struct SacLossResult {
    double value = 0.0;
    GradientTable theta_grad;
    VTable v_grad;
};

/// Joint actor/value loss; gradients flow to both theta and phi.
SacLossResult sac_loss(bool multi_step, const TabularLogitModel& model, const VTable& vtable,
                       const LayeredMdp& mdp, double beta, const Policy& piref,
                       const TrajectoryDataset& data);

/// Softmax-of-returns estimate of the optimal soft value at a shared prompt,
/// in reward units. LiteralSum reproduces the estimator exactly as printed;
/// Mean is the log-mean-exp variant (consistent for one-point groups).
double estimate_v_star(const std::vector<Trajectory>& group, double beta, VStarMode mode);

/// Point-wise direct-alignment loss. When exact_v is given it supplies
/// V*(s_1) in logit units; otherwise the group estimator is used.
LossResult daa_pt_loss(const TabularLogitModel& model, const LayeredMdp& mdp, double beta,
                       const Policy& piref, const TrajectoryDataset& data, VStarMode v_mode,
                       const VTable* exact_v = nullptr);

/// Pair-wise direct-alignment loss over trajectory pairs with a shared prompt.
LossResult daa_pair_loss(const TabularLogitModel& model, const LayeredMdp& mdp, double beta,
                         const Policy& piref,
                         const std::vector<std::pair<Trajectory, Trajectory>>& pairs);

/// Disjoint consecutive pairs within each group: (0,1), (2,3), ...
std::vector<std::pair<Trajectory, Trajectory>> pairs_from_groups(const TrajectoryDataset& data);

}  // namespace softq
