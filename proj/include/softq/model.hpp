#pragma once

#include <functional>
#include <memory>

#include "softq/mdp.hpp"

namespace softq {

/// Per-pair partial derivatives; same layout as the model's logits.
using GradientTable = PairTable;

/// Tabular autoregressive function approximation: logits are Q-values, the
/// derived value is their log-sum-exp and the policy their softmax.
struct TabularLogitModel {
    PairTable logits;
    double beta = 1.0;   // bookkeeping only; operations take beta explicitly
    Policy ref;          // reference policy handle

    /// logit <- log piref, so the step-0 policy equals the reference exactly.
    static TabularLogitModel init_from_reference(const LayeredMdp& mdp, double beta,
                                                 const Policy& piref);

    /// V(s) = logsumexp_a logit(s, a), max-stabilized.
    double value(int h, int s) const;
    /// log pi(a|s) = logit(s, a) - V(s).
    double log_policy(int h, int s, int a) const;
    Policy policy(const LayeredMdp& mdp) const;

    /// Largest |logit|; monitored against the analysis bound, never enforced.
    double max_abs_logit() const { return logits.max_abs(); }
};

/// theta* with logit = optimal soft Q of the transformed reward; softmax of
/// the returned logits is the optimal policy.
TabularLogitModel soft_value_iteration(const LayeredMdp& mdp, double beta, const Policy& piref);

/// Trajectory Bellman residual
///   f(tau) = logit(s_1, a_1) - r(tau)/beta - log piref(tau)
///            + sum_{h>=2} log pi(a_h | s_h);
/// zero at theta* for every admissible trajectory of a deterministic MDP.
double traj_residual(const TabularLogitModel& model, const LayeredMdp& mdp, double beta,
                     const Policy& piref, const Trajectory& tau);

GradientTable grad_traj_residual(const TabularLogitModel& model, const LayeredMdp& mdp,
                                 double beta, const Policy& piref, const Trajectory& tau);

struct LossResult {
    double value = 0.0;
    GradientTable grad;
};

using LossEvaluator = std::function<LossResult(const TabularLogitModel&)>;

/// Central-difference probe of an analytic gradient at randomly chosen logit
/// coordinates. Returns the worst relative error (absolute below 1e-8).
double fd_check(const LossEvaluator& evaluate, const TabularLogitModel& base, int probe_count,
                double step, Rng& rng);

}  // namespace softq
