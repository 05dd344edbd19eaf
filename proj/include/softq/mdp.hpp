#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "softq/error.hpp"
#include "softq/rng.hpp"

namespace softq {

inline constexpr double kProbTol = 1e-12;
inline constexpr double kOccupancyTol = 1e-10;
inline constexpr long kDefaultEnumerationCap = 1'000'000;

struct TransitionEntry {
    int next = 0;      // state index within the next layer
    double prob = 0.0;
};

/// Finite-horizon layered MDP. A state is identified by (layer, index); layer
/// H is terminal and carries value 0. Transition rows are sparse and only
/// connect layer h to layer h+1.
struct LayeredMdp {
    int horizon = 0;                                  // H >= 1
    std::vector<int> layer_sizes;                     // H+1 entries, last is terminal
    std::vector<std::vector<int>> action_counts;      // [h][s], h in [0, H)
    std::vector<std::vector<std::vector<std::vector<TransitionEntry>>>> transition;  // [h][s][a]
    std::vector<std::vector<std::vector<double>>> reward;                            // [h][s][a]
    std::vector<double> rho;                          // initial distribution over layer 0
    bool deterministic = false;
    long enumeration_cap = kDefaultEnumerationCap;
    std::vector<std::vector<std::string>> labels;     // optional display names, [h][s]

    int actions_at(int h, int s) const { return action_counts[h][s]; }
    long pair_count() const;
    long trajectory_count() const;  // support-respecting path count (policy-independent)

    /// Throws InvalidArgument on any violated structural invariant.
    void validate() const;

    /// True when all nonzero rewards sit on the last decision layer (and H > 1),
    /// i.e. only the trajectory outcome carries signal.
    bool outcome_only_rewards() const;

    std::string state_name(int h, int s) const;
};

/// A rollout (s_1, a_1, ..., s_H, a_H) with rewards. States are stored as
/// per-layer indices; the layer is the position.
struct Trajectory {
    std::vector<int> states;
    std::vector<int> actions;
    std::vector<double> step_rewards;
    double total_reward = 0.0;
    std::optional<double> behavior_logprob;

    int length() const { return static_cast<int>(states.size()); }
};

/// Throws InvalidArgument if the trajectory is inconsistent with the MDP
/// (lengths, state/action ranges, transition support, reward totals).
void validate_trajectory(const LayeredMdp& mdp, const Trajectory& tau);

/// Explicit conditional distribution over actions per state.
struct Policy {
    std::vector<std::vector<std::vector<double>>> table;  // [h][s][a]

    double prob(int h, int s, int a) const { return table[h][s][a]; }
    void validate(const LayeredMdp& mdp) const;  // throws CoverageError / InvalidArgument
};

Policy uniform_policy(const LayeredMdp& mdp);
/// (1 - eps) * base + eps * uniform, rows renormalized only by construction.
Policy mix_with_uniform(const LayeredMdp& mdp, const Policy& base, double eps);
Policy random_policy(const LayeredMdp& mdp, Rng& rng, double logit_scale = 2.0);

/// Per-layer state-action visitation probabilities d_h(s, a).
struct OccupancyTable {
    std::vector<std::vector<std::vector<double>>> pair;  // [h][s][a]

    double at(int h, int s, int a) const { return pair[h][s][a]; }
    double state(int h, int s) const;
};

/// Dense table of one real per (layer, state, action); the shared layout for
/// logits, Q tables, test functions and gradients.
struct PairTable {
    std::vector<std::vector<std::vector<double>>> v;

    static PairTable zeros(const LayeredMdp& mdp);

    double& at(int h, int s, int a) { return v[h][s][a]; }
    double at(int h, int s, int a) const { return v[h][s][a]; }
    bool same_shape(const PairTable& o) const;

    template <class Fn>  // Fn(int h, int s, int a, double& value)
    void for_each(Fn&& fn) {
        for (size_t h = 0; h < v.size(); ++h)
            for (size_t s = 0; s < v[h].size(); ++s)
                for (size_t a = 0; a < v[h][s].size(); ++a) fn((int)h, (int)s, (int)a, v[h][s][a]);
    }
    template <class Fn>
    void for_each(Fn&& fn) const {
        for (size_t h = 0; h < v.size(); ++h)
            for (size_t s = 0; s < v[h].size(); ++s)
                for (size_t a = 0; a < v[h][s].size(); ++a)
                    fn((int)h, (int)s, (int)a, v[h][s][a]);
    }
    long size() const;
    double max_abs() const;
    double l2_norm() const;
};

/// Throws InvalidArgument if the table does not match the MDP's pair layout.
void check_pair_shape(const LayeredMdp& mdp, const PairTable& t, const char* what);

double logsumexp(const std::vector<double>& x);

// ---------------------------------------------------------------------------
// Construction

LayeredMdp make_bandit(const std::vector<double>& rewards);

/// Complete A-ary tree of depth H; layer h has A^h states, transitions are
/// deterministic: (h, i) --a--> (h+1, i*A + a).
LayeredMdp make_token_tree_shape(int branching, int horizon,
                                 long cap = kDefaultEnumerationCap);
/// Reward nonzero only at the last decision layer; leaf_values has A^H entries
/// indexed by (state_index * A + action).
LayeredMdp make_token_tree_outcome(int branching, int horizon, std::vector<double> leaf_values,
                                   long cap = kDefaultEnumerationCap);
LayeredMdp make_token_tree_per_step(int branching, int horizon,
                                    const std::function<double(int h, int s, int a)>& reward,
                                    long cap = kDefaultEnumerationCap);
/// Bernoulli(p) outcome rewards at the leaves, fully determined by the seed.
LayeredMdp make_token_tree_random_outcome(int branching, int horizon, uint64_t seed, double p,
                                          long cap = kDefaultEnumerationCap);
LayeredMdp make_token_tree_random_outcome_uniform(int branching, int horizon, uint64_t seed,
                                                  double lo, double hi,
                                                  long cap = kDefaultEnumerationCap);

// ---------------------------------------------------------------------------
// Exact oracles

/// R_beta(s, a) = r(s, a) / beta + log piref(a | s).
double transformed_reward(const LayeredMdp& mdp, double beta, const Policy& piref, int h, int s,
                          int a);

std::vector<Trajectory> rollout(const LayeredMdp& mdp, const Policy& policy, Rng& rng, long n);

struct WeightedTrajectory {
    Trajectory traj;
    double prob = 0.0;
};

/// Exhaustive list of positive-probability trajectories under (rho, policy, P).
std::vector<WeightedTrajectory> enumerate_trajectory_distribution(const LayeredMdp& mdp,
                                                                  const Policy& policy,
                                                                  long cap_override = 0);

OccupancyTable occupancy(const LayeredMdp& mdp, const Policy& policy);

/// KL-regularized return J_beta(pi), exact backward DP. Returns -inf (and
/// fills *diag) when pi puts mass outside piref's support.
double j_beta(const LayeredMdp& mdp, const Policy& policy, double beta, const Policy& piref,
              std::string* diag = nullptr);

/// Trajectory-level KL(pi || piref), exact backward DP.
double kl_to_ref(const LayeredMdp& mdp, const Policy& policy, const Policy& piref);

/// Optimal soft Q table for the transformed reward, in logit units:
/// q*(s_h, a) = R_beta(s_h, a) + E[logsumexp_a' q*(s_{h+1}, a')], terminal 0.
PairTable soft_optimal_q(const LayeredMdp& mdp, double beta, const Policy& piref);

/// Fixed point of the policy Bellman operator, Q^pi in logit units.
PairTable policy_soft_q(const LayeredMdp& mdp, double beta, const Policy& piref, const Policy& pi);

/// (T_beta Q)(s, a): optimality operator, one application at a single pair.
double soft_bellman_apply(const LayeredMdp& mdp, double beta, const Policy& piref,
                          const PairTable& q, int h, int s, int a);
/// (T^pi_beta Q)(s, a): the policy version.
double soft_bellman_apply(const LayeredMdp& mdp, double beta, const Policy& piref,
                          const PairTable& q, const Policy& pi, int h, int s, int a);

}  // namespace softq
