#include "softq/mdp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace softq {

namespace {

double row_sum(const std::vector<TransitionEntry>& row) {
    double s = 0.0;
    for (const auto& e : row) s += e.prob;
    return s;
}

}  // namespace

long LayeredMdp::pair_count() const {
    long n = 0;
    for (int h = 0; h < horizon; ++h)
        for (int s = 0; s < layer_sizes[h]; ++s) n += action_counts[h][s];
    return n;
}

long LayeredMdp::trajectory_count() const {
    // ways[s] = number of distinct suffix paths from a state, counting one
    // branch per (action, supported successor).
    std::vector<double> ways(layer_sizes[horizon], 1.0);
    for (int h = horizon - 1; h >= 0; --h) {
        std::vector<double> prev(layer_sizes[h], 0.0);
        for (int s = 0; s < layer_sizes[h]; ++s)
            for (int a = 0; a < action_counts[h][s]; ++a)
                for (const auto& e : transition[h][s][a])
                    if (e.prob > 0.0) prev[s] += ways[e.next];
        ways = std::move(prev);
    }
    double total = 0.0;
    for (int s = 0; s < layer_sizes[0]; ++s)
        if (rho[s] > 0.0) total += ways[s];
    if (total > 4e18) return std::numeric_limits<long>::max();
    return static_cast<long>(total);
}

void LayeredMdp::validate() const {
    if (horizon < 1) throw InvalidArgument("mdp: horizon must be >= 1");
    if ((int)layer_sizes.size() != horizon + 1)
        throw InvalidArgument("mdp: layer_sizes must have horizon+1 entries");
    for (int h = 0; h <= horizon; ++h)
        if (layer_sizes[h] < 1) throw InvalidArgument("mdp: empty layer " + std::to_string(h));
    if ((int)action_counts.size() != horizon || (int)transition.size() != horizon ||
        (int)reward.size() != horizon)
        throw InvalidArgument("mdp: per-layer tables must cover layers 0..H-1");
    for (int h = 0; h < horizon; ++h) {
        if ((int)action_counts[h].size() != layer_sizes[h] ||
            (int)transition[h].size() != layer_sizes[h] || (int)reward[h].size() != layer_sizes[h])
            throw InvalidArgument("mdp: layer " + std::to_string(h) + " table size mismatch");
        for (int s = 0; s < layer_sizes[h]; ++s) {
            const int na = action_counts[h][s];
            if (na < 1)
                throw InvalidArgument("mdp: state " + state_name(h, s) + " has no actions");
            if ((int)transition[h][s].size() != na || (int)reward[h][s].size() != na)
                throw InvalidArgument("mdp: state " + state_name(h, s) + " row count mismatch");
            for (int a = 0; a < na; ++a) {
                const auto& row = transition[h][s][a];
                if (row.empty())
                    throw InvalidArgument("mdp: missing transition row at " + state_name(h, s) +
                                          " action " + std::to_string(a));
                for (const auto& e : row) {
                    if (e.next < 0 || e.next >= layer_sizes[h + 1])
                        throw InvalidArgument("mdp: transition at " + state_name(h, s) +
                                              " leaves layer " + std::to_string(h + 1));
                    if (e.prob < 0.0)
                        throw InvalidArgument("mdp: negative transition probability at " +
                                              state_name(h, s));
                }
                if (std::abs(row_sum(row) - 1.0) > kProbTol)
                    throw InvalidArgument("mdp: transition row at " + state_name(h, s) +
                                          " action " + std::to_string(a) +
                                          " does not sum to 1");
                if (deterministic) {
                    int support = 0;
                    for (const auto& e : row)
                        if (e.prob > 0.0) ++support;
                    if (support != 1)
                        throw InvalidArgument("mdp: deterministic flag set but row at " +
                                              state_name(h, s) + " is not a point mass");
                }
            }
        }
    }
    if ((int)rho.size() != layer_sizes[0])
        throw InvalidArgument("mdp: rho size must match layer 0");
    double rs = 0.0;
    for (double p : rho) {
        if (p < 0.0) throw InvalidArgument("mdp: negative rho entry");
        rs += p;
    }
    if (std::abs(rs - 1.0) > kProbTol) throw InvalidArgument("mdp: rho does not sum to 1");
    if (!labels.empty()) {
        if ((int)labels.size() != horizon + 1)
            throw InvalidArgument("mdp: labels must cover all layers");
        for (int h = 0; h <= horizon; ++h)
            if ((int)labels[h].size() != layer_sizes[h])
                throw InvalidArgument("mdp: label count mismatch at layer " + std::to_string(h));
    }
}

bool LayeredMdp::outcome_only_rewards() const {
    if (horizon <= 1) return false;
    for (int h = 0; h + 1 < horizon; ++h)
        for (int s = 0; s < layer_sizes[h]; ++s)
            for (int a = 0; a < action_counts[h][s]; ++a)
                if (reward[h][s][a] != 0.0) return false;
    return true;
}

std::string LayeredMdp::state_name(int h, int s) const {
    if (!labels.empty() && h < (int)labels.size() && s < (int)labels[h].size())
        return labels[h][s];
    return "(" + std::to_string(h) + "," + std::to_string(s) + ")";
}

void validate_trajectory(const LayeredMdp& mdp, const Trajectory& tau) {
    const int H = mdp.horizon;
    if ((int)tau.states.size() != H || (int)tau.actions.size() != H ||
        (int)tau.step_rewards.size() != H)
        throw InvalidArgument("trajectory: lengths must all equal the horizon");
    double sum = 0.0;
    for (int h = 0; h < H; ++h) {
        const int s = tau.states[h];
        const int a = tau.actions[h];
        if (s < 0 || s >= mdp.layer_sizes[h])
            throw InvalidArgument("trajectory: state out of range at step " + std::to_string(h));
        if (a < 0 || a >= mdp.actions_at(h, s))
            throw InvalidArgument("trajectory: action out of range at step " + std::to_string(h));
        if (h + 1 < H) {
            bool supported = false;
            for (const auto& e : mdp.transition[h][s][a])
                if (e.next == tau.states[h + 1] && e.prob > 0.0) supported = true;
            if (!supported)
                throw InvalidArgument("trajectory: transition not in MDP support at step " +
                                      std::to_string(h));
        }
        sum += tau.step_rewards[h];
    }
    if (std::abs(sum - tau.total_reward) > 1e-9)
        throw InvalidArgument("trajectory: total_reward does not match step rewards");
}

void Policy::validate(const LayeredMdp& mdp) const {
    if ((int)table.size() != mdp.horizon)
        throw CoverageError("policy: must cover layers 0..H-1");
    for (int h = 0; h < mdp.horizon; ++h) {
        if ((int)table[h].size() != mdp.layer_sizes[h])
            throw CoverageError("policy: missing rows at layer " + std::to_string(h));
        for (int s = 0; s < mdp.layer_sizes[h]; ++s) {
            if ((int)table[h][s].size() != mdp.actions_at(h, s))
                throw CoverageError("policy: row size mismatch at " + mdp.state_name(h, s));
            double sum = 0.0;
            for (double p : table[h][s]) {
                if (p < 0.0) throw InvalidArgument("policy: negative probability at " +
                                                   mdp.state_name(h, s));
                sum += p;
            }
            if (std::abs(sum - 1.0) > kProbTol)
                throw InvalidArgument("policy: row at " + mdp.state_name(h, s) +
                                      " does not sum to 1");
        }
    }
}

Policy uniform_policy(const LayeredMdp& mdp) {
    Policy pi;
    pi.table.resize(mdp.horizon);
    for (int h = 0; h < mdp.horizon; ++h) {
        pi.table[h].resize(mdp.layer_sizes[h]);
        for (int s = 0; s < mdp.layer_sizes[h]; ++s) {
            const int na = mdp.actions_at(h, s);
            pi.table[h][s].assign(na, 1.0 / na);
        }
    }
    return pi;
}

Policy mix_with_uniform(const LayeredMdp& mdp, const Policy& base, double eps) {
    if (eps < 0.0 || eps > 1.0) throw InvalidArgument("mix_with_uniform: eps must be in [0,1]");
    Policy out = base;
    for (int h = 0; h < mdp.horizon; ++h)
        for (int s = 0; s < mdp.layer_sizes[h]; ++s) {
            const int na = mdp.actions_at(h, s);
            for (int a = 0; a < na; ++a)
                out.table[h][s][a] = (1.0 - eps) * base.table[h][s][a] + eps / na;
        }
    return out;
}

Policy random_policy(const LayeredMdp& mdp, Rng& rng, double logit_scale) {
    Policy pi = uniform_policy(mdp);
    for (int h = 0; h < mdp.horizon; ++h)
        for (int s = 0; s < mdp.layer_sizes[h]; ++s) {
            auto& row = pi.table[h][s];
            std::vector<double> z(row.size());
            for (auto& x : z) x = rng.uniform(-logit_scale, logit_scale);
            const double m = logsumexp(z);
            for (size_t a = 0; a < row.size(); ++a) row[a] = std::exp(z[a] - m);
        }
    return pi;
}

double OccupancyTable::state(int h, int s) const {
    double sum = 0.0;
    for (double p : pair[h][s]) sum += p;
    return sum;
}

PairTable PairTable::zeros(const LayeredMdp& mdp) {
    PairTable t;
    t.v.resize(mdp.horizon);
    for (int h = 0; h < mdp.horizon; ++h) {
        t.v[h].resize(mdp.layer_sizes[h]);
        for (int s = 0; s < mdp.layer_sizes[h]; ++s) t.v[h][s].assign(mdp.actions_at(h, s), 0.0);
    }
    return t;
}

bool PairTable::same_shape(const PairTable& o) const {
    if (v.size() != o.v.size()) return false;
    for (size_t h = 0; h < v.size(); ++h) {
        if (v[h].size() != o.v[h].size()) return false;
        for (size_t s = 0; s < v[h].size(); ++s)
            if (v[h][s].size() != o.v[h][s].size()) return false;
    }
    return true;
}

long PairTable::size() const {
    long n = 0;
    for (const auto& layer : v)
        for (const auto& row : layer) n += (long)row.size();
    return n;
}

double PairTable::max_abs() const {
    double m = 0.0;
    for_each([&](int, int, int, const double& x) { m = std::max(m, std::abs(x)); });
    return m;
}

double PairTable::l2_norm() const {
    double s = 0.0;
    for_each([&](int, int, int, const double& x) { s += x * x; });
    return std::sqrt(s);
}

void check_pair_shape(const LayeredMdp& mdp, const PairTable& t, const char* what) {
    bool ok = (int)t.v.size() == mdp.horizon;
    for (int h = 0; ok && h < mdp.horizon; ++h) {
        ok = (int)t.v[h].size() == mdp.layer_sizes[h];
        for (int s = 0; ok && s < mdp.layer_sizes[h]; ++s)
            ok = (int)t.v[h][s].size() == mdp.actions_at(h, s);
    }
    if (!ok) throw InvalidArgument(std::string(what) + ": table shape does not match the MDP");
}

double logsumexp(const std::vector<double>& x) {
    if (x.empty()) throw InvalidArgument("logsumexp: empty input");
    double m = x[0];
    for (double v : x) m = std::max(m, v);
    if (!std::isfinite(m)) return m;  // all -inf stays -inf; +inf propagates
    double s = 0.0;
    for (double v : x) s += std::exp(v - m);
    return m + std::log(s);
}

// ---------------------------------------------------------------------------
// Construction

LayeredMdp make_bandit(const std::vector<double>& rewards) {
    if (rewards.empty()) throw InvalidArgument("make_bandit: empty reward list");
    LayeredMdp m;
    m.horizon = 1;
    m.layer_sizes = {1, 1};
    m.action_counts = {{(int)rewards.size()}};
    m.transition.resize(1);
    m.transition[0].resize(1);
    m.transition[0][0].assign(rewards.size(), {TransitionEntry{0, 1.0}});
    m.reward = {{rewards}};
    m.rho = {1.0};
    m.deterministic = true;
    m.validate();
    return m;
}

LayeredMdp make_token_tree_shape(int branching, int horizon, long cap) {
    if (branching < 1 || horizon < 1)
        throw InvalidArgument("make_token_tree: branching and horizon must be >= 1");
    double leaves = 1.0;
    for (int h = 0; h < horizon; ++h) {
        leaves *= branching;
        if (leaves > (double)cap)
            throw SizeError("make_token_tree: " + std::to_string(branching) + "^" +
                            std::to_string(horizon) + " trajectories exceed the cap of " +
                            std::to_string(cap));
    }
    LayeredMdp m;
    m.horizon = horizon;
    m.layer_sizes.resize(horizon + 1);
    long width = 1;
    for (int h = 0; h <= horizon; ++h) {
        m.layer_sizes[h] = (int)width;
        if (h < horizon) width *= branching;
    }
    m.action_counts.resize(horizon);
    m.transition.resize(horizon);
    m.reward.resize(horizon);
    for (int h = 0; h < horizon; ++h) {
        const int ns = m.layer_sizes[h];
        m.action_counts[h].assign(ns, branching);
        m.transition[h].resize(ns);
        m.reward[h].resize(ns);
        for (int s = 0; s < ns; ++s) {
            m.transition[h][s].resize(branching);
            m.reward[h][s].assign(branching, 0.0);
            for (int a = 0; a < branching; ++a)
                m.transition[h][s][a] = {TransitionEntry{s * branching + a, 1.0}};
        }
    }
    m.rho = {1.0};
    m.deterministic = true;
    m.enumeration_cap = cap;
    m.validate();
    return m;
}

LayeredMdp make_token_tree_outcome(int branching, int horizon, std::vector<double> leaf_values,
                                   long cap) {
    LayeredMdp m = make_token_tree_shape(branching, horizon, cap);
    const long leaves = (long)m.layer_sizes[horizon - 1] * branching;
    if ((long)leaf_values.size() != leaves)
        throw InvalidArgument("make_token_tree: need exactly " + std::to_string(leaves) +
                              " leaf values");
    const int h = horizon - 1;
    for (int s = 0; s < m.layer_sizes[h]; ++s)
        for (int a = 0; a < branching; ++a) m.reward[h][s][a] = leaf_values[(long)s * branching + a];
    return m;
}

LayeredMdp make_token_tree_per_step(int branching, int horizon,
                                    const std::function<double(int, int, int)>& reward, long cap) {
    LayeredMdp m = make_token_tree_shape(branching, horizon, cap);
    for (int h = 0; h < horizon; ++h)
        for (int s = 0; s < m.layer_sizes[h]; ++s)
            for (int a = 0; a < branching; ++a) m.reward[h][s][a] = reward(h, s, a);
    return m;
}

LayeredMdp make_token_tree_random_outcome(int branching, int horizon, uint64_t seed, double p,
                                          long cap) {
    LayeredMdp m = make_token_tree_shape(branching, horizon, cap);
    Rng rng(seed);
    const int h = horizon - 1;
    for (int s = 0; s < m.layer_sizes[h]; ++s)
        for (int a = 0; a < branching; ++a) m.reward[h][s][a] = rng.bernoulli(p) ? 1.0 : 0.0;
    return m;
}

LayeredMdp make_token_tree_random_outcome_uniform(int branching, int horizon, uint64_t seed,
                                                  double lo, double hi, long cap) {
    LayeredMdp m = make_token_tree_shape(branching, horizon, cap);
    Rng rng(seed);
    const int h = horizon - 1;
    for (int s = 0; s < m.layer_sizes[h]; ++s)
        for (int a = 0; a < branching; ++a) m.reward[h][s][a] = rng.uniform(lo, hi);
    return m;
}

// ---------------------------------------------------------------------------
// Oracles

double transformed_reward(const LayeredMdp& mdp, double beta, const Policy& piref, int h, int s,
                          int a) {
    if (beta <= 0.0) throw InvalidArgument("transformed_reward: beta must be positive");
    const double p = piref.prob(h, s, a);
    if (!(p > 0.0))
        throw ReferenceSupportError("transformed_reward: piref(a|s) = 0 at " +
                                    mdp.state_name(h, s) + " action " + std::to_string(a));
    return mdp.reward[h][s][a] / beta + std::log(p);
}

std::vector<Trajectory> rollout(const LayeredMdp& mdp, const Policy& policy, Rng& rng, long n) {
    if (n < 1) throw InvalidArgument("rollout: n must be >= 1");
    policy.validate(mdp);
    std::vector<Trajectory> out;
    out.reserve(n);
    for (long i = 0; i < n; ++i) {
        Trajectory tau;
        tau.states.resize(mdp.horizon);
        tau.actions.resize(mdp.horizon);
        tau.step_rewards.resize(mdp.horizon);
        int s = rng.pick_discrete(mdp.rho);
        double logmu = 0.0;
        for (int h = 0; h < mdp.horizon; ++h) {
            const auto& row = policy.table[h][s];
            const int a = rng.pick_discrete(row);
            tau.states[h] = s;
            tau.actions[h] = a;
            tau.step_rewards[h] = mdp.reward[h][s][a];
            tau.total_reward += mdp.reward[h][s][a];
            logmu += std::log(row[a]);
            const auto& tr = mdp.transition[h][s][a];
            if (tr.size() == 1) {
                s = tr[0].next;
            } else {
                std::vector<double> w(tr.size());
                for (size_t k = 0; k < tr.size(); ++k) w[k] = tr[k].prob;
                s = tr[rng.pick_discrete(w)].next;
            }
        }
        tau.behavior_logprob = logmu;
        out.push_back(std::move(tau));
    }
    return out;
}

namespace {

void enumerate_rec(const LayeredMdp& mdp, const Policy& policy, int h, int s, double prob,
                   Trajectory& partial, std::vector<WeightedTrajectory>& out) {
    if (h == mdp.horizon) {
        WeightedTrajectory wt;
        wt.traj = partial;
        wt.prob = prob;
        out.push_back(std::move(wt));
        return;
    }
    for (int a = 0; a < mdp.actions_at(h, s); ++a) {
        const double pa = policy.table[h][s][a];
        if (!(pa > 0.0)) continue;
        partial.states[h] = s;
        partial.actions[h] = a;
        partial.step_rewards[h] = mdp.reward[h][s][a];
        partial.total_reward += mdp.reward[h][s][a];
        for (const auto& e : mdp.transition[h][s][a]) {
            if (!(e.prob > 0.0)) continue;
            enumerate_rec(mdp, policy, h + 1, e.next, prob * pa * e.prob, partial, out);
        }
        partial.total_reward -= mdp.reward[h][s][a];
    }
}

}  // namespace

std::vector<WeightedTrajectory> enumerate_trajectory_distribution(const LayeredMdp& mdp,
                                                                  const Policy& policy,
                                                                  long cap_override) {
    policy.validate(mdp);
    const long cap = cap_override > 0 ? cap_override : mdp.enumeration_cap;
    if (mdp.trajectory_count() > cap)
        throw SizeError("enumerate_trajectory_distribution: trajectory count exceeds cap of " +
                        std::to_string(cap));
    std::vector<WeightedTrajectory> out;
    Trajectory partial;
    partial.states.resize(mdp.horizon);
    partial.actions.resize(mdp.horizon);
    partial.step_rewards.resize(mdp.horizon);
    for (int s = 0; s < mdp.layer_sizes[0]; ++s) {
        if (!(mdp.rho[s] > 0.0)) continue;
        enumerate_rec(mdp, policy, 0, s, mdp.rho[s], partial, out);
    }
    return out;
}

OccupancyTable occupancy(const LayeredMdp& mdp, const Policy& policy) {
    policy.validate(mdp);
    OccupancyTable occ;
    occ.pair.resize(mdp.horizon);
    std::vector<double> d = mdp.rho;  // state occupancy at the current layer
    for (int h = 0; h < mdp.horizon; ++h) {
        occ.pair[h].resize(mdp.layer_sizes[h]);
        std::vector<double> next(mdp.layer_sizes[h + 1], 0.0);
        for (int s = 0; s < mdp.layer_sizes[h]; ++s) {
            const int na = mdp.actions_at(h, s);
            occ.pair[h][s].assign(na, 0.0);
            if (!(d[s] > 0.0)) continue;
            for (int a = 0; a < na; ++a) {
                const double dp = d[s] * policy.table[h][s][a];
                occ.pair[h][s][a] = dp;
                if (!(dp > 0.0)) continue;
                for (const auto& e : mdp.transition[h][s][a]) next[e.next] += dp * e.prob;
            }
        }
        d = std::move(next);
    }
    return occ;
}

double j_beta(const LayeredMdp& mdp, const Policy& policy, double beta, const Policy& piref,
              std::string* diag) {
    policy.validate(mdp);
    piref.validate(mdp);
    // v(s_h) = sum_a pi(a|s) [ R_beta(s,a) + E v(s') - log pi(a|s) ], v(terminal) = 0
    std::vector<double> v(mdp.layer_sizes[mdp.horizon], 0.0);
    for (int h = mdp.horizon - 1; h >= 0; --h) {
        std::vector<double> prev(mdp.layer_sizes[h], 0.0);
        for (int s = 0; s < mdp.layer_sizes[h]; ++s) {
            double acc = 0.0;
            for (int a = 0; a < mdp.actions_at(h, s); ++a) {
                const double pa = policy.table[h][s][a];
                if (!(pa > 0.0)) continue;
                const double pref = piref.table[h][s][a];
                if (!(pref > 0.0)) {
                    if (diag)
                        *diag = "pi puts mass outside piref support at " + mdp.state_name(h, s) +
                                " action " + std::to_string(a);
                    return -std::numeric_limits<double>::infinity();
                }
                double ev = 0.0;
                for (const auto& e : mdp.transition[h][s][a]) ev += e.prob * v[e.next];
                acc += pa * (mdp.reward[h][s][a] / beta + std::log(pref) + ev - std::log(pa));
            }
            prev[s] = acc;
        }
        v = std::move(prev);
    }
    double j = 0.0;
    for (int s = 0; s < mdp.layer_sizes[0]; ++s) j += mdp.rho[s] * v[s];
    return beta * j;
}

double kl_to_ref(const LayeredMdp& mdp, const Policy& policy, const Policy& piref) {
    std::vector<double> v(mdp.layer_sizes[mdp.horizon], 0.0);
    for (int h = mdp.horizon - 1; h >= 0; --h) {
        std::vector<double> prev(mdp.layer_sizes[h], 0.0);
        for (int s = 0; s < mdp.layer_sizes[h]; ++s) {
            double acc = 0.0;
            for (int a = 0; a < mdp.actions_at(h, s); ++a) {
                const double pa = policy.table[h][s][a];
                if (!(pa > 0.0)) continue;
                const double pref = piref.table[h][s][a];
                double ev = 0.0;
                for (const auto& e : mdp.transition[h][s][a]) ev += e.prob * v[e.next];
                if (!(pref > 0.0)) return std::numeric_limits<double>::infinity();
                acc += pa * (std::log(pa) - std::log(pref) + ev);
            }
            prev[s] = acc;
        }
        v = std::move(prev);
    }
    double kl = 0.0;
    for (int s = 0; s < mdp.layer_sizes[0]; ++s) kl += mdp.rho[s] * v[s];
    return kl;
}

PairTable soft_optimal_q(const LayeredMdp& mdp, double beta, const Policy& piref) {
    piref.validate(mdp);
    PairTable q = PairTable::zeros(mdp);
    std::vector<double> vnext(mdp.layer_sizes[mdp.horizon], 0.0);
    for (int h = mdp.horizon - 1; h >= 0; --h) {
        std::vector<double> vcur(mdp.layer_sizes[h], 0.0);
        for (int s = 0; s < mdp.layer_sizes[h]; ++s) {
            std::vector<double> row(mdp.actions_at(h, s));
            for (int a = 0; a < mdp.actions_at(h, s); ++a) {
                double ev = 0.0;
                for (const auto& e : mdp.transition[h][s][a]) ev += e.prob * vnext[e.next];
                row[a] = transformed_reward(mdp, beta, piref, h, s, a) + ev;
                q.at(h, s, a) = row[a];
            }
            vcur[s] = logsumexp(row);
        }
        vnext = std::move(vcur);
    }
    return q;
}

PairTable policy_soft_q(const LayeredMdp& mdp, double beta, const Policy& piref,
                        const Policy& pi) {
    pi.validate(mdp);
    PairTable q = PairTable::zeros(mdp);
    // v^pi(s) = sum_a pi(a|s) [ q(s,a) - log pi(a|s) ]
    std::vector<double> vnext(mdp.layer_sizes[mdp.horizon], 0.0);
    for (int h = mdp.horizon - 1; h >= 0; --h) {
        std::vector<double> vcur(mdp.layer_sizes[h], 0.0);
        for (int s = 0; s < mdp.layer_sizes[h]; ++s) {
            double v = 0.0;
            for (int a = 0; a < mdp.actions_at(h, s); ++a) {
                double ev = 0.0;
                for (const auto& e : mdp.transition[h][s][a]) ev += e.prob * vnext[e.next];
                const double qa = transformed_reward(mdp, beta, piref, h, s, a) + ev;
                q.at(h, s, a) = qa;
                const double pa = pi.table[h][s][a];
                if (pa > 0.0) v += pa * (qa - std::log(pa));
            }
            vcur[s] = v;
        }
        vnext = std::move(vcur);
    }
    return q;
}

double soft_bellman_apply(const LayeredMdp& mdp, double beta, const Policy& piref,
                          const PairTable& q, int h, int s, int a) {
    check_pair_shape(mdp, q, "soft_bellman_apply");
    double ev = 0.0;
    if (h + 1 < mdp.horizon) {
        for (const auto& e : mdp.transition[h][s][a]) {
            const auto& row = q.v[h + 1][e.next];
            ev += e.prob * logsumexp(row);
        }
    }
    return transformed_reward(mdp, beta, piref, h, s, a) + ev;
}

double soft_bellman_apply(const LayeredMdp& mdp, double beta, const Policy& piref,
                          const PairTable& q, const Policy& pi, int h, int s, int a) {
    check_pair_shape(mdp, q, "soft_bellman_apply");
    double ev = 0.0;
    if (h + 1 < mdp.horizon) {
        for (const auto& e : mdp.transition[h][s][a]) {
            double inner = 0.0;
            for (int b = 0; b < mdp.actions_at(h + 1, e.next); ++b) {
                const double pb = pi.table[h + 1][e.next][b];
                if (pb > 0.0) inner += pb * (q.at(h + 1, e.next, b) - std::log(pb));
            }
            ev += e.prob * inner;
        }
    }
    return transformed_reward(mdp, beta, piref, h, s, a) + ev;
}

}  // namespace softq
