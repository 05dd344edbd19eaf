#include "softq/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace softq {

namespace {

/// Per-state values and per-pair log-policies of a model, computed once per
/// loss evaluation so the per-trajectory work is table lookups.
struct ModelView {
    std::vector<std::vector<double>> value;  // [h][s]
    PairTable logpi;
    PairTable prob;

    ModelView(const LayeredMdp& mdp, const TabularLogitModel& model) {
        check_pair_shape(mdp, model.logits, "loss");
        value.resize(mdp.horizon);
        logpi = PairTable::zeros(mdp);
        prob = PairTable::zeros(mdp);
        for (int h = 0; h < mdp.horizon; ++h) {
            value[h].resize(mdp.layer_sizes[h]);
            for (int s = 0; s < mdp.layer_sizes[h]; ++s) {
                const double v = logsumexp(model.logits.v[h][s]);
                value[h][s] = v;
                for (int a = 0; a < mdp.actions_at(h, s); ++a) {
                    const double lp = model.logits.at(h, s, a) - v;
                    logpi.at(h, s, a) = lp;
                    prob.at(h, s, a) = std::exp(lp);
                }
            }
        }
    }
};

void require_deterministic(const LayeredMdp& mdp, const char* what) {
    if (!mdp.deterministic)
        throw DeterminismError(std::string(what) + ": requires a deterministic MDP");
}

void require_nonempty(const TrajectoryDataset& data, const char* what) {
    if (data.empty()) throw InvalidArgument(std::string(what) + ": empty dataset");
}

void require_per_step(const TrajectoryDataset& data, const char* what) {
    if (!data.per_step_rewards_available)
        throw RewardGranularityError(std::string(what) +
                                     ": per-step rewards are unavailable on this dataset");
}

double log_piref_at(const Policy& piref, const Trajectory& tau, int h, const char* what) {
    const double p = piref.table[h][tau.states[h]][tau.actions[h]];
    if (!(p > 0.0))
        throw ReferenceSupportError(std::string(what) + ": piref vanishes along a trajectory");
    return std::log(p);
}

/// Adds c * (e_{a_h} - pi(.|s_h)) to the gradient row at step h of tau.
void add_softmax_row(GradientTable& g, const ModelView& view, const LayeredMdp& mdp,
                     const Trajectory& tau, int h, double c) {
    const int s = tau.states[h];
    for (int a = 0; a < mdp.actions_at(h, s); ++a)
        g.v[h][s][a] += c * ((a == tau.actions[h] ? 1.0 : 0.0) - view.prob.at(h, s, a));
}

/// Suffix reward sums in logit units. With outcome-only data every suffix
/// equals the total (all intermediate rewards are zero by construction).
std::vector<double> reward_suffix(const Trajectory& tau, double beta, bool per_step) {
    const int H = tau.length();
    std::vector<double> suf(H);
    if (per_step) {
        double acc = 0.0;
        for (int h = H - 1; h >= 0; --h) {
            acc += tau.step_rewards[h];
            suf[h] = acc / beta;
        }
    } else {
        for (int h = 0; h < H; ++h) suf[h] = tau.total_reward / beta;
    }
    return suf;
}

}  // namespace

void TrajectoryDataset::validate(const LayeredMdp& mdp) const {
    for (const auto& tau : items) validate_trajectory(mdp, tau);
    std::vector<char> seen(items.size(), 0);
    for (const auto& g : groups)
        for (int idx : g) {
            if (idx < 0 || idx >= (int)items.size())
                throw InvalidArgument("dataset: group index out of range");
            if (seen[idx]) throw InvalidArgument("dataset: group indices overlap");
            seen[idx] = 1;
        }
}

VTable VTable::zeros(const LayeredMdp& mdp) {
    VTable t;
    t.v.resize(mdp.horizon);
    for (int h = 0; h < mdp.horizon; ++h) t.v[h].assign(mdp.layer_sizes[h], 0.0);
    return t;
}

VTable VTable::from_model(const LayeredMdp& mdp, const TabularLogitModel& model) {
    VTable t = zeros(mdp);
    for (int h = 0; h < mdp.horizon; ++h)
        for (int s = 0; s < mdp.layer_sizes[h]; ++s) t.v[h][s] = model.value(h, s);
    return t;
}

double VTable::l2_norm() const {
    double s = 0.0;
    for (const auto& layer : v)
        for (double x : layer) s += x * x;
    return std::sqrt(s);
}

std::string loss_kind_name(LossKind kind) {
    switch (kind) {
        case LossKind::Tbrm: return "tbrm";
        case LossKind::Brm: return "brm";
        case LossKind::TbrmIter: return "tbrm-iter";
        case LossKind::SqlS: return "sql-s";
        case LossKind::SqlM: return "sql-m";
        case LossKind::SqlTildeS: return "sql-ts";
        case LossKind::SqlTildeM: return "sql-tm";
        case LossKind::SacS: return "sac-s";
        case LossKind::SacM: return "sac-m";
        case LossKind::DaaPt: return "daa-pt";
        case LossKind::DaaPair: return "daa-pair";
    }
    throw InvalidArgument("loss_kind_name: unknown kind");
}

LossKind parse_loss_kind(const std::string& name) {
    static const std::map<std::string, LossKind> table = {
        {"tbrm", LossKind::Tbrm},        {"brm", LossKind::Brm},
        {"tbrm-iter", LossKind::TbrmIter}, {"sql-s", LossKind::SqlS},
        {"sql-m", LossKind::SqlM},       {"sql-ts", LossKind::SqlTildeS},
        {"sql-tm", LossKind::SqlTildeM}, {"sac-s", LossKind::SacS},
        {"sac-m", LossKind::SacM},       {"daa-pt", LossKind::DaaPt},
        {"daa-pair", LossKind::DaaPair},
    };
    auto it = table.find(name);
    if (it == table.end()) throw ConfigError("unknown loss kind: " + name);
    return it->second;
}

bool loss_is_iterative(LossKind kind) {
    switch (kind) {
        case LossKind::TbrmIter:
        case LossKind::SqlS:
        case LossKind::SqlM:
        case LossKind::SqlTildeS:
        case LossKind::SqlTildeM: return true;
        default: return false;
    }
}

bool loss_needs_per_step_rewards(LossKind kind) {
    switch (kind) {
        case LossKind::Brm:
        case LossKind::SqlS:
        case LossKind::SqlTildeS:
        case LossKind::SqlTildeM:
        case LossKind::SacS: return true;
        default: return false;
    }
}

bool loss_needs_grouping(LossKind kind) {
    return kind == LossKind::DaaPt || kind == LossKind::DaaPair;
}

LossResult tbrm_loss(const TabularLogitModel& model, const LayeredMdp& mdp, double beta,
                     const Policy& piref, const TrajectoryDataset& data) {
    require_deterministic(mdp, "tbrm_loss");
    require_nonempty(data, "tbrm_loss");
    ModelView view(mdp, model);
    LossResult out;
    out.grad = PairTable::zeros(mdp);
    const double inv_n = 1.0 / (double)data.size();
    for (const auto& tau : data.items) {
        double e = model.logits.at(0, tau.states[0], tau.actions[0]) - tau.total_reward / beta;
        for (int h = 0; h < mdp.horizon; ++h) {
            e -= log_piref_at(piref, tau, h, "tbrm_loss");
            if (h >= 1) e += view.logpi.at(h, tau.states[h], tau.actions[h]);
        }
        out.value += inv_n * e * e;
        const double c = 2.0 * inv_n * e;
        out.grad.v[0][tau.states[0]][tau.actions[0]] += c;
        for (int h = 1; h < mdp.horizon; ++h) add_softmax_row(out.grad, view, mdp, tau, h, c);
    }
    return out;
}

LossResult brm_loss(const TabularLogitModel& model, const LayeredMdp& mdp, double beta,
                    const Policy& piref, const TrajectoryDataset& data) {
    require_deterministic(mdp, "brm_loss");
    require_nonempty(data, "brm_loss");
    require_per_step(data, "brm_loss");
    ModelView view(mdp, model);
    LossResult out;
    out.grad = PairTable::zeros(mdp);
    const double inv_n = 1.0 / (double)data.size();
    for (const auto& tau : data.items) {
        for (int h = 0; h < mdp.horizon; ++h) {
            const int s = tau.states[h];
            const int a = tau.actions[h];
            double e = model.logits.at(h, s, a) - tau.step_rewards[h] / beta -
                       log_piref_at(piref, tau, h, "brm_loss");
            if (h + 1 < mdp.horizon) e -= view.value[h + 1][tau.states[h + 1]];
            out.value += inv_n * e * e;
            const double c = 2.0 * inv_n * e;
            out.grad.v[h][s][a] += c;
            if (h + 1 < mdp.horizon) {
                const int sn = tau.states[h + 1];
                for (int b = 0; b < mdp.actions_at(h + 1, sn); ++b)
                    out.grad.v[h + 1][sn][b] -= c * view.prob.at(h + 1, sn, b);
            }
        }
    }
    return out;
}

LossResult iterative_tbrm_loss(const TabularLogitModel& model, const TabularLogitModel& target,
                               const LayeredMdp& mdp, double beta, const Policy& piref,
                               const TrajectoryDataset& data) {
    require_deterministic(mdp, "iterative_tbrm_loss");
    require_nonempty(data, "iterative_tbrm_loss");
    ModelView view(mdp, model);
    check_pair_shape(mdp, target.logits, "iterative_tbrm_loss target");
    LossResult out;
    out.grad = PairTable::zeros(mdp);
    const double inv_n = 1.0 / (double)data.size();
    for (const auto& tau : data.items) {
        double e = target.value(0, tau.states[0]) - tau.total_reward / beta;
        for (int h = 0; h < mdp.horizon; ++h)
            e += view.logpi.at(h, tau.states[h], tau.actions[h]) -
                 log_piref_at(piref, tau, h, "iterative_tbrm_loss");
        out.value += inv_n * e * e;
        const double c = 2.0 * inv_n * e;
        for (int h = 0; h < mdp.horizon; ++h) add_softmax_row(out.grad, view, mdp, tau, h, c);
    }
    return out;
}

LossResult sql_loss(SqlVariant variant, const TabularLogitModel& model,
                    const TabularLogitModel& target, const LayeredMdp& mdp, double beta,
                    const Policy& piref, const TrajectoryDataset& data) {
    require_deterministic(mdp, "sql_loss");
    require_nonempty(data, "sql_loss");
    if (variant == SqlVariant::S || variant == SqlVariant::TildeS || variant == SqlVariant::TildeM)
        require_per_step(data, "sql_loss");
    ModelView view(mdp, model);
    check_pair_shape(mdp, target.logits, "sql_loss target");
    ModelView tview(mdp, target);

    LossResult out;
    out.grad = PairTable::zeros(mdp);
    const double inv_n = 1.0 / (double)data.size();
    const int H = mdp.horizon;

    for (const auto& tau : data.items) {
        const std::vector<double> rsuf =
            reward_suffix(tau, beta, data.per_step_rewards_available);
        switch (variant) {
            case SqlVariant::S: {
                for (int h = 0; h < H; ++h) {
                    double e = tview.value[h][tau.states[h]] - tau.step_rewards[h] / beta +
                               view.logpi.at(h, tau.states[h], tau.actions[h]) -
                               log_piref_at(piref, tau, h, "sql_loss");
                    if (h + 1 < H) e -= tview.value[h + 1][tau.states[h + 1]];
                    out.value += inv_n * e * e;
                    add_softmax_row(out.grad, view, mdp, tau, h, 2.0 * inv_n * e);
                }
                break;
            }
            case SqlVariant::M: {
                // log pi/piref suffix sums under the live model
                std::vector<double> lsuf(H + 1, 0.0);
                for (int h = H - 1; h >= 0; --h)
                    lsuf[h] = lsuf[h + 1] + view.logpi.at(h, tau.states[h], tau.actions[h]) -
                              log_piref_at(piref, tau, h, "sql_loss");
                double coeff = 0.0;  // running sum of 2*e_h for h <= h'
                std::vector<double> errs(H);
                for (int h = 0; h < H; ++h) {
                    errs[h] = tview.value[h][tau.states[h]] - rsuf[h] + lsuf[h];
                    out.value += inv_n * errs[h] * errs[h];
                }
                for (int h = 0; h < H; ++h) {
                    coeff += 2.0 * inv_n * errs[h];
                    add_softmax_row(out.grad, view, mdp, tau, h, coeff);
                }
                break;
            }
            case SqlVariant::TildeS: {
                for (int h = 0; h < H; ++h) {
                    double e = model.logits.at(h, tau.states[h], tau.actions[h]) -
                               tau.step_rewards[h] / beta -
                               log_piref_at(piref, tau, h, "sql_loss");
                    if (h + 1 < H) e -= tview.value[h + 1][tau.states[h + 1]];
                    out.value += inv_n * e * e;
                    out.grad.v[h][tau.states[h]][tau.actions[h]] += 2.0 * inv_n * e;
                }
                break;
            }
            case SqlVariant::TildeM: {
                // frozen-model log-ratio suffixes over steps h' > h
                std::vector<double> tlsuf(H + 1, 0.0);
                for (int h = H - 1; h >= 0; --h)
                    tlsuf[h] = tlsuf[h + 1] + tview.logpi.at(h, tau.states[h], tau.actions[h]) -
                               log_piref_at(piref, tau, h, "sql_loss");
                for (int h = 0; h < H; ++h) {
                    double e = model.logits.at(h, tau.states[h], tau.actions[h]) - rsuf[h] -
                               log_piref_at(piref, tau, h, "sql_loss") + tlsuf[h + 1];
                    out.value += inv_n * e * e;
                    out.grad.v[h][tau.states[h]][tau.actions[h]] += 2.0 * inv_n * e;
                }
                break;
            }
        }
    }
    return out;
}

SacLossResult sac_loss(bool multi_step, const TabularLogitModel& model, const VTable& vtable,
                       const LayeredMdp& mdp, double beta, const Policy& piref,
                       const TrajectoryDataset& data) {
    require_deterministic(mdp, "sac_loss");
    require_nonempty(data, "sac_loss");
    if (!multi_step) require_per_step(data, "sac_loss");
    if ((int)vtable.v.size() != mdp.horizon)
        throw InvalidArgument("sac_loss: V table must cover layers 0..H-1");
    for (int h = 0; h < mdp.horizon; ++h)
        if ((int)vtable.v[h].size() != mdp.layer_sizes[h])
            throw InvalidArgument("sac_loss: V table misses entries at layer " +
                                  std::to_string(h));
    ModelView view(mdp, model);
    SacLossResult out;
    out.theta_grad = PairTable::zeros(mdp);
    out.v_grad = VTable::zeros(mdp);
    const double inv_n = 1.0 / (double)data.size();
    const int H = mdp.horizon;
    for (const auto& tau : data.items) {
        if (!multi_step) {
            for (int h = 0; h < H; ++h) {
                double e = vtable.at(h, tau.states[h]) - tau.step_rewards[h] / beta +
                           view.logpi.at(h, tau.states[h], tau.actions[h]) -
                           log_piref_at(piref, tau, h, "sac_loss");
                if (h + 1 < H) e -= vtable.at(h + 1, tau.states[h + 1]);
                out.value += inv_n * e * e;
                const double c = 2.0 * inv_n * e;
                add_softmax_row(out.theta_grad, view, mdp, tau, h, c);
                out.v_grad.at(h, tau.states[h]) += c;
                if (h + 1 < H) out.v_grad.at(h + 1, tau.states[h + 1]) -= c;
            }
        } else {
            const std::vector<double> rsuf =
                reward_suffix(tau, beta, data.per_step_rewards_available);
            std::vector<double> lsuf(H + 1, 0.0);
            for (int h = H - 1; h >= 0; --h)
                lsuf[h] = lsuf[h + 1] + view.logpi.at(h, tau.states[h], tau.actions[h]) -
                          log_piref_at(piref, tau, h, "sac_loss");
            std::vector<double> errs(H);
            for (int h = 0; h < H; ++h) {
                errs[h] = vtable.at(h, tau.states[h]) - rsuf[h] + lsuf[h];
                out.value += inv_n * errs[h] * errs[h];
                out.v_grad.at(h, tau.states[h]) += 2.0 * inv_n * errs[h];
            }
            double coeff = 0.0;
            for (int h = 0; h < H; ++h) {
                coeff += 2.0 * inv_n * errs[h];
                add_softmax_row(out.theta_grad, view, mdp, tau, h, coeff);
            }
        }
    }
    return out;
}

double estimate_v_star(const std::vector<Trajectory>& group, double beta, VStarMode mode) {
    if (group.empty()) throw InvalidArgument("estimate_v_star: empty group");
    const int s0 = group.front().states.empty() ? -1 : group.front().states[0];
    std::vector<double> scaled(group.size());
    for (size_t i = 0; i < group.size(); ++i) {
        if (group[i].states.empty() || group[i].states[0] != s0)
            throw InvalidArgument("estimate_v_star: group members must share the initial state");
        scaled[i] = group[i].total_reward / beta;
    }
    double lse = logsumexp(scaled);
    if (mode == VStarMode::Mean) lse -= std::log((double)group.size());
    return beta * lse;
}

LossResult daa_pt_loss(const TabularLogitModel& model, const LayeredMdp& mdp, double beta,
                       const Policy& piref, const TrajectoryDataset& data, VStarMode v_mode,
                       const VTable* exact_v) {
    require_deterministic(mdp, "daa_pt_loss");
    require_nonempty(data, "daa_pt_loss");
    if (data.groups.empty()) throw InvalidArgument("daa_pt_loss: dataset has no grouping");
    ModelView view(mdp, model);
    LossResult out;
    out.grad = PairTable::zeros(mdp);
    long count = 0;
    for (const auto& g : data.groups) count += (long)g.size();
    if (count == 0) throw InvalidArgument("daa_pt_loss: grouping covers no trajectories");
    const double inv_n = 1.0 / (double)count;
    const int H = mdp.horizon;
    for (const auto& g : data.groups) {
        if (g.empty()) continue;
        double vhat;  // logit units
        if (exact_v != nullptr) {
            vhat = exact_v->at(0, data.items[g.front()].states[0]);
        } else {
            std::vector<Trajectory> members;
            members.reserve(g.size());
            for (int idx : g) members.push_back(data.items[idx]);
            vhat = estimate_v_star(members, beta, v_mode) / beta;
        }
        for (int idx : g) {
            const Trajectory& tau = data.items[idx];
            double e = vhat - tau.total_reward / beta;
            for (int h = 0; h < H; ++h)
                e += view.logpi.at(h, tau.states[h], tau.actions[h]) -
                     log_piref_at(piref, tau, h, "daa_pt_loss");
            out.value += inv_n * e * e;
            const double c = 2.0 * inv_n * e;
            for (int h = 0; h < H; ++h) add_softmax_row(out.grad, view, mdp, tau, h, c);
        }
    }
    return out;
}

LossResult daa_pair_loss(const TabularLogitModel& model, const LayeredMdp& mdp, double beta,
                         const Policy& piref,
                         const std::vector<std::pair<Trajectory, Trajectory>>& pairs) {
    require_deterministic(mdp, "daa_pair_loss");
    if (pairs.empty()) throw InvalidArgument("daa_pair_loss: empty pair list");
    ModelView view(mdp, model);
    LossResult out;
    out.grad = PairTable::zeros(mdp);
    const double inv_n = 1.0 / (double)pairs.size();
    const int H = mdp.horizon;
    for (const auto& [lhs, rhs] : pairs) {
        if (lhs.states.empty() || rhs.states.empty() || lhs.states[0] != rhs.states[0])
            throw InvalidArgument("daa_pair_loss: pair members must share the initial state");
        double e = -lhs.total_reward / beta + rhs.total_reward / beta;
        for (int h = 0; h < H; ++h) {
            e += view.logpi.at(h, lhs.states[h], lhs.actions[h]) -
                 log_piref_at(piref, lhs, h, "daa_pair_loss");
            e -= view.logpi.at(h, rhs.states[h], rhs.actions[h]) -
                 log_piref_at(piref, rhs, h, "daa_pair_loss");
        }
        out.value += inv_n * e * e;
        const double c = 2.0 * inv_n * e;
        for (int h = 0; h < H; ++h) {
            add_softmax_row(out.grad, view, mdp, lhs, h, c);
            add_softmax_row(out.grad, view, mdp, rhs, h, -c);
        }
    }
    return out;
}

std::vector<std::pair<Trajectory, Trajectory>> pairs_from_groups(const TrajectoryDataset& data) {
    std::vector<std::pair<Trajectory, Trajectory>> pairs;
    for (const auto& g : data.groups)
        for (size_t i = 0; i + 1 < g.size(); i += 2)
            pairs.emplace_back(data.items[g[i]], data.items[g[i + 1]]);
    return pairs;
}

}  // namespace softq
