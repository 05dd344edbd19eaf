#include "softq/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

namespace softq {

namespace {

void check_finite(double g) {
    if (!std::isfinite(g))
        throw InvalidArgument("optimizer_step: non-finite gradient; aborting the run");
}

void step_one(const OptimizerCfg& cfg, double& p, double g, double& m, double& v, long t) {
    check_finite(g);
    switch (cfg.kind) {
        case OptimizerKind::Gd:
            p -= cfg.step * g;
            break;
        case OptimizerKind::Momentum:
            m = cfg.momentum * m + g;
            p -= cfg.step * m;
            break;
        case OptimizerKind::Adam: {
            m = cfg.b1 * m + (1.0 - cfg.b1) * g;
            v = cfg.b2 * v + (1.0 - cfg.b2) * g * g;
            const double mhat = m / (1.0 - std::pow(cfg.b1, (double)t));
            const double vhat = v / (1.0 - std::pow(cfg.b2, (double)t));
            p -= cfg.step * mhat / (std::sqrt(vhat) + cfg.eps);
            break;
        }
    }
}

}  // namespace

void optimizer_step(const OptimizerCfg& cfg, PairTable& params, const PairTable& grad,
                    OptimizerState& state) {
    if (!params.same_shape(grad)) throw InvalidArgument("optimizer_step: shape mismatch");
    if (!state.initialized) {
        state.m = params;
        state.v = params;
        state.m.for_each([](int, int, int, double& x) { x = 0.0; });
        state.v.for_each([](int, int, int, double& x) { x = 0.0; });
        state.t = 0;
        state.initialized = true;
    }
    ++state.t;
    for (size_t h = 0; h < params.v.size(); ++h)
        for (size_t s = 0; s < params.v[h].size(); ++s)
            for (size_t a = 0; a < params.v[h][s].size(); ++a)
                step_one(cfg, params.v[h][s][a], grad.v[h][s][a], state.m.v[h][s][a],
                         state.v.v[h][s][a], state.t);
}

void optimizer_step(const OptimizerCfg& cfg, VTable& params, const VTable& grad,
                    VOptimizerState& state) {
    if (!state.initialized) {
        state.m = params;
        state.v = params;
        for (auto& layer : state.m.v) std::fill(layer.begin(), layer.end(), 0.0);
        for (auto& layer : state.v.v) std::fill(layer.begin(), layer.end(), 0.0);
        state.t = 0;
        state.initialized = true;
    }
    ++state.t;
    for (size_t h = 0; h < params.v.size(); ++h)
        for (size_t s = 0; s < params.v[h].size(); ++s)
            step_one(cfg, params.v[h][s], grad.v[h][s], state.m.v[h][s], state.v.v[h][s],
                     state.t);
}

void TrainConfig::validate() const {
    if (beta <= 0.0) throw ConfigError("train config: beta must be positive");
    if (iters < 0) throw ConfigError("train config: iterations must be >= 0");
    if (prompt_batch < 1 || rollouts_per_prompt < 1 || grad_steps < 1)
        throw ConfigError("train config: batch, rollouts and grad steps must be >= 1");
    if (optimizer.step <= 0.0) throw ConfigError("train config: optimizer step must be positive");
    if (behavior.kind == BehaviorKind::EpsMix && (behavior.eps < 0.0 || behavior.eps > 1.0))
        throw ConfigError("train config: eps must be in [0, 1]");
    if (target_refresh_period < 1)
        throw ConfigError("train config: target refresh period must be >= 1");
    if (offline_batch < 0) throw ConfigError("train config: offline batch must be >= 0");
}

Trajectory rollout_from(const LayeredMdp& mdp, const Policy& policy, Rng& rng, int s0) {
    Trajectory tau;
    tau.states.resize(mdp.horizon);
    tau.actions.resize(mdp.horizon);
    tau.step_rewards.resize(mdp.horizon);
    int s = s0;
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
    return tau;
}

TrajectoryDataset collect_grouped_rollouts(const LayeredMdp& mdp, const Policy& behavior,
                                           Rng& rng, int prompts, int rollouts_per_prompt) {
    TrajectoryDataset data;
    data.per_step_rewards_available = !mdp.outcome_only_rewards();
    for (int p = 0; p < prompts; ++p) {
        const int s0 = rng.pick_discrete(mdp.rho);
        std::vector<int> group;
        for (int i = 0; i < rollouts_per_prompt; ++i) {
            group.push_back((int)data.items.size());
            data.items.push_back(rollout_from(mdp, behavior, rng, s0));
        }
        data.groups.push_back(std::move(group));
    }
    return data;
}

namespace {

struct LossState {
    TabularLogitModel target;     // iterative losses
    VTable vtable;                // sac
    VOptimizerState v_opt_state;
    bool has_target = false;
    bool has_vtable = false;
};

/// Evaluates the configured loss and drops the theta gradient in `out`;
/// sac additionally updates phi through its own optimizer.
double loss_and_theta_grad(const TrainConfig& cfg, const TabularLogitModel& model,
                           LossState& state, const LayeredMdp& mdp, const Policy& piref,
                           const TrajectoryDataset& data, GradientTable& grad_out,
                           bool update_vtable) {
    switch (cfg.loss) {
        case LossKind::Tbrm: {
            LossResult r = tbrm_loss(model, mdp, cfg.beta, piref, data);
            grad_out = std::move(r.grad);
            return r.value;
        }
        case LossKind::Brm: {
            LossResult r = brm_loss(model, mdp, cfg.beta, piref, data);
            grad_out = std::move(r.grad);
            return r.value;
        }
        case LossKind::TbrmIter: {
            LossResult r = iterative_tbrm_loss(model, state.target, mdp, cfg.beta, piref, data);
            grad_out = std::move(r.grad);
            return r.value;
        }
        case LossKind::SqlS:
        case LossKind::SqlM:
        case LossKind::SqlTildeS:
        case LossKind::SqlTildeM: {
            SqlVariant v = cfg.loss == LossKind::SqlS       ? SqlVariant::S
                           : cfg.loss == LossKind::SqlM     ? SqlVariant::M
                           : cfg.loss == LossKind::SqlTildeS ? SqlVariant::TildeS
                                                             : SqlVariant::TildeM;
            LossResult r = sql_loss(v, model, state.target, mdp, cfg.beta, piref, data);
            grad_out = std::move(r.grad);
            return r.value;
        }
        case LossKind::SacS:
        case LossKind::SacM: {
            SacLossResult r = sac_loss(cfg.loss == LossKind::SacM, model, state.vtable, mdp,
                                       cfg.beta, piref, data);
            grad_out = std::move(r.theta_grad);
            if (update_vtable)
                optimizer_step(cfg.optimizer, state.vtable, r.v_grad, state.v_opt_state);
            return r.value;
        }
        case LossKind::DaaPt: {
            LossResult r = daa_pt_loss(model, mdp, cfg.beta, piref, data, cfg.v_mode);
            grad_out = std::move(r.grad);
            return r.value;
        }
        case LossKind::DaaPair: {
            LossResult r = daa_pair_loss(model, mdp, cfg.beta, piref, pairs_from_groups(data));
            grad_out = std::move(r.grad);
            return r.value;
        }
    }
    throw InvalidArgument("unknown loss kind");
}

void check_compatibility(const LayeredMdp& mdp, const TrainConfig& cfg, bool online) {
    if (!mdp.deterministic)
        throw DeterminismError("train: trajectory-level losses require a deterministic MDP");
    if (loss_needs_per_step_rewards(cfg.loss) && mdp.outcome_only_rewards())
        throw RewardGranularityError("train: loss '" + loss_kind_name(cfg.loss) +
                                     "' needs per-step rewards but the environment carries "
                                     "outcome-only rewards");
    if (online && cfg.loss == LossKind::DaaPair && cfg.rollouts_per_prompt < 2)
        throw ConfigError("train: daa-pair needs at least 2 rollouts per prompt");
}

struct OracleValues {
    Policy pi_star;
    double j_star = 0.0;
    double j_ref = 0.0;
};

OracleValues compute_oracle(const LayeredMdp& mdp, double beta, const Policy& piref) {
    OracleValues o;
    TabularLogitModel star = soft_value_iteration(mdp, beta, piref);
    o.pi_star = star.policy(mdp);
    o.j_star = j_beta(mdp, o.pi_star, beta, piref);
    o.j_ref = j_beta(mdp, piref, beta, piref);
    return o;
}

TrainRecord make_record(long iter, double loss, double grad_norm, const LayeredMdp& mdp,
                        const TrainConfig& cfg, const Policy& piref,
                        const TabularLogitModel& model, const OracleValues& oracle,
                        double wall_ms) {
    TrainRecord rec;
    rec.iter = iter;
    rec.loss = loss;
    rec.grad_norm = grad_norm;
    Policy pi = model.policy(mdp);
    rec.j_beta = j_beta(mdp, pi, cfg.beta, piref);
    rec.subopt = oracle.j_star - rec.j_beta;
    rec.kl_ref = kl_to_ref(mdp, pi, piref);
    rec.wall_ms = cfg.timing ? wall_ms : 0.0;
    return rec;
}

}  // namespace

TrainResult train(const LayeredMdp& mdp, const Policy& piref, const TrainConfig& cfg) {
    cfg.validate();
    piref.validate(mdp);
    check_compatibility(mdp, cfg, /*online=*/true);

    TrainResult out;
    out.model = TabularLogitModel::init_from_reference(mdp, cfg.beta, piref);
    OracleValues oracle = compute_oracle(mdp, cfg.beta, piref);
    out.log.j_beta_star = oracle.j_star;
    out.log.j_beta_ref = oracle.j_ref;

    LossState state;
    if (loss_is_iterative(cfg.loss)) {
        state.target = out.model;
        state.has_target = true;
    }
    if (cfg.loss == LossKind::SacS || cfg.loss == LossKind::SacM) {
        state.vtable = VTable::from_model(mdp, out.model);
        state.has_vtable = true;
    }

    Rng rng(cfg.seed);
    OptimizerState opt_state;
    Policy uniform = uniform_policy(mdp);

    for (long t = 1; t <= cfg.iters; ++t) {
        const auto started = std::chrono::steady_clock::now();
        Policy behavior;
        switch (cfg.behavior.kind) {
            case BehaviorKind::OnPolicy: behavior = out.model.policy(mdp); break;
            case BehaviorKind::FixedUniform: behavior = uniform; break;
            case BehaviorKind::EpsMix:
                behavior = mix_with_uniform(mdp, out.model.policy(mdp), cfg.behavior.eps);
                break;
        }
        TrajectoryDataset batch = collect_grouped_rollouts(mdp, behavior, rng, cfg.prompt_batch,
                                                           cfg.rollouts_per_prompt);
        if (state.has_target && ((t - 1) % cfg.target_refresh_period == 0))
            state.target = out.model;

        double loss = 0.0, grad_norm = 0.0;
        for (int k = 0; k < cfg.grad_steps; ++k) {
            GradientTable grad;
            loss = loss_and_theta_grad(cfg, out.model, state, mdp, piref, batch, grad, true);
            grad_norm = grad.l2_norm();
            optimizer_step(cfg.optimizer, out.model.logits, grad, opt_state);
        }
        out.log.best_loss = std::min(out.log.best_loss, loss);
        out.log.final_loss = loss;
        const double wall_ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started)
                .count();
        out.log.records.push_back(
            make_record(t, loss, grad_norm, mdp, cfg, piref, out.model, oracle, wall_ms));
    }
    return out;
}

TrainResult offline_fit(const LayeredMdp& mdp, const Policy& piref, const TrajectoryDataset& data,
                        const TrainConfig& cfg) {
    cfg.validate();
    piref.validate(mdp);
    check_compatibility(mdp, cfg, /*online=*/false);
    if (data.empty()) throw InvalidArgument("offline_fit: empty dataset");
    if (loss_needs_per_step_rewards(cfg.loss) && !data.per_step_rewards_available)
        throw RewardGranularityError("offline_fit: loss '" + loss_kind_name(cfg.loss) +
                                     "' needs per-step rewards");
    if (loss_needs_grouping(cfg.loss) && data.groups.empty())
        throw InvalidArgument("offline_fit: loss '" + loss_kind_name(cfg.loss) +
                              "' needs a grouped dataset");

    TrainResult out;
    out.model = TabularLogitModel::init_from_reference(mdp, cfg.beta, piref);
    OracleValues oracle = compute_oracle(mdp, cfg.beta, piref);
    out.log.j_beta_star = oracle.j_star;
    out.log.j_beta_ref = oracle.j_ref;

    LossState state;
    if (loss_is_iterative(cfg.loss)) {
        state.target = out.model;
        state.has_target = true;
    }
    if (cfg.loss == LossKind::SacS || cfg.loss == LossKind::SacM) {
        state.vtable = VTable::from_model(mdp, out.model);
        state.has_vtable = true;
    }

    Rng rng(cfg.seed);
    OptimizerState opt_state;
    const bool minibatch = cfg.offline_batch > 0 &&
                           cfg.offline_batch < (int)data.items.size() &&
                           !loss_needs_grouping(cfg.loss);

    for (long t = 1; t <= cfg.iters; ++t) {
        const auto started = std::chrono::steady_clock::now();
        if (state.has_target && ((t - 1) % cfg.target_refresh_period == 0))
            state.target = out.model;
        double loss = 0.0, grad_norm = 0.0;
        for (int k = 0; k < cfg.grad_steps; ++k) {
            const TrajectoryDataset* step_data = &data;
            TrajectoryDataset sub;
            if (minibatch) {
                sub.per_step_rewards_available = data.per_step_rewards_available;
                for (int i = 0; i < cfg.offline_batch; ++i)
                    sub.items.push_back(data.items[rng.uniform_int((int)data.items.size())]);
                step_data = &sub;
            }
            GradientTable grad;
            loss = loss_and_theta_grad(cfg, out.model, state, mdp, piref, *step_data, grad, true);
            grad_norm = grad.l2_norm();
            optimizer_step(cfg.optimizer, out.model.logits, grad, opt_state);
        }
        out.log.best_loss = std::min(out.log.best_loss, loss);
        out.log.final_loss = loss;
        const double wall_ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started)
                .count();
        out.log.records.push_back(
            make_record(t, loss, grad_norm, mdp, cfg, piref, out.model, oracle, wall_ms));
    }
    return out;
}

IterateResult iterate_targets(const LayeredMdp& mdp, const Policy& piref,
                              const TrajectoryDataset& data, const TrainConfig& cfg,
                              const std::vector<PairTable>* q_class, int start_index) {
    cfg.validate();
    piref.validate(mdp);
    if (!loss_is_iterative(cfg.loss))
        throw ConfigError("iterate_targets: loss must be one of the frozen-target kinds");
    check_compatibility(mdp, cfg, /*online=*/false);
    if (loss_needs_per_step_rewards(cfg.loss) && !data.per_step_rewards_available)
        throw RewardGranularityError("iterate_targets: loss '" + loss_kind_name(cfg.loss) +
                                     "' needs per-step rewards");

    IterateResult out;
    OracleValues oracle = compute_oracle(mdp, cfg.beta, piref);
    out.log.j_beta_star = oracle.j_star;
    out.log.j_beta_ref = oracle.j_ref;

    if (q_class != nullptr) {
        if (q_class->empty()) throw InvalidArgument("iterate_targets: empty Q class");
        if (start_index < 0 || start_index >= (int)q_class->size())
            throw InvalidArgument("iterate_targets: start index out of range");
        auto as_model = [&](int idx) {
            TabularLogitModel m;
            m.beta = cfg.beta;
            m.ref = piref;
            m.logits = (*q_class)[idx];
            check_pair_shape(mdp, m.logits, "iterate_targets class member");
            return m;
        };
        int current = start_index;
        LossState state;
        state.has_target = true;
        for (long r = 1; r <= cfg.iters; ++r) {
            state.target = as_model(current);
            int best = -1;
            double best_loss = std::numeric_limits<double>::infinity();
            for (int c = 0; c < (int)q_class->size(); ++c) {
                GradientTable grad;
                TabularLogitModel candidate = as_model(c);
                const double value =
                    loss_and_theta_grad(cfg, candidate, state, mdp, piref, data, grad, false);
                if (value < best_loss) {
                    best_loss = value;
                    best = c;
                }
            }
            current = best;
            out.refreshes.push_back({r, best, best_loss});
            out.log.best_loss = std::min(out.log.best_loss, best_loss);
            out.log.final_loss = best_loss;
            out.log.records.push_back(make_record(r, best_loss, 0.0, mdp, cfg, piref,
                                                  as_model(current), oracle, 0.0));
        }
        out.model = as_model(current);
        return out;
    }

    // gradient mode: frozen-target descent with periodic refresh
    TrainResult fit = offline_fit(mdp, piref, data, cfg);
    out.model = std::move(fit.model);
    out.log = std::move(fit.log);
    for (long r = 0; r * cfg.target_refresh_period < (long)out.log.records.size(); ++r) {
        const auto& rec = out.log.records[r * cfg.target_refresh_period];
        out.refreshes.push_back({r + 1, -1, rec.loss});
    }
    return out;
}

}  // namespace softq
