#include "softq/model.hpp"

#include <algorithm>
#include <cmath>

namespace softq {

TabularLogitModel TabularLogitModel::init_from_reference(const LayeredMdp& mdp, double beta,
                                                         const Policy& piref) {
    piref.validate(mdp);
    TabularLogitModel m;
    m.beta = beta;
    m.ref = piref;
    m.logits = PairTable::zeros(mdp);
    m.logits.for_each([&](int h, int s, int a, double& x) {
        const double p = piref.table[h][s][a];
        if (!(p > 0.0))
            throw ReferenceSupportError("init_from_reference: piref(a|s) = 0 at " +
                                        mdp.state_name(h, s));
        x = std::log(p);
    });
    return m;
}

double TabularLogitModel::value(int h, int s) const { return logsumexp(logits.v[h][s]); }

double TabularLogitModel::log_policy(int h, int s, int a) const {
    return logits.v[h][s][a] - value(h, s);
}

Policy TabularLogitModel::policy(const LayeredMdp& mdp) const {
    Policy pi;
    pi.table.resize(mdp.horizon);
    for (int h = 0; h < mdp.horizon; ++h) {
        pi.table[h].resize(mdp.layer_sizes[h]);
        for (int s = 0; s < mdp.layer_sizes[h]; ++s) {
            const double v = value(h, s);
            const int na = mdp.actions_at(h, s);
            pi.table[h][s].resize(na);
            for (int a = 0; a < na; ++a) pi.table[h][s][a] = std::exp(logits.v[h][s][a] - v);
        }
    }
    return pi;
}

TabularLogitModel soft_value_iteration(const LayeredMdp& mdp, double beta, const Policy& piref) {
    TabularLogitModel m;
    m.beta = beta;
    m.ref = piref;
    m.logits = soft_optimal_q(mdp, beta, piref);
    return m;
}

double traj_residual(const TabularLogitModel& model, const LayeredMdp& mdp, double beta,
                     const Policy& piref, const Trajectory& tau) {
    if (!mdp.deterministic)
        throw DeterminismError("traj_residual: requires a deterministic MDP");
    if (tau.length() != mdp.horizon)
        throw InvalidArgument("traj_residual: trajectory length mismatch");
    double f = model.logits.at(0, tau.states[0], tau.actions[0]) - tau.total_reward / beta;
    for (int h = 0; h < mdp.horizon; ++h) {
        const double pref = piref.table[h][tau.states[h]][tau.actions[h]];
        if (!(pref > 0.0))
            throw ReferenceSupportError("traj_residual: piref vanishes along the trajectory");
        f -= std::log(pref);
        if (h >= 1) f += model.log_policy(h, tau.states[h], tau.actions[h]);
    }
    return f;
}

GradientTable grad_traj_residual(const TabularLogitModel& model, const LayeredMdp& mdp,
                                 double beta, const Policy& piref, const Trajectory& tau) {
    if (!mdp.deterministic)
        throw DeterminismError("grad_traj_residual: requires a deterministic MDP");
    (void)beta;
    (void)piref;
    GradientTable g = PairTable::zeros(mdp);
    g.at(0, tau.states[0], tau.actions[0]) = 1.0;
    for (int h = 1; h < mdp.horizon; ++h) {
        const int s = tau.states[h];
        const double v = model.value(h, s);
        for (int a = 0; a < mdp.actions_at(h, s); ++a)
            g.at(h, s, a) = (a == tau.actions[h] ? 1.0 : 0.0) - std::exp(model.logits.at(h, s, a) - v);
    }
    return g;
}

double fd_check(const LossEvaluator& evaluate, const TabularLogitModel& base, int probe_count,
                double step, Rng& rng) {
    if (step <= 0.0) throw InvalidArgument("fd_check: step must be positive");
    LossResult at_base = evaluate(base);
    if (!std::isfinite(at_base.value)) throw InvalidArgument("fd_check: non-finite loss");

    // flatten coordinates for uniform probing
    struct Coord {
        int h, s, a;
    };
    std::vector<Coord> coords;
    base.logits.for_each([&](int h, int s, int a, const double&) { coords.push_back({h, s, a}); });

    double worst = 0.0;
    for (int i = 0; i < probe_count; ++i) {
        const Coord c = coords[rng.uniform_int((int)coords.size())];
        TabularLogitModel plus = base;
        plus.logits.at(c.h, c.s, c.a) += step;
        TabularLogitModel minus = base;
        minus.logits.at(c.h, c.s, c.a) -= step;
        const double numeric = (evaluate(plus).value - evaluate(minus).value) / (2.0 * step);
        const double analytic = at_base.grad.at(c.h, c.s, c.a);
        const double scale = std::max(std::abs(numeric), std::abs(analytic));
        const double err =
            scale > 1e-8 ? std::abs(numeric - analytic) / scale : std::abs(numeric - analytic);
        worst = std::max(worst, err);
    }
    return worst;
}

}  // namespace softq
