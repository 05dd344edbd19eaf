#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"
#include "test_util.hpp"

using namespace softq;
using namespace testutil;

namespace {

TabularLogitModel model_with_logits(const LayeredMdp& mdp, Rng& rng, double scale = 2.0) {
    TabularLogitModel m;
    m.logits = random_pair_table(mdp, rng, scale);
    return m;
}

}  // namespace

TEST_CASE("value is a stabilized log-sum-exp") {
    LayeredMdp b = make_bandit({1.0, 0.0});
    TabularLogitModel m;
    m.logits = PairTable::zeros(b);
    CHECK(m.value(0, 0) == doctest::Approx(std::log(2.0)).epsilon(1e-12));

    m.logits.at(0, 0, 0) = 10.0;
    CHECK(m.value(0, 0) ==
          doctest::Approx(10.0 + std::log1p(std::exp(-10.0))).epsilon(1e-12));

    LayeredMdp single = make_bandit({0.0});
    TabularLogitModel one;
    one.logits = PairTable::zeros(single);
    one.logits.at(0, 0, 0) = -3.25;
    CHECK(one.value(0, 0) == doctest::Approx(-3.25).epsilon(1e-14));

    // large logits do not overflow
    m.logits.at(0, 0, 0) = 800.0;
    m.logits.at(0, 0, 1) = 799.0;
    CHECK(std::isfinite(m.value(0, 0)));
}

TEST_CASE("log_policy normalization and shift invariance") {
    LayeredMdp b = make_bandit({1.0, 0.0});
    TabularLogitModel m;
    m.logits = PairTable::zeros(b);
    CHECK(m.log_policy(0, 0, 0) == doctest::Approx(-std::log(2.0)).epsilon(1e-12));

    m.logits.at(0, 0, 0) = 1.0;
    CHECK(m.log_policy(0, 0, 0) ==
          doctest::Approx(1.0 - std::log(1.0 + std::exp(1.0))).epsilon(1e-12));

    const double before0 = m.log_policy(0, 0, 0);
    const double before1 = m.log_policy(0, 0, 1);
    const double v_before = m.value(0, 0);
    m.logits.at(0, 0, 0) += 2.5;
    m.logits.at(0, 0, 1) += 2.5;
    CHECK(m.log_policy(0, 0, 0) == doctest::Approx(before0).epsilon(1e-12));
    CHECK(m.log_policy(0, 0, 1) == doctest::Approx(before1).epsilon(1e-12));
    CHECK(m.value(0, 0) == doctest::Approx(v_before + 2.5).epsilon(1e-12));

    // policy rows sum to one on random models
    Rng rng(31);
    LayeredMdp t = random_tree(rng, 3, 3, true);
    TabularLogitModel rm = model_with_logits(t, rng);
    Policy pi = rm.policy(t);
    for (int h = 0; h < t.horizon; ++h)
        for (int s = 0; s < t.layer_sizes[h]; ++s) {
            double sum = 0.0;
            for (int a = 0; a < t.actions_at(h, s); ++a) sum += std::exp(rm.log_policy(h, s, a));
            CHECK(std::abs(sum - 1.0) <= 1e-12);
            (void)pi;
        }
}

TEST_CASE("initialization from the reference reproduces it exactly") {
    Rng rng(32);
    LayeredMdp t = random_tree(rng, 3, 3, true);
    Policy ref = random_reference(t, rng);
    TabularLogitModel m = TabularLogitModel::init_from_reference(t, 0.1, ref);
    Policy pi = m.policy(t);
    for (int h = 0; h < t.horizon; ++h)
        for (int s = 0; s < t.layer_sizes[h]; ++s)
            for (int a = 0; a < t.actions_at(h, s); ++a)
                CHECK(pi.table[h][s][a] == doctest::Approx(ref.table[h][s][a]).epsilon(1e-13));
}

TEST_CASE("trajectory residual closed forms") {
    LayeredMdp b = make_bandit({1.0, 0.0});
    Policy uniform = uniform_policy(b);

    TabularLogitModel zero;
    zero.logits = PairTable::zeros(b);
    Trajectory arm1{{0}, {0}, {1.0}, 1.0, std::nullopt};
    CHECK(traj_residual(zero, b, 0.1, uniform, arm1) ==
          doctest::Approx(-10.0 + std::log(2.0)).epsilon(1e-9));

    // zero reward with logits = log piref gives residual 0 on any trajectory
    Rng rng(33);
    LayeredMdp zt = make_token_tree_shape(2, 3);
    Policy ref = random_reference(zt, rng);
    TabularLogitModel at_ref = TabularLogitModel::init_from_reference(zt, 0.1, ref);
    for (const auto& tau : all_trajectories(zt))
        CHECK(std::abs(traj_residual(at_ref, zt, 0.1, ref, tau)) <= 1e-12);

    LayeredMdp stochastic = random_layered_mdp(rng, 2, 2, 2, true, true);
    TabularLogitModel sm;
    sm.logits = PairTable::zeros(stochastic);
    Trajectory tau = rollout(stochastic, uniform_policy(stochastic), rng, 1)[0];
    CHECK_THROWS_AS(traj_residual(sm, stochastic, 0.1, uniform_policy(stochastic), tau),
                    DeterminismError);
}

TEST_CASE("residual vanishes at theta* on 100 random deterministic trees") {
    for (int rep = 0; rep < 100; ++rep) {
        Rng rng(mix_seed(34, (uint64_t)rep));
        LayeredMdp t = random_tree(rng, 3, 3, rng.bernoulli(0.5));
        Policy ref = random_reference(t, rng);
        const double beta = rng.uniform(0.1, 1.0);
        TabularLogitModel star = soft_value_iteration(t, beta, ref);
        Policy behavior = random_policy(t, rng);
        for (const auto& tau : rollout(t, behavior, rng, 5))
            CHECK(std::abs(traj_residual(star, t, beta, ref, tau)) <= 1e-9);
    }
}

TEST_CASE("residual matches the brute-force formula") {
    Rng rng(35);
    LayeredMdp t = random_tree(rng, 3, 3, true);
    Policy ref = random_reference(t, rng);
    TabularLogitModel m = model_with_logits(t, rng);
    for (const auto& tau : rollout(t, uniform_policy(t), rng, 20))
        CHECK(traj_residual(m, t, 0.3, ref, tau) ==
              doctest::Approx(brute_traj_residual(m.logits, t, 0.3, ref, tau)).epsilon(1e-12));
}

TEST_CASE("residual shift behavior") {
    Rng rng(36);
    LayeredMdp t = make_token_tree_shape(2, 3);
    Policy ref = random_reference(t, rng);
    TabularLogitModel m = model_with_logits(t, rng);
    Trajectory tau = rollout(t, uniform_policy(t), rng, 1)[0];
    const double base = traj_residual(m, t, 0.1, ref, tau);

    // shifting the initial state's row moves the residual by the same constant
    TabularLogitModel shifted = m;
    for (int a = 0; a < t.actions_at(0, 0); ++a) shifted.logits.at(0, 0, a) += 1.75;
    CHECK(traj_residual(shifted, t, 0.1, ref, tau) == doctest::Approx(base + 1.75).epsilon(1e-10));

    // shifting a later visited state's row leaves it unchanged
    shifted = m;
    const int s1 = tau.states[1];
    for (int a = 0; a < t.actions_at(1, s1); ++a) shifted.logits.at(1, s1, a) += -0.6;
    CHECK(traj_residual(shifted, t, 0.1, ref, tau) == doctest::Approx(base).epsilon(1e-10));
}

TEST_CASE("residual gradient structure and finite differences") {
    Rng rng(37);
    LayeredMdp t = make_token_tree_shape(3, 3);
    Policy ref = random_reference(t, rng);
    TabularLogitModel m = model_with_logits(t, rng);
    Trajectory tau = rollout(t, uniform_policy(t), rng, 1)[0];
    GradientTable g = grad_traj_residual(m, t, 0.1, ref, tau);

    // step-1 row is a bare indicator, no softmax correction
    for (int a = 0; a < t.actions_at(0, 0); ++a)
        CHECK(g.at(0, 0, a) == (a == tau.actions[0] ? 1.0 : 0.0));
    // later rows sum to zero over actions
    for (int h = 1; h < t.horizon; ++h) {
        double sum = 0.0;
        for (int a = 0; a < t.actions_at(h, tau.states[h]); ++a) sum += g.at(h, tau.states[h], a);
        CHECK(std::abs(sum) <= 1e-12);
    }

    // central differences of the residual itself
    const double step = 1e-5;
    double worst = 0.0;
    g.for_each([&](int h, int s, int a, double& analytic) {
        TabularLogitModel plus = m, minus = m;
        plus.logits.at(h, s, a) += step;
        minus.logits.at(h, s, a) -= step;
        const double numeric = (traj_residual(plus, t, 0.1, ref, tau) -
                                traj_residual(minus, t, 0.1, ref, tau)) /
                               (2.0 * step);
        const double scale = std::max({std::abs(numeric), std::abs(analytic), 1e-8});
        worst = std::max(worst, std::abs(numeric - analytic) / scale);
    });
    CHECK(worst <= 1e-5);
}

TEST_CASE("fd_check on the TBRM loss") {
    Rng rng(38);
    LayeredMdp t = make_token_tree_shape(2, 3);
    Policy ref = random_reference(t, rng);
    TabularLogitModel m = model_with_logits(t, rng);
    TrajectoryDataset data = dataset_from(rollout(t, uniform_policy(t), rng, 12));

    LossEvaluator tbrm_eval = [&](const TabularLogitModel& candidate) {
        return tbrm_loss(candidate, t, 0.1, ref, data);
    };
    Rng probes(39);
    CHECK(fd_check(tbrm_eval, m, 30, 1e-5, probes) <= 1e-5);

    // at theta* both analytic and numeric gradients are ~0 (absolute fallback)
    TabularLogitModel star = soft_value_iteration(t, 0.1, ref);
    Rng probes2(40);
    CHECK(fd_check(tbrm_eval, star, 20, 1e-5, probes2) <= 1e-6);

    // negative control: a corrupted gradient must be detected
    LossEvaluator corrupted = [&](const TabularLogitModel& candidate) {
        LossResult r = tbrm_loss(candidate, t, 0.1, ref, data);
        r.grad.at(0, 0, 0) += 0.5;
        return r;
    };
    Rng probes3(41);
    CHECK(fd_check(corrupted, m, 64, 1e-5, probes3) > 1e-2);

    LossEvaluator non_finite = [&](const TabularLogitModel&) {
        LossResult r;
        r.value = std::numeric_limits<double>::quiet_NaN();
        r.grad = PairTable::zeros(t);
        return r;
    };
    Rng probes4(42);
    CHECK_THROWS_AS(fd_check(non_finite, m, 4, 1e-5, probes4), InvalidArgument);
}

TEST_CASE("assumption diagnostics are monitored not enforced") {
    Rng rng(43);
    LayeredMdp t = make_token_tree_shape(2, 2);
    TabularLogitModel m = model_with_logits(t, rng, 50.0);
    CHECK(m.max_abs_logit() > 10.0);  // no projection happened
}
