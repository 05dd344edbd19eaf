#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"
#include "test_util.hpp"

#include <map>

using namespace softq;
using namespace testutil;

TEST_CASE("make_bandit basics") {
    LayeredMdp b = make_bandit({1.0, 0.0});
    CHECK(b.horizon == 1);
    CHECK(b.layer_sizes == std::vector<int>{1, 1});
    CHECK(b.actions_at(0, 0) == 2);
    CHECK(b.deterministic);
    CHECK(b.reward[0][0][0] == 1.0);
    CHECK(b.reward[0][0][1] == 0.0);
    CHECK(b.rho == std::vector<double>{1.0});
    CHECK_THROWS_AS(make_bandit({}), InvalidArgument);
}

TEST_CASE("single-action bandit leaves every policy identical") {
    LayeredMdp b = make_bandit({0.0});
    Policy uniform = uniform_policy(b);
    TabularLogitModel star = soft_value_iteration(b, 0.1, uniform);
    Policy pi_star = star.policy(b);
    CHECK(pi_star.table[0][0][0] == doctest::Approx(1.0));
    CHECK(j_beta(b, pi_star, 0.1, uniform) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("symmetric bandit keeps the uniform optimum") {
    LayeredMdp b = make_bandit({3.0, 3.0});
    Policy uniform = uniform_policy(b);
    Policy pi_star = soft_value_iteration(b, 0.1, uniform).policy(b);
    CHECK(pi_star.table[0][0][0] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("token tree shape and counting") {
    LayeredMdp t = make_token_tree_shape(2, 2);
    CHECK(t.layer_sizes == std::vector<int>{1, 2, 4});
    CHECK(t.trajectory_count() == 4);
    CHECK(t.deterministic);

    // A=3, H=1 outcome tree is the 3-arm bandit
    LayeredMdp arm3 = make_token_tree_outcome(3, 1, {1.0, 0.0, 0.0});
    LayeredMdp bandit = make_bandit({1.0, 0.0, 0.0});
    CHECK(j_beta(arm3, uniform_policy(arm3), 0.1, uniform_policy(arm3)) ==
          doctest::Approx(j_beta(bandit, uniform_policy(bandit), 0.1, uniform_policy(bandit)))
              .epsilon(1e-12));

    CHECK_THROWS_AS(make_token_tree_shape(2, 30), SizeError);
}

TEST_CASE("random outcome trees are seed-deterministic") {
    LayeredMdp a = make_token_tree_random_outcome(2, 4, 7, 0.5);
    LayeredMdp b = make_token_tree_random_outcome(2, 4, 7, 0.5);
    LayeredMdp c = make_token_tree_random_outcome(2, 4, 8, 0.5);
    CHECK(a.reward == b.reward);
    CHECK(a.reward != c.reward);
    CHECK(a.outcome_only_rewards());
}

TEST_CASE("transformed reward") {
    LayeredMdp b = make_bandit({1.0, 0.0});
    Policy uniform = uniform_policy(b);
    CHECK(transformed_reward(b, 0.1, uniform, 0, 0, 0) ==
          doctest::Approx(10.0 + std::log(0.5)).epsilon(1e-12));
    CHECK(transformed_reward(b, 0.1, uniform, 0, 0, 1) ==
          doctest::Approx(std::log(0.5)).epsilon(1e-12));

    LayeredMdp single = make_bandit({0.0});
    CHECK(transformed_reward(single, 0.1, uniform_policy(single), 0, 0, 0) ==
          doctest::Approx(0.0));

    Policy zero_ref = uniform;
    zero_ref.table[0][0] = {1.0, 0.0};
    CHECK_THROWS_AS(transformed_reward(b, 0.1, zero_ref, 0, 0, 1), ReferenceSupportError);
}

TEST_CASE("rollout determinism and degenerate policies") {
    LayeredMdp t = make_token_tree_random_outcome(2, 3, 1, 0.5);
    Policy point = uniform_policy(t);
    for (auto& layer : point.table)
        for (auto& row : layer) {
            row.assign(row.size(), 0.0);
            row[0] = 1.0;
        }
    Rng rng_a(5);
    Rng rng_b(6);
    auto ta = rollout(t, point, rng_a, 3);
    auto tb = rollout(t, point, rng_b, 3);
    for (const auto& tau : ta) {
        CHECK(tau.actions == std::vector<int>{0, 0, 0});
        validate_trajectory(t, tau);
    }
    CHECK(ta[0].states == tb[0].states);

    Rng r1(42), r2(42);
    auto s1 = rollout(t, uniform_policy(t), r1, 50);
    auto s2 = rollout(t, uniform_policy(t), r2, 50);
    for (size_t i = 0; i < s1.size(); ++i) {
        CHECK(s1[i].states == s2[i].states);
        CHECK(s1[i].actions == s2[i].actions);
    }

    Policy truncated = uniform_policy(t);
    truncated.table.pop_back();
    CHECK_THROWS_AS(rollout(t, truncated, r1, 1), CoverageError);
}

TEST_CASE("rollout frequency concentrates") {
    LayeredMdp b = make_bandit({1.0, 0.0});
    Policy uniform = uniform_policy(b);
    Rng rng(2718);
    long hits = 0;
    for (const auto& tau : rollout(b, uniform, rng, 100000)) hits += tau.actions[0] == 0 ? 1 : 0;
    const double freq = (double)hits / 100000.0;
    CHECK(freq > 0.49);
    CHECK(freq < 0.51);
}

TEST_CASE("trajectory enumeration") {
    LayeredMdp b = make_bandit({1.0, 0.0});
    auto list = enumerate_trajectory_distribution(b, uniform_policy(b));
    REQUIRE(list.size() == 2);
    CHECK(list[0].prob == doctest::Approx(0.5));
    CHECK(list[1].prob == doctest::Approx(0.5));

    LayeredMdp t = make_token_tree_shape(2, 2);
    auto tree_list = enumerate_trajectory_distribution(t, uniform_policy(t));
    REQUIRE(tree_list.size() == 4);
    for (const auto& wt : tree_list) CHECK(wt.prob == doctest::Approx(0.25));

    Rng rng(9);
    LayeredMdp random_mdp = random_layered_mdp(rng, 3, 3, 3, true, true);
    Policy pi = random_policy(random_mdp, rng);
    double total = 0.0;
    for (const auto& wt : enumerate_trajectory_distribution(random_mdp, pi)) total += wt.prob;
    CHECK(total == doctest::Approx(1.0).epsilon(1e-10));

    CHECK_THROWS_AS(enumerate_trajectory_distribution(t, uniform_policy(t), 2), SizeError);
}

TEST_CASE("occupancy matches enumeration marginals") {
    LayeredMdp t = make_token_tree_shape(2, 2);
    OccupancyTable occ = occupancy(t, uniform_policy(t));
    for (int s = 0; s < 2; ++s)
        for (int a = 0; a < 2; ++a) CHECK(occ.at(1, s, a) == doctest::Approx(0.25));

    Policy point = uniform_policy(t);
    for (auto& layer : point.table)
        for (auto& row : layer) {
            row.assign(row.size(), 0.0);
            row[0] = 1.0;
        }
    OccupancyTable point_occ = occupancy(t, point);
    CHECK(point_occ.at(0, 0, 0) == doctest::Approx(1.0));
    CHECK(point_occ.at(1, 0, 0) == doctest::Approx(1.0));
    CHECK(point_occ.at(1, 1, 0) == doctest::Approx(0.0));

    for (bool stochastic : {false, true}) {
        Rng rng(stochastic ? 11 : 12);
        LayeredMdp m = stochastic ? random_layered_mdp(rng, 3, 3, 3, true, true)
                                  : make_token_tree_shape(3, 3);
        Policy pi = random_policy(m, rng);
        OccupancyTable d = occupancy(m, pi);
        PairTable sums = PairTable::zeros(m);
        for (const auto& wt : enumerate_trajectory_distribution(m, pi))
            for (int h = 0; h < m.horizon; ++h)
                sums.at(h, wt.traj.states[h], wt.traj.actions[h]) += wt.prob;
        sums.for_each(
            [&](int h, int s, int a, double& x) { CHECK(std::abs(x - d.at(h, s, a)) <= 1e-12); });
    }
}

TEST_CASE("j_beta closed forms and support sentinel") {
    LayeredMdp b = make_bandit({1.0, 0.0});
    Policy uniform = uniform_policy(b);
    CHECK(j_beta(b, uniform, 0.1, uniform) == doctest::Approx(0.5).epsilon(1e-12));

    Policy pi_star = soft_value_iteration(b, 0.1, uniform).policy(b);
    CHECK(j_beta(b, pi_star, 0.1, uniform) == doctest::Approx(0.930690).epsilon(1e-6));

    LayeredMdp zero = make_bandit({0.0, 0.0});
    CHECK(j_beta(zero, uniform_policy(zero), 0.1, uniform_policy(zero)) ==
          doctest::Approx(0.0).epsilon(1e-14));

    Policy narrow_ref = uniform;
    narrow_ref.table[0][0] = {1.0, 0.0};
    std::string diag;
    CHECK(j_beta(b, uniform, 0.1, narrow_ref, &diag) ==
          -std::numeric_limits<double>::infinity());
    CHECK(!diag.empty());
}

TEST_CASE("soft value iteration closed form and optimality probe") {
    LayeredMdp b = make_bandit({1.0, 0.0});
    Policy uniform = uniform_policy(b);
    TabularLogitModel star = soft_value_iteration(b, 0.1, uniform);
    CHECK(star.logits.at(0, 0, 0) == doctest::Approx(9.306853).epsilon(1e-6));
    CHECK(star.logits.at(0, 0, 1) == doctest::Approx(-0.693147).epsilon(1e-6));

    Rng rng(13);
    LayeredMdp zero_tree = make_token_tree_shape(2, 3);
    Policy ref = random_reference(zero_tree, rng);
    Policy recovered = soft_value_iteration(zero_tree, 0.3, ref).policy(zero_tree);
    for (int h = 0; h < zero_tree.horizon; ++h)
        for (int s = 0; s < zero_tree.layer_sizes[h]; ++s)
            for (int a = 0; a < zero_tree.actions_at(h, s); ++a)
                CHECK(recovered.table[h][s][a] ==
                      doctest::Approx(ref.table[h][s][a]).epsilon(1e-10));

    LayeredMdp t = make_token_tree_random_outcome_uniform(2, 3, 21, -1.0, 1.0);
    Policy tref = uniform_policy(t);
    Policy tstar = soft_value_iteration(t, 0.1, tref).policy(t);
    const double j_star = j_beta(t, tstar, 0.1, tref);
    for (int i = 0; i < 100; ++i) {
        Policy pi = random_policy(t, rng);
        CHECK(j_star >= j_beta(t, pi, 0.1, tref) - 1e-10);
    }
}

TEST_CASE("soft Bellman operator fixed point and terminal layer") {
    Rng rng(14);
    LayeredMdp t =
        make_token_tree_per_step(3, 3, [&rng](int, int, int) { return rng.uniform(-1, 1); });
    Policy ref = random_reference(t, rng);
    const double beta = 0.25;
    PairTable qstar = soft_optimal_q(t, beta, ref);
    qstar.for_each([&](int h, int s, int a, double& q) {
        CHECK(std::abs(soft_bellman_apply(t, beta, ref, qstar, h, s, a) - q) <= 1e-10);
    });

    LayeredMdp b = make_bandit({1.0, 0.0});
    Policy uniform = uniform_policy(b);
    PairTable any = PairTable::zeros(b);
    any.at(0, 0, 0) = 3.0;
    CHECK(soft_bellman_apply(b, 0.1, uniform, any, 0, 0, 0) ==
          doctest::Approx(9.306853).epsilon(1e-6));

    // policy version at softmax(Q) coincides with the optimality version
    Rng rng2(15);
    PairTable q = random_pair_table(t, rng2, 2.0);
    TabularLogitModel as_model;
    as_model.logits = q;
    Policy softmax_q = as_model.policy(t);
    q.for_each([&](int h, int s, int a, double&) {
        CHECK(soft_bellman_apply(t, beta, ref, q, softmax_q, h, s, a) ==
              doctest::Approx(soft_bellman_apply(t, beta, ref, q, h, s, a)).epsilon(1e-12));
    });

    PairTable wrong_shape;
    wrong_shape.v = {{{0.0}}};
    CHECK_THROWS_AS(soft_bellman_apply(t, beta, ref, wrong_shape, 0, 0, 0), InvalidArgument);
}

TEST_CASE("logit-unit identity links q* to the raw-reward optimal values") {
    Rng rng(16);
    for (int rep = 0; rep < 5; ++rep) {
        LayeredMdp t = random_tree(rng, 3, 3, true);
        Policy ref = random_reference(t, rng);
        const double beta = rng.uniform(0.1, 1.0);
        PairTable qstar = soft_optimal_q(t, beta, ref);
        std::vector<std::vector<double>> vstar(t.horizon);
        for (int h = 0; h < t.horizon; ++h) {
            vstar[h].resize(t.layer_sizes[h]);
            for (int s = 0; s < t.layer_sizes[h]; ++s) vstar[h][s] = logsumexp(qstar.v[h][s]);
        }
        qstar.for_each([&](int h, int s, int a, double& q) {
            const int next = t.transition[h][s][a][0].next;
            const double vnext = h + 1 < t.horizon ? vstar[h + 1][next] : 0.0;
            const double lhs = beta * (q - std::log(ref.table[h][s][a]));
            const double rhs = t.reward[h][s][a] + beta * vnext;
            CHECK(std::abs(lhs - rhs) <= 1e-9);
        });
    }
}

TEST_CASE("j_beta(pi*) equals beta times the initial log-partition") {
    Rng rng(17);
    LayeredMdp t = random_tree(rng, 3, 3, true);
    Policy ref = random_reference(t, rng);
    const double beta = 0.2;
    TabularLogitModel star = soft_value_iteration(t, beta, ref);
    double expected = 0.0;
    for (int s = 0; s < t.layer_sizes[0]; ++s)
        expected += t.rho[s] * logsumexp(star.logits.v[0][s]);
    CHECK(j_beta(t, star.policy(t), beta, ref) ==
          doctest::Approx(beta * expected).epsilon(1e-10));
}

TEST_CASE("rollout distribution matches enumeration (chi-square)") {
    LayeredMdp t = make_token_tree_shape(2, 2);
    Rng policy_rng(18);
    Policy pi = random_policy(t, policy_rng);
    auto enumerated = enumerate_trajectory_distribution(t, pi);

    auto key_of = [](const Trajectory& tau) {
        long k = 0;
        for (int a : tau.actions) k = k * 4 + a + 1;
        return k;
    };
    std::map<long, double> expected;
    for (const auto& wt : enumerated) expected[key_of(wt.traj)] = wt.prob;

    Rng rng(19);
    std::map<long, long> counts;
    const long n = 100000;
    for (const auto& tau : rollout(t, pi, rng, n)) counts[key_of(tau)]++;

    double stat = 0.0;
    for (const auto& [key, prob] : expected) {
        const double np = prob * (double)n;
        const double observed = counts.count(key) ? (double)counts[key] : 0.0;
        stat += (observed - np) * (observed - np) / np;
    }
    const double p = chi2_pvalue(stat, (double)expected.size() - 1.0);
    CHECK(p > 0.001);
}

TEST_CASE("structural validation failures") {
    LayeredMdp b = make_bandit({1.0, 0.0});
    LayeredMdp broken = b;
    broken.transition[0][0][0][0].prob = 0.7;
    CHECK_THROWS_AS(broken.validate(), InvalidArgument);

    broken = b;
    broken.rho = {0.5};
    CHECK_THROWS_AS(broken.validate(), InvalidArgument);

    broken = b;
    broken.transition[0][0][0] = {{0, 0.5}, {0, 0.5}};
    CHECK_THROWS_AS(broken.validate(), InvalidArgument);

    Trajectory bad;
    bad.states = {0};
    bad.actions = {0};
    bad.step_rewards = {1.0};
    bad.total_reward = 0.5;
    CHECK_THROWS_AS(validate_trajectory(b, bad), InvalidArgument);

    LayeredMdp tree = make_token_tree_shape(2, 2);
    Trajectory unsupported;
    unsupported.states = {0, 1};  // action 0 at the root leads to state 0, not 1
    unsupported.actions = {0, 0};
    unsupported.step_rewards = {0.0, 0.0};
    unsupported.total_reward = 0.0;
    CHECK_THROWS_AS(validate_trajectory(tree, unsupported), InvalidArgument);
}
