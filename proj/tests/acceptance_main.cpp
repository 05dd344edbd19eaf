// Acceptance suite: one check per release criterion, each printed as a
// single PASS/FAIL line with its runtime. Exits nonzero when any check fails.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <sstream>
#include <vector>

#include "softq/harness.hpp"

using namespace softq;
namespace fs = std::filesystem;

namespace {

struct Criterion {
    int id;
    std::string name;
    std::function<bool(std::string&)> run;
};

double median_of(std::vector<double> xs) {
    std::sort(xs.begin(), xs.end());
    const size_t k = xs.size();
    return k % 2 == 1 ? xs[k / 2] : 0.5 * (xs[k / 2 - 1] + xs[k / 2]);
}

TrainConfig offline_cfg(LossKind loss, double beta, long total_steps, uint64_t seed) {
    TrainConfig cfg;
    cfg.loss = loss;
    cfg.beta = beta;
    cfg.grad_steps = 50;
    cfg.iters = total_steps / cfg.grad_steps;
    cfg.optimizer = {OptimizerKind::Adam, 0.05, 0.9, 0.9, 0.999, 1e-8};
    cfg.seed = seed;
    return cfg;
}

double offline_rel_subopt(const LayeredMdp& mdp, const Policy& piref, LossKind loss, long n,
                          uint64_t data_seed, uint64_t fit_seed, long total_steps) {
    Rng rng(data_seed);
    TrajectoryDataset data;
    data.per_step_rewards_available = !mdp.outcome_only_rewards();
    data.items = rollout(mdp, uniform_policy(mdp), rng, n);
    TrainResult fit = offline_fit(mdp, piref, data, offline_cfg(loss, 0.1, total_steps, fit_seed));
    return fit.log.final_subopt() / (fit.log.j_beta_star - fit.log.j_beta_ref);
}

std::string scratch_dir(const std::string& name) {
    const std::string dir = (fs::temp_directory_path() / "softq_acceptance" / name).string();
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

bool same_file_bytes(const std::string& a, const std::string& b) {
    return read_text_file(a) == read_text_file(b);
}

}  // namespace

int main() {
    std::vector<Criterion> criteria;

    criteria.push_back({1, "realizability: TBRM(theta*) <= 1e-9 on 100 random trees",
                        [](std::string& detail) {
                            const auto start = std::chrono::steady_clock::now();
                            SuiteResult r = run_realizability_suite(100, 1001);
                            const double secs =
                                std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                                              start)
                                    .count();
                            std::ostringstream ss;
                            ss << "worst loss " << r.stats["worst_loss"] << ", " << secs << "s";
                            detail = ss.str();
                            return r.pass && secs < 10.0;
                        }});

    criteria.push_back({2, "hard instance: iterative stuck at Q-dagger, TBRM selects Q*",
                        [](std::string& detail) {
                            const auto start = std::chrono::steady_clock::now();
                            HardInstanceResult r = run_hard_instance();
                            const double secs =
                                std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                                              start)
                                    .count();
                            std::ostringstream ss;
                            ss << "iter(" << r.iter_at_dagger << ", " << r.iter_at_star
                               << ") tbrm(" << r.tbrm_at_dagger << ", " << r.tbrm_at_star << "), "
                               << secs << "s";
                            detail = ss.str();
                            return r.pass && secs < 1.0;
                        }});

    criteria.push_back({3, "change-of-trajectory-measure certificates",
                        [](std::string& detail) {
                            const auto start = std::chrono::steady_clock::now();
                            SuiteResult r = run_cotm_suite(200, 50, 1003);
                            const double secs =
                                std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                                              start)
                                    .count();
                            std::ostringstream ss;
                            ss << r.csv.rows.size() << " certificates, " << secs << "s";
                            detail = ss.str();
                            return r.pass && secs < 30.0;
                        }});

    criteria.push_back(
        {4, "fbar decomposition identity <= 1e-10 on 100 instances", [](std::string& detail) {
             bool pass = true;
             double worst = 0.0;
             int stochastic_count = 0;
             for (int rep = 0; rep < 100; ++rep) {
                 Rng rng(mix_seed(1004, (uint64_t)rep));
                 const bool stochastic = rep % 2 == 0;
                 stochastic_count += stochastic ? 1 : 0;
                 LayeredMdp mdp = random_layered_mdp(rng, 3, 3, 4, stochastic, true);
                 Policy mu = random_policy(mdp, rng);
                 PairTable f = random_pair_table(mdp, rng, 3.0);
                 FbarCheck check = fbar_decomposition_check(mdp, mu, f);
                 worst = std::max(worst, check.abs_diff);
                 pass = pass && check.abs_diff <= 1e-10;
             }
             std::ostringstream ss;
             ss << "worst |lhs-rhs| " << worst << " (" << stochastic_count
                << " stochastic instances)";
             detail = ss.str();
             return pass;
         }});

    criteria.push_back(
        {5, "performance-difference identity and corollary bound", [](std::string& detail) {
             SuiteResult identity = run_perf_diff_suite(100, 1005);
             SuiteResult bound = run_subopt_bound_suite(100, 1005);
             // equality (0, 0) at theta*
             Rng rng(1505);
             LayeredMdp mdp = random_tree(rng, 3, 3, true);
             Policy ref = random_reference(mdp, rng);
             TabularLogitModel star = soft_value_iteration(mdp, 0.2, ref);
             SuboptBound at_star = subopt_and_bound(mdp, 0.2, ref, star);
             const bool exact = std::abs(at_star.subopt) <= 1e-10 &&
                                std::abs(at_star.bound) <= 1e-9;
             std::ostringstream ss;
             ss << "identity worst " << identity.stats["worst_abs_diff"] << ", at theta* ("
                << at_star.subopt << ", " << at_star.bound << ")";
             detail = ss.str();
             return identity.pass && bound.pass && exact;
         }});

    criteria.push_back(
        {6, "off-policy convergence: offline TBRM at N=4096 within 5% of the gap",
         [](std::string& detail) {
             const auto start = std::chrono::steady_clock::now();
             LayeredMdp mdp = fixture_tree_outcome();
             Policy piref = uniform_policy(mdp);
             std::vector<double> rels;
             for (uint64_t seed = 0; seed < 5; ++seed)
                 rels.push_back(offline_rel_subopt(mdp, piref, LossKind::Tbrm, 4096,
                                                   mix_seed(1006, seed), mix_seed(1606, seed),
                                                   1000));
             const double median = median_of(rels);
             const double secs =
                 std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
             std::ostringstream ss;
             ss << "median rel subopt " << median << ", " << secs << "s";
             detail = ss.str();
             return median <= 0.05 && secs < 60.0;
         }});

    criteria.push_back(
        {7, "sample-size trend: log-log slope in [-0.8, -0.25], monotone doublings",
         [](std::string& detail) {
             const auto start = std::chrono::steady_clock::now();
             TrendSuite suite = run_trend_suite(1007);
             const double secs =
                 std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
             std::ostringstream ss;
             ss << "slope " << suite.trend.loglog_slope << ", nonincreasing "
                << suite.trend.nonincreasing_steps << "/6, " << secs << "s";
             detail = ss.str();
             return suite.pass && secs < 600.0;
         }});

    criteria.push_back(
        {8, "outcome-reward ablation: brm refuses, tbrm converges; both fit dense rewards",
         [](std::string& detail) {
             LayeredMdp outcome = fixture_tree_outcome();
             Policy piref_outcome = uniform_policy(outcome);
             bool refused = false;
             try {
                 TrainConfig cfg = offline_cfg(LossKind::Brm, 0.1, 100, 1);
                 train(outcome, piref_outcome, cfg);
             } catch (const RewardGranularityError&) {
                 refused = true;
             }
             const double tbrm_outcome = offline_rel_subopt(
                 outcome, piref_outcome, LossKind::Tbrm, 4096, 1008, 1608, 1000);

             LayeredMdp dense = fixture_tree_dense();
             Policy piref_dense = uniform_policy(dense);
             std::vector<double> tbrm_rels, brm_rels;
             for (uint64_t seed = 0; seed < 3; ++seed) {
                 tbrm_rels.push_back(offline_rel_subopt(dense, piref_dense, LossKind::Tbrm, 4096,
                                                        mix_seed(2008, seed),
                                                        mix_seed(2608, seed), 2000));
                 brm_rels.push_back(offline_rel_subopt(dense, piref_dense, LossKind::Brm, 4096,
                                                       mix_seed(3008, seed), mix_seed(3608, seed),
                                                       2000));
             }
             std::ostringstream ss;
             ss << "tbrm(outcome) " << tbrm_outcome << ", tbrm(dense) " << median_of(tbrm_rels)
                << ", brm(dense) " << median_of(brm_rels);
             detail = ss.str();
             return refused && tbrm_outcome <= 0.05 && median_of(tbrm_rels) <= 0.05 &&
                    median_of(brm_rels) <= 0.05;
         }});

    criteria.push_back(
        {9, "gradient integrity: fd_check <= 1e-5 for every loss kind", [](std::string& detail) {
             Rng rng(1009);
             LayeredMdp t = make_token_tree_per_step(
                 2, 3, [&rng](int, int, int) { return rng.uniform(-1.0, 1.0); });
             Policy ref = random_reference(t, rng);
             const double beta = 0.3;
             TrajectoryDataset data = collect_grouped_rollouts(t, uniform_policy(t), rng, 6, 2);
             TabularLogitModel target;
             target.logits = random_pair_table(t, rng, 2.0);
             VTable phi = VTable::from_model(t, target);
             auto pairs = pairs_from_groups(data);

             std::vector<std::pair<std::string, LossEvaluator>> evaluators = {
                 {"tbrm",
                  [&](const TabularLogitModel& m) { return tbrm_loss(m, t, beta, ref, data); }},
                 {"brm",
                  [&](const TabularLogitModel& m) { return brm_loss(m, t, beta, ref, data); }},
                 {"tbrm-iter",
                  [&](const TabularLogitModel& m) {
                      return iterative_tbrm_loss(m, target, t, beta, ref, data);
                  }},
                 {"sql-s",
                  [&](const TabularLogitModel& m) {
                      return sql_loss(SqlVariant::S, m, target, t, beta, ref, data);
                  }},
                 {"sql-m",
                  [&](const TabularLogitModel& m) {
                      return sql_loss(SqlVariant::M, m, target, t, beta, ref, data);
                  }},
                 {"sql-ts",
                  [&](const TabularLogitModel& m) {
                      return sql_loss(SqlVariant::TildeS, m, target, t, beta, ref, data);
                  }},
                 {"sql-tm",
                  [&](const TabularLogitModel& m) {
                      return sql_loss(SqlVariant::TildeM, m, target, t, beta, ref, data);
                  }},
                 {"sac-s",
                  [&](const TabularLogitModel& m) {
                      SacLossResult r = sac_loss(false, m, phi, t, beta, ref, data);
                      return LossResult{r.value, std::move(r.theta_grad)};
                  }},
                 {"sac-m",
                  [&](const TabularLogitModel& m) {
                      SacLossResult r = sac_loss(true, m, phi, t, beta, ref, data);
                      return LossResult{r.value, std::move(r.theta_grad)};
                  }},
                 {"daa-pt",
                  [&](const TabularLogitModel& m) {
                      return daa_pt_loss(m, t, beta, ref, data, VStarMode::Mean);
                  }},
                 {"daa-pair",
                  [&](const TabularLogitModel& m) {
                      return daa_pair_loss(m, t, beta, ref, pairs);
                  }},
             };
             double worst = 0.0;
             std::string worst_name;
             for (auto& [name, eval] : evaluators) {
                 TabularLogitModel probe_model;
                 probe_model.logits = random_pair_table(t, rng, 2.0);
                 Rng probes(mix_seed(1909, std::hash<std::string>{}(name)));
                 const double err = fd_check(eval, probe_model, 25, 1e-5, probes);
                 if (err > worst) {
                     worst = err;
                     worst_name = name;
                 }
             }
             std::ostringstream ss;
             ss << "worst relative error " << worst << " (" << worst_name << ")";
             detail = ss.str();
             return worst <= 1e-5;
         }});

    criteria.push_back(
        {10, "baseline fixed points: every comparison loss <= 1e-9 at theta*",
         [](std::string& detail) {
             bool pass = true;
             double worst = 0.0;
             for (int rep = 0; rep < 50; ++rep) {
                 Rng rng(mix_seed(1010, (uint64_t)rep));
                 LayeredMdp t = random_tree(rng, 3, 3, true);
                 Policy ref = random_reference(t, rng);
                 const double beta = rng.uniform(0.1, 1.0);
                 TrajectoryDataset data =
                     collect_grouped_rollouts(t, uniform_policy(t), rng, 5, 2);
                 TabularLogitModel star = soft_value_iteration(t, beta, ref);
                 VTable v_star = VTable::from_model(t, star);
                 auto pairs = pairs_from_groups(data);

                 std::vector<double> losses = {
                     sql_loss(SqlVariant::S, star, star, t, beta, ref, data).value,
                     sql_loss(SqlVariant::M, star, star, t, beta, ref, data).value,
                     sql_loss(SqlVariant::TildeS, star, star, t, beta, ref, data).value,
                     sql_loss(SqlVariant::TildeM, star, star, t, beta, ref, data).value,
                     sac_loss(false, star, v_star, t, beta, ref, data).value,
                     sac_loss(true, star, v_star, t, beta, ref, data).value,
                     daa_pt_loss(star, t, beta, ref, data, VStarMode::Mean, &v_star).value,
                     daa_pair_loss(star, t, beta, ref, pairs).value,
                 };
                 for (double v : losses) {
                     worst = std::max(worst, v);
                     pass = pass && v <= 1e-9;
                 }
             }
             std::ostringstream ss;
             ss << "worst loss at theta* " << worst;
             detail = ss.str();
             return pass;
         }});

    criteria.push_back(
        {11, "determinism: byte-identical artifacts on repeated commands",
         [](std::string& detail) {
             // the commands narrate to stdout; keep the acceptance report clean
             std::ostringstream sink;
             std::streambuf* saved = std::cout.rdbuf(sink.rdbuf());
             bool pass = true;
             // oracle
             const std::string env_dir = scratch_dir("env");
             save_env_json(fixture_tree_outcome(), env_dir + "/tree.json");
             const std::string o1 = scratch_dir("oracle1"), o2 = scratch_dir("oracle2");
             pass = pass && cmd_oracle(env_dir + "/tree.json", 0.1, o1) == kExitOk;
             pass = pass && cmd_oracle(env_dir + "/tree.json", 0.1, o2) == kExitOk;
             pass = pass && same_file_bytes(o1 + "/theta_star.json", o2 + "/theta_star.json");
             pass = pass && same_file_bytes(o1 + "/manifest.json", o2 + "/manifest.json");

             // train, online and offline
             ExperimentSpec spec;
             spec.name = "det";
             spec.env_path = env_dir + "/tree.json";
             spec.train.iters = 25;
             spec.train.grad_steps = 2;
             spec.train.optimizer = {OptimizerKind::Adam, 0.05, 0.9, 0.9, 0.999, 1e-8};
             spec.train.seed = 77;
             for (const std::string mode : {"online", "offline"}) {
                 ExperimentSpec m = spec;
                 m.mode = mode;
                 m.offline_samples = 256;
                 ExperimentSpec m2 = m;
                 m.output_dir = scratch_dir("train_" + mode + "_1");
                 m2.output_dir = scratch_dir("train_" + mode + "_2");
                 pass = pass && cmd_train(m) == kExitOk && cmd_train(m2) == kExitOk;
                 pass = pass && same_file_bytes(m.output_dir + "/trainlog.csv",
                                                m2.output_dir + "/trainlog.csv");
                 pass = pass && same_file_bytes(m.output_dir + "/model.json",
                                                m2.output_dir + "/model.json");
             }

             // sweep: serial vs parallel
             ExperimentSpec sweep = spec;
             sweep.train.iters = 8;
             sweep.grid = {{"seed", {nlohmann::json(1), nlohmann::json(2), nlohmann::json(3)}}};
             ExperimentSpec sweep2 = sweep;
             sweep.output_dir = scratch_dir("sweep_serial");
             sweep2.output_dir = scratch_dir("sweep_parallel");
             setenv("SOFTQ_LAB_THREADS", "1", 1);
             pass = pass && cmd_sweep(sweep) == kExitOk;
             setenv("SOFTQ_LAB_THREADS", "3", 1);
             pass = pass && cmd_sweep(sweep2) == kExitOk;
             unsetenv("SOFTQ_LAB_THREADS");
             pass = pass && same_file_bytes(sweep.output_dir + "/sweep.csv",
                                            sweep2.output_dir + "/sweep.csv");

             std::cout.rdbuf(saved);
             detail = "oracle, train (online/offline), checkpoint and sweep bytes compared";
             return pass;
         }});

    int failures = 0;
    for (auto& criterion : criteria) {
        const auto start = std::chrono::steady_clock::now();
        std::string detail;
        bool pass = false;
        try {
            pass = criterion.run(detail);
        } catch (const std::exception& e) {
            detail = std::string("exception: ") + e.what();
        }
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        std::printf("%s criterion %2d: %s [%.1fs]%s%s\n", pass ? "PASS" : "FAIL", criterion.id,
                    criterion.name.c_str(), secs, detail.empty() ? "" : " -- ",
                    detail.c_str());
        std::fflush(stdout);
        if (!pass) ++failures;
    }
    if (failures > 0) std::printf("%d criterion(s) failed\n", failures);
    return failures;
}
