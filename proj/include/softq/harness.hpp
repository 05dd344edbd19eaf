#pragma once

#include <map>
#include <optional>

#include "json.hpp"
#include "softq/svg.hpp"
#include "softq/theory.hpp"

namespace softq {

inline constexpr int kExitOk = 0;
inline constexpr int kExitVerifyFail = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitRuntime = 3;

inline constexpr const char* kToolVersion = "0.1.0";

struct VerifyToggles {
    bool cotm = false;
    bool perf_diff = false;
    bool realizability = false;
    bool hard_instance = false;
    bool theorem_trend = false;

    bool any() const { return cotm || perf_diff || realizability || hard_instance || theorem_trend; }
};

struct ExperimentSpec {
    std::string name = "run";
    std::string env_path;
    std::optional<nlohmann::json> env_inline;
    TrainConfig train;
    std::string mode = "online";  // online | offline
    std::string dataset_path;
    long offline_samples = 4096;
    VerifyToggles verify;
    std::vector<std::pair<std::string, std::vector<nlohmann::json>>> grid;
    std::string output_dir = "out";
};

/// Unknown keys anywhere in the document are hard errors.
ExperimentSpec parse_experiment_spec(const nlohmann::json& doc);
ExperimentSpec load_experiment_spec(const std::string& path);
nlohmann::json spec_to_json(const ExperimentSpec& spec);
std::string config_hash(const nlohmann::json& canonical);

LayeredMdp load_environment(const ExperimentSpec& spec);

// ---------------------------------------------------------------------------
// Standard fixtures (also used by the acceptance suite)

LayeredMdp fixture_bandit();        // two arms, r = (1, 0)
LayeredMdp fixture_tree_outcome();  // A=3, H=3, Bernoulli outcome rewards
LayeredMdp fixture_tree_dense();    // A=3, H=3, dense per-step rewards
LayeredMdp fixture_tree_trend();    // wide tree where sample coverage is the binding error

/// Random layered MDP for verification suites; stochastic rows when requested.
LayeredMdp random_layered_mdp(Rng& rng, int max_states, int max_actions, int max_horizon,
                              bool stochastic, bool dense_rewards);
LayeredMdp random_tree(Rng& rng, int max_branching, int max_horizon, bool dense_rewards);
/// Full-support reference policy (softmax of modest random logits).
Policy random_reference(const LayeredMdp& mdp, Rng& rng);
PairTable random_pair_table(const LayeredMdp& mdp, Rng& rng, double scale);

// ---------------------------------------------------------------------------
// Verification suites

struct SuiteResult {
    CsvTable csv;
    bool pass = false;
    std::map<std::string, double> stats;
};

SuiteResult run_realizability_suite(int instances, uint64_t seed);
SuiteResult run_cotm_suite(int random_certs, int sup_certs, uint64_t seed);
SuiteResult run_perf_diff_suite(int instances, uint64_t seed);
SuiteResult run_subopt_bound_suite(int instances, uint64_t seed);

struct HardInstanceResult {
    double iter_at_dagger = 0, iter_at_star = 0;
    double tbrm_at_dagger = 0, tbrm_at_star = 0;
    bool iter_stuck = false;
    bool tbrm_selects_star = false;
    bool pass = false;
    CsvTable csv;
};

HardInstanceResult run_hard_instance();

struct TrendSuite {
    TrendResult trend;
    CsvTable csv;
    bool pass = false;
};

TrendSuite run_trend_suite(uint64_t seed);

// ---------------------------------------------------------------------------
// Commands (return process exit codes)

int cmd_oracle(const std::string& env_path, double beta, const std::string& out_dir);
int cmd_train(const ExperimentSpec& spec);
int cmd_verify(const ExperimentSpec& spec);
int cmd_sweep(const ExperimentSpec& spec);
int cmd_plot(const std::vector<std::string>& csv_paths, const PlotSpec& plot,
             const std::string& out_svg);

struct GenEnvSpec {
    std::string kind = "tree";  // bandit | tree
    std::vector<double> bandit_rewards;
    int branching = 2;
    int horizon = 2;
    std::string reward = "outcome-bernoulli";  // outcome-bernoulli | outcome-uniform | dense-uniform
    uint64_t seed = 1;
    double p = 0.5;
    double lo = 0.0, hi = 1.0;
    std::string out_path;
};

int cmd_gen_env(const GenEnvSpec& spec);

// helpers shared with tests
void write_trainlog_csv(const TrainLog& log, const std::string& path);
void ensure_dir(const std::string& path);

}  // namespace softq
