#include <iostream>

#include "CLI11.hpp"
#include "softq/harness.hpp"

namespace {

using namespace softq;

/// Shared flags; CLI values override the config file where both are given.
struct CommonArgs {
    std::string config_path;
    std::string env_path;
    std::string out_dir;
    double beta = -1.0;
    long seed = -1;
    std::string loss;
    long iters = -1;
    int batch = -1;
    int rollouts = -1;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "experiment config JSON");
    cmd->add_option("--env", args.env_path, "environment JSON file");
    cmd->add_option("--out", args.out_dir, "output directory");
    cmd->add_option("--beta", args.beta, "KL regularization scale");
    cmd->add_option("--seed", args.seed, "master seed");
    cmd->add_option("--loss", args.loss, "loss kind (tbrm | brm | tbrm-iter | sql-s | sql-m | "
                                         "sql-ts | sql-tm | sac-s | sac-m | daa-pt | daa-pair)");
    cmd->add_option("--iters", args.iters, "training iterations");
    cmd->add_option("--batch", args.batch, "prompt batch size");
    cmd->add_option("--rollouts-per-prompt", args.rollouts, "rollouts per prompt");
}

int materialize_spec(const CommonArgs& args, ExperimentSpec& spec) {
    try {
        if (!args.config_path.empty()) spec = load_experiment_spec(args.config_path);
        if (!args.env_path.empty()) {
            spec.env_path = args.env_path;
            spec.env_inline.reset();
        }
        if (!args.out_dir.empty()) spec.output_dir = args.out_dir;
        if (args.beta > 0.0) spec.train.beta = args.beta;
        if (args.seed >= 0) spec.train.seed = (uint64_t)args.seed;
        if (!args.loss.empty()) spec.train.loss = parse_loss_kind(args.loss);
        if (args.iters >= 0) spec.train.iters = args.iters;
        if (args.batch >= 1) spec.train.prompt_batch = args.batch;
        if (args.rollouts >= 1) spec.train.rollouts_per_prompt = args.rollouts;
    } catch (const Error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    }
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"softq-lab: a desk-scale laboratory for KL-regularized value-based RL"};
    app.require_subcommand(1);

    // oracle
    auto* oracle = app.add_subcommand("oracle", "compute theta*, pi* and J_beta(pi*)");
    CommonArgs oracle_args;
    add_common(oracle, oracle_args);

    // train
    auto* train_cmd = app.add_subcommand("train", "run online training or an offline fit");
    CommonArgs train_args;
    add_common(train_cmd, train_args);
    std::string train_mode, train_dataset;
    long train_samples = -1;
    train_cmd->add_option("--mode", train_mode, "online | offline");
    train_cmd->add_option("--dataset", train_dataset, "offline dataset JSONL");
    train_cmd->add_option("--offline-samples", train_samples,
                          "generated dataset size for offline mode");

    // verify
    auto* verify = app.add_subcommand("verify", "run theory verification suites");
    CommonArgs verify_args;
    add_common(verify, verify_args);
    bool v_cotm = false, v_perf = false, v_real = false, v_hard = false, v_trend = false;
    verify->add_flag("--cotm", v_cotm, "change-of-trajectory-measure certificates");
    verify->add_flag("--perf-diff", v_perf, "performance-difference identity and corollary");
    verify->add_flag("--realizability", v_real, "TBRM loss at theta* on random trees");
    verify->add_flag("--hard-instance", v_hard, "two-arm bandit iterative-vs-TBRM check");
    verify->add_flag("--theorem-trend", v_trend, "sample-size decay trend");

    // sweep
    auto* sweep = app.add_subcommand("sweep", "run a config grid");
    CommonArgs sweep_args;
    add_common(sweep, sweep_args);

    // plot
    auto* plot = app.add_subcommand("plot", "render CSV columns as an SVG line chart");
    std::vector<std::string> plot_csvs;
    PlotSpec plot_spec;
    std::string plot_out;
    plot->add_option("csv", plot_csvs, "input CSV files")->required();
    plot->add_option("--x", plot_spec.x_col, "x column")->required();
    plot->add_option("--y", plot_spec.y_col, "y column")->required();
    plot->add_flag("--log-x", plot_spec.log_x, "log-scale x axis");
    plot->add_flag("--log-y", plot_spec.log_y, "log-scale y axis");
    plot->add_option("--title", plot_spec.title, "chart title");
    plot->add_option("--out", plot_out, "output SVG path")->required();

    // gen-env
    auto* gen = app.add_subcommand("gen-env", "write an environment JSON file");
    GenEnvSpec gen_spec;
    std::vector<double> gen_rewards;
    long gen_seed = 1;
    gen->add_option("--kind", gen_spec.kind, "bandit | tree");
    gen->add_option("--rewards", gen_rewards, "bandit arm rewards");
    gen->add_option("--branching", gen_spec.branching, "tree branching factor");
    gen->add_option("--horizon", gen_spec.horizon, "tree depth");
    gen->add_option("--reward-spec", gen_spec.reward,
                    "outcome-bernoulli | outcome-uniform | dense-uniform");
    gen->add_option("--seed", gen_seed, "reward seed");
    gen->add_option("--p", gen_spec.p, "Bernoulli success probability");
    gen->add_option("--lo", gen_spec.lo, "uniform reward lower bound");
    gen->add_option("--hi", gen_spec.hi, "uniform reward upper bound");
    gen->add_option("--out", gen_spec.out_path, "output env JSON path")->required();

    CLI11_PARSE(app, argc, argv);

    if (oracle->parsed()) {
        ExperimentSpec spec;
        const int rc = materialize_spec(oracle_args, spec);
        if (rc != kExitOk) return rc;
        if (spec.env_path.empty()) {
            std::cerr << "config error: oracle needs --env\n";
            return kExitConfig;
        }
        return cmd_oracle(spec.env_path, spec.train.beta, spec.output_dir);
    }
    if (train_cmd->parsed()) {
        ExperimentSpec spec;
        const int rc = materialize_spec(train_args, spec);
        if (rc != kExitOk) return rc;
        if (!train_mode.empty()) {
            if (train_mode != "online" && train_mode != "offline") {
                std::cerr << "config error: mode must be online or offline\n";
                return kExitConfig;
            }
            spec.mode = train_mode;
        }
        if (!train_dataset.empty()) spec.dataset_path = train_dataset;
        if (train_samples >= 1) spec.offline_samples = train_samples;
        return cmd_train(spec);
    }
    if (verify->parsed()) {
        ExperimentSpec spec;
        const int rc = materialize_spec(verify_args, spec);
        if (rc != kExitOk) return rc;
        spec.verify.cotm |= v_cotm;
        spec.verify.perf_diff |= v_perf;
        spec.verify.realizability |= v_real;
        spec.verify.hard_instance |= v_hard;
        spec.verify.theorem_trend |= v_trend;
        return cmd_verify(spec);
    }
    if (sweep->parsed()) {
        ExperimentSpec spec;
        const int rc = materialize_spec(sweep_args, spec);
        if (rc != kExitOk) return rc;
        return cmd_sweep(spec);
    }
    if (plot->parsed()) return cmd_plot(plot_csvs, plot_spec, plot_out);
    if (gen->parsed()) {
        gen_spec.bandit_rewards = gen_rewards;
        gen_spec.seed = (uint64_t)gen_seed;
        return cmd_gen_env(gen_spec);
    }
    return kExitConfig;
}
