#include "softq/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <thread>

namespace softq {

namespace fs = std::filesystem;
using nlohmann::json;

void ensure_dir(const std::string& path) {
    std::error_code ec;
    fs::create_directories(path, ec);
    if (ec) throw Error("cannot create directory " + path + ": " + ec.message());
}

void write_trainlog_csv(const TrainLog& log, const std::string& path) {
    CsvTable csv;
    csv.columns = {"iter", "loss", "grad_norm", "j_beta", "subopt", "kl_ref", "wall_ms"};
    for (const auto& r : log.records)
        csv.rows.push_back({std::to_string(r.iter), fmt17(r.loss), fmt17(r.grad_norm),
                            fmt17(r.j_beta), fmt17(r.subopt), fmt17(r.kl_ref),
                            fmt17(r.wall_ms)});
    write_csv(csv, path);
}

// ---------------------------------------------------------------------------
// Experiment spec

namespace {

void reject_unknown(const json& obj, const std::vector<std::string>& known,
                    const std::string& where) {
    for (auto it = obj.begin(); it != obj.end(); ++it)
        if (std::find(known.begin(), known.end(), it.key()) == known.end())
            throw ConfigError("config: unknown key '" + it.key() + "' in " + where);
}

OptimizerCfg parse_optimizer(const json& doc) {
    reject_unknown(doc, {"kind", "step", "momentum", "b1", "b2", "eps"}, "optimizer");
    OptimizerCfg cfg;
    const std::string kind = doc.value("kind", "adam");
    if (kind == "gd")
        cfg.kind = OptimizerKind::Gd;
    else if (kind == "momentum")
        cfg.kind = OptimizerKind::Momentum;
    else if (kind == "adam")
        cfg.kind = OptimizerKind::Adam;
    else
        throw ConfigError("config: unknown optimizer kind '" + kind + "'");
    cfg.step = doc.value("step", cfg.step);
    cfg.momentum = doc.value("momentum", cfg.momentum);
    cfg.b1 = doc.value("b1", cfg.b1);
    cfg.b2 = doc.value("b2", cfg.b2);
    cfg.eps = doc.value("eps", cfg.eps);
    return cfg;
}

BehaviorCfg parse_behavior(const json& doc) {
    reject_unknown(doc, {"kind", "eps"}, "behavior");
    BehaviorCfg cfg;
    const std::string kind = doc.value("kind", "on_policy");
    if (kind == "on_policy")
        cfg.kind = BehaviorKind::OnPolicy;
    else if (kind == "fixed_uniform")
        cfg.kind = BehaviorKind::FixedUniform;
    else if (kind == "eps_mix")
        cfg.kind = BehaviorKind::EpsMix;
    else
        throw ConfigError("config: unknown behavior kind '" + kind + "'");
    cfg.eps = doc.value("eps", cfg.eps);
    return cfg;
}

TrainConfig parse_train(const json& doc) {
    reject_unknown(doc,
                   {"loss", "beta", "iters", "prompt_batch", "rollouts_per_prompt", "grad_steps",
                    "optimizer", "behavior", "seed", "target_refresh_period", "v_mode",
                    "offline_batch", "timing"},
                   "train");
    TrainConfig cfg;
    if (doc.contains("loss")) cfg.loss = parse_loss_kind(doc["loss"].get<std::string>());
    cfg.beta = doc.value("beta", cfg.beta);
    cfg.iters = doc.value("iters", cfg.iters);
    cfg.prompt_batch = doc.value("prompt_batch", cfg.prompt_batch);
    cfg.rollouts_per_prompt = doc.value("rollouts_per_prompt", cfg.rollouts_per_prompt);
    cfg.grad_steps = doc.value("grad_steps", cfg.grad_steps);
    if (doc.contains("optimizer")) cfg.optimizer = parse_optimizer(doc["optimizer"]);
    if (doc.contains("behavior")) cfg.behavior = parse_behavior(doc["behavior"]);
    cfg.seed = doc.value("seed", cfg.seed);
    cfg.target_refresh_period = doc.value("target_refresh_period", cfg.target_refresh_period);
    if (doc.contains("v_mode")) {
        const std::string mode = doc["v_mode"].get<std::string>();
        if (mode == "literal_sum")
            cfg.v_mode = VStarMode::LiteralSum;
        else if (mode == "mean")
            cfg.v_mode = VStarMode::Mean;
        else
            throw ConfigError("config: unknown v_mode '" + mode + "'");
    }
    cfg.offline_batch = doc.value("offline_batch", cfg.offline_batch);
    cfg.timing = doc.value("timing", cfg.timing);
    return cfg;
}

std::string optimizer_kind_name(OptimizerKind k) {
    switch (k) {
        case OptimizerKind::Gd: return "gd";
        case OptimizerKind::Momentum: return "momentum";
        case OptimizerKind::Adam: return "adam";
    }
    return "adam";
}

std::string behavior_kind_name(BehaviorKind k) {
    switch (k) {
        case BehaviorKind::OnPolicy: return "on_policy";
        case BehaviorKind::FixedUniform: return "fixed_uniform";
        case BehaviorKind::EpsMix: return "eps_mix";
    }
    return "on_policy";
}

}  // namespace

ExperimentSpec parse_experiment_spec(const json& doc) {
    if (!doc.is_object()) throw ConfigError("config: expected a JSON object");
    reject_unknown(doc,
                   {"name", "env", "train", "mode", "dataset", "offline_samples", "verify",
                    "sweep", "output_dir"},
                   "the top level");
    ExperimentSpec spec;
    spec.name = doc.value("name", spec.name);
    if (doc.contains("env")) {
        if (doc["env"].is_string())
            spec.env_path = doc["env"].get<std::string>();
        else if (doc["env"].is_object())
            spec.env_inline = doc["env"];
        else
            throw ConfigError("config: env must be a path string or an inline object");
    }
    if (doc.contains("train")) spec.train = parse_train(doc["train"]);
    spec.mode = doc.value("mode", spec.mode);
    if (spec.mode != "online" && spec.mode != "offline")
        throw ConfigError("config: mode must be online or offline");
    spec.dataset_path = doc.value("dataset", spec.dataset_path);
    spec.offline_samples = doc.value("offline_samples", spec.offline_samples);
    if (doc.contains("verify")) {
        const json& v = doc["verify"];
        reject_unknown(v, {"cotm", "perf_diff", "realizability", "hard_instance", "theorem_trend"},
                       "verify");
        spec.verify.cotm = v.value("cotm", false);
        spec.verify.perf_diff = v.value("perf_diff", false);
        spec.verify.realizability = v.value("realizability", false);
        spec.verify.hard_instance = v.value("hard_instance", false);
        spec.verify.theorem_trend = v.value("theorem_trend", false);
    }
    if (doc.contains("sweep")) {
        const json& sw = doc["sweep"];
        reject_unknown(sw, {"grid"}, "sweep");
        if (!sw.contains("grid") || !sw["grid"].is_object())
            throw ConfigError("config: sweep.grid must be an object");
        for (auto it = sw["grid"].begin(); it != sw["grid"].end(); ++it) {
            if (!it.value().is_array() || it.value().empty())
                throw ConfigError("config: sweep.grid." + it.key() +
                                  " must be a non-empty array");
            std::vector<json> values(it.value().begin(), it.value().end());
            spec.grid.emplace_back(it.key(), std::move(values));
        }
    }
    spec.output_dir = doc.value("output_dir", spec.output_dir);
    if (spec.name.find('/') != std::string::npos || spec.name.find("..") != std::string::npos)
        throw ConfigError("config: name must be filesystem-safe");
    return spec;
}

ExperimentSpec load_experiment_spec(const std::string& path) {
    json doc;
    try {
        doc = json::parse(read_text_file(path));
    } catch (const json::parse_error& e) {
        throw ConfigError(path + ": " + e.what());
    }
    return parse_experiment_spec(doc);
}

json spec_to_json(const ExperimentSpec& spec) {
    json train = {
        {"loss", loss_kind_name(spec.train.loss)},
        {"beta", spec.train.beta},
        {"iters", spec.train.iters},
        {"prompt_batch", spec.train.prompt_batch},
        {"rollouts_per_prompt", spec.train.rollouts_per_prompt},
        {"grad_steps", spec.train.grad_steps},
        {"optimizer",
         {{"kind", optimizer_kind_name(spec.train.optimizer.kind)},
          {"step", spec.train.optimizer.step},
          {"momentum", spec.train.optimizer.momentum},
          {"b1", spec.train.optimizer.b1},
          {"b2", spec.train.optimizer.b2},
          {"eps", spec.train.optimizer.eps}}},
        {"behavior",
         {{"kind", behavior_kind_name(spec.train.behavior.kind)},
          {"eps", spec.train.behavior.eps}}},
        {"seed", spec.train.seed},
        {"target_refresh_period", spec.train.target_refresh_period},
        {"v_mode", spec.train.v_mode == VStarMode::Mean ? "mean" : "literal_sum"},
        {"offline_batch", spec.train.offline_batch},
        {"timing", spec.train.timing},
    };
    json doc = {{"name", spec.name},
                {"train", train},
                {"mode", spec.mode},
                {"offline_samples", spec.offline_samples},
                {"output_dir", spec.output_dir}};
    if (!spec.env_path.empty()) doc["env"] = spec.env_path;
    if (spec.env_inline) doc["env"] = *spec.env_inline;
    if (!spec.dataset_path.empty()) doc["dataset"] = spec.dataset_path;
    if (spec.verify.any())
        doc["verify"] = {{"cotm", spec.verify.cotm},
                         {"perf_diff", spec.verify.perf_diff},
                         {"realizability", spec.verify.realizability},
                         {"hard_instance", spec.verify.hard_instance},
                         {"theorem_trend", spec.verify.theorem_trend}};
    if (!spec.grid.empty()) {
        json grid = json::object();
        for (const auto& [key, values] : spec.grid) grid[key] = values;
        doc["sweep"] = {{"grid", grid}};
    }
    return doc;
}

std::string config_hash(const json& canonical) {
    const std::string text = canonical.dump();
    uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx", (unsigned long long)h);
    return buf;
}

LayeredMdp load_environment(const ExperimentSpec& spec) {
    if (spec.env_inline) return parse_env_json(spec.env_inline->dump(), "inline env");
    if (spec.env_path.empty()) throw ConfigError("config: no environment given");
    return load_env_json(spec.env_path);
}

// ---------------------------------------------------------------------------
// Fixtures

LayeredMdp fixture_bandit() { return make_bandit({1.0, 0.0}); }

LayeredMdp fixture_tree_outcome() { return make_token_tree_random_outcome(3, 3, 20240607, 0.5); }

LayeredMdp fixture_tree_dense() {
    Rng rng(424242);
    return make_token_tree_per_step(3, 3, [&rng](int, int, int) { return rng.uniform(0.0, 1.0); });
}

LayeredMdp fixture_tree_trend() { return make_token_tree_random_outcome(2, 12, 90210, 0.5); }

LayeredMdp random_layered_mdp(Rng& rng, int max_states, int max_actions, int max_horizon,
                              bool stochastic, bool dense_rewards) {
    LayeredMdp m;
    m.horizon = 1 + rng.uniform_int(max_horizon);
    m.layer_sizes.resize(m.horizon + 1);
    m.layer_sizes[0] = 1 + rng.uniform_int(std::min(2, max_states));
    for (int h = 1; h <= m.horizon; ++h) m.layer_sizes[h] = 1 + rng.uniform_int(max_states);
    m.action_counts.resize(m.horizon);
    m.transition.resize(m.horizon);
    m.reward.resize(m.horizon);
    for (int h = 0; h < m.horizon; ++h) {
        const int ns = m.layer_sizes[h];
        const int next = m.layer_sizes[h + 1];
        m.action_counts[h].resize(ns);
        m.transition[h].resize(ns);
        m.reward[h].resize(ns);
        for (int s = 0; s < ns; ++s) {
            const int na = 1 + rng.uniform_int(max_actions);
            m.action_counts[h][s] = na;
            m.transition[h][s].resize(na);
            m.reward[h][s].assign(na, 0.0);
            for (int a = 0; a < na; ++a) {
                if (stochastic && next > 1) {
                    std::vector<double> w(next);
                    double sum = 0.0;
                    for (auto& x : w) {
                        x = 0.05 + rng.uniform01();
                        sum += x;
                    }
                    for (int t = 0; t < next; ++t)
                        m.transition[h][s][a].push_back({t, w[t] / sum});
                } else {
                    m.transition[h][s][a] = {TransitionEntry{rng.uniform_int(next), 1.0}};
                }
                const bool carries_reward = dense_rewards || h == m.horizon - 1;
                if (carries_reward) m.reward[h][s][a] = rng.uniform(-1.0, 1.0);
            }
        }
    }
    m.deterministic = !stochastic;
    if (m.layer_sizes[0] == 1) {
        m.rho = {1.0};
    } else {
        std::vector<double> w(m.layer_sizes[0]);
        double sum = 0.0;
        for (auto& x : w) {
            x = 0.1 + rng.uniform01();
            sum += x;
        }
        m.rho.resize(w.size());
        for (size_t i = 0; i < w.size(); ++i) m.rho[i] = w[i] / sum;
    }
    m.validate();
    return m;
}

LayeredMdp random_tree(Rng& rng, int max_branching, int max_horizon, bool dense_rewards) {
    const int a = 2 + rng.uniform_int(std::max(1, max_branching - 1));
    int h = 1 + rng.uniform_int(max_horizon);
    // keep the biggest instances bounded
    while (std::pow((double)a, h) > 20000.0) --h;
    if (dense_rewards)
        return make_token_tree_per_step(a, h,
                                        [&rng](int, int, int) { return rng.uniform(-1.0, 1.0); });
    return make_token_tree_random_outcome_uniform(a, h, rng.bits(), -1.0, 1.0);
}

Policy random_reference(const LayeredMdp& mdp, Rng& rng) { return random_policy(mdp, rng, 1.5); }

PairTable random_pair_table(const LayeredMdp& mdp, Rng& rng, double scale) {
    PairTable t = PairTable::zeros(mdp);
    t.for_each([&](int, int, int, double& x) { x = rng.uniform(-scale, scale); });
    return t;
}

// ---------------------------------------------------------------------------
// Suites

SuiteResult run_realizability_suite(int instances, uint64_t seed) {
    SuiteResult out;
    out.csv.columns = {"instance", "branching", "horizon", "beta", "tbrm_at_star", "pass"};
    out.pass = true;
    double worst = 0.0;
    for (int i = 0; i < instances; ++i) {
        Rng rng(mix_seed(seed, (uint64_t)i));
        const int a = 2 + rng.uniform_int(4);  // <= 5
        int h = 1 + rng.uniform_int(6);        // <= 6
        while (std::pow((double)a, h) > 20000.0) --h;
        LayeredMdp mdp = make_token_tree_per_step(
            a, h, [&rng](int, int, int) { return rng.uniform(-1.0, 1.0); });
        Policy piref = random_reference(mdp, rng);
        const double beta = rng.uniform(0.1, 1.0);
        TabularLogitModel star = soft_value_iteration(mdp, beta, piref);
        Policy behavior = random_policy(mdp, rng, 2.0);
        TrajectoryDataset data;
        data.items = rollout(mdp, behavior, rng, 20);
        const double loss = tbrm_loss(star, mdp, beta, piref, data).value;
        const bool pass = loss <= 1e-9;
        out.pass = out.pass && pass;
        worst = std::max(worst, loss);
        out.csv.rows.push_back({std::to_string(i), std::to_string(a), std::to_string(h),
                                fmt17(beta), fmt17(loss), pass ? "1" : "0"});
    }
    out.stats["worst_loss"] = worst;
    return out;
}

namespace {

bool cert_ok(const CotmCertificate& cert) {
    constexpr double slack = 1.0 + 1e-9;
    if (!cert.feasible) return true;  // reported, not compared
    if (std::isinf(cert.bound_chi)) return true;
    return cert.lhs_ratio <= cert.bound_chi * slack && cert.bound_chi <= cert.bound_csa * slack;
}

void push_cert_row(CsvTable& csv, int id, const char* kind, const CotmCertificate& cert,
                   bool pass) {
    csv.rows.push_back({std::to_string(id), fmt17(cert.lhs_ratio), fmt17(cert.bound_chi),
                        fmt17(cert.bound_csa), cert.feasible ? "1" : "0", kind,
                        pass ? "1" : "0"});
}

}  // namespace

SuiteResult run_cotm_suite(int random_certs, int sup_certs, uint64_t seed) {
    SuiteResult out;
    out.csv.columns = {"instance_id", "lhs_ratio", "bound_chi", "bound_csa", "feasible", "kind",
                       "pass"};
    out.pass = true;
    int id = 0;

    // two-atom equality case: bandit, point-mass pi, uniform mu, f = 1{a_1}
    {
        LayeredMdp bandit = fixture_bandit();
        Policy mu = uniform_policy(bandit);
        Policy pi = mu;
        pi.table[0][0] = {1.0, 0.0};
        PairTable f = PairTable::zeros(bandit);
        f.at(0, 0, 0) = 1.0;
        CotmCertificate cert = cotm_ratio(bandit, pi, mu, f);
        bool pass = cert_ok(cert) && std::abs(cert.lhs_ratio - 2.0) <= 1e-9 &&
                    std::abs(cert.bound_chi - 2.0) <= 1e-9;
        out.pass = out.pass && pass;
        push_cert_row(out.csv, id++, "equality", cert, pass);
        CotmCertificate sup = cotm_sup_ratio(bandit, pi, mu);
        pass = cert_ok(sup) && sup.feasible && std::abs(sup.lhs_ratio - 2.0) <= 1e-9;
        out.pass = out.pass && pass;
        push_cert_row(out.csv, id++, "equality-sup", sup, pass);
    }

    for (int i = 0; i < random_certs; ++i) {
        Rng rng(mix_seed(seed, 1000 + (uint64_t)i));
        const bool stochastic = rng.bernoulli(0.5);
        LayeredMdp mdp = random_layered_mdp(rng, 3, 3, 3, stochastic, true);
        Policy pi = random_policy(mdp, rng, 2.0);
        Policy mu = random_policy(mdp, rng, 1.0);
        PairTable f = random_pair_table(mdp, rng, 2.0);
        CotmCertificate cert = cotm_ratio(mdp, pi, mu, f);
        cert.f_kind = CotmCertificate::FKind::Random;
        const bool pass = cert_ok(cert);
        out.pass = out.pass && pass;
        push_cert_row(out.csv, id++, "random", cert, pass);
    }

    for (int i = 0; i < sup_certs; ++i) {
        Rng rng(mix_seed(seed, 5000 + (uint64_t)i));
        const bool stochastic = rng.bernoulli(0.3);
        LayeredMdp mdp = random_layered_mdp(rng, 3, 3, 3, stochastic, true);
        Policy pi = random_policy(mdp, rng, 2.0);
        Policy mu = random_policy(mdp, rng, 1.0);
        CotmCertificate cert = cotm_sup_ratio(mdp, pi, mu);
        const bool pass = cert_ok(cert);
        out.pass = out.pass && pass;
        push_cert_row(out.csv, id++, "supremum", cert, pass);
    }
    return out;
}

SuiteResult run_perf_diff_suite(int instances, uint64_t seed) {
    SuiteResult out;
    out.csv.columns = {"instance", "lhs", "rhs", "abs_diff", "pass"};
    out.pass = true;
    double worst = 0.0;
    for (int i = 0; i < instances; ++i) {
        Rng rng(mix_seed(seed, (uint64_t)i));
        const bool stochastic = rng.bernoulli(0.5);
        LayeredMdp mdp = random_layered_mdp(rng, 3, 3, 3, stochastic, true);
        Policy piref = random_reference(mdp, rng);
        Policy pi = random_policy(mdp, rng, 2.0);
        Policy pi_dagger = random_policy(mdp, rng, 2.0);
        PairTable q = random_pair_table(mdp, rng, 2.0);
        const double beta = rng.uniform(0.1, 1.0);
        PerfDiffCheck check = perf_diff_check(mdp, beta, piref, q, pi, pi_dagger);
        const bool pass = check.abs_diff <= 1e-9;
        out.pass = out.pass && pass;
        worst = std::max(worst, check.abs_diff);
        out.csv.rows.push_back({std::to_string(i), fmt17(check.lhs), fmt17(check.rhs),
                                fmt17(check.abs_diff), pass ? "1" : "0"});
    }
    out.stats["worst_abs_diff"] = worst;
    return out;
}

SuiteResult run_subopt_bound_suite(int instances, uint64_t seed) {
    SuiteResult out;
    out.csv.columns = {"instance", "subopt", "bound", "pass"};
    out.pass = true;
    for (int i = 0; i < instances; ++i) {
        Rng rng(mix_seed(seed, (uint64_t)i));
        LayeredMdp mdp = random_tree(rng, 3, 3, true);
        Policy piref = random_reference(mdp, rng);
        const double beta = rng.uniform(0.1, 1.0);
        TabularLogitModel model;
        model.beta = beta;
        model.ref = piref;
        model.logits = random_pair_table(mdp, rng, 2.0);
        SuboptBound sb = subopt_and_bound(mdp, beta, piref, model);
        const bool pass = sb.subopt <= sb.bound * (1.0 + 1e-9) + 1e-12 && sb.subopt >= -1e-9;
        out.pass = out.pass && pass;
        out.csv.rows.push_back(
            {std::to_string(i), fmt17(sb.subopt), fmt17(sb.bound), pass ? "1" : "0"});
    }
    return out;
}

HardInstanceResult run_hard_instance() {
    HardInstanceResult out;
    LayeredMdp bandit = fixture_bandit();
    Policy piref = uniform_policy(bandit);
    const double beta = 0.1;

    TrajectoryDataset data;
    data.items.push_back({{0}, {0}, {1.0}, 1.0, std::nullopt});
    data.items.push_back({{0}, {1}, {0.0}, 0.0, std::nullopt});
    data.validate(bandit);

    std::vector<PairTable> q_class;
    PairTable q_dagger = PairTable::zeros(bandit);
    PairTable q_star = PairTable::zeros(bandit);
    q_star.at(0, 0, 0) = 10.0;
    q_class.push_back(q_dagger);
    q_class.push_back(q_star);

    auto as_model = [&](const PairTable& q) {
        TabularLogitModel m;
        m.beta = beta;
        m.ref = piref;
        m.logits = q;
        return m;
    };

    TabularLogitModel target_dagger = as_model(q_dagger);
    out.iter_at_dagger =
        iterative_tbrm_loss(as_model(q_dagger), target_dagger, bandit, beta, piref, data).value;
    out.iter_at_star =
        iterative_tbrm_loss(as_model(q_star), target_dagger, bandit, beta, piref, data).value;
    out.tbrm_at_dagger = tbrm_loss(as_model(q_dagger), bandit, beta, piref, data).value;
    out.tbrm_at_star = tbrm_loss(as_model(q_star), bandit, beta, piref, data).value;

    TrainConfig cfg;
    cfg.loss = LossKind::TbrmIter;
    cfg.beta = beta;
    cfg.iters = 10;
    IterateResult iter = iterate_targets(bandit, piref, data, cfg, &q_class, 0);
    out.iter_stuck = true;
    for (const auto& entry : iter.refreshes) out.iter_stuck = out.iter_stuck && entry.selected == 0;
    out.tbrm_selects_star = out.tbrm_at_star < out.tbrm_at_dagger;

    // closed forms from the two per-arm residuals
    const double ln2 = std::log(2.0);
    const double expect_tbrm_dagger = ((10.0 - ln2) * (10.0 - ln2) + ln2 * ln2) / 2.0;
    const double expect_tbrm_star = ln2 * ln2;
    const double v_star_logits = std::log(std::exp(10.0) + 1.0);
    const double res1 = ln2 - 10.0 + (10.0 - v_star_logits) + ln2;
    const double res2 = ln2 + (0.0 - v_star_logits) + ln2;
    const double expect_iter_star = (res1 * res1 + res2 * res2) / 2.0;

    const double tol = 1e-4;
    out.pass = std::abs(out.iter_at_dagger - expect_tbrm_dagger) <= tol &&
               std::abs(out.iter_at_star - expect_iter_star) <= tol &&
               std::abs(out.tbrm_at_dagger - expect_tbrm_dagger) <= tol &&
               std::abs(out.tbrm_at_star - expect_tbrm_star) <= tol && out.iter_stuck &&
               out.tbrm_selects_star;

    out.csv.columns = {"quantity", "value", "pass"};
    out.csv.rows = {
        {"iter_at_q_dagger", fmt17(out.iter_at_dagger),
         std::abs(out.iter_at_dagger - expect_tbrm_dagger) <= tol ? "1" : "0"},
        {"iter_at_q_star", fmt17(out.iter_at_star),
         std::abs(out.iter_at_star - expect_iter_star) <= tol ? "1" : "0"},
        {"tbrm_at_q_dagger", fmt17(out.tbrm_at_dagger),
         std::abs(out.tbrm_at_dagger - expect_tbrm_dagger) <= tol ? "1" : "0"},
        {"tbrm_at_q_star", fmt17(out.tbrm_at_star),
         std::abs(out.tbrm_at_star - expect_tbrm_star) <= tol ? "1" : "0"},
        {"iter_stuck", out.iter_stuck ? "1" : "0", out.iter_stuck ? "1" : "0"},
        {"tbrm_selects_star", out.tbrm_selects_star ? "1" : "0",
         out.tbrm_selects_star ? "1" : "0"},
    };
    return out;
}

TrendSuite run_trend_suite(uint64_t seed) {
    TrendSuite out;
    LayeredMdp mdp = fixture_tree_trend();
    Policy piref = uniform_policy(mdp);
    Policy mu = uniform_policy(mdp);
    const double beta = 0.1;

    TrainConfig cfg;
    cfg.loss = LossKind::Tbrm;
    cfg.beta = beta;
    cfg.iters = 40;
    cfg.grad_steps = 50;
    cfg.optimizer = {OptimizerKind::Adam, 0.02, 0.9, 0.9, 0.999, 1e-8};

    std::vector<long> sizes = {128, 256, 512, 1024, 2048, 4096, 8192};
    std::vector<uint64_t> seeds;
    for (uint64_t i = 0; i < 5; ++i) seeds.push_back(mix_seed(seed, 77 + i));

    out.trend = theorem_trend(mdp, beta, piref, mu, sizes, seeds, cfg);
    out.pass = out.trend.loglog_slope >= -0.8 && out.trend.loglog_slope <= -0.25 &&
               out.trend.nonincreasing_steps >= 5;
    out.csv.columns = {"n", "median_subopt"};
    for (const auto& p : out.trend.points)
        out.csv.rows.push_back({std::to_string(p.n), fmt17(p.median_subopt)});
    return out;
}

// ---------------------------------------------------------------------------
// Commands

namespace {

int guard(const std::function<int()>& fn) {
    try {
        return fn();
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const ParseError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const RewardGranularityError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
}

struct CellOutcome {
    bool ok = false;
    std::string error;
    double final_loss = 0, final_subopt = 0, j_star = 0;
};

Policy offline_generation_policy(const LayeredMdp& mdp, const Policy& piref,
                                 const BehaviorCfg& behavior) {
    switch (behavior.kind) {
        case BehaviorKind::OnPolicy: return piref;  // the pre-training model equals piref
        case BehaviorKind::FixedUniform: return uniform_policy(mdp);
        case BehaviorKind::EpsMix: return mix_with_uniform(mdp, piref, behavior.eps);
    }
    return piref;
}

CellOutcome run_train_to_dir(const ExperimentSpec& spec, const std::string& dir) {
    CellOutcome out;
    const auto started = std::chrono::steady_clock::now();
    ensure_dir(dir);
    LayeredMdp mdp = load_environment(spec);
    Policy piref = uniform_policy(mdp);

    TrainResult result;
    long dataset_size = 0;
    if (spec.mode == "online") {
        result = train(mdp, piref, spec.train);
    } else {
        TrajectoryDataset data;
        if (!spec.dataset_path.empty()) {
            data = load_dataset_jsonl(spec.dataset_path, mdp);
        } else {
            Policy behavior = offline_generation_policy(mdp, piref, spec.train.behavior);
            Rng rng(mix_seed(spec.train.seed, 0xDA7A));
            const int n = spec.train.rollouts_per_prompt;
            const long prompts = (spec.offline_samples + n - 1) / n;
            data = collect_grouped_rollouts(mdp, behavior, rng, (int)prompts, n);
        }
        dataset_size = data.size();
        result = offline_fit(mdp, piref, data, spec.train);
    }

    write_trainlog_csv(result.log, dir + "/trainlog.csv");
    save_checkpoint(result.model.logits, dir + "/model.json");

    json canonical = spec_to_json(spec);
    json manifest = {
        {"name", spec.name},
        {"version", kToolVersion},
        {"config", canonical},
        {"config_hash", config_hash(canonical)},
        {"seed", spec.train.seed},
        {"mode", spec.mode},
        {"outputs", {"trainlog.csv", "model.json"}},
        {"j_beta_star", result.log.j_beta_star},
        {"j_beta_ref", result.log.j_beta_ref},
        {"final_loss", result.log.final_loss},
        {"final_subopt", result.log.final_subopt()},
        {"eps_opt_proxy", result.log.eps_opt_proxy()},
        {"max_abs_logit", result.model.max_abs_logit()},
    };
    if (spec.mode == "offline") manifest["dataset_size"] = dataset_size;
    if (spec.train.timing)
        manifest["wall_ms_total"] =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started)
                .count();
    write_text_file(dir + "/manifest.json", manifest.dump(2) + "\n");

    out.ok = true;
    out.final_loss = result.log.final_loss;
    out.final_subopt = result.log.final_subopt();
    out.j_star = result.log.j_beta_star;
    return out;
}

void apply_grid_override(ExperimentSpec& spec, const std::string& key, const json& value) {
    try {
        if (key == "beta")
            spec.train.beta = value.get<double>();
        else if (key == "iters")
            spec.train.iters = value.get<long>();
        else if (key == "prompt_batch")
            spec.train.prompt_batch = value.get<int>();
        else if (key == "rollouts_per_prompt")
            spec.train.rollouts_per_prompt = value.get<int>();
        else if (key == "grad_steps")
            spec.train.grad_steps = value.get<int>();
        else if (key == "seed")
            spec.train.seed = value.get<uint64_t>();
        else if (key == "loss")
            spec.train.loss = parse_loss_kind(value.get<std::string>());
        else if (key == "opt_step")
            spec.train.optimizer.step = value.get<double>();
        else if (key == "target_refresh_period")
            spec.train.target_refresh_period = value.get<int>();
        else if (key == "offline_samples")
            spec.offline_samples = value.get<long>();
        else if (key == "eps")
            spec.train.behavior.eps = value.get<double>();
        else
            throw ConfigError("sweep: grid parameter '" + key +
                              "' does not name a train config field");
    } catch (const json::exception&) {
        throw ConfigError("sweep: bad value type for grid parameter '" + key + "'");
    }
}

int sweep_thread_cap() {
    if (const char* env = std::getenv("SOFTQ_LAB_THREADS")) {
        const int n = std::atoi(env);
        if (n >= 1) return n;
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : (int)hw;
}

}  // namespace

int cmd_oracle(const std::string& env_path, double beta, const std::string& out_dir) {
    return guard([&]() {
        if (beta <= 0.0) throw ConfigError("oracle: beta must be positive");
        LayeredMdp mdp = load_env_json(env_path);
        Policy piref = uniform_policy(mdp);
        TabularLogitModel star = soft_value_iteration(mdp, beta, piref);
        Policy pi_star = star.policy(mdp);
        const double j_star = j_beta(mdp, pi_star, beta, piref);

        ensure_dir(out_dir);
        save_checkpoint(star.logits, out_dir + "/theta_star.json");
        save_policy_json(pi_star, out_dir + "/pi_star.json");
        json manifest = {{"name", "oracle"},
                         {"version", kToolVersion},
                         {"env", env_path},
                         {"beta", beta},
                         {"j_beta_star", j_star},
                         {"outputs", {"theta_star.json", "pi_star.json"}}};
        write_text_file(out_dir + "/manifest.json", manifest.dump(2) + "\n");
        std::cout << "j_beta_star = " << fmt17(j_star) << "\n";
        return kExitOk;
    });
}

int cmd_train(const ExperimentSpec& spec) {
    return guard([&]() {
        CellOutcome outcome = run_train_to_dir(spec, spec.output_dir);
        std::cout << "final_loss = " << fmt17(outcome.final_loss)
                  << ", final_subopt = " << fmt17(outcome.final_subopt) << "\n";
        return kExitOk;
    });
}

int cmd_verify(const ExperimentSpec& spec) {
    return guard([&]() {
        if (!spec.verify.any())
            throw ConfigError("verify: no checks enabled (use the verify config block or flags)");
        ensure_dir(spec.output_dir);
        const uint64_t seed = spec.train.seed;
        json checks = json::object();
        bool all_pass = true;

        if (spec.verify.realizability) {
            SuiteResult r = run_realizability_suite(100, seed);
            write_csv(r.csv, spec.output_dir + "/realizability.csv");
            checks["realizability"] = r.pass;
            all_pass = all_pass && r.pass;
            std::cout << "realizability: " << (r.pass ? "pass" : "FAIL") << "\n";
        }
        if (spec.verify.cotm) {
            SuiteResult r = run_cotm_suite(200, 50, seed);
            write_csv(r.csv, spec.output_dir + "/cotm.csv");
            checks["cotm"] = r.pass;
            all_pass = all_pass && r.pass;
            std::cout << "cotm: " << (r.pass ? "pass" : "FAIL") << "\n";
        }
        if (spec.verify.perf_diff) {
            SuiteResult r = run_perf_diff_suite(100, seed);
            write_csv(r.csv, spec.output_dir + "/perf_diff.csv");
            SuiteResult sb = run_subopt_bound_suite(100, seed);
            write_csv(sb.csv, spec.output_dir + "/subopt_bound.csv");
            const bool pass = r.pass && sb.pass;
            checks["perf_diff"] = pass;
            all_pass = all_pass && pass;
            std::cout << "perf_diff: " << (pass ? "pass" : "FAIL") << "\n";
        }
        if (spec.verify.hard_instance) {
            HardInstanceResult r = run_hard_instance();
            write_csv(r.csv, spec.output_dir + "/hard_instance.csv");
            checks["hard_instance"] = r.pass;
            all_pass = all_pass && r.pass;
            std::cout << "hard instance: iterative loss at Q_dagger = " << fmt17(r.iter_at_dagger)
                      << ", at Q_star = " << fmt17(r.iter_at_star) << "\n";
            std::cout << "hard instance: tbrm loss at Q_dagger = " << fmt17(r.tbrm_at_dagger)
                      << ", at Q_star = " << fmt17(r.tbrm_at_star) << "\n";
            std::cout << "hard instance: iterative verdict = "
                      << (r.iter_stuck ? "stuck" : "escapes") << ", tbrm verdict = "
                      << (r.tbrm_selects_star ? "selects Q*" : "selects Q_dagger") << "\n";
            std::cout << "hard_instance: " << (r.pass ? "pass" : "FAIL") << "\n";
        }
        if (spec.verify.theorem_trend) {
            TrendSuite r = run_trend_suite(seed);
            write_csv(r.csv, spec.output_dir + "/theorem_trend.csv");
            checks["theorem_trend"] = r.pass;
            checks["theorem_trend_slope"] = r.trend.loglog_slope;
            all_pass = all_pass && r.pass;
            std::cout << "theorem_trend: slope = " << fmt17(r.trend.loglog_slope) << " ("
                      << (r.pass ? "pass" : "FAIL") << ")\n";
        }

        json manifest = {{"name", spec.name},
                         {"version", kToolVersion},
                         {"seed", seed},
                         {"checks", checks},
                         {"pass", all_pass}};
        write_text_file(spec.output_dir + "/manifest.json", manifest.dump(2) + "\n");
        return all_pass ? kExitOk : kExitVerifyFail;
    });
}

int cmd_sweep(const ExperimentSpec& spec) {
    return guard([&]() {
        if (spec.grid.empty()) throw ConfigError("sweep: empty grid");
        ensure_dir(spec.output_dir);

        long cell_count = 1;
        for (const auto& [key, values] : spec.grid) cell_count *= (long)values.size();
        const bool grid_has_seed =
            std::any_of(spec.grid.begin(), spec.grid.end(),
                        [](const auto& kv) { return kv.first == "seed"; });

        struct Cell {
            ExperimentSpec spec;
            std::vector<std::pair<std::string, std::string>> assignment;
        };
        std::vector<Cell> cells((size_t)cell_count);
        for (long idx = 0; idx < cell_count; ++idx) {
            Cell cell;
            cell.spec = spec;
            cell.spec.grid.clear();
            long rem = idx;
            for (const auto& [key, values] : spec.grid) {
                const long vi = rem % (long)values.size();
                rem /= (long)values.size();
                apply_grid_override(cell.spec, key, values[vi]);
                cell.assignment.emplace_back(key, values[vi].dump());
            }
            if (!grid_has_seed) cell.spec.train.seed = mix_seed(spec.train.seed, (uint64_t)idx);
            cell.spec.output_dir = spec.output_dir + "/cell_" + std::to_string(idx);
            cells[(size_t)idx] = std::move(cell);
        }

        std::vector<CellOutcome> outcomes((size_t)cell_count);
        std::atomic<long> next{0};
        const int workers = std::min<long>(sweep_thread_cap(), cell_count);
        auto worker = [&]() {
            for (;;) {
                const long idx = next.fetch_add(1);
                if (idx >= cell_count) return;
                try {
                    outcomes[(size_t)idx] =
                        run_train_to_dir(cells[(size_t)idx].spec, cells[(size_t)idx].spec.output_dir);
                } catch (const std::exception& e) {
                    outcomes[(size_t)idx].ok = false;
                    outcomes[(size_t)idx].error = e.what();
                }
            }
        };
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
        for (auto& t : pool) t.join();

        CsvTable merged;
        merged.columns = {"cell"};
        for (const auto& [key, values] : spec.grid) merged.columns.push_back(key);
        merged.columns.insert(merged.columns.end(),
                              {"status", "final_loss", "final_subopt", "j_beta_star"});
        bool any_failed = false;
        for (long idx = 0; idx < cell_count; ++idx) {
            const auto& cell = cells[(size_t)idx];
            const auto& oc = outcomes[(size_t)idx];
            std::vector<std::string> row = {std::to_string(idx)};
            for (const auto& [key, value] : cell.assignment) row.push_back(value);
            row.push_back(oc.ok ? "ok" : "error");
            row.push_back(oc.ok ? fmt17(oc.final_loss) : "");
            row.push_back(oc.ok ? fmt17(oc.final_subopt) : "");
            row.push_back(oc.ok ? fmt17(oc.j_star) : "");
            merged.rows.push_back(std::move(row));
            any_failed = any_failed || !oc.ok;
        }
        write_csv(merged, spec.output_dir + "/sweep.csv");

        json canonical = spec_to_json(spec);
        json manifest = {{"name", spec.name},
                         {"version", kToolVersion},
                         {"config", canonical},
                         {"config_hash", config_hash(canonical)},
                         {"cells", cell_count},
                         {"failed_cells", 0},
                         {"outputs", {"sweep.csv"}}};
        long failed = 0;
        for (const auto& oc : outcomes)
            if (!oc.ok) ++failed;
        manifest["failed_cells"] = failed;

        // when sweeping the offline sample size, fit the decay slope across cells
        const bool has_n = std::any_of(spec.grid.begin(), spec.grid.end(),
                                       [](const auto& kv) { return kv.first == "offline_samples"; });
        if (has_n && spec.mode == "offline" && failed == 0) {
            std::map<long, std::vector<double>> by_n;
            for (long idx = 0; idx < cell_count; ++idx) {
                long n = 0;
                for (const auto& [key, value] : cells[(size_t)idx].assignment)
                    if (key == "offline_samples") n = std::stol(value);
                by_n[n].push_back(outcomes[(size_t)idx].final_subopt);
            }
            double sx = 0, sy = 0, sxx = 0, sxy = 0;
            for (auto& [n, vals] : by_n) {
                std::sort(vals.begin(), vals.end());
                const double median = vals[vals.size() / 2];
                const double x = std::log((double)n);
                const double y = std::log(std::max(median, 1e-300));
                sx += x;
                sy += y;
                sxx += x * x;
                sxy += x * y;
            }
            const double k = (double)by_n.size();
            if (k >= 2)
                manifest["loglog_slope"] = (k * sxy - sx * sy) / (k * sxx - sx * sx);
        }
        write_text_file(spec.output_dir + "/manifest.json", manifest.dump(2) + "\n");
        std::cout << "sweep: " << cell_count - failed << "/" << cell_count << " cells ok\n";
        return any_failed ? kExitRuntime : kExitOk;
    });
}

int cmd_plot(const std::vector<std::string>& csv_paths, const PlotSpec& plot,
             const std::string& out_svg) {
    return guard([&]() {
        render_line_chart(csv_paths, plot, out_svg);
        return kExitOk;
    });
}

int cmd_gen_env(const GenEnvSpec& spec) {
    return guard([&]() {
        if (spec.out_path.empty()) throw ConfigError("gen-env: missing output path");
        LayeredMdp mdp;
        if (spec.kind == "bandit") {
            if (spec.bandit_rewards.empty())
                throw ConfigError("gen-env: bandit needs a reward list");
            mdp = make_bandit(spec.bandit_rewards);
        } else if (spec.kind == "tree") {
            if (spec.reward == "outcome-bernoulli")
                mdp = make_token_tree_random_outcome(spec.branching, spec.horizon, spec.seed,
                                                     spec.p);
            else if (spec.reward == "outcome-uniform")
                mdp = make_token_tree_random_outcome_uniform(spec.branching, spec.horizon,
                                                             spec.seed, spec.lo, spec.hi);
            else if (spec.reward == "dense-uniform") {
                Rng rng(spec.seed);
                mdp = make_token_tree_per_step(
                    spec.branching, spec.horizon,
                    [&rng, &spec](int, int, int) { return rng.uniform(spec.lo, spec.hi); });
            } else {
                throw ConfigError("gen-env: unknown reward spec '" + spec.reward + "'");
            }
        } else {
            throw ConfigError("gen-env: unknown kind '" + spec.kind + "'");
        }
        save_env_json(mdp, spec.out_path);
        return kExitOk;
    });
}

}  // namespace softq
