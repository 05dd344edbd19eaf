#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"
#include "test_util.hpp"

#include <cstdlib>
#include <filesystem>

using namespace softq;
using namespace testutil;

namespace {

std::string tmp_path(const std::string& name) {
    static const std::string dir = []() {
        std::string d = (std::filesystem::temp_directory_path() / "softq_io_test").string();
        std::filesystem::create_directories(d);
        return d;
    }();
    return dir + "/" + name;
}

}  // namespace

TEST_CASE("fmt17 round-trips doubles exactly") {
    Rng rng(100);
    std::vector<double> samples = {0.0, -0.0, 1.0, -1.0, 1e-300, 1e300, 0.1, 2.0 / 3.0};
    for (int i = 0; i < 200; ++i)
        samples.push_back(std::ldexp(rng.uniform(-1.0, 1.0), rng.uniform_int(81) - 40));
    for (double x : samples) {
        const std::string text = fmt17(x);
        CHECK(std::strtod(text.c_str(), nullptr) == x);
    }
    CHECK(fmt17(std::numeric_limits<double>::infinity()) == "inf");
    CHECK(fmt17(-std::numeric_limits<double>::infinity()) == "-inf");
}

TEST_CASE("environment files round-trip") {
    Rng rng(101);
    LayeredMdp original = random_layered_mdp(rng, 3, 3, 3, true, true);
    const std::string path = tmp_path("env.json");
    save_env_json(original, path);
    LayeredMdp loaded = load_env_json(path);

    CHECK(loaded.horizon == original.horizon);
    CHECK(loaded.layer_sizes == original.layer_sizes);
    CHECK(loaded.action_counts == original.action_counts);
    CHECK(loaded.reward == original.reward);
    CHECK(loaded.rho == original.rho);
    CHECK(loaded.deterministic == original.deterministic);
    for (int h = 0; h < original.horizon; ++h)
        for (int s = 0; s < original.layer_sizes[h]; ++s)
            for (int a = 0; a < original.actions_at(h, s); ++a) {
                REQUIRE(loaded.transition[h][s][a].size() ==
                        original.transition[h][s][a].size());
                for (size_t k = 0; k < original.transition[h][s][a].size(); ++k) {
                    CHECK(loaded.transition[h][s][a][k].next ==
                          original.transition[h][s][a][k].next);
                    CHECK(loaded.transition[h][s][a][k].prob ==
                          original.transition[h][s][a][k].prob);
                }
            }
}

TEST_CASE("environment loader rejects malformed documents") {
    const char* unknown_key = R"({"horizon": 1, "layers": [["a"], ["b"]], "actions": [[1]],
        "transitions": [{"from": "a", "action": 0, "to": "b", "prob": 1.0}],
        "rewards": [], "rho": [1.0], "deterministic": true, "extra": 1})";
    CHECK_THROWS_AS(parse_env_json(unknown_key, "test"), ParseError);

    const char* bad_row_sum = R"({"horizon": 1, "layers": [["a"], ["b"]], "actions": [[1]],
        "transitions": [{"from": "a", "action": 0, "to": "b", "prob": 0.7}],
        "rewards": [], "rho": [1.0], "deterministic": true})";
    CHECK_THROWS_AS(parse_env_json(bad_row_sum, "test"), ParseError);

    const char* duplicate_label = R"({"horizon": 1, "layers": [["a"], ["a"]], "actions": [[1]],
        "transitions": [{"from": "a", "action": 0, "to": "a", "prob": 1.0}],
        "rewards": [], "rho": [1.0], "deterministic": true})";
    CHECK_THROWS_AS(parse_env_json(duplicate_label, "test"), ParseError);

    const char* skips_layer = R"({"horizon": 2, "layers": [["a"], ["b"], ["c"]],
        "actions": [[1], [1]],
        "transitions": [{"from": "a", "action": 0, "to": "c", "prob": 1.0},
                        {"from": "b", "action": 0, "to": "c", "prob": 1.0}],
        "rewards": [], "rho": [1.0], "deterministic": true})";
    CHECK_THROWS_AS(parse_env_json(skips_layer, "test"), ParseError);

    const char* bad_rho = R"({"horizon": 1, "layers": [["a"], ["b"]], "actions": [[1]],
        "transitions": [{"from": "a", "action": 0, "to": "b", "prob": 1.0}],
        "rewards": [], "rho": [0.4], "deterministic": true})";
    CHECK_THROWS_AS(parse_env_json(bad_rho, "test"), ParseError);

    // the error message carries the offending element
    try {
        parse_env_json(bad_row_sum, "test");
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(std::string(e.what()).find("transition") != std::string::npos);
    }
}

TEST_CASE("checkpoints round-trip exactly") {
    Rng rng(102);
    LayeredMdp t = make_token_tree_shape(3, 3);
    PairTable table = random_pair_table(t, rng, 20.0);
    const std::string path = tmp_path("checkpoint.json");
    save_checkpoint(table, path);
    PairTable loaded = load_checkpoint(path, t);
    bool equal = true;
    table.for_each(
        [&](int h, int s, int a, double& x) { equal = equal && x == loaded.at(h, s, a); });
    CHECK(equal);

    write_text_file(tmp_path("partial.json"), "{\"0/0/0\": 1.5}\n");
    CHECK_THROWS_AS(load_checkpoint(tmp_path("partial.json"), t), ParseError);
    write_text_file(tmp_path("badkey.json"), "{\"nonsense\": 1.5}\n");
    CHECK_THROWS_AS(load_checkpoint(tmp_path("badkey.json"), t), ParseError);
}

TEST_CASE("policy tables round-trip") {
    Rng rng(103);
    LayeredMdp t = make_token_tree_shape(2, 3);
    Policy pi = random_policy(t, rng);
    const std::string path = tmp_path("policy.json");
    save_policy_json(pi, path);
    Policy loaded = load_policy_json(path, t);
    for (int h = 0; h < t.horizon; ++h)
        for (int s = 0; s < t.layer_sizes[h]; ++s)
            for (int a = 0; a < t.actions_at(h, s); ++a)
                CHECK(loaded.table[h][s][a] == pi.table[h][s][a]);
}

TEST_CASE("datasets round-trip through JSONL") {
    LayeredMdp t = make_token_tree_random_outcome_uniform(2, 3, 104, 0.0, 1.0);
    Rng rng(105);
    TrajectoryDataset data = collect_grouped_rollouts(t, uniform_policy(t), rng, 250, 4);
    REQUIRE(data.size() == 1000);
    const std::string path = tmp_path("dataset.jsonl");
    save_dataset_jsonl(data, path);
    TrajectoryDataset loaded = load_dataset_jsonl(path, t);

    REQUIRE(loaded.size() == data.size());
    for (long i = 0; i < data.size(); ++i) {
        CHECK(loaded.items[i].states == data.items[i].states);
        CHECK(loaded.items[i].actions == data.items[i].actions);
        CHECK(loaded.items[i].step_rewards == data.items[i].step_rewards);
        CHECK(loaded.items[i].total_reward == data.items[i].total_reward);
        REQUIRE(loaded.items[i].behavior_logprob.has_value());
        CHECK(*loaded.items[i].behavior_logprob == *data.items[i].behavior_logprob);
    }
    REQUIRE(loaded.groups.size() == data.groups.size());
    for (size_t g = 0; g < data.groups.size(); ++g) CHECK(loaded.groups[g] == data.groups[g]);
    CHECK(loaded.per_step_rewards_available == !t.outcome_only_rewards());
}

TEST_CASE("dataset loader reports offending lines") {
    LayeredMdp t = make_token_tree_shape(2, 2);
    const std::string path = tmp_path("bad_dataset.jsonl");
    // second line jumps to an unreachable state
    write_text_file(
        path,
        "{\"states\": [0, 0], \"actions\": [0, 1], \"step_rewards\": [0, 0], \"total_reward\": 0}\n"
        "{\"states\": [0, 1], \"actions\": [0, 0], \"step_rewards\": [0, 0], \"total_reward\": 0}\n");
    try {
        load_dataset_jsonl(path, t);
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(std::string(e.what()).find(":2") != std::string::npos);
    }

    write_text_file(path, "{\"states\": [0, 0], \"actions\": [0, 1], \"step_rewards\": [0, 0], "
                          "\"total_reward\": 0, \"mystery\": 1}\n");
    CHECK_THROWS_AS(load_dataset_jsonl(path, t), ParseError);
}

TEST_CASE("csv write/read round-trip and validation") {
    CsvTable table;
    table.columns = {"iter", "loss"};
    table.rows = {{"1", fmt17(0.5)}, {"2", fmt17(1.0 / 3.0)}};
    const std::string path = tmp_path("table.csv");
    write_csv(table, path);
    CsvTable loaded = read_csv(path);
    CHECK(loaded.columns == table.columns);
    CHECK(loaded.rows == table.rows);
    CHECK(loaded.column_index("loss") == 1);
    CHECK(loaded.column_index("missing") == -1);

    write_text_file(path, "a,b\n1\n");
    CHECK_THROWS_AS(read_csv(path), ParseError);
    write_text_file(path, "");
    CHECK_THROWS_AS(read_csv(path), ParseError);

    CsvTable ragged;
    ragged.columns = {"a", "b"};
    ragged.rows = {{"1"}};
    CHECK_THROWS_AS(write_csv(ragged, path), InvalidArgument);
}
