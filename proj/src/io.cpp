#include "softq/io.hpp"

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"

namespace softq {

using nlohmann::json;

std::string fmt17(double x) {
    if (std::isnan(x)) return "nan";
    if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ParseError("cannot write file: " + path);
    out << content;
}

// ---------------------------------------------------------------------------
// Environment files

namespace {

json parse_json_or_throw(const std::string& text, const std::string& origin) {
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError(origin + ": " + e.what());
    }
}

[[noreturn]] void env_error(const std::string& origin, const std::string& where,
                            const std::string& what) {
    throw ParseError(origin + ": " + where + ": " + what);
}

}  // namespace

LayeredMdp parse_env_json(const std::string& text, const std::string& origin) {
    const json doc = parse_json_or_throw(text, origin);
    if (!doc.is_object()) env_error(origin, "root", "expected a JSON object");
    static const std::vector<std::string> known = {"horizon", "layers",  "actions", "transitions",
                                                   "rewards", "rho",     "deterministic",
                                                   "enumeration_cap"};
    for (auto it = doc.begin(); it != doc.end(); ++it)
        if (std::find(known.begin(), known.end(), it.key()) == known.end())
            env_error(origin, it.key(), "unknown key");
    for (const char* key : {"horizon", "layers", "actions", "transitions", "rewards", "rho",
                            "deterministic"})
        if (!doc.contains(key)) env_error(origin, key, "missing required key");

    LayeredMdp m;
    if (!doc["horizon"].is_number_integer()) env_error(origin, "horizon", "expected an integer");
    m.horizon = doc["horizon"].get<int>();
    if (m.horizon < 1) env_error(origin, "horizon", "must be >= 1");

    const json& layers = doc["layers"];
    if (!layers.is_array() || (int)layers.size() != m.horizon + 1)
        env_error(origin, "layers", "expected horizon+1 arrays of state labels");
    std::map<std::string, std::pair<int, int>> by_label;
    m.layer_sizes.resize(m.horizon + 1);
    m.labels.resize(m.horizon + 1);
    for (int h = 0; h <= m.horizon; ++h) {
        if (!layers[h].is_array() || layers[h].empty())
            env_error(origin, "layers[" + std::to_string(h) + "]", "expected a non-empty array");
        m.layer_sizes[h] = (int)layers[h].size();
        for (int s = 0; s < m.layer_sizes[h]; ++s) {
            if (!layers[h][s].is_string())
                env_error(origin, "layers[" + std::to_string(h) + "]", "labels must be strings");
            const std::string label = layers[h][s].get<std::string>();
            if (by_label.count(label))
                env_error(origin, "layers[" + std::to_string(h) + "]",
                          "duplicate state label '" + label + "'");
            by_label[label] = {h, s};
            m.labels[h].push_back(label);
        }
    }
    auto resolve = [&](const json& j, const std::string& where) -> std::pair<int, int> {
        if (!j.is_string()) env_error(origin, where, "state reference must be a label string");
        auto it = by_label.find(j.get<std::string>());
        if (it == by_label.end())
            env_error(origin, where, "unknown state label '" + j.get<std::string>() + "'");
        return it->second;
    };

    const json& actions = doc["actions"];
    if (!actions.is_array() || (int)actions.size() != m.horizon)
        env_error(origin, "actions", "expected one array of per-state counts per decision layer");
    m.action_counts.resize(m.horizon);
    m.transition.resize(m.horizon);
    m.reward.resize(m.horizon);
    for (int h = 0; h < m.horizon; ++h) {
        if (!actions[h].is_array() || (int)actions[h].size() != m.layer_sizes[h])
            env_error(origin, "actions[" + std::to_string(h) + "]",
                      "count mismatch with layer size");
        m.action_counts[h].resize(m.layer_sizes[h]);
        m.transition[h].resize(m.layer_sizes[h]);
        m.reward[h].resize(m.layer_sizes[h]);
        for (int s = 0; s < m.layer_sizes[h]; ++s) {
            if (!actions[h][s].is_number_integer() || actions[h][s].get<int>() < 1)
                env_error(origin, "actions[" + std::to_string(h) + "]",
                          "per-state count must be a positive integer");
            m.action_counts[h][s] = actions[h][s].get<int>();
            m.transition[h][s].resize(m.action_counts[h][s]);
            m.reward[h][s].assign(m.action_counts[h][s], 0.0);
        }
    }

    const json& transitions = doc["transitions"];
    if (!transitions.is_array()) env_error(origin, "transitions", "expected an array");
    for (size_t i = 0; i < transitions.size(); ++i) {
        const std::string where = "transitions[" + std::to_string(i) + "]";
        const json& t = transitions[i];
        if (!t.is_object() || !t.contains("from") || !t.contains("action") || !t.contains("to") ||
            !t.contains("prob"))
            env_error(origin, where, "expected {from, action, to, prob}");
        const auto [fh, fs] = resolve(t["from"], where + ".from");
        const auto [th, ts] = resolve(t["to"], where + ".to");
        if (fh >= m.horizon) env_error(origin, where, "terminal states have no transitions");
        if (th != fh + 1) env_error(origin, where, "transition must connect adjacent layers");
        if (!t["action"].is_number_integer()) env_error(origin, where, "action must be an integer");
        const int a = t["action"].get<int>();
        if (a < 0 || a >= m.action_counts[fh][fs])
            env_error(origin, where, "action out of range");
        if (!t["prob"].is_number()) env_error(origin, where, "prob must be a number");
        m.transition[fh][fs][a].push_back({ts, t["prob"].get<double>()});
    }

    const json& rewards = doc["rewards"];
    if (!rewards.is_array()) env_error(origin, "rewards", "expected an array");
    for (size_t i = 0; i < rewards.size(); ++i) {
        const std::string where = "rewards[" + std::to_string(i) + "]";
        const json& r = rewards[i];
        if (!r.is_object() || !r.contains("state") || !r.contains("action") ||
            !r.contains("value"))
            env_error(origin, where, "expected {state, action, value}");
        const auto [h, s] = resolve(r["state"], where + ".state");
        if (h >= m.horizon) env_error(origin, where, "terminal states carry no reward");
        const int a = r["action"].get<int>();
        if (a < 0 || a >= m.action_counts[h][s]) env_error(origin, where, "action out of range");
        if (!r["value"].is_number()) env_error(origin, where, "value must be a number");
        m.reward[h][s][a] = r["value"].get<double>();
    }

    const json& rho = doc["rho"];
    if (!rho.is_array() || (int)rho.size() != m.layer_sizes[0])
        env_error(origin, "rho", "expected one probability per layer-1 state");
    for (const auto& p : rho) {
        if (!p.is_number()) env_error(origin, "rho", "entries must be numbers");
        m.rho.push_back(p.get<double>());
    }

    if (!doc["deterministic"].is_boolean())
        env_error(origin, "deterministic", "expected a boolean");
    m.deterministic = doc["deterministic"].get<bool>();
    if (doc.contains("enumeration_cap")) {
        if (!doc["enumeration_cap"].is_number_integer())
            env_error(origin, "enumeration_cap", "expected an integer");
        m.enumeration_cap = doc["enumeration_cap"].get<long>();
    }

    try {
        m.validate();
    } catch (const InvalidArgument& e) {
        throw ParseError(origin + ": " + e.what());
    }
    return m;
}

LayeredMdp load_env_json(const std::string& path) {
    return parse_env_json(read_text_file(path), path);
}

void save_env_json(const LayeredMdp& mdp, const std::string& path) {
    json doc;
    doc["horizon"] = mdp.horizon;
    json layers = json::array();
    for (int h = 0; h <= mdp.horizon; ++h) {
        json layer = json::array();
        for (int s = 0; s < mdp.layer_sizes[h]; ++s) {
            if (!mdp.labels.empty())
                layer.push_back(mdp.labels[h][s]);
            else
                layer.push_back("L" + std::to_string(h) + "S" + std::to_string(s));
        }
        layers.push_back(layer);
    }
    doc["layers"] = layers;
    json actions = json::array();
    for (int h = 0; h < mdp.horizon; ++h) actions.push_back(mdp.action_counts[h]);
    doc["actions"] = actions;

    auto label_of = [&](int h, int s) {
        return mdp.labels.empty() ? "L" + std::to_string(h) + "S" + std::to_string(s)
                                  : mdp.labels[h][s];
    };
    json transitions = json::array();
    json rewards = json::array();
    for (int h = 0; h < mdp.horizon; ++h)
        for (int s = 0; s < mdp.layer_sizes[h]; ++s)
            for (int a = 0; a < mdp.actions_at(h, s); ++a) {
                for (const auto& e : mdp.transition[h][s][a])
                    transitions.push_back({{"from", label_of(h, s)},
                                           {"action", a},
                                           {"to", label_of(h + 1, e.next)},
                                           {"prob", e.prob}});
                if (mdp.reward[h][s][a] != 0.0)
                    rewards.push_back({{"state", label_of(h, s)},
                                       {"action", a},
                                       {"value", mdp.reward[h][s][a]}});
            }
    doc["transitions"] = transitions;
    doc["rewards"] = rewards;
    doc["rho"] = mdp.rho;
    doc["deterministic"] = mdp.deterministic;
    doc["enumeration_cap"] = mdp.enumeration_cap;
    write_text_file(path, doc.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Checkpoints

void save_checkpoint(const PairTable& table, const std::string& path) {
    // emitted by hand so values carry a fixed 17-significant-digit encoding
    std::ostringstream out;
    out << "{\n";
    bool first = true;
    table.for_each([&](int h, int s, int a, const double& x) {
        if (!first) out << ",\n";
        first = false;
        out << "  \"" << h << "/" << s << "/" << a << "\": " << fmt17(x);
    });
    out << "\n}\n";
    write_text_file(path, out.str());
}

PairTable load_checkpoint(const std::string& path, const LayeredMdp& mdp) {
    const json doc = parse_json_or_throw(read_text_file(path), path);
    if (!doc.is_object()) throw ParseError(path + ": checkpoint must be a JSON object");
    PairTable table = PairTable::zeros(mdp);
    long filled = 0;
    for (auto it = doc.begin(); it != doc.end(); ++it) {
        int h, s, a;
        if (std::sscanf(it.key().c_str(), "%d/%d/%d", &h, &s, &a) != 3)
            throw ParseError(path + ": malformed key '" + it.key() + "'");
        if (h < 0 || h >= mdp.horizon || s < 0 || s >= mdp.layer_sizes[h] || a < 0 ||
            a >= mdp.actions_at(h, s))
            throw ParseError(path + ": key '" + it.key() + "' is outside the environment");
        if (!it.value().is_number())
            throw ParseError(path + ": value at '" + it.key() + "' must be a number");
        table.at(h, s, a) = it.value().get<double>();
        ++filled;
    }
    if (filled != mdp.pair_count())
        throw ParseError(path + ": checkpoint covers " + std::to_string(filled) + " of " +
                         std::to_string(mdp.pair_count()) + " state-action pairs");
    return table;
}

// ---------------------------------------------------------------------------
// Policies

void save_policy_json(const Policy& policy, const std::string& path) {
    std::ostringstream out;
    out << "{\n  \"table\": [\n";
    for (size_t h = 0; h < policy.table.size(); ++h) {
        out << "    [";
        for (size_t s = 0; s < policy.table[h].size(); ++s) {
            out << "[";
            for (size_t a = 0; a < policy.table[h][s].size(); ++a) {
                out << fmt17(policy.table[h][s][a]);
                if (a + 1 < policy.table[h][s].size()) out << ", ";
            }
            out << "]";
            if (s + 1 < policy.table[h].size()) out << ", ";
        }
        out << "]";
        if (h + 1 < policy.table.size()) out << ",";
        out << "\n";
    }
    out << "  ]\n}\n";
    write_text_file(path, out.str());
}

Policy load_policy_json(const std::string& path, const LayeredMdp& mdp) {
    const json doc = parse_json_or_throw(read_text_file(path), path);
    if (!doc.is_object() || !doc.contains("table"))
        throw ParseError(path + ": expected {\"table\": [...]}");
    Policy p;
    try {
        p.table = doc["table"].get<std::vector<std::vector<std::vector<double>>>>();
    } catch (const json::exception& e) {
        throw ParseError(path + ": " + e.what());
    }
    try {
        p.validate(mdp);
    } catch (const Error& e) {
        throw ParseError(path + ": " + e.what());
    }
    return p;
}

// ---------------------------------------------------------------------------
// Datasets

void save_dataset_jsonl(const TrajectoryDataset& data, const std::string& path) {
    std::vector<int> group_of(data.items.size(), -1);
    for (size_t g = 0; g < data.groups.size(); ++g)
        for (int idx : data.groups[g]) group_of[idx] = (int)g;

    std::ostringstream out;
    for (size_t i = 0; i < data.items.size(); ++i) {
        const Trajectory& tau = data.items[i];
        out << "{\"states\": [";
        for (size_t h = 0; h < tau.states.size(); ++h)
            out << tau.states[h] << (h + 1 < tau.states.size() ? ", " : "");
        out << "], \"actions\": [";
        for (size_t h = 0; h < tau.actions.size(); ++h)
            out << tau.actions[h] << (h + 1 < tau.actions.size() ? ", " : "");
        out << "], \"step_rewards\": [";
        for (size_t h = 0; h < tau.step_rewards.size(); ++h)
            out << fmt17(tau.step_rewards[h]) << (h + 1 < tau.step_rewards.size() ? ", " : "");
        out << "], \"total_reward\": " << fmt17(tau.total_reward);
        if (tau.behavior_logprob)
            out << ", \"behavior_logprob\": " << fmt17(*tau.behavior_logprob);
        if (group_of[i] >= 0) out << ", \"group\": " << group_of[i];
        out << "}\n";
    }
    write_text_file(path, out.str());
}

TrajectoryDataset load_dataset_jsonl(const std::string& path, const LayeredMdp& mdp) {
    std::istringstream in(read_text_file(path));
    TrajectoryDataset data;
    data.per_step_rewards_available = !mdp.outcome_only_rewards();
    std::map<int, std::vector<int>> groups;
    std::string line;
    long line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const std::string where = path + ":" + std::to_string(line_no);
        json doc;
        try {
            doc = json::parse(line);
        } catch (const json::parse_error& e) {
            throw ParseError(where + ": " + e.what());
        }
        for (auto it = doc.begin(); it != doc.end(); ++it) {
            const std::string& k = it.key();
            if (k != "states" && k != "actions" && k != "step_rewards" && k != "total_reward" &&
                k != "behavior_logprob" && k != "group")
                throw ParseError(where + ": unknown key '" + k + "'");
        }
        Trajectory tau;
        try {
            tau.states = doc.at("states").get<std::vector<int>>();
            tau.actions = doc.at("actions").get<std::vector<int>>();
            tau.step_rewards = doc.at("step_rewards").get<std::vector<double>>();
            tau.total_reward = doc.at("total_reward").get<double>();
            if (doc.contains("behavior_logprob"))
                tau.behavior_logprob = doc["behavior_logprob"].get<double>();
        } catch (const json::exception& e) {
            throw ParseError(where + ": " + e.what());
        }
        try {
            validate_trajectory(mdp, tau);
        } catch (const InvalidArgument& e) {
            throw ParseError(where + ": " + e.what());
        }
        if (doc.contains("group")) {
            if (!doc["group"].is_number_integer())
                throw ParseError(where + ": group must be an integer");
            groups[doc["group"].get<int>()].push_back((int)data.items.size());
        }
        data.items.push_back(std::move(tau));
    }
    for (auto& [id, members] : groups) data.groups.push_back(std::move(members));
    return data;
}

// ---------------------------------------------------------------------------
// CSV

int CsvTable::column_index(const std::string& name) const {
    for (size_t i = 0; i < columns.size(); ++i)
        if (columns[i] == name) return (int)i;
    return -1;
}

void write_csv(const CsvTable& table, const std::string& path) {
    std::ostringstream out;
    for (size_t i = 0; i < table.columns.size(); ++i)
        out << table.columns[i] << (i + 1 < table.columns.size() ? "," : "");
    out << "\n";
    for (const auto& row : table.rows) {
        if (row.size() != table.columns.size())
            throw InvalidArgument("write_csv: ragged row");
        for (size_t i = 0; i < row.size(); ++i) out << row[i] << (i + 1 < row.size() ? "," : "");
        out << "\n";
    }
    write_text_file(path, out.str());
}

CsvTable read_csv(const std::string& path) {
    std::istringstream in(read_text_file(path));
    CsvTable table;
    std::string line;
    long line_no = 0;
    auto split = [](const std::string& s) {
        std::vector<std::string> out;
        std::string cur;
        for (char c : s) {
            if (c == ',') {
                out.push_back(cur);
                cur.clear();
            } else if (c != '\r') {
                cur.push_back(c);
            }
        }
        out.push_back(cur);
        return out;
    };
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        if (table.columns.empty()) {
            table.columns = split(line);
        } else {
            auto row = split(line);
            if (row.size() != table.columns.size())
                throw ParseError(path + ":" + std::to_string(line_no) + ": expected " +
                                 std::to_string(table.columns.size()) + " fields");
            table.rows.push_back(std::move(row));
        }
    }
    if (table.columns.empty()) throw ParseError(path + ": missing header row");
    return table;
}

}  // namespace softq
