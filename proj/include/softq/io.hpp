#pragma once

#include <string>
#include <vector>

#include "softq/objectives.hpp"

namespace softq {

/// Shortest faithful decimal with up to 17 significant digits; round-trips
/// exactly through strtod on the same platform.
std::string fmt17(double x);

// ---------------------------------------------------------------------------
// Environment files

LayeredMdp load_env_json(const std::string& path);
LayeredMdp parse_env_json(const std::string& text, const std::string& origin);
void save_env_json(const LayeredMdp& mdp, const std::string& path);

// ---------------------------------------------------------------------------
// Model checkpoints: a flat JSON map {"layer/stateIndex/action": logit}

void save_checkpoint(const PairTable& table, const std::string& path);
PairTable load_checkpoint(const std::string& path, const LayeredMdp& mdp);

// ---------------------------------------------------------------------------
// Policy tables

void save_policy_json(const Policy& policy, const std::string& path);
Policy load_policy_json(const std::string& path, const LayeredMdp& mdp);

// ---------------------------------------------------------------------------
// Trajectory datasets: one JSON object per line

void save_dataset_jsonl(const TrajectoryDataset& data, const std::string& path);
/// Validates every line against the MDP; errors carry the offending line
/// number. per_step flag defaults to the environment's reward granularity.
TrajectoryDataset load_dataset_jsonl(const std::string& path, const LayeredMdp& mdp);

// ---------------------------------------------------------------------------
// CSV

struct CsvTable {
    std::vector<std::string> columns;
    std::vector<std::vector<std::string>> rows;

    int column_index(const std::string& name) const;  // -1 when absent
};

void write_csv(const CsvTable& table, const std::string& path);
CsvTable read_csv(const std::string& path);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

}  // namespace softq
