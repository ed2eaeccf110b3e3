#pragma once
// Command-line front end: `chartjepa <command> [--config FILE] [--key value]`.
// Commands: simulate | pretrain | train | evaluate | predict.
//
// Configuration is a flat set of dotted keys with typed values. A config file
// holds one `key value` pair per line ('#' starts a comment); any key can be
// overridden on the command line as `--key value` (or `--key=value`), applied
// left to right, later wins. A flag may also use the unambiguous tail of a
// key: `--horizons` for `eval.horizons`. Exit codes: 0 success, 1 usage or
// config error, 2 runtime failure.

#include <cstdint>
#include <string>
#include <vector>

#include "chartjepa/training.hpp"

namespace chartjepa::cli {

inline constexpr const char* kToolVersion = "chartjepa 1.0.0";

struct RunConfig {
    uint64_t seed = 1;
    bool quiet = false;

    // simulate
    int sim_n_traj = 40;
    int sim_steps = 125;
    int sim_antennas = 8;
    int sim_subcarriers = 32;
    double sim_snr_db = 20.0;
    bool sim_noise = true;
    double sim_train_frac = 0.8;
    int sim_regions = 10;
    uint64_t sim_scatter_seed = 1234;

    // pretrain
    std::string pretrain_mode = "geodesic"; // adp | geodesic

    // train (stage selection, widths, optimizer, horizon, ...)
    training::TrainConfig train = training::TrainConfig::desk();
    bool from_scratch = false;

    // evaluate
    std::vector<int> eval_horizons = {10, 25, 50};
    std::vector<double> eval_bias_grid = {0.0};
    double eval_fit_fraction = 0.10;

    // predict
    int64_t predict_start = -1; // global sample index; -1 = first test sample
    int predict_horizon = 50;
    double predict_bias = 0.0; // rad/s angular-velocity bias

    // paths
    std::string dataset_path;
    std::string checkpoint_path;
    std::string init_path;    // optional stage-1 checkpoint for train
    std::string out_dir = "."; // report directory
    std::string log_path;      // train loss CSV; default <checkpoint>.log.csv
};

// All recognized config keys, in canonical serialization order.
std::vector<std::string> config_keys();

// Sets one key. Throws std::invalid_argument on unknown key or bad value.
void apply_key(RunConfig& cfg, const std::string& key, const std::string& value);

// Current value of one key, formatted canonically.
std::string get_key(const RunConfig& cfg, const std::string& key);

// Resolves a possibly abbreviated flag name to a full key: exact match first,
// then a unique match on the part after the last dot. Throws on unknown or
// ambiguous names.
std::string resolve_key(const std::string& name);

// Parses `key value` lines; '#' comments and blank lines are skipped.
std::vector<std::pair<std::string, std::string>> parse_config_text(
    const std::string& text);

// Full resolved configuration, one `key value` line per key, canonical order.
std::string canonical_config(const RunConfig& cfg);

// FNV-1a of canonical_config.
uint64_t config_hash(const RunConfig& cfg);

// The `# tool ... config ... seed ...` comment line prepended to CSV artifacts.
std::string artifact_comment(const RunConfig& cfg);

std::string usage();

// Entry point used by the chartjepa binary. argv[1] is the command.
int run(int argc, const char* const* argv);

// Individual commands; cfg must be fully resolved. Return process exit codes
// and report through stdout/stderr (stdout suppressed when cfg.quiet).
int cmd_simulate(const RunConfig& cfg);
int cmd_pretrain(const RunConfig& cfg);
int cmd_train(const RunConfig& cfg);
int cmd_evaluate(const RunConfig& cfg);
int cmd_predict(const RunConfig& cfg);

} // namespace chartjepa::cli
