#include "chartjepa/cli.hpp"

#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <stdexcept>

#include "chartjepa/evaluation.hpp"
#include "chartjepa/rng.hpp"
#include "chartjepa/serial.hpp"

namespace chartjepa::cli {

namespace fs = std::filesystem;
using ndnum::Matrix;

// ---------------------------------------------------------------------------
// Config schema
// ---------------------------------------------------------------------------

std::vector<std::string> config_keys() {
    return {
        "seed",
        "quiet",
        "sim.n_traj",
        "sim.steps",
        "sim.antennas",
        "sim.subcarriers",
        "sim.snr_db",
        "sim.noise",
        "sim.train_frac",
        "sim.regions",
        "sim.scatter_seed",
        "pretrain.mode",
        "train.widths",
        "train.cell",
        "train.hidden",
        "train.head_hidden",
        "train.lr",
        "train.batch",
        "train.steps_per_epoch",
        "train.tau",
        "train.weight_decay",
        "train.lr_decay",
        "train.horizon",
        "train.epochs",
        "train.stage",
        "train.pretrain_fraction",
        "train.pretrain_epochs",
        "train.pair_batch",
        "train.pairs_per_epoch",
        "train.pretrain_lr",
        "train.knn_k",
        "train.time_window",
        "train.speed_scale",
        "from_scratch",
        "eval.horizons",
        "eval.bias_grid",
        "eval.fit_fraction",
        "predict.start",
        "predict.horizon",
        "predict.bias",
        "paths.dataset",
        "paths.checkpoint",
        "paths.init",
        "paths.out",
        "paths.log",
    };
}

namespace {

[[noreturn]] void bad_value(const std::string& key, const std::string& v) {
    throw std::invalid_argument("key " + key + ": bad value '" + v + "'");
}

int64_t parse_i64(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        const int64_t r = std::stoll(v, &pos);
        if (pos != v.size()) bad_value(key, v);
        return r;
    } catch (const std::invalid_argument&) {
        bad_value(key, v);
    } catch (const std::out_of_range&) {
        bad_value(key, v);
    }
}

int parse_int(const std::string& key, const std::string& v) {
    const int64_t r = parse_i64(key, v);
    if (r < INT32_MIN || r > INT32_MAX) bad_value(key, v);
    return static_cast<int>(r);
}

uint64_t parse_u64(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        if (!v.empty() && v[0] == '-') bad_value(key, v);
        const uint64_t r = std::stoull(v, &pos);
        if (pos != v.size()) bad_value(key, v);
        return r;
    } catch (const std::invalid_argument&) {
        bad_value(key, v);
    } catch (const std::out_of_range&) {
        bad_value(key, v);
    }
}

double parse_f64(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        const double r = std::stod(v, &pos);
        if (pos != v.size()) bad_value(key, v);
        return r;
    } catch (const std::invalid_argument&) {
        bad_value(key, v);
    } catch (const std::out_of_range&) {
        bad_value(key, v);
    }
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "1" || v == "true") return true;
    if (v == "0" || v == "false") return false;
    bad_value(key, v);
}

std::vector<std::string> split_commas(const std::string& v) {
    std::vector<std::string> parts;
    size_t pos = 0;
    while (pos <= v.size()) {
        const size_t c = v.find(',', pos);
        if (c == std::string::npos) {
            parts.push_back(v.substr(pos));
            break;
        }
        parts.push_back(v.substr(pos, c - pos));
        pos = c + 1;
    }
    return parts;
}

std::vector<int> parse_int_list(const std::string& key, const std::string& v) {
    std::vector<int> out;
    for (const auto& p : split_commas(v)) out.push_back(parse_int(key, p));
    if (out.empty()) bad_value(key, v);
    return out;
}

std::vector<double> parse_f64_list(const std::string& key, const std::string& v) {
    std::vector<double> out;
    for (const auto& p : split_commas(v)) out.push_back(parse_f64(key, p));
    if (out.empty()) bad_value(key, v);
    return out;
}

template <typename T, typename F>
std::string join(const std::vector<T>& v, F fmt) {
    std::string out;
    for (size_t i = 0; i < v.size(); ++i) {
        if (i) out += ',';
        out += fmt(v[i]);
    }
    return out;
}

} // namespace

void apply_key(RunConfig& c, const std::string& key, const std::string& v) {
    if (key == "seed") c.seed = parse_u64(key, v);
    else if (key == "quiet") c.quiet = parse_bool(key, v);
    else if (key == "sim.n_traj") c.sim_n_traj = parse_int(key, v);
    else if (key == "sim.steps") c.sim_steps = parse_int(key, v);
    else if (key == "sim.antennas") c.sim_antennas = parse_int(key, v);
    else if (key == "sim.subcarriers") c.sim_subcarriers = parse_int(key, v);
    else if (key == "sim.snr_db") c.sim_snr_db = parse_f64(key, v);
    else if (key == "sim.noise") c.sim_noise = parse_bool(key, v);
    else if (key == "sim.train_frac") c.sim_train_frac = parse_f64(key, v);
    else if (key == "sim.regions") c.sim_regions = parse_int(key, v);
    else if (key == "sim.scatter_seed") c.sim_scatter_seed = parse_u64(key, v);
    else if (key == "pretrain.mode") {
        if (v != "adp" && v != "geodesic") bad_value(key, v);
        c.pretrain_mode = v;
    } else if (key == "train.widths") c.train.widths = parse_int_list(key, v);
    else if (key == "train.cell") c.train.cell = models::cell_from_name(v);
    else if (key == "train.hidden") c.train.hidden = parse_int(key, v);
    else if (key == "train.head_hidden") c.train.head_hidden = parse_int(key, v);
    else if (key == "train.lr") c.train.lr = parse_f64(key, v);
    else if (key == "train.batch") c.train.batch = parse_int(key, v);
    else if (key == "train.steps_per_epoch") c.train.steps_per_epoch = parse_int(key, v);
    else if (key == "train.tau") c.train.tau = parse_f64(key, v);
    else if (key == "train.weight_decay") c.train.weight_decay = parse_f64(key, v);
    else if (key == "train.lr_decay") c.train.lr_decay_per_epoch = parse_f64(key, v);
    else if (key == "train.horizon") c.train.horizon = parse_int(key, v);
    else if (key == "train.epochs") c.train.epochs = parse_int(key, v);
    else if (key == "train.stage") c.train.stage = training::stage_from_name(v);
    else if (key == "train.pretrain_fraction") c.train.pretrain_fraction = parse_f64(key, v);
    else if (key == "train.pretrain_epochs") c.train.pretrain_epochs = parse_int(key, v);
    else if (key == "train.pair_batch") c.train.pair_batch = parse_int(key, v);
    else if (key == "train.pairs_per_epoch") c.train.pairs_per_epoch = parse_int(key, v);
    else if (key == "train.pretrain_lr") c.train.pretrain_lr = parse_f64(key, v);
    else if (key == "train.knn_k") c.train.knn_k = parse_int(key, v);
    else if (key == "train.time_window") c.train.time_window = parse_int(key, v);
    else if (key == "train.speed_scale") c.train.speed_scale = parse_f64(key, v);
    else if (key == "from_scratch") c.from_scratch = parse_bool(key, v);
    else if (key == "eval.horizons") c.eval_horizons = parse_int_list(key, v);
    else if (key == "eval.bias_grid") c.eval_bias_grid = parse_f64_list(key, v);
    else if (key == "eval.fit_fraction") c.eval_fit_fraction = parse_f64(key, v);
    else if (key == "predict.start") c.predict_start = parse_i64(key, v);
    else if (key == "predict.horizon") c.predict_horizon = parse_int(key, v);
    else if (key == "predict.bias") c.predict_bias = parse_f64(key, v);
    else if (key == "paths.dataset") c.dataset_path = v;
    else if (key == "paths.checkpoint") c.checkpoint_path = v;
    else if (key == "paths.init") c.init_path = v;
    else if (key == "paths.out") c.out_dir = v;
    else if (key == "paths.log") c.log_path = v;
    else throw std::invalid_argument("unknown config key: " + key);
}

std::string get_key(const RunConfig& c, const std::string& key) {
    auto b = [](bool v) { return std::string(v ? "1" : "0"); };
    if (key == "seed") return std::to_string(c.seed);
    if (key == "quiet") return b(c.quiet);
    if (key == "sim.n_traj") return std::to_string(c.sim_n_traj);
    if (key == "sim.steps") return std::to_string(c.sim_steps);
    if (key == "sim.antennas") return std::to_string(c.sim_antennas);
    if (key == "sim.subcarriers") return std::to_string(c.sim_subcarriers);
    if (key == "sim.snr_db") return fmt_f64(c.sim_snr_db);
    if (key == "sim.noise") return b(c.sim_noise);
    if (key == "sim.train_frac") return fmt_f64(c.sim_train_frac);
    if (key == "sim.regions") return std::to_string(c.sim_regions);
    if (key == "sim.scatter_seed") return std::to_string(c.sim_scatter_seed);
    if (key == "pretrain.mode") return c.pretrain_mode;
    if (key == "train.widths")
        return join(c.train.widths, [](int w) { return std::to_string(w); });
    if (key == "train.cell") return models::cell_name(c.train.cell);
    if (key == "train.hidden") return std::to_string(c.train.hidden);
    if (key == "train.head_hidden") return std::to_string(c.train.head_hidden);
    if (key == "train.lr") return fmt_f64(c.train.lr);
    if (key == "train.batch") return std::to_string(c.train.batch);
    if (key == "train.steps_per_epoch") return std::to_string(c.train.steps_per_epoch);
    if (key == "train.tau") return fmt_f64(c.train.tau);
    if (key == "train.weight_decay") return fmt_f64(c.train.weight_decay);
    if (key == "train.lr_decay") return fmt_f64(c.train.lr_decay_per_epoch);
    if (key == "train.horizon") return std::to_string(c.train.horizon);
    if (key == "train.epochs") return std::to_string(c.train.epochs);
    if (key == "train.stage") return training::stage_name(c.train.stage);
    if (key == "train.pretrain_fraction") return fmt_f64(c.train.pretrain_fraction);
    if (key == "train.pretrain_epochs") return std::to_string(c.train.pretrain_epochs);
    if (key == "train.pair_batch") return std::to_string(c.train.pair_batch);
    if (key == "train.pairs_per_epoch") return std::to_string(c.train.pairs_per_epoch);
    if (key == "train.pretrain_lr") return fmt_f64(c.train.pretrain_lr);
    if (key == "train.knn_k") return std::to_string(c.train.knn_k);
    if (key == "train.time_window") return std::to_string(c.train.time_window);
    if (key == "train.speed_scale") return fmt_f64(c.train.speed_scale);
    if (key == "from_scratch") return b(c.from_scratch);
    if (key == "eval.horizons")
        return join(c.eval_horizons, [](int h) { return std::to_string(h); });
    if (key == "eval.bias_grid") return join(c.eval_bias_grid, fmt_f64);
    if (key == "eval.fit_fraction") return fmt_f64(c.eval_fit_fraction);
    if (key == "predict.start") return std::to_string(c.predict_start);
    if (key == "predict.horizon") return std::to_string(c.predict_horizon);
    if (key == "predict.bias") return fmt_f64(c.predict_bias);
    if (key == "paths.dataset") return c.dataset_path;
    if (key == "paths.checkpoint") return c.checkpoint_path;
    if (key == "paths.init") return c.init_path;
    if (key == "paths.out") return c.out_dir;
    if (key == "paths.log") return c.log_path;
    throw std::invalid_argument("unknown config key: " + key);
}

std::string resolve_key(const std::string& name) {
    const auto keys = config_keys();
    for (const auto& k : keys)
        if (k == name) return k;
    std::vector<std::string> hits;
    for (const auto& k : keys) {
        const size_t dot = k.rfind('.');
        if (dot != std::string::npos && k.substr(dot + 1) == name) hits.push_back(k);
    }
    if (hits.size() == 1) return hits.front();
    if (hits.empty()) throw std::invalid_argument("unknown config key: " + name);
    std::string msg = "ambiguous key '" + name + "' matches:";
    for (const auto& h : hits) msg += " " + h;
    throw std::invalid_argument(msg);
}

std::vector<std::pair<std::string, std::string>> parse_config_text(
    const std::string& text) {
    std::vector<std::pair<std::string, std::string>> out;
    size_t pos = 0;
    while (pos < text.size()) {
        size_t eol = text.find('\n', pos);
        if (eol == std::string::npos) eol = text.size();
        std::string line = text.substr(pos, eol - pos);
        pos = eol + 1;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        const auto ltrim = line.find_first_not_of(" \t\r");
        if (ltrim == std::string::npos) continue;
        const auto rtrim = line.find_last_not_of(" \t\r");
        line = line.substr(ltrim, rtrim - ltrim + 1);
        const size_t ws = line.find_first_of(" \t");
        if (ws == std::string::npos)
            throw std::invalid_argument("config line has no value: '" + line + "'");
        const std::string key = line.substr(0, ws);
        const size_t vstart = line.find_first_not_of(" \t", ws);
        out.emplace_back(key, line.substr(vstart));
    }
    return out;
}

std::string canonical_config(const RunConfig& cfg) {
    std::string out;
    for (const auto& k : config_keys()) {
        if (k == "quiet") continue; // presentation only; artifacts unaffected
        out += k;
        out += ' ';
        out += get_key(cfg, k);
        out += '\n';
    }
    return out;
}

uint64_t config_hash(const RunConfig& cfg) { return fnv1a64(canonical_config(cfg)); }

std::string artifact_comment(const RunConfig& cfg) {
    return std::string("# ") + kToolVersion + " config " + hex64(config_hash(cfg)) +
           " seed " + std::to_string(cfg.seed) + "\n";
}

std::string usage() {
    return std::string(kToolVersion) + R"( -- latent wireless dynamics from CSI

usage: chartjepa <command> [--config FILE] [--key value ...] [--quiet]

commands:
  simulate   synthesize a CSI dataset          -> paths.dataset (+.manifest)
  pretrain   stage-1 siamese encoder training  -> paths.checkpoint,
             metrics on the pretraining subset -> paths.out/pretrain_metrics.csv
  train      two-stage training (or JEPA only) -> paths.checkpoint, loss CSV
  evaluate   chart metrics + downstream report -> paths.out/{metrics,downstream,
             embedding}.csv
  predict    roll one window into a predicted  -> paths.out/prediction.csv
             chart trajectory

config: one 'key value' per line, '#' comments. --key value overrides, applied
left to right (later wins). --key may abbreviate to the part after the last
dot when unambiguous (--horizons for eval.horizons). --quiet suppresses the
stdout summary. --from-scratch makes train skip stage 1.

keys (defaults in parentheses):
  seed (1)                global RNG seed, recorded in every artifact
  sim.n_traj (40)         trajectories; sim.steps (125) slots per trajectory
  sim.antennas (8)        per array; sim.subcarriers (32)
  sim.snr_db (20)         estimation noise; sim.noise (1) enables it
  sim.train_frac (0.8)    fraction of trajectories in the train split
  sim.regions (10)        downstream region count; sim.scatter_seed (1234)
  pretrain.mode           adp | geodesic (geodesic)
  train.widths (256,128,64)  encoder hidden layers
  train.cell (gru)        rnn | gru | lstm; train.hidden (64) cell width
  train.head_hidden (64)  predictor head width
  train.lr (0.005) train.batch (64) train.steps_per_epoch (6) train.tau (0.99)
  train.weight_decay (0.0003) train.lr_decay (0.97) train.horizon (50)
  train.epochs (30)       stage-2 epochs
  train.stage             pretrain_adp | pretrain_geodesic | none-pretrain
  train.pretrain_fraction (0.2) train.pretrain_epochs (20)
  train.pair_batch (200) train.pairs_per_epoch (4000) train.pretrain_lr (0.05)
  train.knn_k (15) train.time_window (6) train.speed_scale (1)
  eval.horizons (10,25,50) eval.bias_grid (0) eval.fit_fraction (0.1)
  predict.start (-1: first test sample) predict.horizon (50) predict.bias (0)
  paths.dataset paths.checkpoint paths.init paths.out (.) paths.log

exit codes: 0 success, 1 usage/config error, 2 runtime failure.
)";
}

// ---------------------------------------------------------------------------
// Command helpers
// ---------------------------------------------------------------------------

namespace {

std::vector<std::pair<std::string, std::string>> meta_fields(const RunConfig& cfg) {
    return {{"tool_version", kToolVersion},
            {"config_hash", hex64(config_hash(cfg))}};
}

int missing(const char* what, const std::string& key) {
    std::fprintf(stderr, "config error: %s (set %s)\n", what, key.c_str());
    return 1;
}

// Input files must exist before any work starts.
bool require_input(const std::string& path, const char* what) {
    if (fs::exists(path)) return true;
    std::fprintf(stderr, "config error: %s '%s' does not exist\n", what,
                 path.c_str());
    return false;
}

void ensure_out_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec && !fs::is_directory(dir))
        throw std::runtime_error("cannot create output directory '" + dir +
                                 "': " + ec.message());
}

std::string out_path(const RunConfig& cfg, const char* name) {
    return (fs::path(cfg.out_dir) / name).string();
}

void check_architecture(const models::Checkpoint& ck,
                        const channelsim::Dataset& ds) {
    const int F = ds.spec.B() * ds.spec.M() * ds.spec.W();
    if (ck.enc.in_dim() != F)
        throw std::runtime_error(
            "checkpoint/dataset architecture mismatch: encoder input dim " +
            std::to_string(ck.enc.in_dim()) + ", dataset feature dim " +
            std::to_string(F) + " (B*M*W = " + std::to_string(ds.spec.B()) + "*" +
            std::to_string(ds.spec.M()) + "*" + std::to_string(ds.spec.W()) + ")");
}

training::TrainConfig resolved_train_config(const RunConfig& cfg) {
    training::TrainConfig t = cfg.train;
    t.seed = cfg.seed;
    return t;
}

Matrix positions_of(const channelsim::Dataset& ds,
                    const std::vector<int64_t>& idx) {
    Matrix P(static_cast<int>(idx.size()), 2);
    for (size_t i = 0; i < idx.size(); ++i) {
        P.at(static_cast<int>(i), 0) = ds.samples[idx[i]].px;
        P.at(static_cast<int>(i), 1) = ds.samples[idx[i]].py;
    }
    return P;
}

} // namespace

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

int cmd_simulate(const RunConfig& cfg) {
    if (cfg.dataset_path.empty())
        return missing("simulate needs an output dataset path", "paths.dataset");
    if (cfg.sim_n_traj < 1) throw std::invalid_argument("sim.n_traj must be >= 1");
    if (cfg.sim_steps < 1) throw std::invalid_argument("sim.steps must be >= 1");
    if (cfg.sim_antennas < 1 || cfg.sim_subcarriers < 1)
        throw std::invalid_argument("sim.antennas and sim.subcarriers must be >= 1");
    if (!(cfg.sim_train_frac > 0 && cfg.sim_train_frac <= 1))
        throw std::invalid_argument("sim.train_frac must be in (0,1]");
    if (cfg.sim_regions < 1) throw std::invalid_argument("sim.regions must be >= 1");

    auto spec = channelsim::EnvironmentSpec::desk(cfg.sim_scatter_seed);
    spec.antennas_per_array = cfg.sim_antennas;
    spec.subcarriers = cfg.sim_subcarriers;
    spec.snr_db = cfg.sim_snr_db;

    channelsim::Dataset ds = channelsim::generate_dataset(
        spec, cfg.sim_n_traj, cfg.sim_steps, cfg.seed, cfg.sim_noise,
        cfg.sim_train_frac);
    channelsim::assign_regions(ds, cfg.sim_regions);
    channelsim::save_dataset(ds, cfg.dataset_path, meta_fields(cfg));

    if (!cfg.quiet) {
        std::printf("wrote %s (+.manifest)\n", cfg.dataset_path.c_str());
        std::printf("samples %" PRId64 "  trajectories %d  train_end %" PRId64
                    "  regions %d\n",
                    ds.size(), ds.n_traj(), ds.train_end, ds.n_regions);
        std::vector<int64_t> hist(static_cast<size_t>(ds.n_regions), 0);
        for (const auto& s : ds.samples) ++hist[static_cast<size_t>(s.region)];
        std::printf("region histogram:");
        for (int64_t h : hist) std::printf(" %" PRId64, h);
        std::printf("\n");
    }
    return 0;
}

int cmd_pretrain(const RunConfig& cfg) {
    if (cfg.dataset_path.empty())
        return missing("pretrain needs a dataset", "paths.dataset");
    if (cfg.checkpoint_path.empty())
        return missing("pretrain needs an output checkpoint", "paths.checkpoint");
    if (!require_input(cfg.dataset_path, "dataset")) return 1;

    channelsim::Dataset ds = channelsim::load_dataset(cfg.dataset_path);
    training::TrainConfig tcfg = resolved_train_config(cfg);
    tcfg.stage = cfg.pretrain_mode == "adp" ? training::Stage::PretrainAdp
                                            : training::Stage::PretrainGeodesic;
    tcfg.validate();

    const int F = ds.spec.B() * ds.spec.M() * ds.spec.W();
    models::EncoderParams enc =
        models::init_encoder(F, tcfg.widths, Rng(cfg.seed, 401).next_u64());
    training::StageOneResult s1 = training::pretrain_stage(ds, enc, tcfg);

    Matrix Z = models::encode_batch(enc, s1.feats);
    Matrix P = positions_of(ds, s1.subset);
    evaluation::MetricsReport rep = evaluation::chart_metrics(P, Z);

    models::Checkpoint ck;
    ck.enc = enc;
    ck.seed = cfg.seed;
    ck.step = 0;
    models::save_checkpoint(ck, cfg.checkpoint_path, meta_fields(cfg));
    ensure_out_dir(cfg.out_dir);
    const std::string mpath = out_path(cfg, "pretrain_metrics.csv");
    write_file(mpath, artifact_comment(cfg) + evaluation::render_metrics_csv(rep));

    if (!cfg.quiet) {
        std::printf("pretrain mode=%s subset=%zu pairs/epoch=%d epochs=%d\n",
                    cfg.pretrain_mode.c_str(), s1.subset.size(),
                    tcfg.pairs_per_epoch, tcfg.pretrain_epochs);
        std::printf("stress %.6f -> %.6f\n", s1.log.initial_stress,
                    s1.log.stress.empty() ? s1.log.initial_stress
                                          : s1.log.stress.back());
        std::printf("subset metrics: ct %.4f  tw %.4f  ks %.4f  rd %.4f (k=%d)\n",
                    rep.ct, rep.tw, rep.ks, rep.rd, rep.k);
        std::printf("wrote %s\nwrote %s\n", cfg.checkpoint_path.c_str(),
                    mpath.c_str());
    }
    return 0;
}

int cmd_train(const RunConfig& cfg) {
    if (cfg.dataset_path.empty())
        return missing("train needs a dataset", "paths.dataset");
    if (cfg.checkpoint_path.empty())
        return missing("train needs an output checkpoint", "paths.checkpoint");
    if (!require_input(cfg.dataset_path, "dataset")) return 1;
    if (!cfg.init_path.empty() && !require_input(cfg.init_path, "initial checkpoint"))
        return 1;

    channelsim::Dataset ds = channelsim::load_dataset(cfg.dataset_path);
    training::TrainConfig tcfg = resolved_train_config(cfg);

    models::EncoderParams init_enc;
    bool have_init = false;
    if (!cfg.init_path.empty()) {
        models::Checkpoint ick = models::load_checkpoint(cfg.init_path);
        check_architecture(ick, ds);
        init_enc = ick.enc;
        have_init = true;
        tcfg.stage = training::Stage::NonePretrain; // stage 1 already done
    }
    if (cfg.from_scratch) tcfg.stage = training::Stage::NonePretrain;

    training::TrainResult res =
        training::train(ds, tcfg, have_init ? &init_enc : nullptr);

    models::Checkpoint ck;
    ck.enc = res.enc;
    ck.has_target = true;
    ck.target = res.target;
    ck.has_pred = true;
    ck.pred = res.pred;
    ck.seed = cfg.seed;
    ck.step = res.log.steps.size();
    models::save_checkpoint(ck, cfg.checkpoint_path, meta_fields(cfg));
    const std::string lpath =
        cfg.log_path.empty() ? cfg.checkpoint_path + ".log.csv" : cfg.log_path;
    write_file(lpath,
               artifact_comment(cfg) + training::render_train_log_csv(res.log));

    if (!cfg.quiet) {
        std::printf("train stage=%s cell=%s epochs=%d steps=%zu horizon=%d\n",
                    training::stage_name(tcfg.stage),
                    models::cell_name(tcfg.cell), tcfg.epochs,
                    res.log.steps.size(), tcfg.horizon);
        if (!res.log.pretrain_stress.empty())
            std::printf("stage-1 stress -> %.6f\n", res.log.pretrain_stress.back());
        if (!res.log.epoch_mean_loss.empty())
            std::printf("epoch mean loss %.6f -> %.6f\n",
                        res.log.epoch_mean_loss.front(),
                        res.log.epoch_mean_loss.back());
        std::printf("wall %.1f s\nwrote %s\nwrote %s\n", res.log.wall_seconds,
                    cfg.checkpoint_path.c_str(), lpath.c_str());
    }
    return 0;
}

int cmd_evaluate(const RunConfig& cfg) {
    if (cfg.dataset_path.empty())
        return missing("evaluate needs a dataset", "paths.dataset");
    if (cfg.checkpoint_path.empty())
        return missing("evaluate needs a checkpoint", "paths.checkpoint");
    if (!require_input(cfg.dataset_path, "dataset")) return 1;
    if (!require_input(cfg.checkpoint_path, "checkpoint")) return 1;

    channelsim::Dataset ds = channelsim::load_dataset(cfg.dataset_path);
    models::Checkpoint ck = models::load_checkpoint(cfg.checkpoint_path);
    check_architecture(ck, ds);
    if (!ck.has_pred)
        throw std::runtime_error(
            "checkpoint has no predictor; evaluate needs a train artifact");
    if (ds.train_end >= ds.size())
        throw std::runtime_error("dataset has no test split");

    ensure_out_dir(cfg.out_dir);

    Matrix Z = evaluation::encode_range(ck.enc, ds, ds.train_end, ds.size());
    std::vector<int64_t> test_idx;
    for (int64_t i = ds.train_end; i < ds.size(); ++i) test_idx.push_back(i);
    Matrix P = positions_of(ds, test_idx);
    evaluation::MetricsReport rep = evaluation::chart_metrics(P, Z);

    evaluation::DownstreamOptions opt;
    opt.horizons = cfg.eval_horizons;
    opt.bias_grid = cfg.eval_bias_grid;
    opt.fit_fraction = cfg.eval_fit_fraction;
    opt.seed = cfg.seed;
    evaluation::DownstreamReport dr =
        evaluation::downstream_accuracy(ck.enc, ck.pred, ds, opt);

    std::vector<int> region, traj;
    for (int64_t i : test_idx) {
        region.push_back(ds.samples[i].region);
        traj.push_back(ds.samples[i].traj);
    }

    const std::string meta = artifact_comment(cfg);
    const std::string mpath = out_path(cfg, "metrics.csv");
    const std::string dpath = out_path(cfg, "downstream.csv");
    const std::string epath = out_path(cfg, "embedding.csv");
    write_file(mpath, meta + evaluation::render_metrics_csv(rep));
    write_file(dpath, meta + evaluation::render_downstream_csv(dr));
    write_file(epath, meta + evaluation::render_embedding_csv(Z, region, traj));

    if (!cfg.quiet) {
        std::printf("held-out metrics: ct %.4f  tw %.4f  ks %.4f  rd %.4f "
                    "(k=%d, n=%lld)\n",
                    rep.ct, rep.tw, rep.ks, rep.rd, rep.k,
                    static_cast<long long>(rep.n));
        for (size_t mi = 0; mi < dr.methods.size(); ++mi) {
            std::printf("%-8s", dr.methods[mi].c_str());
            for (size_t bi = 0; bi < dr.bias_grid.size(); ++bi)
                for (size_t hi = 0; hi < dr.horizons.size(); ++hi)
                    std::printf(" H=%d/b=%.4f:%.3f", dr.horizons[hi],
                                dr.bias_grid[bi], dr.accuracy[mi][bi][hi]);
            std::printf("\n");
        }
        std::printf("wrote %s\nwrote %s\nwrote %s\n", mpath.c_str(),
                    dpath.c_str(), epath.c_str());
    }
    return 0;
}

int cmd_predict(const RunConfig& cfg) {
    if (cfg.dataset_path.empty())
        return missing("predict needs a dataset", "paths.dataset");
    if (cfg.checkpoint_path.empty())
        return missing("predict needs a checkpoint", "paths.checkpoint");
    if (!require_input(cfg.dataset_path, "dataset")) return 1;
    if (!require_input(cfg.checkpoint_path, "checkpoint")) return 1;

    channelsim::Dataset ds = channelsim::load_dataset(cfg.dataset_path);
    models::Checkpoint ck = models::load_checkpoint(cfg.checkpoint_path);
    check_architecture(ck, ds);
    if (!ck.has_pred)
        throw std::runtime_error(
            "checkpoint has no predictor; predict needs a train artifact");

    const int H = cfg.predict_horizon;
    if (H < 1) throw std::invalid_argument("predict.horizon must be >= 1");
    int64_t s = cfg.predict_start;
    if (s < 0) s = ds.train_end < ds.size() ? ds.train_end : 0;
    if (s >= ds.size())
        throw std::invalid_argument("predict.start " + std::to_string(s) +
                                    " out of range (dataset has " +
                                    std::to_string(ds.size()) + " samples)");
    int traj = -1;
    for (int t = 0; t < ds.n_traj(); ++t)
        if (s >= ds.traj_starts[t] && s < ds.traj_starts[t + 1]) traj = t;
    if (s + H >= ds.traj_starts[traj + 1])
        throw std::invalid_argument(
            "window [" + std::to_string(s) + ", " + std::to_string(s + H) +
            "] crosses the end of trajectory " + std::to_string(traj) +
            " (ends at " + std::to_string(ds.traj_starts[traj + 1]) + ")");

    Matrix z0 = evaluation::encode_range(ck.enc, ds, s, s + 1);
    std::vector<std::array<double, 2>> v;
    for (int t = 0; t < H; ++t)
        v.push_back({ds.samples[s + t].vx, ds.samples[s + t].vy});
    v = channelsim::perturb_velocity(v, cfg.predict_bias, ds.spec.slot_duration);
    std::vector<Matrix> vel;
    for (int t = 0; t < H; ++t) {
        Matrix m(1, 2);
        m.at(0, 0) = v[static_cast<size_t>(t)][0];
        m.at(0, 1) = v[static_cast<size_t>(t)][1];
        vel.push_back(std::move(m));
    }
    models::RolloutResult rr =
        models::rollout_batch(ck.pred, z0, vel, ds.spec.slot_duration, H);

    std::string csv = artifact_comment(cfg) + "t,x,y\n";
    csv += "0," + fmt_f64(z0.at(0, 0)) + "," + fmt_f64(z0.at(0, 1)) + "\n";
    for (int t = 0; t < H; ++t)
        csv += std::to_string(t + 1) + "," + fmt_f64(rr.z[t].at(0, 0)) + "," +
               fmt_f64(rr.z[t].at(0, 1)) + "\n";
    ensure_out_dir(cfg.out_dir);
    const std::string ppath = out_path(cfg, "prediction.csv");
    write_file(ppath, csv);

    if (!cfg.quiet) {
        std::printf("window start=%" PRId64 " traj=%d horizon=%d bias=%g\n", s,
                    traj, H, cfg.predict_bias);
        std::printf("z0 (%.4f, %.4f) -> z%d (%.4f, %.4f)\n", z0.at(0, 0),
                    z0.at(0, 1), H, rr.z[H - 1].at(0, 0), rr.z[H - 1].at(0, 1));
        std::printf("wrote %s\n", ppath.c_str());
    }
    return 0;
}

// ---------------------------------------------------------------------------
// Entry point
// ---------------------------------------------------------------------------

int run(int argc, const char* const* argv) {
    if (argc < 2) {
        std::fputs(usage().c_str(), stderr);
        return 1;
    }
    const std::string command = argv[1];
    if (command == "help" || command == "--help" || command == "-h") {
        std::fputs(usage().c_str(), stdout);
        return 0;
    }
    const bool known = command == "simulate" || command == "pretrain" ||
                       command == "train" || command == "evaluate" ||
                       command == "predict";
    if (!known) {
        std::fprintf(stderr, "unknown command '%s'\n\n%s", command.c_str(),
                     usage().c_str());
        return 1;
    }

    RunConfig cfg;
    for (int i = 2; i < argc; ++i) {
        std::string a = argv[i];
        if (a == "--quiet") {
            cfg.quiet = true;
            continue;
        }
        if (a == "--from-scratch") {
            cfg.from_scratch = true;
            continue;
        }
        if (a.rfind("--", 0) != 0) {
            std::fprintf(stderr, "config error: unexpected argument '%s'\n",
                         a.c_str());
            return 1;
        }
        std::string name = a.substr(2), value;
        const size_t eq = name.find('=');
        if (eq != std::string::npos) {
            value = name.substr(eq + 1);
            name = name.substr(0, eq);
        } else if (i + 1 < argc) {
            value = argv[++i];
        } else {
            std::fprintf(stderr, "config error: flag --%s needs a value\n",
                         name.c_str());
            return 1;
        }
        try {
            if (name == "config") {
                const auto bytes = read_file(value);
                const std::string text(bytes.begin(), bytes.end());
                for (const auto& [k, v] : parse_config_text(text))
                    apply_key(cfg, resolve_key(k), v);
            } else {
                apply_key(cfg, resolve_key(name), value);
            }
        } catch (const std::exception& e) {
            std::fprintf(stderr, "config error: %s\n", e.what());
            return 1;
        }
    }

    try {
        if (command == "simulate") return cmd_simulate(cfg);
        if (command == "pretrain") return cmd_pretrain(cfg);
        if (command == "train") return cmd_train(cfg);
        if (command == "evaluate") return cmd_evaluate(cfg);
        return cmd_predict(cfg);
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
}

} // namespace chartjepa::cli
