#pragma once
// Two-stage curriculum: siamese stress pretraining of the encoder on a channel
// dissimilarity (stage 1), then joint predictive training of encoder and
// recurrent predictor against a stop-gradient EMA target encoder (stage 2).

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "chartjepa/channelsim.hpp"
#include "chartjepa/features.hpp"
#include "chartjepa/models.hpp"

namespace chartjepa::training {

using models::CellKind;
using models::EncoderParams;
using models::PredictorParams;
using ndnum::Matrix;
using ndnum::NodeId;
using ndnum::Tape;

enum class Stage { PretrainAdp, PretrainGeodesic, Jepa, NonePretrain };
const char* stage_name(Stage s);
Stage stage_from_name(const std::string& name); // throws std::invalid_argument

struct TrainConfig {
    // architecture
    std::vector<int> widths{256, 128, 64};
    CellKind cell = CellKind::GRU;
    int hidden = 64;
    int head_hidden = 64;
    // stage 2 optimization
    double lr = 0.005;
    int batch = 64;          // windows per jepa step
    int steps_per_epoch = 6; // window subsample per epoch = batch * steps
    double tau = 0.99;
    double weight_decay = 3e-4;
    double lr_decay_per_epoch = 0.97;
    int horizon = 50;
    int epochs = 30;
    // stage 1
    Stage stage = Stage::PretrainGeodesic;
    double pretrain_fraction = 0.20;
    int pretrain_epochs = 20;
    int pair_batch = 200;
    int pairs_per_epoch = 4000;
    double pretrain_lr = 0.05;
    int knn_k = 15;
    int time_window = 6; // slots; must cover the subset stride
    double speed_scale = 1.0;

    uint64_t seed = 1;

    static TrainConfig desk();
    static TrainConfig paper();
    void validate() const; // throws std::invalid_argument
};

// ---------------------------------------------------------------------------
// Stage 1: siamese stress pretraining
// ---------------------------------------------------------------------------

// Normalized Sammon-style stress of the current embedding against dm:
//   stress = sum_{i<j} w_ij (|z_i - z_j| - s d_ij)^2 / sum_{i<j} w_ij,
// w_ij = 1/(d_ij + 1e-3), s the least-squares scale fit over all pairs.
double sammon_stress(const EncoderParams& enc, const Matrix& feats,
                     const features::DissimilarityMatrix& dm);

struct PretrainLog {
    double initial_stress = 0;
    std::vector<double> stress; // after each epoch
};

// Minimizes the stress over sampled pairs by SGD on the encoder. feats rows
// align with dm indices. Throws on an all-zero dissimilarity matrix.
// The chart gauge is canonicalized before the first epoch and after every
// epoch: the encoder output is recentered on the subset and rescaled so the
// least-squares scale is exactly 1 (the objective fixes the chart only up to
// scale and translation, and a free scale makes collapse a zero-stress
// optimum). Logged stress values are measured in that gauge.
PretrainLog pretrain_siamese(EncoderParams& enc, const Matrix& feats,
                             const features::DissimilarityMatrix& dm,
                             const TrainConfig& cfg);

// Full stage 1 against a dataset: picks the pretraining subset, builds its
// features and the dissimilarity matrix selected by cfg.stage, and runs
// pretrain_siamese on enc in place. Requires a pretraining stage.
struct StageOneResult {
    std::vector<int64_t> subset; // dataset indices, row-aligned with feats
    Matrix feats;
    PretrainLog log;
};
StageOneResult pretrain_stage(const channelsim::Dataset& ds, EncoderParams& enc,
                              const TrainConfig& cfg);

// ---------------------------------------------------------------------------
// Stage 2: joint predictive training
// ---------------------------------------------------------------------------

struct TrainData {
    Matrix feats;                                   // [n x F]
    std::vector<std::array<double, 2>> vel;         // per row
    std::vector<std::pair<int64_t, int64_t>> traj;  // [begin,end) row ranges
    double dt = 0.04;                               // slot duration, seconds
};

// Preprocesses the train split (rows [0, ds.train_end)).
TrainData prepare_train_data(const channelsim::Dataset& ds);

// All n with [n, n+H] inside a single trajectory.
std::vector<int64_t> valid_window_starts(const TrainData& td, int H);

// Deterministic per-epoch subsample: shuffles the valid starts with an
// epoch-derived generator and cycles through the first `count`.
std::vector<int64_t> sample_epoch_windows(const TrainData& td, int H, int count,
                                          uint64_t seed, int epoch);

struct JepaBatch {
    Matrix ctx;                  // [B x F] features at window starts
    std::vector<Matrix> targets; // H matrices [B x F], steps 1..H
    std::vector<Matrix> vel;     // H matrices [B x 2], steps 0..H-1
};
JepaBatch gather_batch(const TrainData& td, const std::vector<int64_t>& starts,
                       int H);

struct JepaGraph {
    NodeId loss = -1;
    std::vector<NodeId> enc_ids, tgt_ids, pred_ids;
};

// Builds the predictive loss on the tape:
//   loss = (1 / (B*H)) sum_windows sum_t |zhat_{n+t} - z_{n+t}|^2
// with targets encoded by `target` and cut from the graph via detach.
// stop_gradient=false keeps the target branch differentiable (diagnostics
// only; training always detaches). Passing the same object for enc and
// target ties the weights so both branches share parameter leaves.
JepaGraph build_jepa_graph(Tape& t, const EncoderParams& enc,
                           const EncoderParams& target,
                           const PredictorParams& pred, const JepaBatch& batch,
                           double dt, bool stop_gradient = true);

struct StepStats {
    double loss = 0;
    double grad_norm = 0; // L2 over all encoder+predictor gradients
};

// One optimization step: forward/backward over the windows, SGD with decoupled
// weight decay on (enc, pred), then the EMA update of the target encoder.
StepStats jepa_step(EncoderParams& enc, models::TargetEncoderState& target,
                    PredictorParams& pred, const TrainData& td,
                    const std::vector<int64_t>& starts, double lr,
                    const TrainConfig& cfg);

// ---------------------------------------------------------------------------
// Full run
// ---------------------------------------------------------------------------

struct StepRecord {
    int64_t step = 0;
    int epoch = 0;
    double loss = 0;
    double lr = 0;
    double grad_norm = 0;
};

struct TrainLog {
    std::vector<StepRecord> steps;
    std::vector<double> epoch_mean_loss;
    std::vector<double> pretrain_stress;
    double wall_seconds = 0; // in-memory only; not serialized
    bool collapse_warned = false;
};

// CSV: header `step,epoch,loss,lr,grad_norm`, one row per step.
std::string render_train_log_csv(const TrainLog& log);
void save_train_log(const TrainLog& log, const std::string& path);

struct TrainResult {
    EncoderParams enc;
    models::TargetEncoderState target;
    PredictorParams pred;
    TrainLog log;
};

// Uniform stride over the train split covering ~fraction of it.
std::vector<int64_t> pretrain_subset_indices(const channelsim::Dataset& ds,
                                             double fraction);

// Runs stage 1 per cfg.stage (Jepa/NonePretrain skip it), then cfg.epochs of
// stage-2 sweeps. init_enc, when given, replaces the random encoder init
// (used with stage=Jepa to resume from a pretrained checkpoint). Throws
// std::runtime_error with a diagnostic if the loss turns non-finite.
TrainResult train(const channelsim::Dataset& ds, const TrainConfig& cfg,
                  const EncoderParams* init_enc = nullptr);

} // namespace chartjepa::training
