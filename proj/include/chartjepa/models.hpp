#pragma once
// The three learnable networks: MLP context encoder, EMA target encoder, and
// the velocity-conditioned recurrent predictor (RNN/GRU/LSTM cell + MLP head)
// with cumulative-additive rollout. Plain forward passes for inference plus
// tape-graph builders for training mirror each other op for op.

#include <cstdint>
#include <string>
#include <vector>

#include "chartjepa/ndnum.hpp"

namespace chartjepa::models {

using ndnum::Matrix;
using ndnum::NodeId;
using ndnum::Tape;

struct ChartPoint {
    double x = 0, y = 0;
};

// ---------------------------------------------------------------------------
// Encoder
// ---------------------------------------------------------------------------

struct EncoderParams {
    // layer i maps [n x in] -> [n x out]: weight w[i] is [in x out], bias b[i]
    // is [1 x out]; hidden layers use ReLU, the last layer is linear with
    // output dimension 2.
    std::vector<Matrix> w, b;

    int in_dim() const { return w.empty() ? 0 : w.front().rows; }
    int out_dim() const { return w.empty() ? 0 : w.back().cols; }
    int layers() const { return static_cast<int>(w.size()); }
    std::vector<std::string> tensor_names() const;
    std::vector<Matrix*> tensors();
    std::vector<const Matrix*> tensors() const;
};

struct TargetEncoderState {
    EncoderParams params;
    double tau = 0.99;
};

// Glorot-uniform weights, zero biases. widths are the hidden layer sizes; the
// output layer (2 units) is appended automatically.
EncoderParams init_encoder(int feat_dim, const std::vector<int>& widths,
                           uint64_t seed);

int64_t param_count(const EncoderParams& p);

// Plain forward: x is [n x F], result [n x 2].
Matrix encode_batch(const EncoderParams& p, const Matrix& x);
ChartPoint encode(const EncoderParams& p, const std::vector<double>& x);

// Tape forward. pids must come from param_leaves(t, p.tensors()).
NodeId encode_graph(Tape& t, const EncoderParams& p, const std::vector<NodeId>& pids,
                    NodeId x);

// ---------------------------------------------------------------------------
// Predictor
// ---------------------------------------------------------------------------

enum class CellKind { RNN, GRU, LSTM };
const char* cell_name(CellKind k);
CellKind cell_from_name(const std::string& name);

struct PredictorParams {
    CellKind kind = CellKind::GRU;
    int hidden = 64;
    int head_hidden = 64;
    // Cell tensors, in declaration order (input x is the 2-D scaled velocity):
    //   RNN:  wx [2 x h], wh [h x h], bh [1 x h]
    //   GRU:  (wxz, whz, bz), (wxr, whr, br), (wxc, whc, bc)
    //   LSTM: (wxi, whi, bi), (wxf, whf, bf), (wxg, whg, bg), (wxo, who, bo)
    std::vector<Matrix> cell;
    // Two-layer output head: hidden -> head_hidden (ReLU) -> 2 (linear)
    Matrix head_w1, head_b1, head_w2, head_b2;

    std::vector<std::string> tensor_names() const;
    std::vector<Matrix*> tensors();
    std::vector<const Matrix*> tensors() const;
};

// Glorot input/head weights, QR-orthogonal hidden-to-hidden weights, zero
// biases except the LSTM forget gate bias (1.0). The head's output layer is
// zero-initialized so a fresh predictor rolls out the identity.
PredictorParams init_predictor(CellKind kind, int hidden, int head_hidden,
                               uint64_t seed);

int64_t param_count(const PredictorParams& p);

struct RolloutResult {
    std::vector<Matrix> z; // H chart points per window: each [n x 2]
    std::vector<Matrix> u; // the pseudo-velocities, same shapes
};

// Plain rollout over n windows in lockstep. velocities[t] is [n x 2] holding
// v_{start+t} per window; inputs to the cell are velocities scaled by dt.
// z0 is [n x 2]. Uses the first H entries of velocities.
RolloutResult rollout_batch(const PredictorParams& p, const Matrix& z0,
                            const std::vector<Matrix>& velocities, double dt,
                            int H);

// Tape rollout: returns the H prediction nodes. pids from param_leaves on
// p.tensors(); velocity inputs become constant leaves inside.
std::vector<NodeId> rollout_graph(Tape& t, const PredictorParams& p,
                                  const std::vector<NodeId>& pids, NodeId z0,
                                  const std::vector<Matrix>& velocities, double dt,
                                  int H);

// ---------------------------------------------------------------------------
// EMA + shared helpers
// ---------------------------------------------------------------------------

// theta_bar <- tau * theta_bar + (1 - tau) * theta, every scalar.
void ema_update(EncoderParams& target, const EncoderParams& online, double tau);

std::vector<NodeId> param_leaves(Tape& t, const std::vector<const Matrix*>& tensors);

inline std::vector<NodeId> param_leaves(Tape& t, const std::vector<Matrix*>& tensors) {
    return param_leaves(t, std::vector<const Matrix*>(tensors.begin(), tensors.end()));
}

// ---------------------------------------------------------------------------
// Checkpoints: "CHARTJEPA-CKPT v1"
// ---------------------------------------------------------------------------

struct Checkpoint {
    EncoderParams enc;
    bool has_target = false;
    TargetEncoderState target;
    bool has_pred = false;
    PredictorParams pred;
    uint64_t seed = 0;
    uint64_t step = 0;
};

// extra header fields (e.g. tool version, config hash) are written after the
// architecture block, in the order given.
void save_checkpoint(const Checkpoint& ck, const std::string& path,
                     const std::vector<std::pair<std::string, std::string>>& extra = {});
Checkpoint load_checkpoint(const std::string& path);

} // namespace chartjepa::models
