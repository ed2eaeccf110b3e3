#include "chartjepa/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "chartjepa/rng.hpp"
#include "chartjepa/serial.hpp"

namespace chartjepa::training {

using models::TargetEncoderState;

const char* stage_name(Stage s) {
    switch (s) {
        case Stage::PretrainAdp: return "pretrain_adp";
        case Stage::PretrainGeodesic: return "pretrain_geodesic";
        case Stage::Jepa: return "jepa";
        case Stage::NonePretrain: return "none-pretrain";
    }
    return "?";
}

Stage stage_from_name(const std::string& name) {
    for (Stage s : {Stage::PretrainAdp, Stage::PretrainGeodesic, Stage::Jepa,
                    Stage::NonePretrain})
        if (name == stage_name(s)) return s;
    throw std::invalid_argument("unknown training stage: " + name);
}

TrainConfig TrainConfig::desk() { return TrainConfig{}; }

TrainConfig TrainConfig::paper() {
    TrainConfig c;
    c.widths = {1024, 512, 256, 128, 64};
    c.hidden = 256;
    c.head_hidden = 256;
    c.batch = 200;
    c.steps_per_epoch = 20;
    c.horizon = 300;
    c.epochs = 50;
    return c;
}

void TrainConfig::validate() const {
    auto bad = [](const std::string& m) { throw std::invalid_argument("TrainConfig: " + m); };
    if (widths.empty()) bad("widths must be non-empty");
    for (int w : widths)
        if (w < 1) bad("widths must be positive");
    if (hidden < 1 || head_hidden < 1) bad("predictor sizes must be positive");
    if (!(lr > 0)) bad("lr must be > 0");
    if (batch < 1) bad("batch must be >= 1");
    if (steps_per_epoch < 1) bad("steps_per_epoch must be >= 1");
    if (!(tau >= 0.0 && tau <= 1.0)) bad("tau must be in [0,1]");
    if (!(weight_decay >= 0)) bad("weight_decay must be >= 0");
    if (!(lr_decay_per_epoch > 0)) bad("lr_decay_per_epoch must be > 0");
    if (horizon < 1) bad("horizon must be >= 1");
    if (epochs < 0) bad("epochs must be >= 0");
    if (!(pretrain_fraction > 0 && pretrain_fraction <= 1)) bad("pretrain_fraction in (0,1]");
    if (pretrain_epochs < 0) bad("pretrain_epochs must be >= 0");
    if (pair_batch < 1) bad("pair_batch must be >= 1");
    if (pairs_per_epoch < 1) bad("pairs_per_epoch must be >= 1");
    if (!(pretrain_lr > 0)) bad("pretrain_lr must be > 0");
    if (knn_k < 1) bad("knn_k must be >= 1");
    if (time_window < 0) bad("time_window must be >= 0");
    if (!(speed_scale > 0)) bad("speed_scale must be > 0");
}

// ---------------------------------------------------------------------------
// Stage 1
// ---------------------------------------------------------------------------

namespace {

constexpr double kStressWeightEps = 1e-3;
constexpr double kDistEps = 1e-12; // inside sqrt; keeps the gradient finite

// Least-squares scale: argmin_s sum w (|dz| - s d)^2.
double fit_scale(const Matrix& z, const features::DissimilarityMatrix& dm) {
    double num = 0, den = 0;
    for (int64_t i = 0; i < dm.n; ++i)
        for (int64_t j = i + 1; j < dm.n; ++j) {
            const double d = dm.at(i, j);
            const double w = 1.0 / (d + kStressWeightEps);
            const double dx = z.at(i, 0) - z.at(j, 0);
            const double dy = z.at(i, 1) - z.at(j, 1);
            const double dz = std::sqrt(dx * dx + dy * dy);
            num += w * d * dz;
            den += w * d * d;
        }
    return den > 0 ? num / den : 0.0;
}

// Gauge fix: rescale and recenter the encoder output so the least-squares
// scale against dm is exactly 1 and the chart is centered on the subset. The
// stress objective determines the chart only up to scale and translation, and
// the free scale has a degenerate optimum — a chart collapsing toward a point
// drags the fitted s to 0 and the stress to 0 without preserving any
// geometry. Pinning s = 1 removes that direction; shape is untouched.
void canonicalize_chart(EncoderParams& enc, const Matrix& feats,
                        const features::DissimilarityMatrix& dm) {
    Matrix z = models::encode_batch(enc, feats);
    const double s = fit_scale(z, dm);
    // degenerate charts (collapsed: s ~ 0; exploded: s or the centroid not
    // finite) are left alone rather than poisoned with 0/inf factors
    if (!(s > 1e-12) || !std::isfinite(s)) return;
    double mx = 0, my = 0;
    for (int64_t i = 0; i < z.rows; ++i) {
        mx += z.at(i, 0);
        my += z.at(i, 1);
    }
    mx /= static_cast<double>(z.rows);
    my /= static_cast<double>(z.rows);
    if (!std::isfinite(mx) || !std::isfinite(my)) return;
    Matrix& w = enc.w.back();
    Matrix& b = enc.b.back();
    for (size_t q = 0; q < w.size(); ++q) w.d[q] /= s;
    b.at(0, 0) = (b.at(0, 0) - mx) / s;
    b.at(0, 1) = (b.at(0, 1) - my) / s;
}

void sgd_step(const std::vector<ndnum::Matrix*>& params, const Tape& t,
              const std::vector<NodeId>& ids, double lr, double weight_decay) {
    for (size_t k = 0; k < params.size(); ++k) {
        Matrix& p = *params[k];
        const Matrix& g = t.grad(ids[k]);
        for (size_t q = 0; q < p.size(); ++q)
            p.d[q] -= lr * g.d[q] + lr * weight_decay * p.d[q];
    }
}

} // namespace

double sammon_stress(const EncoderParams& enc, const Matrix& feats,
                     const features::DissimilarityMatrix& dm) {
    if (feats.rows != dm.n)
        throw std::invalid_argument("sammon_stress: feats/dissimilarity size mismatch");
    Matrix z = models::encode_batch(enc, feats);
    const double s = fit_scale(z, dm);
    double num = 0, wsum = 0;
    for (int64_t i = 0; i < dm.n; ++i)
        for (int64_t j = i + 1; j < dm.n; ++j) {
            const double d = dm.at(i, j);
            const double w = 1.0 / (d + kStressWeightEps);
            const double dx = z.at(i, 0) - z.at(j, 0);
            const double dy = z.at(i, 1) - z.at(j, 1);
            const double delta = std::sqrt(dx * dx + dy * dy) - s * d;
            num += w * delta * delta;
            wsum += w;
        }
    return num / wsum;
}

PretrainLog pretrain_siamese(EncoderParams& enc, const Matrix& feats,
                             const features::DissimilarityMatrix& dm,
                             const TrainConfig& cfg) {
    cfg.validate();
    if (feats.rows != dm.n)
        throw std::invalid_argument("pretrain_siamese: feats/dissimilarity size mismatch");
    if (dm.n < 2) throw std::invalid_argument("pretrain_siamese: need at least 2 samples");
    if (feats.cols != enc.in_dim())
        throw std::invalid_argument("pretrain_siamese: feature dim mismatch");
    bool any = false;
    for (float v : dm.d)
        if (v != 0.0f) { any = true; break; }
    if (!any)
        throw std::domain_error("pretrain_siamese: all-zero dissimilarity matrix");

    const int64_t n = dm.n;
    const int P = cfg.pair_batch;
    const int steps = (cfg.pairs_per_epoch + P - 1) / P;
    Rng rng(cfg.seed, 311);

    // 1e100 is far beyond any legitimate parameter scale but small enough
    // that the next forward pass cannot yet overflow to inf/NaN, so the
    // divergence is caught here instead of surfacing as a bad-input error
    // from a downstream kernel.
    const auto check_sane = [&](int epoch, int step) {
        for (const Matrix* m : enc.tensors())
            for (size_t q = 0; q < m->size(); ++q)
                if (!std::isfinite(m->d[q]) || std::fabs(m->d[q]) > 1e100)
                    throw std::runtime_error(
                        "pretraining diverged at epoch " + std::to_string(epoch) +
                        " step " + std::to_string(step) +
                        ": non-finite or exploding parameters, lr=" +
                        std::to_string(cfg.pretrain_lr));
    };

    PretrainLog log;
    canonicalize_chart(enc, feats, dm);
    log.initial_stress = sammon_stress(enc, feats, dm);
    for (int epoch = 0; epoch < cfg.pretrain_epochs; ++epoch) {
        for (int step = 0; step < steps; ++step) {
            Matrix xi(P, feats.cols), xj(P, feats.cols), tvec(P, 1), wvec(P, 1);
            for (int q = 0; q < P; ++q) {
                const int64_t i = static_cast<int64_t>(rng.bounded(n));
                int64_t j = static_cast<int64_t>(rng.bounded(n - 1));
                if (j >= i) ++j;
                std::copy(feats.row(i), feats.row(i) + feats.cols, xi.row(q));
                std::copy(feats.row(j), feats.row(j) + feats.cols, xj.row(q));
                const double d = dm.at(i, j);
                tvec.at(q, 0) = d; // canonical gauge: fitted scale is 1
                wvec.at(q, 0) = 1.0 / (d + kStressWeightEps);
            }
            Tape t;
            auto pids = models::param_leaves(t, enc.tensors());
            NodeId zi = models::encode_graph(t, enc, pids, t.leaf(std::move(xi)));
            NodeId zj = models::encode_graph(t, enc, pids, t.leaf(std::move(xj)));
            NodeId diff = ndnum::sub(t, zi, zj);
            NodeId ss = ndnum::row_sum(t, ndnum::mul(t, diff, diff));
            NodeId dist = ndnum::sqrt_op(
                t, ndnum::add(t, ss, t.leaf(Matrix::full(P, 1, kDistEps))));
            NodeId delta = ndnum::sub(t, dist, t.leaf(std::move(tvec)));
            NodeId wsq = ndnum::mul(t, t.leaf(std::move(wvec)),
                                    ndnum::mul(t, delta, delta));
            NodeId loss = ndnum::scale(t, ndnum::sum_all(t, wsq), 1.0 / P);
            ndnum::backward(t, loss);
            sgd_step(enc.tensors(), t, pids, cfg.pretrain_lr, 0.0);
            check_sane(epoch, step);
        }
        canonicalize_chart(enc, feats, dm);
        check_sane(epoch, steps);
        log.stress.push_back(sammon_stress(enc, feats, dm));
    }
    return log;
}

// ---------------------------------------------------------------------------
// Stage 2
// ---------------------------------------------------------------------------

TrainData prepare_train_data(const channelsim::Dataset& ds) {
    if (ds.train_end < 1) throw std::invalid_argument("dataset has no train split");
    const int B = ds.spec.B(), M = ds.spec.M(), W = ds.spec.W();
    const int64_t n = ds.train_end;
    TrainData td;
    td.feats = Matrix(static_cast<int>(n), B * M * W);
    td.vel.resize(n);
    td.dt = ds.spec.slot_duration;
    for (int64_t i = 0; i < n; ++i) {
        const auto& s = ds.samples[i];
        features::FeatureVector fv = features::preprocess(s.h, B, M, W);
        std::copy(fv.x.begin(), fv.x.end(), td.feats.row(i));
        td.vel[i] = {s.vx, s.vy};
    }
    for (int ti = 0; ti < ds.n_traj(); ++ti) {
        const int64_t b = ds.traj_starts[ti];
        const int64_t e = std::min<int64_t>(ds.traj_starts[ti + 1], n);
        if (b >= n) break;
        td.traj.emplace_back(b, e);
    }
    return td;
}

std::vector<int64_t> valid_window_starts(const TrainData& td, int H) {
    std::vector<int64_t> starts;
    for (const auto& [b, e] : td.traj)
        for (int64_t s = b; s + H < e; ++s) starts.push_back(s);
    return starts;
}

std::vector<int64_t> sample_epoch_windows(const TrainData& td, int H, int count,
                                          uint64_t seed, int epoch) {
    std::vector<int64_t> starts = valid_window_starts(td, H);
    if (starts.empty())
        throw std::runtime_error("no trajectory is long enough for horizon H");
    Rng rng(seed, 0x57a2e000ULL + static_cast<uint64_t>(epoch));
    for (size_t i = starts.size() - 1; i > 0; --i) {
        const size_t j = rng.bounded(i + 1);
        std::swap(starts[i], starts[j]);
    }
    std::vector<int64_t> out(static_cast<size_t>(count));
    for (size_t q = 0; q < out.size(); ++q) out[q] = starts[q % starts.size()];
    return out;
}

JepaBatch gather_batch(const TrainData& td, const std::vector<int64_t>& starts,
                       int H) {
    if (starts.empty()) throw std::invalid_argument("gather_batch: empty batch");
    for (int64_t s : starts) {
        bool inside = false;
        for (const auto& [b, e] : td.traj)
            if (s >= b && s + H < e) { inside = true; break; }
        if (!inside)
            throw std::invalid_argument(
                "gather_batch: window crosses a trajectory boundary");
    }
    const int B = static_cast<int>(starts.size());
    JepaBatch out;
    out.ctx = Matrix(B, td.feats.cols);
    for (int q = 0; q < B; ++q)
        std::copy(td.feats.row(starts[q]), td.feats.row(starts[q]) + td.feats.cols,
                  out.ctx.row(q));
    for (int t = 1; t <= H; ++t) {
        Matrix m(B, td.feats.cols);
        for (int q = 0; q < B; ++q)
            std::copy(td.feats.row(starts[q] + t),
                      td.feats.row(starts[q] + t) + td.feats.cols, m.row(q));
        out.targets.push_back(std::move(m));
    }
    for (int t = 0; t < H; ++t) {
        Matrix v(B, 2);
        for (int q = 0; q < B; ++q) {
            v.at(q, 0) = td.vel[starts[q] + t][0];
            v.at(q, 1) = td.vel[starts[q] + t][1];
        }
        out.vel.push_back(std::move(v));
    }
    return out;
}

JepaGraph build_jepa_graph(Tape& t, const EncoderParams& enc,
                           const EncoderParams& target,
                           const PredictorParams& pred, const JepaBatch& batch,
                           double dt, bool stop_gradient) {
    const int H = static_cast<int>(batch.targets.size());
    if (H < 1 || batch.vel.size() != batch.targets.size())
        throw std::invalid_argument("build_jepa_graph: malformed batch");
    JepaGraph g;
    g.enc_ids = models::param_leaves(t, enc.tensors());
    // Passing the same object as enc and target ties the weights: both
    // branches then read the same parameter leaves, which is what makes the
    // detach-removal diagnostic observable on the encoder gradient.
    g.tgt_ids = &target == &enc ? g.enc_ids : models::param_leaves(t, target.tensors());
    g.pred_ids = models::param_leaves(t, pred.tensors());
    NodeId z0 = models::encode_graph(t, enc, g.enc_ids, t.leaf(batch.ctx));
    std::vector<NodeId> zs =
        models::rollout_graph(t, pred, g.pred_ids, z0, batch.vel, dt, H);
    NodeId acc = -1;
    for (int q = 0; q < H; ++q) {
        NodeId tz = models::encode_graph(t, target, g.tgt_ids, t.leaf(batch.targets[q]));
        if (stop_gradient) tz = ndnum::detach(t, tz);
        NodeId diff = ndnum::sub(t, zs[q], tz);
        NodeId m = ndnum::sum_all(t, ndnum::mul(t, diff, diff));
        acc = acc < 0 ? m : ndnum::add(t, acc, m);
    }
    g.loss = ndnum::scale(t, acc, 1.0 / (static_cast<double>(batch.ctx.rows) * H));
    return g;
}

StepStats jepa_step(EncoderParams& enc, TargetEncoderState& target,
                    PredictorParams& pred, const TrainData& td,
                    const std::vector<int64_t>& starts, double lr,
                    const TrainConfig& cfg) {
    JepaBatch batch = gather_batch(td, starts, cfg.horizon);
    const int H = cfg.horizon;

    // Targets are constants: encoding them outside the tape is bitwise
    // identical to the detached tape branch (see build_jepa_graph), and the
    // tape then carries only the differentiable context/rollout path.
    std::vector<Matrix> tz;
    tz.reserve(batch.targets.size());
    for (const Matrix& x : batch.targets)
        tz.push_back(models::encode_batch(target.params, x));

    Tape t;
    auto enc_ids = models::param_leaves(t, enc.tensors());
    auto pred_ids = models::param_leaves(t, pred.tensors());
    const int B = batch.ctx.rows;
    NodeId z0 = models::encode_graph(t, enc, enc_ids, t.leaf(std::move(batch.ctx)));
    std::vector<NodeId> zs =
        models::rollout_graph(t, pred, pred_ids, z0, batch.vel, td.dt, H);
    NodeId acc = -1;
    for (int q = 0; q < H; ++q) {
        NodeId diff = ndnum::sub(t, zs[q], t.leaf(std::move(tz[q])));
        NodeId m = ndnum::sum_all(t, ndnum::mul(t, diff, diff));
        acc = acc < 0 ? m : ndnum::add(t, acc, m);
    }
    NodeId loss = ndnum::scale(t, acc, 1.0 / (static_cast<double>(B) * H));
    ndnum::backward(t, loss);

    StepStats stats;
    stats.loss = t.value(loss).at(0, 0);
    double g2 = 0;
    auto add_g2 = [&](const std::vector<NodeId>& ids) {
        for (NodeId id : ids)
            for (double v : t.grad(id).d) g2 += v * v;
    };
    add_g2(enc_ids);
    add_g2(pred_ids);
    stats.grad_norm = std::sqrt(g2);

    sgd_step(enc.tensors(), t, enc_ids, lr, cfg.weight_decay);
    sgd_step(pred.tensors(), t, pred_ids, lr, cfg.weight_decay);
    models::ema_update(target.params, enc, target.tau);
    return stats;
}

// ---------------------------------------------------------------------------
// Full run
// ---------------------------------------------------------------------------

std::string render_train_log_csv(const TrainLog& log) {
    std::string out = "step,epoch,loss,lr,grad_norm\n";
    for (const auto& r : log.steps) {
        out += std::to_string(r.step);
        out += ',';
        out += std::to_string(r.epoch);
        out += ',';
        out += fmt_f64(r.loss);
        out += ',';
        out += fmt_f64(r.lr);
        out += ',';
        out += fmt_f64(r.grad_norm);
        out += '\n';
    }
    return out;
}

void save_train_log(const TrainLog& log, const std::string& path) {
    write_file(path, render_train_log_csv(log));
}

std::vector<int64_t> pretrain_subset_indices(const channelsim::Dataset& ds,
                                             double fraction) {
    if (!(fraction > 0 && fraction <= 1))
        throw std::invalid_argument("pretrain fraction must be in (0,1]");
    if (ds.train_end < 1) throw std::invalid_argument("dataset has no train split");
    const int64_t stride = std::max<int64_t>(1, llround(1.0 / fraction));
    std::vector<int64_t> idx;
    for (int64_t i = 0; i < ds.train_end; i += stride) idx.push_back(i);
    return idx;
}

StageOneResult pretrain_stage(const channelsim::Dataset& ds, EncoderParams& enc,
                              const TrainConfig& cfg) {
    if (cfg.stage != Stage::PretrainAdp && cfg.stage != Stage::PretrainGeodesic)
        throw std::invalid_argument("pretrain_stage: stage is not a pretraining mode");
    StageOneResult out;
    out.subset = pretrain_subset_indices(ds, cfg.pretrain_fraction);
    auto fv = features::preprocess_subset(ds, out.subset);
    const int F = static_cast<int>(fv.front().x.size());
    if (enc.in_dim() != F)
        throw std::invalid_argument("pretrain_stage: encoder feature dim mismatch");
    out.feats = Matrix(static_cast<int>(out.subset.size()), F);
    for (size_t i = 0; i < out.subset.size(); ++i)
        std::copy(fv[i].x.begin(), fv[i].x.end(), out.feats.row(static_cast<int>(i)));
    features::DissimilarityMatrix dm =
        cfg.stage == Stage::PretrainAdp
            ? features::pairwise_adp(fv)
            : features::d_geodesic_fused(ds, out.subset, fv, cfg.knn_k,
                                         cfg.time_window, cfg.speed_scale);
    out.log = pretrain_siamese(enc, out.feats, dm, cfg);
    return out;
}

namespace {

// Smallest/largest eigenvalue ratio of the 2x2 embedding covariance.
bool embedding_collapsed(const EncoderParams& enc, const Matrix& feats) {
    const int64_t rows = std::min<int64_t>(feats.rows, 512);
    const int64_t stride = std::max<int64_t>(1, feats.rows / rows);
    Matrix sub(static_cast<int>((feats.rows + stride - 1) / stride), feats.cols);
    int64_t r = 0;
    for (int64_t i = 0; i < feats.rows; i += stride, ++r)
        std::copy(feats.row(i), feats.row(i) + feats.cols, sub.row(r));
    Matrix z = models::encode_batch(enc, sub);
    double mx = 0, my = 0;
    for (int i = 0; i < z.rows; ++i) { mx += z.at(i, 0); my += z.at(i, 1); }
    mx /= z.rows;
    my /= z.rows;
    double a = 0, b = 0, c = 0;
    for (int i = 0; i < z.rows; ++i) {
        const double x = z.at(i, 0) - mx, y = z.at(i, 1) - my;
        a += x * x;
        b += x * y;
        c += y * y;
    }
    const double tr = a + c;
    const double disc = std::sqrt((a - c) * (a - c) + 4 * b * b);
    const double lo = (tr - disc) / 2, hi = (tr + disc) / 2;
    return hi <= 0 || lo < 1e-6 * hi;
}

} // namespace

TrainResult train(const channelsim::Dataset& ds, const TrainConfig& cfg,
                  const EncoderParams* init_enc) {
    cfg.validate();
    const auto wall0 = std::chrono::steady_clock::now();
    TrainData td = prepare_train_data(ds);
    const int F = td.feats.cols;

    TrainResult res;
    if (init_enc) {
        if (init_enc->in_dim() != F)
            throw std::invalid_argument("initial encoder feature dim mismatch");
        res.enc = *init_enc;
    } else {
        res.enc = models::init_encoder(F, cfg.widths, Rng(cfg.seed, 401).next_u64());
    }

    if (cfg.stage == Stage::PretrainAdp || cfg.stage == Stage::PretrainGeodesic) {
        StageOneResult s1 = pretrain_stage(ds, res.enc, cfg);
        res.log.pretrain_stress = s1.log.stress;
    }

    res.target = TargetEncoderState{res.enc, cfg.tau};
    res.pred = models::init_predictor(cfg.cell, cfg.hidden, cfg.head_hidden,
                                      Rng(cfg.seed, 402).next_u64());

    double lr = cfg.lr;
    int64_t step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto windows = sample_epoch_windows(
            td, cfg.horizon, cfg.batch * cfg.steps_per_epoch, cfg.seed, epoch);
        double loss_sum = 0;
        for (int si = 0; si < cfg.steps_per_epoch; ++si) {
            std::vector<int64_t> starts(
                windows.begin() + static_cast<int64_t>(si) * cfg.batch,
                windows.begin() + static_cast<int64_t>(si + 1) * cfg.batch);
            StepStats st = jepa_step(res.enc, res.target, res.pred, td, starts, lr, cfg);
            if (!std::isfinite(st.loss))
                throw std::runtime_error(
                    "training diverged at step " + std::to_string(step) +
                    ": loss=" + fmt_f64(st.loss) + " lr=" + fmt_f64(lr) +
                    " grad_norm=" + fmt_f64(st.grad_norm));
            res.log.steps.push_back({step, epoch, st.loss, lr, st.grad_norm});
            loss_sum += st.loss;
            ++step;
        }
        res.log.epoch_mean_loss.push_back(loss_sum / cfg.steps_per_epoch);
        lr *= cfg.lr_decay_per_epoch;
        if (embedding_collapsed(res.enc, td.feats) && !res.log.collapse_warned) {
            std::fprintf(stderr,
                         "warning: embedding variance collapsed at epoch %d\n", epoch);
            res.log.collapse_warned = true;
        }
    }
    res.log.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - wall0).count();
    return res;
}

} // namespace chartjepa::training
