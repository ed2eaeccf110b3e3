#include "chartjepa/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <unordered_set>

#include "chartjepa/features.hpp"
#include "chartjepa/rng.hpp"
#include "chartjepa/serial.hpp"

namespace chartjepa::evaluation {

namespace {

void check_points(const Matrix& P, const Matrix& Z) {
    if (P.rows != Z.rows || P.cols != 2 || Z.cols != 2)
        throw std::invalid_argument("metrics expect aligned n x 2 point sets");
}

double sqdist(const Matrix& m, int64_t i, int64_t j) {
    const double dx = m.at(static_cast<int>(i), 0) - m.at(static_cast<int>(j), 0);
    const double dy = m.at(static_cast<int>(i), 1) - m.at(static_cast<int>(j), 1);
    return dx * dx + dy * dy;
}

// rank[j] = 1-based rank of j among all points != i, ties by index.
std::vector<int> ranks_from(const Matrix& m, int i, int n) {
    std::vector<int> order;
    order.reserve(n - 1);
    for (int j = 0; j < n; ++j)
        if (j != i) order.push_back(j);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        const double da = sqdist(m, i, a), db = sqdist(m, i, b);
        return da != db ? da < db : a < b;
    });
    std::vector<int> rank(n, 0);
    for (size_t r = 0; r < order.size(); ++r) rank[order[r]] = static_cast<int>(r) + 1;
    return rank;
}

} // namespace

std::pair<double, double> continuity_trustworthiness(const Matrix& P,
                                                     const Matrix& Z, int k) {
    check_points(P, Z);
    const int n = P.rows;
    if (k < 1) throw std::invalid_argument("k must be >= 1");
    if (n <= 3 * k) throw std::invalid_argument("continuity/trustworthiness needs n > 3k");

    double tw_pen = 0, ct_pen = 0;
    for (int i = 0; i < n; ++i) {
        const std::vector<int> rp = ranks_from(P, i, n);
        const std::vector<int> rz = ranks_from(Z, i, n);
        for (int j = 0; j < n; ++j) {
            if (j == i) continue;
            // in latent kNN but not true kNN -> trustworthiness penalty
            if (rz[j] <= k && rp[j] > k) tw_pen += rp[j] - k;
            // in true kNN but not latent kNN -> continuity penalty
            if (rp[j] <= k && rz[j] > k) ct_pen += rz[j] - k;
        }
    }
    const double norm = 2.0 / (static_cast<double>(n) * k * (2.0 * n - 3.0 * k - 1.0));
    return {1.0 - norm * ct_pen, 1.0 - norm * tw_pen};
}

double kruskal_stress(const Matrix& P, const Matrix& Z) {
    check_points(P, Z);
    const int n = P.rows;
    if (n < 2) throw std::invalid_argument("kruskal_stress needs n >= 2");
    double pz = 0, zz = 0, pp = 0;
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            const double dp = std::sqrt(sqdist(P, i, j));
            const double dz = std::sqrt(sqdist(Z, i, j));
            pz += dp * dz;
            zz += dz * dz;
            pp += dp * dp;
        }
    if (pp == 0) return 0.0; // coincident true points: nothing to distort
    if (zz == 0) return 1.0; // collapsed chart: maximal stress
    const double beta = pz / zz;
    double num = 0;
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            const double dp = std::sqrt(sqdist(P, i, j));
            const double dz = std::sqrt(sqdist(Z, i, j));
            num += (dp - beta * dz) * (dp - beta * dz);
        }
    return std::sqrt(num / pp);
}

std::vector<int> equal_frequency_bins(const std::vector<double>& v, int bins) {
    if (bins < 1) throw std::invalid_argument("bins must be >= 1");
    const size_t m = v.size();
    std::vector<size_t> order(m);
    std::iota(order.begin(), order.end(), size_t{0});
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        return v[a] != v[b] ? v[a] < v[b] : a < b;
    });
    std::vector<int> bin(m, 0);
    for (size_t r = 0; r < m; ++r)
        bin[order[r]] = static_cast<int>(r * static_cast<size_t>(bins) / m);
    return bin;
}

double rajski_from_labels(const std::vector<int>& x, const std::vector<int>& y) {
    if (x.size() != y.size() || x.empty())
        throw std::invalid_argument("rajski_from_labels: aligned non-empty labels");
    const int bx = *std::max_element(x.begin(), x.end()) + 1;
    const int by = *std::max_element(y.begin(), y.end()) + 1;
    std::vector<double> joint(static_cast<size_t>(bx) * by, 0.0);
    std::vector<double> px(bx, 0.0), py(by, 0.0);
    const double w = 1.0 / static_cast<double>(x.size());
    for (size_t q = 0; q < x.size(); ++q) {
        joint[static_cast<size_t>(x[q]) * by + y[q]] += w;
        px[x[q]] += w;
        py[y[q]] += w;
    }
    double info = 0, joint_h = 0;
    for (int a = 0; a < bx; ++a)
        for (int b = 0; b < by; ++b) {
            const double p = joint[static_cast<size_t>(a) * by + b];
            if (p <= 0) continue;
            info += p * std::log(p / (px[a] * py[b]));
            joint_h -= p * std::log(p);
        }
    if (joint_h <= 0) return 0.0; // single occupied joint cell
    const double rd = 1.0 - info / joint_h;
    return std::min(1.0, std::max(0.0, rd));
}

namespace {

constexpr int64_t kMaxRdPairs = 200000;

// Deterministic subsample of pair indices (i<j) as linear triangular ranks.
std::vector<int64_t> sample_pair_ranks(int64_t n) {
    const int64_t total = n * (n - 1) / 2;
    std::vector<int64_t> ranks;
    if (total <= kMaxRdPairs) {
        ranks.resize(static_cast<size_t>(total));
        std::iota(ranks.begin(), ranks.end(), int64_t{0});
        return ranks;
    }
    Rng rng(0x7a156eedULL);
    std::unordered_set<int64_t> seen;
    seen.reserve(static_cast<size_t>(kMaxRdPairs) * 2);
    while (static_cast<int64_t>(seen.size()) < kMaxRdPairs)
        seen.insert(static_cast<int64_t>(rng.bounded(static_cast<uint64_t>(total))));
    ranks.assign(seen.begin(), seen.end());
    std::sort(ranks.begin(), ranks.end());
    return ranks;
}

// Inverse of rank = i*n - i*(i+1)/2 + (j - i - 1) for pairs in (0,1),(0,2),...
std::pair<int64_t, int64_t> unrank_pair(int64_t rank, int64_t n) {
    int64_t i = static_cast<int64_t>(
        (2.0 * n - 1.0 - std::sqrt((2.0 * n - 1.0) * (2.0 * n - 1.0) - 8.0 * rank)) / 2.0);
    if (i < 0) i = 0;
    auto base = [&](int64_t q) { return q * n - q * (q + 1) / 2; };
    while (i > 0 && base(i) > rank) --i;
    while (base(i + 1) <= rank) ++i;
    const int64_t j = rank - base(i) + i + 1;
    return {i, j};
}

} // namespace

double rajski_distance(const Matrix& P, const Matrix& Z, int bins) {
    check_points(P, Z);
    if (P.rows < 2) throw std::invalid_argument("rajski_distance needs n >= 2");
    if (bins < 2) throw std::invalid_argument("rajski_distance needs bins >= 2");
    const auto ranks = sample_pair_ranks(P.rows);
    std::vector<double> dp, dz;
    dp.reserve(ranks.size());
    dz.reserve(ranks.size());
    for (int64_t r : ranks) {
        const auto [i, j] = unrank_pair(r, P.rows);
        dp.push_back(sqdist(P, i, j));
        dz.push_back(sqdist(Z, i, j));
    }
    return rajski_from_labels(equal_frequency_bins(dp, bins),
                              equal_frequency_bins(dz, bins));
}

int default_k(int64_t n) {
    return std::max<int64_t>(5, n / 20);
}

MetricsReport chart_metrics(const Matrix& P, const Matrix& Z) {
    MetricsReport r;
    r.n = P.rows;
    r.k = default_k(r.n);
    auto [ct, tw] = continuity_trustworthiness(P, Z, r.k);
    r.ct = ct;
    r.tw = tw;
    r.ks = kruskal_stress(P, Z);
    r.rd = rajski_distance(P, Z, 16);
    return r;
}

std::string render_metrics_csv(const MetricsReport& r) {
    std::string out = "metric,value,k,n\n";
    const std::pair<const char*, double> rows[] = {
        {"ct", r.ct}, {"tw", r.tw}, {"ks", r.ks}, {"rd", r.rd}};
    for (const auto& [name, value] : rows) {
        out += name;
        out += ',';
        out += fmt_f64(value);
        out += ',';
        out += std::to_string(r.k);
        out += ',';
        out += std::to_string(r.n);
        out += '\n';
    }
    return out;
}

// ---------------------------------------------------------------------------
// Downstream task
// ---------------------------------------------------------------------------

Matrix encode_range(const EncoderParams& enc, const channelsim::Dataset& ds,
                    int64_t begin, int64_t end) {
    if (begin < 0 || end > ds.size() || begin >= end)
        throw std::invalid_argument("encode_range: bad range");
    const int B = ds.spec.B(), M = ds.spec.M(), W = ds.spec.W();
    Matrix feats(static_cast<int>(end - begin), B * M * W);
    for (int64_t i = begin; i < end; ++i) {
        auto fv = features::preprocess(ds.samples[i].h, B, M, W);
        std::copy(fv.x.begin(), fv.x.end(), feats.row(static_cast<int>(i - begin)));
    }
    return models::encode_batch(enc, feats);
}

namespace {

struct Knn1 {
    std::vector<double> x, y;
    std::vector<int> label;

    int classify(double qx, double qy) const {
        int best = 0;
        double bd = std::numeric_limits<double>::infinity();
        for (size_t i = 0; i < x.size(); ++i) {
            const double dx = x[i] - qx, dy = y[i] - qy;
            const double d = dx * dx + dy * dy;
            if (d < bd) { // ties keep the lower index
                bd = d;
                best = static_cast<int>(i);
            }
        }
        return label[best];
    }
};

struct WindowSet {
    std::vector<int64_t> starts;
};

WindowSet test_windows(const channelsim::Dataset& ds, int H) {
    WindowSet w;
    for (int ti = 0; ti < ds.n_traj(); ++ti) {
        const int64_t b = std::max(ds.traj_starts[ti], ds.train_end);
        const int64_t e = ds.traj_starts[ti + 1];
        for (int64_t s = b; s + H < e; ++s) w.starts.push_back(s);
    }
    return w;
}

} // namespace

DownstreamReport downstream_accuracy(const EncoderParams& enc,
                                     const PredictorParams& pred,
                                     const channelsim::Dataset& ds,
                                     const DownstreamOptions& opt) {
    if (ds.n_regions < 1)
        throw std::invalid_argument("downstream_accuracy: dataset has no regions");
    if (ds.train_end >= ds.size())
        throw std::invalid_argument("downstream_accuracy: dataset has no test split");
    if (opt.horizons.empty())
        throw std::invalid_argument("downstream_accuracy: no horizons");
    if (!(opt.fit_fraction > 0 && opt.fit_fraction <= 1))
        throw std::invalid_argument("downstream_accuracy: fit_fraction in (0,1]");

    const int64_t t0 = ds.train_end, n = ds.size();
    const int64_t m = n - t0;
    Matrix chart = encode_range(enc, ds, t0, n); // [m x 2]

    // 1-NN fit subset
    std::vector<int64_t> order(static_cast<size_t>(m));
    std::iota(order.begin(), order.end(), int64_t{0});
    Rng rng(opt.seed, 0xf17);
    for (size_t i = order.size() - 1; i > 0; --i)
        std::swap(order[i], order[rng.bounded(i + 1)]);
    const int64_t n_fit =
        std::max<int64_t>(1, llround(opt.fit_fraction * static_cast<double>(m)));
    Knn1 knn;
    std::vector<int64_t> counts(static_cast<size_t>(ds.n_regions), 0);
    for (int64_t q = 0; q < n_fit; ++q) {
        const int64_t row = order[static_cast<size_t>(q)];
        const int reg = ds.samples[t0 + row].region;
        if (reg < 0 || reg >= ds.n_regions)
            throw std::invalid_argument("downstream_accuracy: unlabeled sample");
        knn.x.push_back(chart.at(static_cast<int>(row), 0));
        knn.y.push_back(chart.at(static_cast<int>(row), 1));
        knn.label.push_back(reg);
        ++counts[static_cast<size_t>(reg)];
    }
    for (int r = 0; r < ds.n_regions; ++r)
        if (counts[static_cast<size_t>(r)] == 0)
            throw std::runtime_error("downstream_accuracy: region " +
                                     std::to_string(r) + " has no fit points");

    DownstreamReport rep;
    rep.methods = {"rollout", "greedy", "oracle"};
    rep.bias_grid = opt.bias_grid.empty() ? std::vector<double>{0.0} : opt.bias_grid;
    rep.horizons = opt.horizons;
    rep.region_counts = counts;
    rep.accuracy.assign(
        rep.methods.size(),
        std::vector<std::vector<double>>(rep.bias_grid.size(),
                                         std::vector<double>(rep.horizons.size(), 0.0)));

    // region labels of every test sample classified once (greedy/oracle reuse)
    std::vector<int> cls(static_cast<size_t>(m));
    for (int64_t q = 0; q < m; ++q)
        cls[static_cast<size_t>(q)] =
            knn.classify(chart.at(static_cast<int>(q), 0), chart.at(static_cast<int>(q), 1));

    for (size_t hi = 0; hi < rep.horizons.size(); ++hi) {
        const int H = rep.horizons[hi];
        if (H < 1) throw std::invalid_argument("downstream_accuracy: horizon < 1");
        WindowSet w = test_windows(ds, H);
        rep.windows_per_horizon.push_back(static_cast<int64_t>(w.starts.size()));
        if (w.starts.empty()) continue;
        const int B = static_cast<int>(w.starts.size());

        // greedy / oracle are velocity-free: same value for every bias
        double greedy_hits = 0, oracle_hits = 0;
        for (int64_t s : w.starts) {
            const int g = cls[static_cast<size_t>(s - t0)];
            for (int t = 1; t <= H; ++t) {
                const int truth = ds.samples[s + t].region;
                if (g == truth) ++greedy_hits;
                if (cls[static_cast<size_t>(s + t - t0)] == truth) ++oracle_hits;
            }
        }
        const double denom = static_cast<double>(B) * H;

        for (size_t bi = 0; bi < rep.bias_grid.size(); ++bi) {
            const double bias = rep.bias_grid[bi];
            Matrix z0(B, 2);
            for (int q = 0; q < B; ++q) {
                z0.at(q, 0) = chart.at(static_cast<int>(w.starts[q] - t0), 0);
                z0.at(q, 1) = chart.at(static_cast<int>(w.starts[q] - t0), 1);
            }
            // per-window velocity sequences, bias-perturbed
            std::vector<Matrix> vel(static_cast<size_t>(H), Matrix(B, 2));
            for (int q = 0; q < B; ++q) {
                std::vector<std::array<double, 2>> seq(static_cast<size_t>(H));
                for (int t = 0; t < H; ++t)
                    seq[static_cast<size_t>(t)] = {ds.samples[w.starts[q] + t].vx,
                                                   ds.samples[w.starts[q] + t].vy};
                const auto pseq =
                    channelsim::perturb_velocity(seq, bias, ds.spec.slot_duration);
                for (int t = 0; t < H; ++t) {
                    vel[static_cast<size_t>(t)].at(q, 0) = pseq[static_cast<size_t>(t)][0];
                    vel[static_cast<size_t>(t)].at(q, 1) = pseq[static_cast<size_t>(t)][1];
                }
            }
            models::RolloutResult roll =
                models::rollout_batch(pred, z0, vel, ds.spec.slot_duration, H);
            double hits = 0;
            for (int t = 1; t <= H; ++t) {
                const Matrix& zt = roll.z[static_cast<size_t>(t - 1)];
                for (int q = 0; q < B; ++q) {
                    const int truth = ds.samples[w.starts[q] + t].region;
                    if (knn.classify(zt.at(q, 0), zt.at(q, 1)) == truth) ++hits;
                }
            }
            rep.accuracy[0][bi][hi] = hits / denom;
            rep.accuracy[1][bi][hi] = greedy_hits / denom;
            rep.accuracy[2][bi][hi] = oracle_hits / denom;
        }
    }
    return rep;
}

double DownstreamReport::at(const std::string& method, double bias,
                            int horizon) const {
    for (size_t mi = 0; mi < methods.size(); ++mi)
        for (size_t bi = 0; bi < bias_grid.size(); ++bi)
            for (size_t hi = 0; hi < horizons.size(); ++hi)
                if (methods[mi] == method && bias_grid[bi] == bias &&
                    horizons[hi] == horizon)
                    return accuracy[mi][bi][hi];
    throw std::invalid_argument("DownstreamReport::at: no such cell");
}

std::vector<double> greedy_baseline(const EncoderParams& enc,
                                    const channelsim::Dataset& ds,
                                    const std::vector<int>& horizons,
                                    double fit_fraction, uint64_t seed) {
    // the greedy labeling never consults the predictor: a fresh one (zero
    // output head) leaves the rollout path inert
    PredictorParams dummy = models::init_predictor(models::CellKind::RNN, 1, 1, seed);
    DownstreamOptions opt;
    opt.horizons = horizons;
    opt.fit_fraction = fit_fraction;
    opt.seed = seed;
    DownstreamReport rep = downstream_accuracy(enc, dummy, ds, opt);
    std::vector<double> out;
    for (int h : horizons) out.push_back(rep.at("greedy", 0.0, h));
    return out;
}

DownstreamReport noise_sweep(const EncoderParams& enc,
                             const PredictorParams& pred,
                             const channelsim::Dataset& ds,
                             const std::vector<double>& bias_grid,
                             const std::vector<int>& horizons,
                             const DownstreamOptions& base) {
    DownstreamOptions opt = base;
    opt.horizons = horizons;
    opt.bias_grid = bias_grid;
    return downstream_accuracy(enc, pred, ds, opt);
}

std::string render_downstream_csv(const DownstreamReport& r) {
    std::string out = "method,horizon,bias,accuracy\n";
    for (size_t mi = 0; mi < r.methods.size(); ++mi)
        for (size_t bi = 0; bi < r.bias_grid.size(); ++bi)
            for (size_t hi = 0; hi < r.horizons.size(); ++hi) {
                out += r.methods[mi];
                out += ',';
                out += std::to_string(r.horizons[hi]);
                out += ',';
                out += fmt_f64(r.bias_grid[bi]);
                out += ',';
                out += fmt_f64(r.accuracy[mi][bi][hi]);
                out += '\n';
            }
    return out;
}

void save_metrics_csv(const MetricsReport& r, const std::string& path) {
    write_file(path, render_metrics_csv(r));
}

void save_downstream_csv(const DownstreamReport& r, const std::string& path) {
    write_file(path, render_downstream_csv(r));
}

std::string render_embedding_csv(const Matrix& Z, const std::vector<int>& region,
                                 const std::vector<int>& traj) {
    if (Z.cols != 2 || static_cast<size_t>(Z.rows) != region.size() ||
        region.size() != traj.size())
        throw std::invalid_argument("save_embedding_csv: misaligned inputs");
    std::string out = "x,y,region,trajectory_id\n";
    for (int i = 0; i < Z.rows; ++i) {
        out += fmt_f64(Z.at(i, 0));
        out += ',';
        out += fmt_f64(Z.at(i, 1));
        out += ',';
        out += std::to_string(region[static_cast<size_t>(i)]);
        out += ',';
        out += std::to_string(traj[static_cast<size_t>(i)]);
        out += '\n';
    }
    return out;
}

void save_embedding_csv(const Matrix& Z, const std::vector<int>& region,
                        const std::vector<int>& traj, const std::string& path) {
    write_file(path, render_embedding_csv(Z, region, traj));
}

} // namespace chartjepa::evaluation
