#pragma once
// Chart quality metrics (continuity, trustworthiness, Kruskal stress, Rajski
// distance), the region 1-NN downstream task with rollout/greedy/oracle
// methods, and the angular-velocity noise sweep.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "chartjepa/channelsim.hpp"
#include "chartjepa/models.hpp"

namespace chartjepa::evaluation {

using models::EncoderParams;
using models::PredictorParams;
using ndnum::Matrix;

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

// Rank-based continuity/trustworthiness with k neighbors; ties in distance
// broken by index order. Requires n > 3k (throws std::invalid_argument).
//   tw = 1 - (2/(n k (2n-3k-1))) sum_i sum_{j in kNN_Z(i) \ kNN_P(i)} (rank_P(i,j) - k)
//   ct = the same with the two spaces swapped.
std::pair<double, double> continuity_trustworthiness(const Matrix& P,
                                                     const Matrix& Z, int k);

// ks = sqrt( sum (d^P - beta d^Z)^2 / sum (d^P)^2 ), beta the closed-form
// least-squares scale. All-coincident Z yields 1 (maximal stress); an
// all-coincident P yields 0 (no structure to distort).
double kruskal_stress(const Matrix& P, const Matrix& Z);

// rd = 1 - I(X;Y)/H(X,Y) where X, Y are equal-frequency binned pairwise
// distances over a shared pair enumeration (subsampled to at most 200 000
// pairs with a fixed seed). 0 when the joint entropy vanishes.
double rajski_distance(const Matrix& P, const Matrix& Z, int bins);

// Equal-frequency binning by rank, ties broken by element index; bin ids in
// [0, bins). Exposed for direct oracle tests of the RD construction.
std::vector<int> equal_frequency_bins(const std::vector<double>& v, int bins);
// 1 - I/H over two aligned label vectors.
double rajski_from_labels(const std::vector<int>& x, const std::vector<int>& y);

struct MetricsReport {
    double ct = 0, tw = 0, ks = 0, rd = 0;
    int k = 0;     // neighbors used by CT/TW
    int64_t n = 0; // points evaluated
};

// k = max(5, 5% of n), reported in the result; RD uses 16 bins.
int default_k(int64_t n);
MetricsReport chart_metrics(const Matrix& P, const Matrix& Z);

// CSV: `metric,value,k,n` with one row per metric.
std::string render_metrics_csv(const MetricsReport& r);
void save_metrics_csv(const MetricsReport& r, const std::string& path);

// ---------------------------------------------------------------------------
// Downstream region task
// ---------------------------------------------------------------------------

struct DownstreamOptions {
    std::vector<int> horizons{10, 25, 50};
    std::vector<double> bias_grid{0.0}; // rad/s angular-velocity bias
    double fit_fraction = 0.10;         // share of the test split fit by 1-NN
    uint64_t seed = 1;                  // fit-subset sampling
};

struct DownstreamReport {
    std::vector<std::string> methods; // "rollout", "greedy", "oracle"
    std::vector<double> bias_grid;
    std::vector<int> horizons;
    // accuracy[method][bias][horizon]; greedy/oracle ignore the bias.
    std::vector<std::vector<std::vector<double>>> accuracy;
    std::vector<int64_t> region_counts; // fit points per region
    std::vector<int64_t> windows_per_horizon;

    double at(const std::string& method, double bias, int horizon) const;
};

// Fits a 1-NN region classifier on an encoded fraction of the test split,
// then scores three per-step labelings over every test window of length H:
// rollout (predictor advanced on the window's velocities, bias-perturbed per
// the grid), greedy (the window's first chart point, held), and oracle (every
// true future channel encoded). Throws std::runtime_error when a region has
// no fit representative, std::invalid_argument on an unlabeled dataset.
DownstreamReport downstream_accuracy(const EncoderParams& enc,
                                     const PredictorParams& pred,
                                     const channelsim::Dataset& ds,
                                     const DownstreamOptions& opt);

// Greedy-only convenience: accuracies per horizon (bias-free).
std::vector<double> greedy_baseline(const EncoderParams& enc,
                                    const channelsim::Dataset& ds,
                                    const std::vector<int>& horizons,
                                    double fit_fraction, uint64_t seed);

// downstream_accuracy with a bias grid. base supplies the remaining options
// (fit fraction, seed); its horizons/bias_grid are overridden.
DownstreamReport noise_sweep(const EncoderParams& enc,
                             const PredictorParams& pred,
                             const channelsim::Dataset& ds,
                             const std::vector<double>& bias_grid,
                             const std::vector<int>& horizons,
                             const DownstreamOptions& base = DownstreamOptions{});

// CSV: `method,horizon,bias,accuracy`.
std::string render_downstream_csv(const DownstreamReport& r);
void save_downstream_csv(const DownstreamReport& r, const std::string& path);

// CSV: `x,y,region,trajectory_id`, one row per chart point.
std::string render_embedding_csv(const Matrix& Z, const std::vector<int>& region,
                                 const std::vector<int>& traj);
void save_embedding_csv(const Matrix& Z, const std::vector<int>& region,
                        const std::vector<int>& traj, const std::string& path);

// Encodes dataset rows [begin, end) in one batch (helper shared by the CLI
// and the evaluation paths).
Matrix encode_range(const EncoderParams& enc, const channelsim::Dataset& ds,
                    int64_t begin, int64_t end);

} // namespace chartjepa::evaluation
