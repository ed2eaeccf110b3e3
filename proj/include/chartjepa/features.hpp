#pragma once
// CSI feature extraction: angle-delay profiles (ADP), the cosine ADP
// dissimilarity, and the fused geodesic dissimilarity used for pretraining.

#include <cstdint>
#include <string>
#include <vector>

#include "chartjepa/channelsim.hpp"

namespace chartjepa::features {

// Angle-delay profile: per array, DFT across the antenna axis and inverse DFT
// across the subcarrier axis of the M x W matrix, then element-wise magnitude.
// Input is interleaved re/im of length 2*B*M*W; output has length B*M*W laid
// out as (b, angle_bin, delay_bin).
std::vector<double> adp(const std::vector<double>& h, int B, int M, int W);

struct FeatureVector {
    std::vector<double> x; // flattened ADP magnitudes, unit Frobenius norm
    double norm = 0.0;     // the norm that was divided out
};

// Throws std::domain_error on an all-zero tensor.
FeatureVector preprocess(const std::vector<double>& h, int B, int M, int W);

// 1 - cosine similarity of the flattened ADPs; in [0, 1] for non-negative
// ADP magnitudes. Throws std::domain_error when either ADP has zero norm.
double d_adp(const std::vector<double>& h1, const std::vector<double>& h2, int B,
             int M, int W);

// Symmetric dissimilarities with zero diagonal, stored dense.
struct DissimilarityMatrix {
    int64_t n = 0;
    std::string kind; // "adp" | "gfuse"
    std::vector<float> d;

    double at(int64_t i, int64_t j) const { return d[i * n + j]; }
    void set(int64_t i, int64_t j, double v) {
        d[i * n + j] = static_cast<float>(v);
        d[j * n + i] = static_cast<float>(v);
    }
    static DissimilarityMatrix zeros(int64_t n, std::string kind);
};

// All-pairs d_adp over precomputed unit-norm features.
DissimilarityMatrix pairwise_adp(const std::vector<FeatureVector>& feats);

// Fused geodesic: build a graph over the subset where (i,j) is an edge if j is
// among the k nearest d_adp neighbors of i (either direction) or the samples
// are <= time_window slots apart in the same trajectory. Temporal edges weigh
// min(d_adp, speed_scale * dt_seconds); others weigh d_adp. Output is
// all-pairs shortest-path distance. Throws std::runtime_error naming component
// sizes if the graph is disconnected.
DissimilarityMatrix d_geodesic_fused(const channelsim::Dataset& ds,
                                     const std::vector<int64_t>& subset,
                                     const std::vector<FeatureVector>& feats,
                                     int k, int time_window, double speed_scale);

// Convenience: preprocess a batch of dataset samples.
std::vector<FeatureVector> preprocess_subset(const channelsim::Dataset& ds,
                                             const std::vector<int64_t>& subset);

// "CHARTJEPA-DM v1": text header (n, kind), then n(n-1)/2 little-endian f32,
// upper triangle row-major.
void save_dm(const DissimilarityMatrix& dm, const std::string& path);
DissimilarityMatrix load_dm(const std::string& path);

} // namespace chartjepa::features
