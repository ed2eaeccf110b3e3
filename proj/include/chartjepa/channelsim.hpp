#pragma once
// Synthetic indoor radio environment: random user trajectories plus a
// geometric multipath model producing complex CSI tensors per position.

#include <array>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "chartjepa/rng.hpp"

namespace chartjepa::channelsim {

struct ArrayPose {
    double x = 0, y = 0;
    double boresight = 0; // radians, direction the array faces
};

struct Scatterer {
    double x = 0, y = 0;
    double gain = 1.0; // reflection amplitude factor
};

struct Bounds {
    double xmin = 0, ymin = 0, xmax = 1, ymax = 1;
    double width() const { return xmax - xmin; }
    double height() const { return ymax - ymin; }
};

struct TrajectoryParams {
    double speed_mean = 2.2;   // m/s, mean-reversion target
    double speed_revert = 0.6; // 1/s, reversion rate
    double speed_sigma = 0.5;  // m/s per sqrt(s), diffusion
    double speed_min = 0.5;    // m/s, clip
    double speed_max = 3.0;    // m/s, clip
    double heading_sigma = 0.5; // rad per sqrt(s), heading random walk
    double max_turn = 0.3;      // rad, per-slot heading increment bound
    // NaN means "draw at random"; set to pin the initial state.
    double init_x = std::numeric_limits<double>::quiet_NaN();
    double init_y = std::numeric_limits<double>::quiet_NaN();
    double init_heading = std::numeric_limits<double>::quiet_NaN();
};

struct EnvironmentSpec {
    std::vector<ArrayPose> arrays;     // B receiving arrays
    int antennas_per_array = 8;        // M
    int subcarriers = 32;              // W
    double bandwidth = 50e6;           // Hz
    double carrier_freq = 1.272e9;     // Hz
    std::vector<Scatterer> scatterers; // single-bounce reflectors
    Bounds bounds{0.0, 0.0, 20.0, 15.0};
    double slot_duration = 0.04;       // s
    double snr_db = 20.0;              // estimation-noise level when enabled
    TrajectoryParams traj;

    int B() const { return static_cast<int>(arrays.size()); }
    int M() const { return antennas_per_array; }
    int W() const { return subcarriers; }
    int csi_len() const { return 2 * B() * M() * W(); } // interleaved re/im

    // Default desk-scale environment: 4 arrays around a 20 m x 15 m room,
    // 25 scatterers placed deterministically from the seed.
    static EnvironmentSpec desk(uint64_t scatter_seed = 1234);
};

struct TrajectoryState {
    double px = 0, py = 0; // m
    double vx = 0, vy = 0; // m/s
    double heading = 0;    // rad
    double speed = 0;      // m/s, |v|
};

struct CsiSample {
    int64_t slot = 0; // index within its trajectory
    int traj = 0;
    std::vector<double> h; // interleaved re/im, length 2*B*M*W
    double vx = 0, vy = 0;
    double px = 0, py = 0; // evaluation-only label
    int region = -1;       // evaluation-only label, -1 until assigned
};

struct Dataset {
    EnvironmentSpec spec;
    std::vector<CsiSample> samples;
    std::vector<int64_t> traj_starts; // per trajectory start index + end sentinel
    int64_t train_end = 0;            // samples [0,train_end) train, rest test
    uint64_t seed = 0;
    int n_regions = 0; // 0 until assign_regions

    int64_t size() const { return static_cast<int64_t>(samples.size()); }
    int n_traj() const { return static_cast<int>(traj_starts.size()) - 1; }
};

// Smooth random walk: Ornstein-Uhlenbeck speed, bounded heading increments,
// reflecting boundaries. Same (spec, steps, seed) gives bit-identical output.
std::vector<TrajectoryState> generate_trajectory(const EnvironmentSpec& spec,
                                                 int steps, uint64_t seed);

// Geometric ray model (LOS + one path per scatterer). Deterministic in p.
// Throws if p is within 1 cm of an array.
std::vector<double> synth_csi(const EnvironmentSpec& spec, double px, double py);
// Same, plus complex Gaussian estimation noise at spec.snr_db.
std::vector<double> synth_csi(const EnvironmentSpec& spec, double px, double py,
                              Rng& noise_rng);

// n_traj independent trajectories concatenated; the first
// round(train_frac * n_traj) trajectories form the train split. Unless the
// spec pins init_x/init_y, trajectory starts are stratified over a grid of
// cells (visited with a large coprime stride) so both splits cover the room.
Dataset generate_dataset(const EnvironmentSpec& spec, int n_traj,
                         int steps_per_traj, uint64_t seed, bool with_noise,
                         double train_frac);

// Grid partition of bounds into exactly R cells whose shape best matches the
// bounds aspect ratio; falls back to k-means on positions when no factor pair
// comes close. Fills sample.region.
void assign_regions(Dataset& ds, int R);

// Exposed grid helpers (used by evaluation and tests).
struct GridShape {
    int gx = 0, gy = 0;
    bool ok = false; // false -> k-means fallback was used / would be used
};
GridShape choose_grid(int R, double aspect);
int grid_region_of(const Bounds& b, const GridShape& g, double px, double py);

// Rotate each velocity by the cumulative angle bias * slot_duration * t,
// where t = 1 for the first element. Speeds are preserved exactly.
std::vector<std::array<double, 2>> perturb_velocity(
    const std::vector<std::array<double, 2>>& v, double angular_bias,
    double slot_duration);

// Bit-exact dataset file ("CHARTJEPA-DS v1") plus companion manifest
// ("<path>.manifest") holding trajectory boundaries and the train/test split.
// extra header fields are appended after the spec block, in the order given;
// the loader ignores keys it does not know.
void save_dataset(const Dataset& ds, const std::string& path,
                  const std::vector<std::pair<std::string, std::string>>& extra = {});
Dataset load_dataset(const std::string& path);

} // namespace chartjepa::channelsim
