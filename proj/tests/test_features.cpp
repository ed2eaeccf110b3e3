#include <cmath>

#include "chartjepa/channelsim.hpp"
#include "chartjepa/features.hpp"
#include "chartjepa/serial.hpp"
#include "test_support.hpp"

using namespace chartjepa;
using namespace chartjepa::channelsim;
using namespace chartjepa::features;

static std::vector<double> rotate_phase(const std::vector<double>& h, double phi) {
    std::vector<double> out(h.size());
    const double c = std::cos(phi), s = std::sin(phi);
    for (size_t i = 0; i < h.size(); i += 2) {
        out[i] = c * h[i] - s * h[i + 1];
        out[i + 1] = s * h[i] + c * h[i + 1];
    }
    return out;
}

static void test_adp_basic() {
    testing::section("adp construction");
    // all-zero tensor -> all-zero ADP
    std::vector<double> z(2 * 1 * 4 * 4, 0.0);
    auto az = adp(z, 1, 4, 4);
    REQUIRE(static_cast<int>(az.size()) == 16);
    for (double v : az) REQUIRE(v == 0.0);

    // single LOS path at broadside: the zero-angle bin dominates
    EnvironmentSpec s;
    s.arrays = {{-1.0, 0.0, 0.0}};
    s.antennas_per_array = 4;
    s.subcarriers = 4;
    s.scatterers.clear();
    s.bounds = {0, -5, 10, 5};
    auto h = synth_csi(s, 5.0, 0.0); // angle from array to user = 0 = boresight
    auto a = adp(h, 1, 4, 4);
    std::vector<double> colsum(4, 0.0);
    for (int ang = 0; ang < 4; ++ang)
        for (int tau = 0; tau < 4; ++tau) colsum[ang] += a[ang * 4 + tau];
    for (int ang = 1; ang < 4; ++ang) REQUIRE(colsum[0] > colsum[ang]);

    // global phase invariance
    EnvironmentSpec d = EnvironmentSpec::desk(1);
    auto hd = synth_csi(d, 4.0, 6.0);
    auto a1 = adp(hd, d.B(), d.M(), d.W());
    auto a2 = adp(rotate_phase(hd, 1.234), d.B(), d.M(), d.W());
    REQUIRE(a1.size() == a2.size());
    for (size_t i = 0; i < a1.size(); ++i) REQUIRE_CLOSE(a1[i], a2[i], 1e-12);

    REQUIRE_THROWS(adp(std::vector<double>(7), 1, 4, 4));
}

static void test_preprocess() {
    testing::section("preprocess");
    EnvironmentSpec d = EnvironmentSpec::desk(1);
    auto h = synth_csi(d, 3.0, 4.0);
    FeatureVector f = preprocess(h, d.B(), d.M(), d.W());
    REQUIRE(static_cast<int>(f.x.size()) == 1024); // 4 * 8 * 32
    double ss = 0;
    for (double v : f.x) ss += v * v;
    REQUIRE_CLOSE(std::sqrt(ss), 1.0, 1e-12);
    REQUIRE(f.norm > 0.0);

    // invariance to complex scaling c = 0.37 * e^{j*2.1}
    auto hc = rotate_phase(h, 2.1);
    for (double& v : hc) v *= 0.37;
    FeatureVector fc = preprocess(hc, d.B(), d.M(), d.W());
    for (size_t i = 0; i < f.x.size(); ++i) REQUIRE_CLOSE(f.x[i], fc.x[i], 1e-12);

    std::vector<double> zero(static_cast<size_t>(d.csi_len()), 0.0);
    REQUIRE_THROWS(preprocess(zero, d.B(), d.M(), d.W()));
}

static void test_d_adp() {
    testing::section("d_adp premetric");
    EnvironmentSpec d = EnvironmentSpec::desk(1);
    auto h1 = synth_csi(d, 3.0, 4.0);
    auto h2 = synth_csi(d, 9.0, 11.0);

    REQUIRE_CLOSE(d_adp(h1, h1, d.B(), d.M(), d.W()), 0.0, 1e-12);
    auto hc = rotate_phase(h1, -0.77);
    for (double& v : hc) v *= 2.5;
    REQUIRE_CLOSE(d_adp(h1, hc, d.B(), d.M(), d.W()), 0.0, 1e-12);

    const double d12 = d_adp(h1, h2, d.B(), d.M(), d.W());
    const double d21 = d_adp(h2, h1, d.B(), d.M(), d.W());
    REQUIRE(d12 == d21);
    REQUIRE(d12 >= 0.0 && d12 <= 1.0);
    REQUIRE(d12 > 0.0);

    // 50 random pairs: range + positive correlation with physical distance
    Rng rng(55);
    double mx = 0, my = 0;
    std::vector<double> dist, dis;
    for (int q = 0; q < 50; ++q) {
        double x1 = rng.uniform(0.5, 19.5), y1 = rng.uniform(0.5, 14.5);
        double x2 = rng.uniform(0.5, 19.5), y2 = rng.uniform(0.5, 14.5);
        auto a = synth_csi(d, x1, y1);
        auto b = synth_csi(d, x2, y2);
        double dd = d_adp(a, b, d.B(), d.M(), d.W());
        REQUIRE(dd >= 0.0 && dd <= 1.0);
        dist.push_back(std::hypot(x1 - x2, y1 - y2));
        dis.push_back(dd);
        mx += dist.back();
        my += dd;
    }
    mx /= 50;
    my /= 50;
    double sxy = 0, sxx = 0, syy = 0;
    for (int q = 0; q < 50; ++q) {
        sxy += (dist[q] - mx) * (dis[q] - my);
        sxx += (dist[q] - mx) * (dist[q] - mx);
        syy += (dis[q] - my) * (dis[q] - my);
    }
    const double pearson = sxy / std::sqrt(sxx * syy);
    std::printf("   pearson over 50 pairs = %.3f\n", pearson);
    REQUIRE(pearson > 0.5);
}

static void test_monotonic_dissimilarity() {
    testing::section("d_adp grows with displacement");
    EnvironmentSpec d = EnvironmentSpec::desk(1);
    Rng rng(77);
    const int anchors = 100;
    std::vector<double> mean_d(10, 0.0);
    for (int a = 0; a < anchors; ++a) {
        const double ax = rng.uniform(1.5, 18.5), ay = rng.uniform(1.5, 13.5);
        const double dir = rng.uniform(0.0, 2 * 3.14159265358979323846);
        const double cx = std::cos(dir), cy = std::sin(dir);
        FeatureVector fa = preprocess(synth_csi(d, ax, ay), d.B(), d.M(), d.W());
        for (int s = 1; s <= 10; ++s) {
            const double delta = 0.1 * s;
            double px = ax + delta * cx, py = ay + delta * cy;
            px = std::clamp(px, d.bounds.xmin, d.bounds.xmax);
            py = std::clamp(py, d.bounds.ymin, d.bounds.ymax);
            FeatureVector fb = preprocess(synth_csi(d, px, py), d.B(), d.M(), d.W());
            double dot = 0;
            for (size_t q = 0; q < fa.x.size(); ++q) dot += fa.x[q] * fb.x[q];
            mean_d[s - 1] += (1.0 - dot) / anchors;
        }
    }
    for (int s = 0; s < 10; ++s) std::printf("   |delta|=%.1f m: mean d_adp = %.4f\n", 0.1 * (s + 1), mean_d[s]);
    for (int s = 1; s < 10; ++s) REQUIRE(mean_d[s] > mean_d[s - 1]);
}

// Minimal dataset whose samples carry only trajectory/slot structure; the
// feature vectors are supplied directly so edge weights are fully controlled.
static Dataset skeleton_dataset(const std::vector<std::pair<int, int64_t>>& traj_slot) {
    Dataset ds;
    ds.spec = EnvironmentSpec::desk(1);
    int maxtraj = 0;
    for (const auto& ts : traj_slot) maxtraj = std::max(maxtraj, ts.first);
    std::vector<std::vector<CsiSample>> per(maxtraj + 1);
    for (const auto& ts : traj_slot) {
        CsiSample s;
        s.traj = ts.first;
        s.slot = ts.second;
        per[ts.first].push_back(s);
    }
    for (int t = 0; t <= maxtraj; ++t) {
        ds.traj_starts.push_back(static_cast<int64_t>(ds.samples.size()));
        for (auto& s : per[t]) ds.samples.push_back(std::move(s));
    }
    ds.traj_starts.push_back(static_cast<int64_t>(ds.samples.size()));
    return ds;
}

static std::vector<FeatureVector> basis_features(int n, int dim) {
    std::vector<FeatureVector> f(n);
    for (int i = 0; i < n; ++i) {
        f[i].x.assign(dim, 0.0);
        f[i].x[i % dim] = 1.0;
        f[i].norm = 1.0;
    }
    return f;
}

static void test_geodesic_chain() {
    testing::section("geodesic on a temporal chain");
    // 10 consecutive slots, orthogonal features: d_adp = 1 everywhere, so the
    // temporal edges (weight = slot gap * 0.04) dominate every path.
    const int n = 10;
    std::vector<std::pair<int, int64_t>> ts;
    for (int i = 0; i < n; ++i) ts.push_back({0, i});
    Dataset ds = skeleton_dataset(ts);
    std::vector<int64_t> subset(n);
    for (int i = 0; i < n; ++i) subset[i] = i;
    auto feats = basis_features(n, n);

    DissimilarityMatrix g =
        d_geodesic_fused(ds, subset, feats, /*k=*/1, /*time_window=*/1,
                         /*speed_scale=*/1.0);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            const double want = std::min(1.0, 0.04 * std::llabs(i - j));
            REQUIRE_CLOSE(g.at(i, j), want, 1e-6);
        }
}

static void test_geodesic_oracle() {
    testing::section("geodesic vs independent Floyd-Warshall oracle");
    EnvironmentSpec d = EnvironmentSpec::desk(1);
    Dataset ds = generate_dataset(d, 1, 12, 31, false, 1.0);
    std::vector<int64_t> subset;
    for (int64_t i = 0; i < ds.size(); ++i) subset.push_back(i);
    auto feats = preprocess_subset(ds, subset);
    const int n = static_cast<int>(subset.size());
    const int k = 3, tw = 2;
    const double scale = 1.0;

    DissimilarityMatrix g = d_geodesic_fused(ds, subset, feats, k, tw, scale);

    // Oracle: rebuild the documented adjacency rule independently, then run
    // Floyd-Warshall (different algorithm from the production Dijkstra).
    DissimilarityMatrix local = pairwise_adp(feats);
    std::vector<std::vector<double>> w(n, std::vector<double>(n, 1e18));
    for (int i = 0; i < n; ++i) w[i][i] = 0.0;
    for (int i = 0; i < n; ++i) {
        std::vector<int> idx;
        for (int j = 0; j < n; ++j)
            if (j != i) idx.push_back(j);
        std::sort(idx.begin(), idx.end(), [&](int a, int b) {
            if (local.at(i, a) != local.at(i, b)) return local.at(i, a) < local.at(i, b);
            return a < b;
        });
        for (int q = 0; q < k; ++q) {
            const int j = idx[q];
            w[i][j] = std::min(w[i][j], local.at(i, j));
            w[j][i] = std::min(w[j][i], local.at(i, j));
        }
    }
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            if (i == j) continue;
            const auto& si = ds.samples[subset[i]];
            const auto& sj = ds.samples[subset[j]];
            if (si.traj != sj.traj || std::llabs(si.slot - sj.slot) > tw) continue;
            const double fuse = std::min(
                local.at(i, j),
                scale * std::llabs(si.slot - sj.slot) * ds.spec.slot_duration);
            w[i][j] = std::min(w[i][j], fuse);
            w[j][i] = std::min(w[j][i], fuse);
        }
    for (int m = 0; m < n; ++m)
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
                w[i][j] = std::min(w[i][j], w[i][m] + w[m][j]);

    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) REQUIRE_CLOSE(g.at(i, j), w[i][j], 1e-6);

    // invariants: symmetry, zero diagonal, exhaustive triangle inequality
    for (int i = 0; i < n; ++i) {
        REQUIRE(g.at(i, i) == 0.0);
        for (int j = 0; j < n; ++j) {
            REQUIRE(g.at(i, j) == g.at(j, i));
            REQUIRE(g.at(i, j) >= 0.0);
            // slack covers f32 storage rounding of the three entries
            for (int m = 0; m < n; ++m)
                REQUIRE(g.at(i, j) <= g.at(i, m) + g.at(m, j) + 1e-6);
        }
    }
}

static void test_geodesic_errors() {
    testing::section("geodesic error signalling");
    // two pairs of identical features in different trajectories, k=1:
    // each node links only to its twin -> two components of size 2
    Dataset ds = skeleton_dataset({{0, 0}, {0, 100}, {1, 0}, {1, 100}});
    std::vector<int64_t> subset = {0, 1, 2, 3};
    std::vector<FeatureVector> feats(4);
    feats[0].x = {1, 0};
    feats[1].x = {1, 0};
    feats[2].x = {0, 1};
    feats[3].x = {0, 1};
    bool threw = false;
    try {
        d_geodesic_fused(ds, subset, feats, 1, 1, 1.0);
    } catch (const std::runtime_error& e) {
        threw = true;
        REQUIRE(std::string(e.what()).find("component sizes") != std::string::npos);
        REQUIRE(std::string(e.what()).find("2 2") != std::string::npos);
    }
    REQUIRE(threw);

    REQUIRE_THROWS(d_geodesic_fused(ds, subset, feats, 4, 1, 1.0)); // n < k+1
}

static void test_dm_roundtrip() {
    testing::section("dissimilarity matrix file roundtrip");
    DissimilarityMatrix dm = DissimilarityMatrix::zeros(4, "adp");
    dm.set(0, 1, 0.25);
    dm.set(0, 2, 0.5);
    dm.set(0, 3, 1.0);
    dm.set(1, 2, 0.125);
    dm.set(1, 3, 0.75);
    dm.set(2, 3, 0.0625);
    save_dm(dm, "dm_tmp.bin");
    DissimilarityMatrix back = load_dm("dm_tmp.bin");
    REQUIRE(back.n == 4);
    REQUIRE(back.kind == "adp");
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) REQUIRE(back.at(i, j) == dm.at(i, j));
    save_dm(back, "dm_tmp2.bin");
    REQUIRE(read_file("dm_tmp.bin") == read_file("dm_tmp2.bin"));
    std::remove("dm_tmp.bin");
    std::remove("dm_tmp2.bin");
}

int main() {
    test_adp_basic();
    test_preprocess();
    test_d_adp();
    test_monotonic_dissimilarity();
    test_geodesic_chain();
    test_geodesic_oracle();
    test_geodesic_errors();
    test_dm_roundtrip();
    testing::done("test_features");
    return 0;
}
