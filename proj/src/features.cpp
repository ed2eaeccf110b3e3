#include "chartjepa/features.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <queue>
#include <stdexcept>

#include "chartjepa/serial.hpp"

namespace chartjepa::features {

namespace {

constexpr double kPi = 3.14159265358979323846;

// Twiddle table: exp(sign * j * 2*pi * a * b / n) for a,b in [0,n)
std::vector<std::complex<double>> twiddle(int n, double sign) {
    std::vector<std::complex<double>> t(static_cast<size_t>(n) * n);
    for (int a = 0; a < n; ++a)
        for (int b = 0; b < n; ++b) {
            const double ang = sign * 2.0 * kPi * ((a * b) % n) / n;
            t[static_cast<size_t>(a) * n + b] = {std::cos(ang), std::sin(ang)};
        }
    return t;
}

} // namespace

std::vector<double> adp(const std::vector<double>& h, int B, int M, int W) {
    if (static_cast<int64_t>(h.size()) != 2LL * B * M * W)
        throw std::invalid_argument("adp: tensor length does not match B*M*W");
    const auto fm = twiddle(M, -1.0); // DFT over antennas
    const auto fw = twiddle(W, +1.0); // inverse DFT over subcarriers

    std::vector<double> out(static_cast<size_t>(B) * M * W);
    std::vector<std::complex<double>> tmp(static_cast<size_t>(M) * W);
    for (int b = 0; b < B; ++b) {
        const double* hb = h.data() + 2LL * b * M * W;
        // angle transform: tmp[a][w] = sum_m fm[a][m] * h[m][w]
        for (int a = 0; a < M; ++a)
            for (int w = 0; w < W; ++w) {
                std::complex<double> acc = 0;
                for (int m = 0; m < M; ++m) {
                    const size_t i = 2 * (static_cast<size_t>(m) * W + w);
                    acc += fm[static_cast<size_t>(a) * M + m] *
                           std::complex<double>(hb[i], hb[i + 1]);
                }
                tmp[static_cast<size_t>(a) * W + w] = acc;
            }
        // delay transform: out[a][t] = |(1/W) sum_w fw[t][w] * tmp[a][w]|
        for (int a = 0; a < M; ++a)
            for (int t = 0; t < W; ++t) {
                std::complex<double> acc = 0;
                for (int w = 0; w < W; ++w)
                    acc += fw[static_cast<size_t>(t) * W + w] *
                           tmp[static_cast<size_t>(a) * W + w];
                out[(static_cast<size_t>(b) * M + a) * W + t] = std::abs(acc) / W;
            }
    }
    return out;
}

FeatureVector preprocess(const std::vector<double>& h, int B, int M, int W) {
    FeatureVector f;
    f.x = adp(h, B, M, W);
    double ss = 0.0;
    for (double v : f.x) ss += v * v;
    f.norm = std::sqrt(ss);
    if (!(f.norm > 0.0)) throw std::domain_error("preprocess: zero CSI tensor");
    for (double& v : f.x) v /= f.norm;
    return f;
}

double d_adp(const std::vector<double>& h1, const std::vector<double>& h2, int B,
             int M, int W) {
    if (h1.size() != h2.size())
        throw std::invalid_argument("d_adp: tensor shapes differ");
    const FeatureVector f1 = preprocess(h1, B, M, W);
    const FeatureVector f2 = preprocess(h2, B, M, W);
    double dot = 0.0;
    for (size_t i = 0; i < f1.x.size(); ++i) dot += f1.x[i] * f2.x[i];
    return 1.0 - dot;
}

DissimilarityMatrix DissimilarityMatrix::zeros(int64_t n, std::string kind) {
    DissimilarityMatrix dm;
    dm.n = n;
    dm.kind = std::move(kind);
    dm.d.assign(static_cast<size_t>(n) * n, 0.0f);
    return dm;
}

DissimilarityMatrix pairwise_adp(const std::vector<FeatureVector>& feats) {
    const int64_t n = static_cast<int64_t>(feats.size());
    DissimilarityMatrix dm = DissimilarityMatrix::zeros(n, "adp");
    for (int64_t i = 0; i < n; ++i) {
        const double* xi = feats[i].x.data();
        const size_t len = feats[i].x.size();
        for (int64_t j = i + 1; j < n; ++j) {
            const double* xj = feats[j].x.data();
            double dot = 0.0;
            for (size_t q = 0; q < len; ++q) dot += xi[q] * xj[q];
            dm.set(i, j, std::max(0.0, 1.0 - dot));
        }
    }
    return dm;
}

std::vector<FeatureVector> preprocess_subset(const channelsim::Dataset& ds,
                                             const std::vector<int64_t>& subset) {
    std::vector<FeatureVector> feats;
    feats.reserve(subset.size());
    for (int64_t idx : subset)
        feats.push_back(
            preprocess(ds.samples[idx].h, ds.spec.B(), ds.spec.M(), ds.spec.W()));
    return feats;
}

DissimilarityMatrix d_geodesic_fused(const channelsim::Dataset& ds,
                                     const std::vector<int64_t>& subset,
                                     const std::vector<FeatureVector>& feats,
                                     int k, int time_window, double speed_scale) {
    const int64_t n = static_cast<int64_t>(subset.size());
    if (n < k + 1)
        throw std::invalid_argument("d_geodesic_fused: subset smaller than k+1");
    if (feats.size() != subset.size())
        throw std::invalid_argument("d_geodesic_fused: features/subset size mismatch");

    DissimilarityMatrix local = pairwise_adp(feats);

    // adjacency: k nearest d_adp neighbors (either direction) + temporal edges
    std::vector<std::vector<std::pair<int32_t, float>>> adj(n);
    auto add_edge = [&adj](int64_t i, int64_t j, double w) {
        for (auto& e : adj[i])
            if (e.first == j) {
                e.second = std::min(e.second, static_cast<float>(w));
                return;
            }
        adj[i].push_back({static_cast<int32_t>(j), static_cast<float>(w)});
    };

    std::vector<int64_t> order(n - 1);
    for (int64_t i = 0; i < n; ++i) {
        int64_t m = 0;
        for (int64_t j = 0; j < n; ++j)
            if (j != i) order[m++] = j;
        std::partial_sort(order.begin(), order.begin() + k, order.end(),
                          [&](int64_t a, int64_t b) {
                              const double da = local.at(i, a), db = local.at(i, b);
                              if (da != db) return da < db;
                              return a < b; // deterministic tie-break
                          });
        for (int q = 0; q < k; ++q) {
            add_edge(i, order[q], local.at(i, order[q]));
            add_edge(order[q], i, local.at(i, order[q]));
        }
    }
    for (int64_t i = 0; i < n; ++i) {
        const auto& si = ds.samples[subset[i]];
        for (int64_t j = i + 1; j < n; ++j) {
            const auto& sj = ds.samples[subset[j]];
            if (si.traj != sj.traj) continue;
            const int64_t gap = std::llabs(si.slot - sj.slot);
            if (gap > time_window) continue;
            const double dt = static_cast<double>(gap) * ds.spec.slot_duration;
            const double w = std::min(local.at(i, j), speed_scale * dt);
            add_edge(i, j, w);
            add_edge(j, i, w);
        }
    }

    // connectivity check with component sizes
    {
        std::vector<int32_t> comp(n, -1);
        int32_t nc = 0;
        std::vector<int64_t> stack, sizes;
        for (int64_t s = 0; s < n; ++s) {
            if (comp[s] >= 0) continue;
            int64_t size = 0;
            stack.push_back(s);
            comp[s] = nc;
            while (!stack.empty()) {
                int64_t u = stack.back();
                stack.pop_back();
                ++size;
                for (const auto& e : adj[u])
                    if (comp[e.first] < 0) {
                        comp[e.first] = nc;
                        stack.push_back(e.first);
                    }
            }
            sizes.push_back(size);
            ++nc;
        }
        if (nc > 1) {
            std::string msg = "d_geodesic_fused: disconnected graph, component sizes:";
            for (int64_t s : sizes) msg += " " + std::to_string(s);
            throw std::runtime_error(msg);
        }
    }

    // all-pairs Dijkstra
    DissimilarityMatrix out = DissimilarityMatrix::zeros(n, "gfuse");
    std::vector<double> dist(n);
    using QE = std::pair<double, int32_t>;
    for (int64_t src = 0; src < n; ++src) {
        std::fill(dist.begin(), dist.end(), std::numeric_limits<double>::infinity());
        dist[src] = 0.0;
        std::priority_queue<QE, std::vector<QE>, std::greater<QE>> pq;
        pq.push({0.0, static_cast<int32_t>(src)});
        while (!pq.empty()) {
            auto [du, u] = pq.top();
            pq.pop();
            if (du > dist[u]) continue;
            for (const auto& e : adj[u]) {
                const double nd = du + e.second;
                if (nd < dist[e.first]) {
                    dist[e.first] = nd;
                    pq.push({nd, e.first});
                }
            }
        }
        for (int64_t j = 0; j < n; ++j)
            if (j != src) {
                // keep symmetry exactly: write the min of both sweeps
                const float prev = out.d[src * n + j];
                const float v = static_cast<float>(dist[j]);
                out.set(src, j, (prev > 0.0f && prev < v) ? prev : v);
            }
    }
    return out;
}

void save_dm(const DissimilarityMatrix& dm, const std::string& path) {
    Header h;
    h.magic = "CHARTJEPA-DM v1";
    h.set_u64("n", static_cast<uint64_t>(dm.n));
    h.set("kind", dm.kind);
    std::vector<uint8_t> buf;
    append_bytes(buf, h.serialize());
    std::vector<double> tri;
    tri.reserve(static_cast<size_t>(dm.n) * (dm.n - 1) / 2);
    for (int64_t i = 0; i < dm.n; ++i)
        for (int64_t j = i + 1; j < dm.n; ++j) tri.push_back(dm.at(i, j));
    write_f32(buf, tri);
    write_file(path, buf);
}

DissimilarityMatrix load_dm(const std::string& path) {
    std::vector<uint8_t> buf = read_file(path);
    size_t off = 0;
    Header h = parse_header(buf, off);
    if (h.magic != "CHARTJEPA-DM v1")
        throw std::runtime_error("load_dm: bad magic '" + h.magic + "'");
    const int64_t n = static_cast<int64_t>(h.get_u64("n"));
    const size_t cnt = static_cast<size_t>(n) * (n - 1) / 2;
    if (buf.size() - off != cnt * 4)
        throw std::runtime_error("load_dm: payload size mismatch");
    std::vector<double> tri = read_f32(buf.data() + off, cnt);
    DissimilarityMatrix dm = DissimilarityMatrix::zeros(n, h.get("kind"));
    size_t q = 0;
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = i + 1; j < n; ++j) dm.set(i, j, tri[q++]);
    return dm;
}

} // namespace chartjepa::features
