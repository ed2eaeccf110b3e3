#include "chartjepa/channelsim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "chartjepa/serial.hpp"

namespace chartjepa::channelsim {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kSpeedOfLight = 299792458.0;

uint64_t mix_seed(uint64_t a, uint64_t b) {
    uint64_t s = a ^ (b * 0x9e3779b97f4a7c15ULL + 0x6a09e667f3bcc909ULL);
    return splitmix64(s);
}

double wrap_angle(double a) {
    while (a >= kPi) a -= 2 * kPi;
    while (a < -kPi) a += 2 * kPi;
    return a;
}

} // namespace

EnvironmentSpec EnvironmentSpec::desk(uint64_t scatter_seed) {
    EnvironmentSpec s;
    // Arrays sit 0.5 m outside each wall, facing inward, so the user can
    // never get within the 1 cm exclusion radius.
    s.arrays = {
        {-0.5, 7.5, 0.0},
        {20.5, 7.5, kPi},
        {10.0, -0.5, kPi / 2},
        {10.0, 15.5, -kPi / 2},
    };
    Rng rng(scatter_seed, /*stream=*/7);
    s.scatterers.reserve(25);
    for (int i = 0; i < 25; ++i) {
        Scatterer sc;
        sc.x = rng.uniform(s.bounds.xmin, s.bounds.xmax);
        sc.y = rng.uniform(s.bounds.ymin, s.bounds.ymax);
        sc.gain = rng.uniform(0.3, 1.0);
        s.scatterers.push_back(sc);
    }
    return s;
}

std::vector<TrajectoryState> generate_trajectory(const EnvironmentSpec& spec,
                                                 int steps, uint64_t seed) {
    if (steps < 1) throw std::invalid_argument("generate_trajectory: steps < 1");
    const Bounds& b = spec.bounds;
    if (!(b.width() > 0) || !(b.height() > 0))
        throw std::invalid_argument("generate_trajectory: degenerate bounds");

    const TrajectoryParams& tp = spec.traj;
    const double dt = spec.slot_duration;
    Rng rng(seed);

    TrajectoryState st;
    st.px = std::isnan(tp.init_x) ? rng.uniform(b.xmin, b.xmax) : tp.init_x;
    st.py = std::isnan(tp.init_y) ? rng.uniform(b.ymin, b.ymax) : tp.init_y;
    st.heading = std::isnan(tp.init_heading) ? rng.uniform(0.0, 2 * kPi)
                                             : tp.init_heading;
    st.heading = wrap_angle(st.heading);
    st.speed = std::clamp(tp.speed_mean, tp.speed_min, tp.speed_max);
    st.vx = st.speed * std::cos(st.heading);
    st.vy = st.speed * std::sin(st.heading);

    std::vector<TrajectoryState> out;
    out.reserve(steps);
    out.push_back(st);

    const double sq_dt = std::sqrt(dt);
    for (int t = 1; t < steps; ++t) {
        // advance position with the current velocity, then reflect
        double nx = st.px + dt * st.vx;
        double ny = st.py + dt * st.vy;
        double heading = st.heading;
        for (int guard = 0; guard < 4; ++guard) {
            bool bounced = false;
            if (nx < b.xmin) { nx = 2 * b.xmin - nx; heading = kPi - heading; bounced = true; }
            if (nx > b.xmax) { nx = 2 * b.xmax - nx; heading = kPi - heading; bounced = true; }
            if (ny < b.ymin) { ny = 2 * b.ymin - ny; heading = -heading; bounced = true; }
            if (ny > b.ymax) { ny = 2 * b.ymax - ny; heading = -heading; bounced = true; }
            if (!bounced) break;
        }
        heading = wrap_angle(heading);

        // Ornstein-Uhlenbeck speed, clipped
        double speed = st.speed + tp.speed_revert * (tp.speed_mean - st.speed) * dt +
                       tp.speed_sigma * sq_dt * rng.normal();
        speed = std::clamp(speed, tp.speed_min, tp.speed_max);

        // bounded heading increment
        double dh = tp.heading_sigma * sq_dt * rng.normal();
        dh = std::clamp(dh, -tp.max_turn, tp.max_turn);
        heading = wrap_angle(heading + dh);

        st.px = nx;
        st.py = ny;
        st.speed = speed;
        st.heading = heading;
        st.vx = speed * std::cos(heading);
        st.vy = speed * std::sin(heading);
        out.push_back(st);
    }
    return out;
}

static void add_paths_for_array(const EnvironmentSpec& spec, const ArrayPose& ap,
                                double px, double py, double* re_im /*2*M*W*/) {
    const int M = spec.M(), W = spec.W();
    const double df = spec.bandwidth / W;

    struct Path {
        double amp, theta, tau;
    };
    std::vector<Path> paths;
    paths.reserve(1 + spec.scatterers.size());

    // line of sight
    {
        const double dx = px - ap.x, dy = py - ap.y;
        const double d = std::hypot(dx, dy);
        if (d < 0.01)
            throw std::invalid_argument("synth_csi: position within 1 cm of an array");
        paths.push_back({1.0 / d, std::atan2(dy, dx) - ap.boresight, d / kSpeedOfLight});
    }
    // single-bounce scatterer paths
    for (const auto& sc : spec.scatterers) {
        const double d1 = std::hypot(px - sc.x, py - sc.y);
        const double d2 = std::hypot(sc.x - ap.x, sc.y - ap.y);
        const double dtot = d1 + d2;
        if (dtot < 0.01) continue; // degenerate geometry contributes nothing sane
        const double theta = std::atan2(sc.y - ap.y, sc.x - ap.x) - ap.boresight;
        paths.push_back({sc.gain / dtot, theta, dtot / kSpeedOfLight});
    }

    for (const auto& p : paths) {
        const double ssin = std::sin(p.theta);
        const double carrier_phase = -2 * kPi * spec.carrier_freq * p.tau;
        const double dphi_w = -2 * kPi * df * p.tau; // per-subcarrier increment
        for (int m = 0; m < M; ++m) {
            const double base = kPi * m * ssin + carrier_phase;
            for (int w = 0; w < W; ++w) {
                const double ph = base + dphi_w * w;
                const size_t idx = 2 * (static_cast<size_t>(m) * W + w);
                re_im[idx] += p.amp * std::cos(ph);
                re_im[idx + 1] += p.amp * std::sin(ph);
            }
        }
    }
}

std::vector<double> synth_csi(const EnvironmentSpec& spec, double px, double py) {
    if (!std::isfinite(px) || !std::isfinite(py))
        throw std::invalid_argument("synth_csi: non-finite position");
    if (spec.B() < 1 || spec.M() < 2 || spec.W() < 1)
        throw std::invalid_argument("synth_csi: bad environment dimensions");
    std::vector<double> h(static_cast<size_t>(spec.csi_len()), 0.0);
    const int per_array = 2 * spec.M() * spec.W();
    for (int b = 0; b < spec.B(); ++b)
        add_paths_for_array(spec, spec.arrays[b], px, py,
                            h.data() + static_cast<size_t>(b) * per_array);
    return h;
}

std::vector<double> synth_csi(const EnvironmentSpec& spec, double px, double py,
                              Rng& noise_rng) {
    std::vector<double> h = synth_csi(spec, px, py);
    double power = 0.0;
    for (double v : h) power += v * v;
    power /= static_cast<double>(h.size() / 2); // mean |entry|^2
    const double sigma2 = power * std::pow(10.0, -spec.snr_db / 10.0);
    const double s = std::sqrt(sigma2 / 2.0);
    for (double& v : h) v += s * noise_rng.normal();
    return h;
}

Dataset generate_dataset(const EnvironmentSpec& spec, int n_traj,
                         int steps_per_traj, uint64_t seed, bool with_noise,
                         double train_frac) {
    if (n_traj < 1 || steps_per_traj < 1)
        throw std::invalid_argument("generate_dataset: need >= 1 trajectory and step");
    if (!(train_frac >= 0.0 && train_frac <= 1.0))
        throw std::invalid_argument("generate_dataset: train_frac outside [0,1]");

    Dataset ds;
    ds.spec = spec;
    ds.seed = seed;
    ds.samples.reserve(static_cast<size_t>(n_traj) * steps_per_traj);

    // Stratified start cells unless the caller pinned the start position:
    // trajectory ti begins at the center of a distinct grid cell, and cells
    // are visited with a large coprime stride so that any contiguous slice of
    // trajectories (in particular the test split) is spread over the whole
    // room instead of clustering wherever a handful of random draws landed.
    const bool stratify = std::isnan(spec.traj.init_x) && std::isnan(spec.traj.init_y);
    int gw = 1, gh = 1, stride = 1;
    if (stratify) {
        const double aspect = spec.bounds.width() / spec.bounds.height();
        gw = std::max(1, (int)std::lround(std::ceil(std::sqrt(n_traj * aspect))));
        gh = std::max(1, (n_traj + gw - 1) / gw);
        const int cells = gw * gh;
        stride = std::max(1, (int)std::lround(cells * 0.618));
        while (std::gcd(stride, cells) != 1) ++stride;
    }

    for (int ti = 0; ti < n_traj; ++ti) {
        ds.traj_starts.push_back(static_cast<int64_t>(ds.samples.size()));
        EnvironmentSpec tspec = spec;
        if (stratify) {
            const int c = (ti * stride) % (gw * gh);
            tspec.traj.init_x =
                spec.bounds.xmin + (c % gw + 0.5) * spec.bounds.width() / gw;
            tspec.traj.init_y =
                spec.bounds.ymin + (c / gw + 0.5) * spec.bounds.height() / gh;
        }
        auto states = generate_trajectory(tspec, steps_per_traj, mix_seed(seed, ti));
        Rng noise(mix_seed(seed ^ 0x5ca77e12ULL, ti), /*stream=*/3);
        for (int64_t t = 0; t < static_cast<int64_t>(states.size()); ++t) {
            const auto& st = states[t];
            CsiSample s;
            s.slot = t;
            s.traj = ti;
            s.h = with_noise ? synth_csi(spec, st.px, st.py, noise)
                             : synth_csi(spec, st.px, st.py);
            s.vx = st.vx;
            s.vy = st.vy;
            s.px = st.px;
            s.py = st.py;
            ds.samples.push_back(std::move(s));
        }
    }
    ds.traj_starts.push_back(static_cast<int64_t>(ds.samples.size()));

    const int train_traj = static_cast<int>(std::lround(train_frac * n_traj));
    ds.train_end = ds.traj_starts[std::clamp(train_traj, 0, n_traj)];
    return ds;
}

GridShape choose_grid(int R, double aspect) {
    GridShape best;
    double best_err = std::numeric_limits<double>::infinity();
    for (int gx = 1; gx <= R; ++gx) {
        if (R % gx != 0) continue;
        const int gy = R / gx;
        const double err = std::fabs(std::log((static_cast<double>(gx) / gy) / aspect));
        if (err < best_err) {
            best_err = err;
            best.gx = gx;
            best.gy = gy;
        }
    }
    // If even the best factor pair is more than 3x off the bounds aspect,
    // a grid would produce badly elongated cells; caller falls back to k-means.
    best.ok = best_err <= std::log(3.0);
    return best;
}

int grid_region_of(const Bounds& b, const GridShape& g, double px, double py) {
    int ix = static_cast<int>((px - b.xmin) / b.width() * g.gx);
    int iy = static_cast<int>((py - b.ymin) / b.height() * g.gy);
    ix = std::clamp(ix, 0, g.gx - 1);
    iy = std::clamp(iy, 0, g.gy - 1);
    return iy * g.gx + ix;
}

static void assign_regions_kmeans(Dataset& ds, int R) {
    const int64_t n = ds.size();
    Rng rng(mix_seed(ds.seed, 0x7e610175ULL)); // fixed derivation: deterministic
    // k-means++ style init
    std::vector<std::array<double, 2>> centers;
    centers.push_back({ds.samples[rng.bounded(n)].px, ds.samples[rng.bounded(n)].py});
    std::vector<double> d2(n, 0.0);
    while (static_cast<int>(centers.size()) < R) {
        double total = 0.0;
        for (int64_t i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::infinity();
            for (const auto& c : centers) {
                const double dx = ds.samples[i].px - c[0], dy = ds.samples[i].py - c[1];
                best = std::min(best, dx * dx + dy * dy);
            }
            d2[i] = best;
            total += best;
        }
        double r = rng.uniform() * total;
        int64_t pick = n - 1;
        for (int64_t i = 0; i < n; ++i) {
            r -= d2[i];
            if (r <= 0) {
                pick = i;
                break;
            }
        }
        centers.push_back({ds.samples[pick].px, ds.samples[pick].py});
    }
    std::vector<int> assign(n, 0);
    for (int iter = 0; iter < 25; ++iter) {
        for (int64_t i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::infinity();
            int bi = 0;
            for (int c = 0; c < R; ++c) {
                const double dx = ds.samples[i].px - centers[c][0];
                const double dy = ds.samples[i].py - centers[c][1];
                const double dd = dx * dx + dy * dy;
                if (dd < best) {
                    best = dd;
                    bi = c;
                }
            }
            assign[i] = bi;
        }
        std::vector<std::array<double, 2>> sum(R, {0, 0});
        std::vector<int64_t> cnt(R, 0);
        for (int64_t i = 0; i < n; ++i) {
            sum[assign[i]][0] += ds.samples[i].px;
            sum[assign[i]][1] += ds.samples[i].py;
            ++cnt[assign[i]];
        }
        for (int c = 0; c < R; ++c)
            if (cnt[c] > 0) centers[c] = {sum[c][0] / cnt[c], sum[c][1] / cnt[c]};
    }
    for (int64_t i = 0; i < n; ++i) ds.samples[i].region = assign[i];
}

void assign_regions(Dataset& ds, int R) {
    if (R < 1) throw std::invalid_argument("assign_regions: R < 1");
    if (ds.samples.empty()) throw std::invalid_argument("assign_regions: empty dataset");
    if (R == 1) {
        ds.n_regions = 1;
        for (auto& s : ds.samples) s.region = 0;
        return;
    }
    const Bounds& b = ds.spec.bounds;
    GridShape g = choose_grid(R, b.width() / b.height());
    ds.n_regions = R;
    if (!g.ok) {
        assign_regions_kmeans(ds, R);
        return;
    }
    for (auto& s : ds.samples) s.region = grid_region_of(b, g, s.px, s.py);
}

std::vector<std::array<double, 2>> perturb_velocity(
    const std::vector<std::array<double, 2>>& v, double angular_bias,
    double slot_duration) {
    std::vector<std::array<double, 2>> out;
    out.reserve(v.size());
    for (size_t i = 0; i < v.size(); ++i) {
        const double a = angular_bias * slot_duration * static_cast<double>(i + 1);
        const double c = std::cos(a), s = std::sin(a);
        out.push_back({c * v[i][0] - s * v[i][1], s * v[i][0] + c * v[i][1]});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

void save_dataset(const Dataset& ds, const std::string& path,
                  const std::vector<std::pair<std::string, std::string>>& extra) {
    Header h;
    h.magic = "CHARTJEPA-DS v1";
    h.set_u64("B", ds.spec.B());
    h.set_u64("M", ds.spec.M());
    h.set_u64("W", ds.spec.W());
    h.set_f64("bandwidth", ds.spec.bandwidth);
    h.set_f64("carrier_freq", ds.spec.carrier_freq);
    h.set_f64("slot_duration", ds.spec.slot_duration);
    h.set_f64("snr_db", ds.spec.snr_db);
    h.set("bounds", fmt_f64(ds.spec.bounds.xmin) + " " + fmt_f64(ds.spec.bounds.ymin) +
                        " " + fmt_f64(ds.spec.bounds.xmax) + " " +
                        fmt_f64(ds.spec.bounds.ymax));
    const TrajectoryParams& tp = ds.spec.traj;
    h.set("traj_speed", fmt_f64(tp.speed_mean) + " " + fmt_f64(tp.speed_revert) + " " +
                            fmt_f64(tp.speed_sigma) + " " + fmt_f64(tp.speed_min) + " " +
                            fmt_f64(tp.speed_max));
    h.set("traj_heading", fmt_f64(tp.heading_sigma) + " " + fmt_f64(tp.max_turn));
    for (size_t i = 0; i < ds.spec.arrays.size(); ++i) {
        const auto& a = ds.spec.arrays[i];
        h.fields.emplace_back("array", fmt_f64(a.x) + " " + fmt_f64(a.y) + " " +
                                           fmt_f64(a.boresight));
    }
    for (const auto& sc : ds.spec.scatterers)
        h.fields.emplace_back("scatterer", fmt_f64(sc.x) + " " + fmt_f64(sc.y) + " " +
                                               fmt_f64(sc.gain));
    h.set_u64("n_samples", ds.samples.size());
    h.set_u64("n_regions", ds.n_regions);
    h.set_u64("seed", ds.seed);
    for (const auto& [k, v] : extra) h.set(k, v);

    std::vector<uint8_t> buf;
    append_bytes(buf, h.serialize());
    const int rec = ds.spec.csi_len() + 5;
    std::vector<double> record(rec);
    for (const auto& s : ds.samples) {
        std::copy(s.h.begin(), s.h.end(), record.begin());
        record[rec - 5] = s.vx;
        record[rec - 4] = s.vy;
        record[rec - 3] = s.px;
        record[rec - 2] = s.py;
        record[rec - 1] = static_cast<double>(s.region);
        write_f32(buf, record);
    }
    write_file(path, buf);

    Header m;
    m.magic = "CHARTJEPA-MANIFEST v1";
    m.set_u64("n_traj", ds.n_traj());
    for (int t = 0; t < ds.n_traj(); ++t)
        m.fields.emplace_back("traj", std::to_string(ds.traj_starts[t]) + " " +
                                          std::to_string(ds.traj_starts[t + 1]));
    m.set_u64("train_end", static_cast<uint64_t>(ds.train_end));
    std::vector<uint8_t> mbuf;
    append_bytes(mbuf, m.serialize());
    write_file(path + ".manifest", mbuf);
}

static std::vector<double> parse_doubles(const std::string& s) {
    std::vector<double> out;
    size_t pos = 0;
    while (pos < s.size()) {
        size_t next;
        out.push_back(std::stod(s.substr(pos), &next));
        pos += next;
        while (pos < s.size() && s[pos] == ' ') ++pos;
    }
    return out;
}

Dataset load_dataset(const std::string& path) {
    std::vector<uint8_t> buf = read_file(path);
    size_t off = 0;
    Header h = parse_header(buf, off);
    if (h.magic != "CHARTJEPA-DS v1")
        throw std::runtime_error("load_dataset: bad magic '" + h.magic + "'");

    Dataset ds;
    ds.spec.arrays.clear();
    ds.spec.scatterers.clear();
    ds.spec.antennas_per_array = static_cast<int>(h.get_u64("M"));
    ds.spec.subcarriers = static_cast<int>(h.get_u64("W"));
    ds.spec.bandwidth = h.get_f64("bandwidth");
    ds.spec.carrier_freq = h.get_f64("carrier_freq");
    ds.spec.slot_duration = h.get_f64("slot_duration");
    ds.spec.snr_db = h.get_f64("snr_db");
    auto bv = parse_doubles(h.get("bounds"));
    if (bv.size() != 4) throw std::runtime_error("load_dataset: bad bounds");
    ds.spec.bounds = {bv[0], bv[1], bv[2], bv[3]};
    auto sp = parse_doubles(h.get("traj_speed"));
    auto hd = parse_doubles(h.get("traj_heading"));
    if (sp.size() != 5 || hd.size() != 2)
        throw std::runtime_error("load_dataset: bad trajectory params");
    ds.spec.traj.speed_mean = sp[0];
    ds.spec.traj.speed_revert = sp[1];
    ds.spec.traj.speed_sigma = sp[2];
    ds.spec.traj.speed_min = sp[3];
    ds.spec.traj.speed_max = sp[4];
    ds.spec.traj.heading_sigma = hd[0];
    ds.spec.traj.max_turn = hd[1];
    for (const auto& kv : h.fields) {
        if (kv.first == "array") {
            auto v = parse_doubles(kv.second);
            if (v.size() != 3) throw std::runtime_error("load_dataset: bad array pose");
            ds.spec.arrays.push_back({v[0], v[1], v[2]});
        } else if (kv.first == "scatterer") {
            auto v = parse_doubles(kv.second);
            if (v.size() != 3) throw std::runtime_error("load_dataset: bad scatterer");
            ds.spec.scatterers.push_back({v[0], v[1], v[2]});
        }
    }
    if (static_cast<int>(h.get_u64("B")) != ds.spec.B())
        throw std::runtime_error("load_dataset: array count mismatch");
    ds.n_regions = static_cast<int>(h.get_u64("n_regions"));
    ds.seed = h.get_u64("seed");

    const uint64_t n = h.get_u64("n_samples");
    const int rec = ds.spec.csi_len() + 5;
    if (buf.size() - off != n * rec * 4)
        throw std::runtime_error("load_dataset: payload size mismatch");
    ds.samples.resize(n);
    for (uint64_t i = 0; i < n; ++i) {
        std::vector<double> record =
            read_f32(buf.data() + off + i * rec * 4, static_cast<size_t>(rec));
        CsiSample& s = ds.samples[i];
        s.h.assign(record.begin(), record.begin() + ds.spec.csi_len());
        s.vx = record[rec - 5];
        s.vy = record[rec - 4];
        s.px = record[rec - 3];
        s.py = record[rec - 2];
        s.region = static_cast<int>(record[rec - 1]);
    }

    std::vector<uint8_t> mbuf = read_file(path + ".manifest");
    size_t moff = 0;
    Header m = parse_header(mbuf, moff);
    if (m.magic != "CHARTJEPA-MANIFEST v1")
        throw std::runtime_error("load_dataset: bad manifest magic");
    for (const auto& kv : m.fields) {
        if (kv.first != "traj") continue;
        auto v = parse_doubles(kv.second);
        if (v.size() != 2) throw std::runtime_error("load_dataset: bad traj bounds");
        ds.traj_starts.push_back(static_cast<int64_t>(v[0]));
    }
    ds.traj_starts.push_back(static_cast<int64_t>(ds.samples.size()));
    ds.train_end = static_cast<int64_t>(m.get_u64("train_end"));
    for (int t = 0; t < ds.n_traj(); ++t)
        for (int64_t i = ds.traj_starts[t]; i < ds.traj_starts[t + 1]; ++i) {
            ds.samples[i].traj = t;
            ds.samples[i].slot = i - ds.traj_starts[t];
        }
    return ds;
}

} // namespace chartjepa::channelsim
