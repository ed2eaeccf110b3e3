#include "chartjepa/models.hpp"

#include <cmath>
#include <stdexcept>

#include "chartjepa/rng.hpp"
#include "chartjepa/serial.hpp"

namespace chartjepa::models {

using namespace chartjepa::ndnum;

// ---------------------------------------------------------------------------
// Plain matrix helpers. These mirror the tape ops element for element so the
// inference path and the training graph produce bit-identical values.
// ---------------------------------------------------------------------------

namespace {

Matrix m_add(const Matrix& a, const Matrix& b) {
    Matrix y(a.rows, a.cols);
    for (size_t i = 0; i < a.size(); ++i) y.d[i] = a.d[i] + b.d[i];
    return y;
}
Matrix m_sub(const Matrix& a, const Matrix& b) {
    Matrix y(a.rows, a.cols);
    for (size_t i = 0; i < a.size(); ++i) y.d[i] = a.d[i] - b.d[i];
    return y;
}
Matrix m_mul(const Matrix& a, const Matrix& b) {
    Matrix y(a.rows, a.cols);
    for (size_t i = 0; i < a.size(); ++i) y.d[i] = a.d[i] * b.d[i];
    return y;
}
Matrix m_tanh(const Matrix& a) {
    Matrix y(a.rows, a.cols);
    for (size_t i = 0; i < a.size(); ++i) y.d[i] = std::tanh(a.d[i]);
    return y;
}
Matrix m_sigmoid(const Matrix& a) {
    Matrix y(a.rows, a.cols);
    for (size_t i = 0; i < a.size(); ++i) y.d[i] = 1.0 / (1.0 + std::exp(-a.d[i]));
    return y;
}
Matrix m_relu(const Matrix& a) {
    Matrix y(a.rows, a.cols);
    for (size_t i = 0; i < a.size(); ++i) y.d[i] = a.d[i] > 0.0 ? a.d[i] : 0.0;
    return y;
}
Matrix m_add_rowvec(const Matrix& a, const Matrix& v) {
    Matrix y(a.rows, a.cols);
    for (int i = 0; i < a.rows; ++i) {
        const double* ar = a.row(i);
        double* yr = y.row(i);
        for (int j = 0; j < a.cols; ++j) yr[j] = ar[j] + v.d[j];
    }
    return y;
}

void glorot_fill(Matrix& m, Rng& rng) {
    const double limit = std::sqrt(6.0 / (m.rows + m.cols));
    for (double& v : m.d) v = rng.uniform(-limit, limit);
}

// Orthogonal square matrix via modified Gram-Schmidt on a Gaussian draw.
Matrix orthogonal(int n, Rng& rng) {
    Matrix g(n, n);
    for (double& v : g.d) v = rng.normal();
    Matrix q(n, n);
    for (int j = 0; j < n; ++j) {
        std::vector<double> v(n);
        for (int i = 0; i < n; ++i) v[i] = g.at(i, j);
        for (int p = 0; p < j; ++p) {
            double dot = 0;
            for (int i = 0; i < n; ++i) dot += q.at(i, p) * v[i];
            for (int i = 0; i < n; ++i) v[i] -= dot * q.at(i, p);
        }
        double norm = 0;
        for (int i = 0; i < n; ++i) norm += v[i] * v[i];
        norm = std::sqrt(norm);
        if (norm < 1e-12)
            throw std::runtime_error("orthogonal init: degenerate Gaussian draw");
        for (int i = 0; i < n; ++i) q.at(i, j) = v[i] / norm;
    }
    return q;
}

} // namespace

// ---------------------------------------------------------------------------
// Encoder
// ---------------------------------------------------------------------------

std::vector<std::string> EncoderParams::tensor_names() const {
    std::vector<std::string> names;
    for (size_t i = 0; i < w.size(); ++i) {
        names.push_back("enc_w" + std::to_string(i));
        names.push_back("enc_b" + std::to_string(i));
    }
    return names;
}

std::vector<Matrix*> EncoderParams::tensors() {
    std::vector<Matrix*> t;
    for (size_t i = 0; i < w.size(); ++i) {
        t.push_back(&w[i]);
        t.push_back(&b[i]);
    }
    return t;
}

std::vector<const Matrix*> EncoderParams::tensors() const {
    std::vector<const Matrix*> t;
    for (size_t i = 0; i < w.size(); ++i) {
        t.push_back(&w[i]);
        t.push_back(&b[i]);
    }
    return t;
}

EncoderParams init_encoder(int feat_dim, const std::vector<int>& widths,
                           uint64_t seed) {
    if (feat_dim < 1) throw std::invalid_argument("init_encoder: feat_dim < 1");
    Rng rng(seed, /*stream=*/101);
    std::vector<int> dims;
    dims.push_back(feat_dim);
    for (int wd : widths) {
        if (wd < 1) throw std::invalid_argument("init_encoder: width < 1");
        dims.push_back(wd);
    }
    dims.push_back(2);
    EncoderParams p;
    for (size_t i = 0; i + 1 < dims.size(); ++i) {
        Matrix wm(dims[i], dims[i + 1]);
        glorot_fill(wm, rng);
        p.w.push_back(std::move(wm));
        p.b.push_back(Matrix::zeros(1, dims[i + 1]));
    }
    return p;
}

int64_t param_count(const EncoderParams& p) {
    int64_t n = 0;
    for (const Matrix* t : p.tensors()) n += static_cast<int64_t>(t->size());
    return n;
}

Matrix encode_batch(const EncoderParams& p, const Matrix& x) {
    if (x.cols != p.in_dim())
        throw std::invalid_argument("encode: feature length does not match encoder");
    Matrix h = x;
    for (int l = 0; l < p.layers(); ++l) {
        h = m_add_rowvec(matmul_nn(h, p.w[l]), p.b[l]);
        if (l + 1 < p.layers()) h = m_relu(h);
    }
    return h;
}

ChartPoint encode(const EncoderParams& p, const std::vector<double>& x) {
    Matrix m(1, static_cast<int>(x.size()));
    m.d = x;
    Matrix z = encode_batch(p, m);
    return {z.at(0, 0), z.at(0, 1)};
}

NodeId encode_graph(Tape& t, const EncoderParams& p, const std::vector<NodeId>& pids,
                    NodeId x) {
    if (pids.size() != 2 * p.w.size())
        throw std::invalid_argument("encode_graph: wrong parameter leaf count");
    NodeId h = x;
    for (int l = 0; l < p.layers(); ++l) {
        h = add_rowvec(t, matmul(t, h, pids[2 * l]), pids[2 * l + 1]);
        if (l + 1 < p.layers()) h = relu(t, h);
    }
    return h;
}

// ---------------------------------------------------------------------------
// Predictor
// ---------------------------------------------------------------------------

const char* cell_name(CellKind k) {
    switch (k) {
        case CellKind::RNN: return "rnn";
        case CellKind::GRU: return "gru";
        case CellKind::LSTM: return "lstm";
    }
    return "?";
}

CellKind cell_from_name(const std::string& name) {
    if (name == "rnn") return CellKind::RNN;
    if (name == "gru") return CellKind::GRU;
    if (name == "lstm") return CellKind::LSTM;
    throw std::invalid_argument("unknown cell kind '" + name + "'");
}

static int cell_tensor_count(CellKind k) {
    switch (k) {
        case CellKind::RNN: return 3;
        case CellKind::GRU: return 9;
        case CellKind::LSTM: return 12;
    }
    return 0;
}

std::vector<std::string> PredictorParams::tensor_names() const {
    static const char* rnn[] = {"wx", "wh", "bh"};
    static const char* gru[] = {"wxz", "whz", "bz", "wxr", "whr", "br",
                                "wxc", "whc", "bc"};
    static const char* lstm[] = {"wxi", "whi", "bi", "wxf", "whf", "bf",
                                 "wxg", "whg", "bg", "wxo", "who", "bo"};
    std::vector<std::string> names;
    const char** base = kind == CellKind::RNN ? rnn
                        : kind == CellKind::GRU ? gru
                                                : lstm;
    for (int i = 0; i < cell_tensor_count(kind); ++i)
        names.push_back(std::string("cell_") + base[i]);
    names.push_back("head_w1");
    names.push_back("head_b1");
    names.push_back("head_w2");
    names.push_back("head_b2");
    return names;
}

std::vector<Matrix*> PredictorParams::tensors() {
    std::vector<Matrix*> t;
    for (auto& m : cell) t.push_back(&m);
    t.push_back(&head_w1);
    t.push_back(&head_b1);
    t.push_back(&head_w2);
    t.push_back(&head_b2);
    return t;
}

std::vector<const Matrix*> PredictorParams::tensors() const {
    std::vector<const Matrix*> t;
    for (const auto& m : cell) t.push_back(&m);
    t.push_back(&head_w1);
    t.push_back(&head_b1);
    t.push_back(&head_w2);
    t.push_back(&head_b2);
    return t;
}

PredictorParams init_predictor(CellKind kind, int hidden, int head_hidden,
                               uint64_t seed) {
    if (hidden < 1 || head_hidden < 1)
        throw std::invalid_argument("init_predictor: sizes must be >= 1");
    Rng rng(seed, /*stream=*/202);
    PredictorParams p;
    p.kind = kind;
    p.hidden = hidden;
    p.head_hidden = head_hidden;
    const int gates = cell_tensor_count(kind) / 3;
    for (int g = 0; g < gates; ++g) {
        Matrix wx(2, hidden);
        glorot_fill(wx, rng);
        p.cell.push_back(std::move(wx));
        p.cell.push_back(orthogonal(hidden, rng));
        Matrix bias = Matrix::zeros(1, hidden);
        // LSTM forget gate (gate index 1: i, f, g, o) starts open
        if (kind == CellKind::LSTM && g == 1) bias.fill(1.0);
        p.cell.push_back(std::move(bias));
    }
    p.head_w1 = Matrix(hidden, head_hidden);
    glorot_fill(p.head_w1, rng);
    p.head_b1 = Matrix::zeros(1, head_hidden);
    // zero output layer: a fresh predictor emits zero pseudo-velocities
    p.head_w2 = Matrix::zeros(head_hidden, 2);
    p.head_b2 = Matrix::zeros(1, 2);
    return p;
}

int64_t param_count(const PredictorParams& p) {
    int64_t n = 0;
    for (const Matrix* t : p.tensors()) n += static_cast<int64_t>(t->size());
    return n;
}

// --- plain cell/head steps -------------------------------------------------

namespace {

struct PlainState {
    Matrix h, c; // c used by LSTM only
};

PlainState cell_step_plain(const PredictorParams& p, const PlainState& s,
                           const Matrix& x) {
    PlainState out;
    switch (p.kind) {
        case CellKind::RNN: {
            out.h = m_tanh(m_add_rowvec(
                m_add(matmul_nn(x, p.cell[0]), matmul_nn(s.h, p.cell[1])), p.cell[2]));
            break;
        }
        case CellKind::GRU: {
            const Matrix z = m_sigmoid(m_add_rowvec(
                m_add(matmul_nn(x, p.cell[0]), matmul_nn(s.h, p.cell[1])), p.cell[2]));
            const Matrix r = m_sigmoid(m_add_rowvec(
                m_add(matmul_nn(x, p.cell[3]), matmul_nn(s.h, p.cell[4])), p.cell[5]));
            const Matrix cand = m_tanh(m_add_rowvec(
                m_add(matmul_nn(x, p.cell[6]), matmul_nn(m_mul(r, s.h), p.cell[7])),
                p.cell[8]));
            // h' = (1-z) h + z c, written as h + z*(c-h)
            out.h = m_add(s.h, m_mul(z, m_sub(cand, s.h)));
            break;
        }
        case CellKind::LSTM: {
            const Matrix i = m_sigmoid(m_add_rowvec(
                m_add(matmul_nn(x, p.cell[0]), matmul_nn(s.h, p.cell[1])), p.cell[2]));
            const Matrix f = m_sigmoid(m_add_rowvec(
                m_add(matmul_nn(x, p.cell[3]), matmul_nn(s.h, p.cell[4])), p.cell[5]));
            const Matrix g = m_tanh(m_add_rowvec(
                m_add(matmul_nn(x, p.cell[6]), matmul_nn(s.h, p.cell[7])), p.cell[8]));
            const Matrix o = m_sigmoid(m_add_rowvec(
                m_add(matmul_nn(x, p.cell[9]), matmul_nn(s.h, p.cell[10])), p.cell[11]));
            out.c = m_add(m_mul(f, s.c), m_mul(i, g));
            out.h = m_mul(o, m_tanh(out.c));
            break;
        }
    }
    return out;
}

Matrix head_plain(const PredictorParams& p, const Matrix& h) {
    const Matrix a = m_relu(m_add_rowvec(matmul_nn(h, p.head_w1), p.head_b1));
    return m_add_rowvec(matmul_nn(a, p.head_w2), p.head_b2);
}

} // namespace

RolloutResult rollout_batch(const PredictorParams& p, const Matrix& z0,
                            const std::vector<Matrix>& velocities, double dt,
                            int H) {
    if (H < 1) throw std::invalid_argument("rollout: H < 1");
    if (static_cast<int>(velocities.size()) < H)
        throw std::invalid_argument("rollout: fewer velocities than H");
    if (z0.cols != 2) throw std::invalid_argument("rollout: z0 must be [n x 2]");

    const int n = z0.rows;
    PlainState st;
    st.h = Matrix::zeros(n, p.hidden);
    if (p.kind == CellKind::LSTM) st.c = Matrix::zeros(n, p.hidden);

    RolloutResult out;
    out.z.reserve(H);
    out.u.reserve(H);
    Matrix z = z0;
    for (int t = 0; t < H; ++t) {
        if (velocities[t].rows != n || velocities[t].cols != 2)
            throw std::invalid_argument("rollout: velocity shape mismatch");
        Matrix x(n, 2);
        for (size_t q = 0; q < x.size(); ++q) x.d[q] = velocities[t].d[q] * dt;
        st = cell_step_plain(p, st, x);
        Matrix u = head_plain(p, st.h);
        z = m_add(z, u);
        out.u.push_back(std::move(u));
        out.z.push_back(z);
    }
    return out;
}

std::vector<NodeId> rollout_graph(Tape& t, const PredictorParams& p,
                                  const std::vector<NodeId>& pids, NodeId z0,
                                  const std::vector<Matrix>& velocities, double dt,
                                  int H) {
    if (H < 1) throw std::invalid_argument("rollout_graph: H < 1");
    if (static_cast<int>(velocities.size()) < H)
        throw std::invalid_argument("rollout_graph: fewer velocities than H");
    if (pids.size() != p.tensors().size())
        throw std::invalid_argument("rollout_graph: wrong parameter leaf count");

    const int n = t.value(z0).rows;
    NodeId h = t.leaf(Matrix::zeros(n, p.hidden));
    NodeId c = -1;
    if (p.kind == CellKind::LSTM) c = t.leaf(Matrix::zeros(n, p.hidden));

    const size_t nc = p.cell.size();
    const NodeId hw1 = pids[nc], hb1 = pids[nc + 1], hw2 = pids[nc + 2],
                 hb2 = pids[nc + 3];

    std::vector<NodeId> zs;
    zs.reserve(H);
    NodeId z = z0;
    for (int step = 0; step < H; ++step) {
        Matrix xv(n, 2);
        for (size_t q = 0; q < xv.size(); ++q) xv.d[q] = velocities[step].d[q] * dt;
        NodeId x = t.leaf(std::move(xv));
        switch (p.kind) {
            case CellKind::RNN: {
                h = tanh_op(t, add_rowvec(t,
                                          add(t, matmul(t, x, pids[0]),
                                              matmul(t, h, pids[1])),
                                          pids[2]));
                break;
            }
            case CellKind::GRU: {
                NodeId zg = sigmoid(t, add_rowvec(t,
                                                  add(t, matmul(t, x, pids[0]),
                                                      matmul(t, h, pids[1])),
                                                  pids[2]));
                NodeId r = sigmoid(t, add_rowvec(t,
                                                 add(t, matmul(t, x, pids[3]),
                                                     matmul(t, h, pids[4])),
                                                 pids[5]));
                NodeId cand = tanh_op(
                    t, add_rowvec(t,
                                  add(t, matmul(t, x, pids[6]),
                                      matmul(t, mul(t, r, h), pids[7])),
                                  pids[8]));
                h = add(t, h, mul(t, zg, sub(t, cand, h)));
                break;
            }
            case CellKind::LSTM: {
                NodeId ig = sigmoid(t, add_rowvec(t,
                                                  add(t, matmul(t, x, pids[0]),
                                                      matmul(t, h, pids[1])),
                                                  pids[2]));
                NodeId fg = sigmoid(t, add_rowvec(t,
                                                  add(t, matmul(t, x, pids[3]),
                                                      matmul(t, h, pids[4])),
                                                  pids[5]));
                NodeId gg = tanh_op(t, add_rowvec(t,
                                                  add(t, matmul(t, x, pids[6]),
                                                      matmul(t, h, pids[7])),
                                                  pids[8]));
                NodeId og = sigmoid(t, add_rowvec(t,
                                                  add(t, matmul(t, x, pids[9]),
                                                      matmul(t, h, pids[10])),
                                                  pids[11]));
                c = add(t, mul(t, fg, c), mul(t, ig, gg));
                h = mul(t, og, tanh_op(t, c));
                break;
            }
        }
        NodeId a = relu(t, add_rowvec(t, matmul(t, h, hw1), hb1));
        NodeId u = add_rowvec(t, matmul(t, a, hw2), hb2);
        z = add(t, z, u);
        zs.push_back(z);
    }
    return zs;
}

// ---------------------------------------------------------------------------
// EMA + leaves
// ---------------------------------------------------------------------------

void ema_update(EncoderParams& target, const EncoderParams& online, double tau) {
    if (!(tau >= 0.0 && tau <= 1.0))
        throw std::invalid_argument("ema_update: tau outside [0,1]");
    auto dst = target.tensors();
    auto src = online.tensors();
    if (dst.size() != src.size())
        throw std::invalid_argument("ema_update: parameter shape mismatch");
    for (size_t i = 0; i < dst.size(); ++i) {
        if (!dst[i]->same_shape(*src[i]))
            throw std::invalid_argument("ema_update: parameter shape mismatch");
        for (size_t q = 0; q < dst[i]->size(); ++q)
            dst[i]->d[q] = tau * dst[i]->d[q] + (1.0 - tau) * src[i]->d[q];
    }
}

std::vector<NodeId> param_leaves(Tape& t, const std::vector<const Matrix*>& tensors) {
    std::vector<NodeId> ids;
    ids.reserve(tensors.size());
    for (const Matrix* m : tensors) ids.push_back(t.leaf(*m));
    return ids;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace {

void write_tensor(std::vector<uint8_t>& buf, const Matrix& m) {
    write_u32(buf, static_cast<uint32_t>(m.rows));
    write_u32(buf, static_cast<uint32_t>(m.cols));
    write_f32(buf, m.d);
}

Matrix read_tensor(const std::vector<uint8_t>& buf, size_t& off) {
    if (off + 8 > buf.size()) throw std::runtime_error("checkpoint: truncated tensor");
    const uint32_t rows = read_u32(buf.data() + off);
    const uint32_t cols = read_u32(buf.data() + off + 4);
    off += 8;
    const size_t count = static_cast<size_t>(rows) * cols;
    if (off + count * 4 > buf.size())
        throw std::runtime_error("checkpoint: truncated tensor payload");
    Matrix m(static_cast<int>(rows), static_cast<int>(cols));
    m.d = read_f32(buf.data() + off, count);
    off += count * 4;
    return m;
}

} // namespace

void save_checkpoint(const Checkpoint& ck, const std::string& path,
                     const std::vector<std::pair<std::string, std::string>>& extra) {
    Header h;
    h.magic = "CHARTJEPA-CKPT v1";
    h.set_u64("feat_dim", static_cast<uint64_t>(ck.enc.in_dim()));
    std::string widths;
    for (int l = 0; l + 1 < ck.enc.layers(); ++l) {
        if (!widths.empty()) widths += " ";
        widths += std::to_string(ck.enc.w[l].cols);
    }
    h.set("widths", widths.empty() ? "-" : widths);
    h.set_u64("has_target", ck.has_target ? 1 : 0);
    h.set_f64("tau", ck.target.tau);
    h.set_u64("has_predictor", ck.has_pred ? 1 : 0);
    h.set("cell", cell_name(ck.pred.kind));
    h.set_u64("hidden", static_cast<uint64_t>(ck.pred.hidden));
    h.set_u64("head_hidden", static_cast<uint64_t>(ck.pred.head_hidden));
    h.set_u64("seed", ck.seed);
    h.set_u64("step", ck.step);
    for (const auto& kv : extra) h.set(kv.first, kv.second);

    std::vector<uint8_t> buf;
    append_bytes(buf, h.serialize());
    for (const Matrix* m : ck.enc.tensors()) write_tensor(buf, *m);
    if (ck.has_target)
        for (const Matrix* m : ck.target.params.tensors()) write_tensor(buf, *m);
    if (ck.has_pred)
        for (const Matrix* m : ck.pred.tensors()) write_tensor(buf, *m);
    write_file(path, buf);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::vector<uint8_t> buf = read_file(path);
    size_t off = 0;
    Header h = parse_header(buf, off);
    if (h.magic != "CHARTJEPA-CKPT v1")
        throw std::runtime_error("load_checkpoint: bad magic '" + h.magic + "'");

    Checkpoint ck;
    ck.seed = h.get_u64("seed");
    ck.step = h.get_u64("step");
    const int feat_dim = static_cast<int>(h.get_u64("feat_dim"));
    std::vector<int> dims;
    dims.push_back(feat_dim);
    const std::string widths = h.get("widths");
    if (widths != "-") {
        size_t pos = 0;
        while (pos < widths.size()) {
            size_t next;
            dims.push_back(std::stoi(widths.substr(pos), &next));
            pos += next;
            while (pos < widths.size() && widths[pos] == ' ') ++pos;
        }
    }
    dims.push_back(2);

    const int layers = static_cast<int>(dims.size()) - 1;
    auto read_encoder = [&]() {
        EncoderParams p;
        for (int l = 0; l < layers; ++l) {
            p.w.push_back(read_tensor(buf, off));
            p.b.push_back(read_tensor(buf, off));
            if (p.w[l].rows != dims[l] || p.w[l].cols != dims[l + 1])
                throw std::runtime_error("load_checkpoint: encoder shape mismatch");
        }
        return p;
    };
    ck.enc = read_encoder();
    ck.has_target = h.get_u64("has_target") != 0;
    ck.target.tau = h.get_f64("tau");
    if (ck.has_target) ck.target.params = read_encoder();

    ck.has_pred = h.get_u64("has_predictor") != 0;
    ck.pred.kind = cell_from_name(h.get("cell"));
    ck.pred.hidden = static_cast<int>(h.get_u64("hidden"));
    ck.pred.head_hidden = static_cast<int>(h.get_u64("head_hidden"));
    if (ck.has_pred) {
        const int nc = cell_tensor_count(ck.pred.kind);
        for (int i = 0; i < nc; ++i) ck.pred.cell.push_back(read_tensor(buf, off));
        ck.pred.head_w1 = read_tensor(buf, off);
        ck.pred.head_b1 = read_tensor(buf, off);
        ck.pred.head_w2 = read_tensor(buf, off);
        ck.pred.head_b2 = read_tensor(buf, off);
        if (ck.pred.head_w2.cols != 2)
            throw std::runtime_error("load_checkpoint: predictor head shape mismatch");
    }
    if (off != buf.size()) throw std::runtime_error("load_checkpoint: trailing bytes");
    return ck;
}

} // namespace chartjepa::models
