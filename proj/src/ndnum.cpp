#include "chartjepa/ndnum.hpp"

#include <cmath>

namespace chartjepa::ndnum {

bool Matrix::all_finite() const {
    for (double v : d)
        if (!std::isfinite(v)) return false;
    return true;
}

// ---------------------------------------------------------------------------
// Kernels
// ---------------------------------------------------------------------------

static void check(bool ok, const char* msg) {
    if (!ok) throw std::invalid_argument(msg);
}

void matmul_nn_acc(const Matrix& a, const Matrix& b, Matrix& out) {
    check(a.cols == b.rows, "matmul: inner dimensions differ");
    check(out.rows == a.rows && out.cols == b.cols, "matmul: bad output shape");
    const int n = a.rows, k = a.cols, m = b.cols;
    for (int i = 0; i < n; ++i) {
        const double* ar = a.row(i);
        double* yr = out.row(i);
        for (int p = 0; p < k; ++p) {
            const double av = ar[p];
            const double* br = b.row(p);
            for (int j = 0; j < m; ++j) yr[j] += av * br[j];
        }
    }
}

void matmul_nt_acc(const Matrix& a, const Matrix& b, Matrix& out) {
    check(a.cols == b.cols, "matmul_nt: inner dimensions differ");
    check(out.rows == a.rows && out.cols == b.rows, "matmul_nt: bad output shape");
    const int n = a.rows, k = a.cols, m = b.rows;
    for (int i = 0; i < n; ++i) {
        const double* ar = a.row(i);
        double* yr = out.row(i);
        for (int j = 0; j < m; ++j) {
            const double* br = b.row(j);
            double acc = 0.0;
            for (int p = 0; p < k; ++p) acc += ar[p] * br[p];
            yr[j] += acc;
        }
    }
}

void matmul_tn_acc(const Matrix& a, const Matrix& b, Matrix& out) {
    check(a.rows == b.rows, "matmul_tn: inner dimensions differ");
    check(out.rows == a.cols && out.cols == b.cols, "matmul_tn: bad output shape");
    const int n = a.rows, k = a.cols, m = b.cols;
    for (int i = 0; i < n; ++i) {
        const double* ar = a.row(i);
        const double* br = b.row(i);
        for (int p = 0; p < k; ++p) {
            const double av = ar[p];
            double* yr = out.row(p);
            for (int j = 0; j < m; ++j) yr[j] += av * br[j];
        }
    }
}

Matrix matmul_nn(const Matrix& a, const Matrix& b) {
    Matrix y(a.rows, b.cols);
    matmul_nn_acc(a, b, y);
    return y;
}
Matrix matmul_nt(const Matrix& a, const Matrix& b) {
    Matrix y(a.rows, b.rows);
    matmul_nt_acc(a, b, y);
    return y;
}
Matrix matmul_tn(const Matrix& a, const Matrix& b) {
    Matrix y(a.cols, b.cols);
    matmul_tn_acc(a, b, y);
    return y;
}

void axpy(double alpha, const Matrix& x, Matrix& y) {
    check(x.same_shape(y), "axpy: shape mismatch");
    const size_t n = x.size();
    for (size_t i = 0; i < n; ++i) y.d[i] += alpha * x.d[i];
}

// ---------------------------------------------------------------------------
// Tape ops
// ---------------------------------------------------------------------------

NodeId push_node(Tape& t, Node&& n) {
    n.grad = Matrix::zeros(n.value.rows, n.value.cols);
    t.nodes.push_back(std::move(n));
    return static_cast<NodeId>(t.nodes.size() - 1);
}

NodeId Tape::leaf(Matrix v) {
    Node n;
    n.op = Op::Leaf;
    n.value = std::move(v);
    return push_node(*this, std::move(n));
}

static const Matrix& val(Tape& t, NodeId id) { return t.nodes[id].value; }

NodeId matmul(Tape& t, NodeId a, NodeId b) {
    Node n;
    n.op = Op::MatMul;
    n.p0 = a;
    n.p1 = b;
    n.value = matmul_nn(val(t, a), val(t, b));
    return push_node(t, std::move(n));
}

static NodeId binary_same_shape(Tape& t, Op op, NodeId a, NodeId b) {
    const Matrix& x = val(t, a);
    const Matrix& y = val(t, b);
    check(x.same_shape(y), "elementwise: shape mismatch");
    Node n;
    n.op = op;
    n.p0 = a;
    n.p1 = b;
    n.value = Matrix(x.rows, x.cols);
    const size_t m = x.size();
    switch (op) {
        case Op::Add:
            for (size_t i = 0; i < m; ++i) n.value.d[i] = x.d[i] + y.d[i];
            break;
        case Op::Sub:
            for (size_t i = 0; i < m; ++i) n.value.d[i] = x.d[i] - y.d[i];
            break;
        case Op::Mul:
            for (size_t i = 0; i < m; ++i) n.value.d[i] = x.d[i] * y.d[i];
            break;
        default:
            throw std::logic_error("binary_same_shape: bad op");
    }
    return push_node(t, std::move(n));
}

NodeId add(Tape& t, NodeId a, NodeId b) { return binary_same_shape(t, Op::Add, a, b); }
NodeId sub(Tape& t, NodeId a, NodeId b) { return binary_same_shape(t, Op::Sub, a, b); }
NodeId mul(Tape& t, NodeId a, NodeId b) { return binary_same_shape(t, Op::Mul, a, b); }

static NodeId unary(Tape& t, Op op, NodeId x) {
    const Matrix& v = val(t, x);
    Node n;
    n.op = op;
    n.p0 = x;
    n.value = Matrix(v.rows, v.cols);
    const size_t m = v.size();
    switch (op) {
        case Op::Relu:
            for (size_t i = 0; i < m; ++i) n.value.d[i] = v.d[i] > 0.0 ? v.d[i] : 0.0;
            break;
        case Op::Tanh:
            for (size_t i = 0; i < m; ++i) n.value.d[i] = std::tanh(v.d[i]);
            break;
        case Op::Sigmoid:
            for (size_t i = 0; i < m; ++i) n.value.d[i] = 1.0 / (1.0 + std::exp(-v.d[i]));
            break;
        case Op::Sqrt:
            for (size_t i = 0; i < m; ++i) {
                check(v.d[i] >= 0.0, "sqrt: negative input");
                n.value.d[i] = std::sqrt(v.d[i]);
            }
            break;
        default:
            throw std::logic_error("unary: bad op");
    }
    return push_node(t, std::move(n));
}

NodeId relu(Tape& t, NodeId x) { return unary(t, Op::Relu, x); }
NodeId tanh_op(Tape& t, NodeId x) { return unary(t, Op::Tanh, x); }
NodeId sigmoid(Tape& t, NodeId x) { return unary(t, Op::Sigmoid, x); }
NodeId sqrt_op(Tape& t, NodeId x) { return unary(t, Op::Sqrt, x); }

NodeId scale(Tape& t, NodeId x, double s) {
    const Matrix& v = val(t, x);
    Node n;
    n.op = Op::Scale;
    n.p0 = x;
    n.s = s;
    n.value = Matrix(v.rows, v.cols);
    for (size_t i = 0; i < v.size(); ++i) n.value.d[i] = s * v.d[i];
    return push_node(t, std::move(n));
}

NodeId add_rowvec(Tape& t, NodeId m, NodeId v) {
    const Matrix& a = val(t, m);
    const Matrix& b = val(t, v);
    check(b.rows == 1 && b.cols == a.cols, "add_rowvec: vector shape mismatch");
    Node n;
    n.op = Op::AddRowVec;
    n.p0 = m;
    n.p1 = v;
    n.value = Matrix(a.rows, a.cols);
    for (int i = 0; i < a.rows; ++i) {
        const double* ar = a.row(i);
        double* yr = n.value.row(i);
        for (int j = 0; j < a.cols; ++j) yr[j] = ar[j] + b.d[j];
    }
    return push_node(t, std::move(n));
}

NodeId row_sum(Tape& t, NodeId x) {
    const Matrix& v = val(t, x);
    Node n;
    n.op = Op::RowSum;
    n.p0 = x;
    n.value = Matrix(v.rows, 1);
    for (int i = 0; i < v.rows; ++i) {
        double acc = 0.0;
        const double* r = v.row(i);
        for (int j = 0; j < v.cols; ++j) acc += r[j];
        n.value.d[i] = acc;
    }
    return push_node(t, std::move(n));
}

NodeId sum_all(Tape& t, NodeId x) {
    const Matrix& v = val(t, x);
    Node n;
    n.op = Op::SumAll;
    n.p0 = x;
    n.value = Matrix(1, 1);
    double acc = 0.0;
    for (double e : v.d) acc += e;
    n.value.d[0] = acc;
    return push_node(t, std::move(n));
}

NodeId mse(Tape& t, NodeId pred, const Matrix& target) {
    const Matrix& p = val(t, pred);
    check(p.same_shape(target), "mse: shape mismatch");
    Node n;
    n.op = Op::Mse;
    n.p0 = pred;
    n.aux = target;
    n.value = Matrix(1, 1);
    double acc = 0.0;
    for (size_t i = 0; i < p.size(); ++i) {
        const double diff = p.d[i] - target.d[i];
        acc += diff * diff;
    }
    n.value.d[0] = acc / static_cast<double>(p.size());
    return push_node(t, std::move(n));
}

NodeId detach(Tape& t, NodeId x) {
    Node n;
    n.op = Op::Detach;
    n.value = val(t, x); // value copy; no parent link, so backward stops here
    return push_node(t, std::move(n));
}

NodeId row_block(Tape& t, NodeId x, int r0, int r1) {
    const Matrix& v = val(t, x);
    check(0 <= r0 && r0 < r1 && r1 <= v.rows, "row_block: bad bounds");
    Node n;
    n.op = Op::RowBlock;
    n.p0 = x;
    n.a0 = r0;
    n.a1 = r1;
    n.value = Matrix(r1 - r0, v.cols);
    for (int i = r0; i < r1; ++i)
        std::copy(v.row(i), v.row(i) + v.cols, n.value.row(i - r0));
    return push_node(t, std::move(n));
}

NodeId col_block(Tape& t, NodeId x, int c0, int c1) {
    const Matrix& v = val(t, x);
    check(0 <= c0 && c0 < c1 && c1 <= v.cols, "col_block: bad bounds");
    Node n;
    n.op = Op::ColBlock;
    n.p0 = x;
    n.a0 = c0;
    n.a1 = c1;
    n.value = Matrix(v.rows, c1 - c0);
    for (int i = 0; i < v.rows; ++i)
        std::copy(v.row(i) + c0, v.row(i) + c1, n.value.row(i));
    return push_node(t, std::move(n));
}

// ---------------------------------------------------------------------------
// Backward
// ---------------------------------------------------------------------------

void backward(Tape& t, NodeId loss) {
    check(loss >= 0 && static_cast<size_t>(loss) < t.nodes.size(), "backward: bad node id");
    check(t.nodes[loss].value.rows == 1 && t.nodes[loss].value.cols == 1,
          "backward: loss must be scalar");

    for (Node& n : t.nodes) {
        n.grad.fill(0.0);
        n.touched = false;
    }
    t.nodes[loss].grad.d[0] = 1.0;
    t.nodes[loss].touched = true;

    for (int id = loss; id >= 0; --id) {
        Node& n = t.nodes[id];
        if (!n.touched) continue;
        const Matrix& gy = n.grad;
        switch (n.op) {
            case Op::Leaf:
            case Op::Detach:
                break;
            case Op::MatMul: {
                Node& a = t.nodes[n.p0];
                Node& b = t.nodes[n.p1];
                matmul_nt_acc(gy, b.value, a.grad);
                matmul_tn_acc(a.value, gy, b.grad);
                a.touched = b.touched = true;
                break;
            }
            case Op::Add: {
                axpy(1.0, gy, t.nodes[n.p0].grad);
                axpy(1.0, gy, t.nodes[n.p1].grad);
                t.nodes[n.p0].touched = t.nodes[n.p1].touched = true;
                break;
            }
            case Op::Sub: {
                axpy(1.0, gy, t.nodes[n.p0].grad);
                axpy(-1.0, gy, t.nodes[n.p1].grad);
                t.nodes[n.p0].touched = t.nodes[n.p1].touched = true;
                break;
            }
            case Op::Mul: {
                Node& a = t.nodes[n.p0];
                Node& b = t.nodes[n.p1];
                for (size_t i = 0; i < gy.size(); ++i) {
                    a.grad.d[i] += gy.d[i] * b.value.d[i];
                    b.grad.d[i] += gy.d[i] * a.value.d[i];
                }
                a.touched = b.touched = true;
                break;
            }
            case Op::Relu: {
                Node& a = t.nodes[n.p0];
                for (size_t i = 0; i < gy.size(); ++i)
                    if (a.value.d[i] > 0.0) a.grad.d[i] += gy.d[i];
                a.touched = true;
                break;
            }
            case Op::Tanh: {
                Node& a = t.nodes[n.p0];
                for (size_t i = 0; i < gy.size(); ++i)
                    a.grad.d[i] += gy.d[i] * (1.0 - n.value.d[i] * n.value.d[i]);
                a.touched = true;
                break;
            }
            case Op::Sigmoid: {
                Node& a = t.nodes[n.p0];
                for (size_t i = 0; i < gy.size(); ++i)
                    a.grad.d[i] += gy.d[i] * n.value.d[i] * (1.0 - n.value.d[i]);
                a.touched = true;
                break;
            }
            case Op::Scale: {
                axpy(n.s, gy, t.nodes[n.p0].grad);
                t.nodes[n.p0].touched = true;
                break;
            }
            case Op::AddRowVec: {
                Node& a = t.nodes[n.p0];
                Node& b = t.nodes[n.p1];
                axpy(1.0, gy, a.grad);
                for (int i = 0; i < gy.rows; ++i) {
                    const double* gr = gy.row(i);
                    for (int j = 0; j < gy.cols; ++j) b.grad.d[j] += gr[j];
                }
                a.touched = b.touched = true;
                break;
            }
            case Op::RowSum: {
                Node& a = t.nodes[n.p0];
                for (int i = 0; i < a.value.rows; ++i) {
                    const double g = gy.d[i];
                    double* gr = a.grad.row(i);
                    for (int j = 0; j < a.value.cols; ++j) gr[j] += g;
                }
                a.touched = true;
                break;
            }
            case Op::SumAll: {
                Node& a = t.nodes[n.p0];
                const double g = gy.d[0];
                for (size_t i = 0; i < a.grad.size(); ++i) a.grad.d[i] += g;
                a.touched = true;
                break;
            }
            case Op::Sqrt: {
                Node& a = t.nodes[n.p0];
                for (size_t i = 0; i < gy.size(); ++i)
                    a.grad.d[i] += gy.d[i] * 0.5 / n.value.d[i];
                a.touched = true;
                break;
            }
            case Op::Mse: {
                Node& a = t.nodes[n.p0];
                const double g = gy.d[0] * 2.0 / static_cast<double>(a.value.size());
                for (size_t i = 0; i < a.value.size(); ++i)
                    a.grad.d[i] += g * (a.value.d[i] - n.aux.d[i]);
                a.touched = true;
                break;
            }
            case Op::RowBlock: {
                Node& a = t.nodes[n.p0];
                for (int i = 0; i < gy.rows; ++i) {
                    const double* gr = gy.row(i);
                    double* ar = a.grad.row(n.a0 + i);
                    for (int j = 0; j < gy.cols; ++j) ar[j] += gr[j];
                }
                a.touched = true;
                break;
            }
            case Op::ColBlock: {
                Node& a = t.nodes[n.p0];
                for (int i = 0; i < gy.rows; ++i) {
                    const double* gr = gy.row(i);
                    double* ar = a.grad.row(i) + n.a0;
                    for (int j = 0; j < gy.cols; ++j) ar[j] += gr[j];
                }
                a.touched = true;
                break;
            }
        }
    }
}

} // namespace chartjepa::ndnum
