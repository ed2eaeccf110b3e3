#pragma once
// Dense real matrices with reverse-mode automatic differentiation.
// The Tape is a define-by-run graph: every op appends a Node holding the
// forward value; backward() sweeps the nodes in reverse insertion order
// exactly once and accumulates gradients into each node.

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace chartjepa::ndnum {

// ---------------------------------------------------------------------------
// Matrix: row-major, 64-bit floats
// ---------------------------------------------------------------------------

struct Matrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> d;

    Matrix() = default;
    Matrix(int r, int c) : rows(r), cols(c), d(static_cast<size_t>(r) * c, 0.0) {}

    static Matrix zeros(int r, int c) { return Matrix(r, c); }
    static Matrix full(int r, int c, double v) {
        Matrix m(r, c);
        std::fill(m.d.begin(), m.d.end(), v);
        return m;
    }
    static Matrix row_vector(const std::vector<double>& v) {
        Matrix m(1, static_cast<int>(v.size()));
        m.d = v;
        return m;
    }

    size_t size() const { return d.size(); }
    double& at(int i, int j) { return d[static_cast<size_t>(i) * cols + j]; }
    double at(int i, int j) const { return d[static_cast<size_t>(i) * cols + j]; }
    double* row(int i) { return d.data() + static_cast<size_t>(i) * cols; }
    const double* row(int i) const { return d.data() + static_cast<size_t>(i) * cols; }
    bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
    bool all_finite() const;
    void fill(double v) { std::fill(d.begin(), d.end(), v); }
};

// Value-level kernels (no tape). Shapes are checked; mismatches throw.
Matrix matmul_nn(const Matrix& a, const Matrix& b);        // a @ b
Matrix matmul_nt(const Matrix& a, const Matrix& b);        // a @ b^T
Matrix matmul_tn(const Matrix& a, const Matrix& b);        // a^T @ b
void matmul_nn_acc(const Matrix& a, const Matrix& b, Matrix& out);
void matmul_nt_acc(const Matrix& a, const Matrix& b, Matrix& out);
void matmul_tn_acc(const Matrix& a, const Matrix& b, Matrix& out);
void axpy(double alpha, const Matrix& x, Matrix& y);       // y += alpha * x

// ---------------------------------------------------------------------------
// Tape / Node
// ---------------------------------------------------------------------------

enum class Op : uint8_t {
    Leaf,       // parameter or constant; no parents
    Detach,     // value copy of parent; contributes no gradient upstream
    MatMul,
    Add,
    Sub,
    Mul,        // Hadamard
    Relu,
    Tanh,
    Sigmoid,
    Scale,      // y = s * x
    AddRowVec,  // y[i][j] = m[i][j] + v[0][j]
    RowSum,     // [n x c] -> [n x 1]
    SumAll,     // [n x c] -> [1 x 1]
    Sqrt,
    Mse,        // scalar mean squared difference against a constant target
    RowBlock,   // y = x[a0:a1, :]
    ColBlock,   // y = x[:, a0:a1]
};

struct Node {
    Matrix value;
    Matrix grad;          // same shape as value; all-zeros until backward()
    Op op = Op::Leaf;
    int p0 = -1, p1 = -1; // parent node ids
    int a0 = 0, a1 = 0;   // block bounds for RowBlock/ColBlock
    double s = 0.0;       // scalar for Scale
    Matrix aux;           // constant target for Mse
    bool touched = false; // reachable from the loss during the current backward
};

using NodeId = int;

struct Tape {
    std::vector<Node> nodes;
    uint64_t rng_seed = 0;

    NodeId leaf(Matrix v);
    const Matrix& value(NodeId id) const { return nodes[id].value; }
    const Matrix& grad(NodeId id) const { return nodes[id].grad; }
    size_t size() const { return nodes.size(); }

private:
    friend NodeId push_node(Tape& t, Node&& n);
};

// Graph-building operations. All validate shapes and throw std::invalid_argument.
NodeId matmul(Tape& t, NodeId a, NodeId b);
NodeId add(Tape& t, NodeId a, NodeId b);
NodeId sub(Tape& t, NodeId a, NodeId b);
NodeId mul(Tape& t, NodeId a, NodeId b);
NodeId relu(Tape& t, NodeId x);
NodeId tanh_op(Tape& t, NodeId x);
NodeId sigmoid(Tape& t, NodeId x);
NodeId scale(Tape& t, NodeId x, double s);
NodeId add_rowvec(Tape& t, NodeId m, NodeId v);
NodeId row_sum(Tape& t, NodeId x);
NodeId sum_all(Tape& t, NodeId x);
NodeId sqrt_op(Tape& t, NodeId x); // forward requires x >= 0; gradient requires x > 0
NodeId mse(Tape& t, NodeId pred, const Matrix& target);
NodeId detach(Tape& t, NodeId x);
NodeId row_block(Tape& t, NodeId x, int r0, int r1);
NodeId col_block(Tape& t, NodeId x, int c0, int c1);

// Reverse sweep from a scalar loss node. Zeroes all gradients first, so calling
// it twice on the same tape is idempotent; nodes unreachable from the loss keep
// zero gradient.
void backward(Tape& t, NodeId loss);

} // namespace chartjepa::ndnum
