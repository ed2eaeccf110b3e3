#include <cstring>

#include "chartjepa/ndnum.hpp"
#include "chartjepa/rng.hpp"
#include "grad_check.hpp"
#include "test_support.hpp"

using namespace chartjepa;
using namespace chartjepa::ndnum;
using testing::max_rel_grad_err;
using testing::random_matrix;

static bool bits_equal(const Matrix& a, const Matrix& b) {
    return a.same_shape(b) &&
           std::memcmp(a.d.data(), b.d.data(), a.size() * sizeof(double)) == 0;
}

// Equality up to floating-point summation-order differences.
static bool near_equal(const Matrix& a, const Matrix& b, double tol = 1e-12) {
    if (!a.same_shape(b)) return false;
    for (size_t i = 0; i < a.size(); ++i)
        if (std::fabs(a.d[i] - b.d[i]) > tol) return false;
    return true;
}

static void test_matrix_basics() {
    testing::section("matrix basics");
    Matrix z = Matrix::zeros(2, 3);
    REQUIRE(z.rows == 2 && z.cols == 3);
    for (double v : z.d) REQUIRE(v == 0.0);

    Matrix f = Matrix::full(2, 2, 1.5);
    REQUIRE(f.at(0, 0) == 1.5 && f.at(1, 1) == 1.5);

    Matrix rv = Matrix::row_vector({1.0, 2.0, 3.0});
    REQUIRE(rv.rows == 1 && rv.cols == 3 && rv.at(0, 2) == 3.0);

    Matrix m(2, 2);
    m.at(0, 1) = 7.0;
    REQUIRE(m.d[1] == 7.0);
    REQUIRE(m.all_finite());
    m.at(1, 0) = std::numeric_limits<double>::quiet_NaN();
    REQUIRE(!m.all_finite());
    m.at(1, 0) = std::numeric_limits<double>::infinity();
    REQUIRE(!m.all_finite());
}

static void test_kernels() {
    testing::section("value kernels");
    // I2 * M = M
    Matrix eye(2, 2);
    eye.at(0, 0) = eye.at(1, 1) = 1.0;
    Rng rng(11);
    Matrix m = random_matrix(2, 2, rng);
    REQUIRE(bits_equal(matmul_nn(eye, m), m));

    // [[1,2],[3,4]] x [[5],[6]] = [[17],[39]]
    Matrix a(2, 2);
    a.d = {1, 2, 3, 4};
    Matrix b(2, 1);
    b.d = {5, 6};
    Matrix p = matmul_nn(a, b);
    REQUIRE(p.rows == 2 && p.cols == 1);
    REQUIRE(p.at(0, 0) == 17.0 && p.at(1, 0) == 39.0);

    // nt / tn agree with explicit transposes
    Matrix x = random_matrix(3, 4, rng);
    Matrix y = random_matrix(2, 4, rng);
    Matrix yt(4, 2);
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 4; ++j) yt.at(j, i) = y.at(i, j);
    REQUIRE(near_equal(matmul_nt(x, y), matmul_nn(x, yt)));

    Matrix u = random_matrix(4, 3, rng);
    Matrix ut(3, 4);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 3; ++j) ut.at(j, i) = u.at(i, j);
    Matrix w = random_matrix(4, 2, rng);
    REQUIRE(near_equal(matmul_tn(u, w), matmul_nn(ut, w)));

    // axpy
    Matrix y2 = Matrix::full(2, 2, 1.0);
    Matrix x2 = Matrix::full(2, 2, 3.0);
    axpy(0.5, x2, y2);
    for (double v : y2.d) REQUIRE(v == 2.5);

    REQUIRE_THROWS(matmul_nn(Matrix(2, 3), Matrix(2, 3)));
    REQUIRE_THROWS(matmul_nt(Matrix(2, 3), Matrix(2, 4)));
    REQUIRE_THROWS(matmul_tn(Matrix(3, 2), Matrix(4, 2)));
}

static void test_forward_values() {
    testing::section("op forward values");
    Tape t;
    NodeId x = t.leaf(Matrix::row_vector({-1.0, 0.0, 2.0}));
    NodeId r = relu(t, x);
    REQUIRE(t.value(r).d == std::vector<double>({0.0, 0.0, 2.0}));

    NodeId z = t.leaf(Matrix::zeros(1, 1));
    REQUIRE(t.value(tanh_op(t, z)).at(0, 0) == 0.0);
    REQUIRE(t.value(sigmoid(t, z)).at(0, 0) == 0.5);

    NodeId two = t.leaf(Matrix::full(1, 2, 2.0));
    REQUIRE(t.value(scale(t, two, -1.5)).d == std::vector<double>({-3.0, -3.0}));
    REQUIRE(t.value(sqrt_op(t, t.leaf(Matrix::full(1, 1, 4.0)))).at(0, 0) == 2.0);

    // add / sub / mul
    NodeId a = t.leaf(Matrix::row_vector({1.0, 2.0}));
    NodeId b = t.leaf(Matrix::row_vector({3.0, 5.0}));
    REQUIRE(t.value(add(t, a, b)).d == std::vector<double>({4.0, 7.0}));
    REQUIRE(t.value(sub(t, a, b)).d == std::vector<double>({-2.0, -3.0}));
    REQUIRE(t.value(mul(t, a, b)).d == std::vector<double>({3.0, 10.0}));

    // add_rowvec broadcasts over rows
    Matrix m(2, 2);
    m.d = {1, 2, 3, 4};
    NodeId mm = t.leaf(m);
    NodeId v = t.leaf(Matrix::row_vector({10.0, 20.0}));
    REQUIRE(t.value(add_rowvec(t, mm, v)).d == std::vector<double>({11, 22, 13, 24}));

    // row_sum / sum_all
    NodeId rs = row_sum(t, mm);
    REQUIRE(t.value(rs).rows == 2 && t.value(rs).cols == 1);
    REQUIRE(t.value(rs).d == std::vector<double>({3.0, 7.0}));
    REQUIRE(t.value(sum_all(t, mm)).at(0, 0) == 10.0);

    // mse
    Matrix tgt = Matrix::row_vector({1.0, 2.0});
    NodeId same = mse(t, a, tgt);
    REQUIRE(t.value(same).at(0, 0) == 0.0);
    NodeId loss = mse(t, a, Matrix::row_vector({0.0, 0.0}));
    REQUIRE(t.value(loss).at(0, 0) == 2.5);

    // detach copies the value exactly
    NodeId d = detach(t, mm);
    REQUIRE(bits_equal(t.value(d), t.value(mm)));

    // blocks
    Matrix big(3, 4);
    for (int i = 0; i < 12; ++i) big.d[i] = i;
    NodeId bb = t.leaf(big);
    NodeId rb = row_block(t, bb, 1, 3);
    REQUIRE(t.value(rb).rows == 2 && t.value(rb).cols == 4);
    REQUIRE(t.value(rb).d == std::vector<double>({4, 5, 6, 7, 8, 9, 10, 11}));
    NodeId cb = col_block(t, bb, 1, 3);
    REQUIRE(t.value(cb).rows == 3 && t.value(cb).cols == 2);
    REQUIRE(t.value(cb).d == std::vector<double>({1, 2, 5, 6, 9, 10}));
}

static void test_shape_errors() {
    testing::section("shape validation");
    Tape t;
    NodeId a = t.leaf(Matrix(2, 3));
    NodeId b = t.leaf(Matrix(2, 3));
    NodeId c = t.leaf(Matrix(3, 2));
    REQUIRE_THROWS(matmul(t, a, b));
    REQUIRE_THROWS(add(t, a, c));
    REQUIRE_THROWS(sub(t, a, c));
    REQUIRE_THROWS(mul(t, a, c));
    REQUIRE_THROWS(add_rowvec(t, a, t.leaf(Matrix(1, 2))));
    REQUIRE_THROWS(add_rowvec(t, a, t.leaf(Matrix(2, 3))));
    REQUIRE_THROWS(mse(t, a, Matrix(3, 2)));
    REQUIRE_THROWS(row_block(t, a, 1, 1));
    REQUIRE_THROWS(row_block(t, a, 0, 3));
    REQUIRE_THROWS(col_block(t, a, -1, 2));
    REQUIRE_THROWS(backward(t, a)); // non-scalar loss
    // sqrt of a negative value is an error
    REQUIRE_THROWS(sqrt_op(t, t.leaf(Matrix::full(1, 1, -1.0))));
}

static void test_gradients_per_op() {
    testing::section("finite-difference gradients per op");
    Rng rng(42);

    // matmul: loss = sum(A @ B), A 3x4, B 4x2  (spec'd tolerance 1e-6)
    {
        std::vector<Matrix> xs = {random_matrix(3, 4, rng), random_matrix(4, 2, rng)};
        double err = max_rel_grad_err(xs, [](Tape& t, const std::vector<NodeId>& in) {
            return sum_all(t, matmul(t, in[0], in[1]));
        });
        REQUIRE(err < 1e-6);
    }

    // weight matrix used to make per-entry gradients non-uniform
    const Matrix wfix = random_matrix(3, 4, rng);

    auto weighted = [&wfix](Tape& t, NodeId y) {
        return sum_all(t, mul(t, y, t.leaf(wfix)));
    };

    // add / sub / mul
    {
        std::vector<Matrix> xs = {random_matrix(3, 4, rng), random_matrix(3, 4, rng)};
        double e1 = max_rel_grad_err(xs, [&](Tape& t, const std::vector<NodeId>& in) {
            return weighted(t, add(t, in[0], in[1]));
        });
        double e2 = max_rel_grad_err(xs, [&](Tape& t, const std::vector<NodeId>& in) {
            return weighted(t, sub(t, in[0], in[1]));
        });
        double e3 = max_rel_grad_err(xs, [&](Tape& t, const std::vector<NodeId>& in) {
            return weighted(t, mul(t, in[0], in[1]));
        });
        REQUIRE(e1 < 1e-6);
        REQUIRE(e2 < 1e-6);
        REQUIRE(e3 < 1e-6);
    }

    // relu: inputs kept away from the kink at 0
    {
        Matrix x = random_matrix(3, 4, rng);
        for (auto& v : x.d)
            if (std::fabs(v) < 0.05) v = v < 0 ? -0.05 : 0.05;
        double err = max_rel_grad_err({x}, [&](Tape& t, const std::vector<NodeId>& in) {
            return weighted(t, relu(t, in[0]));
        });
        REQUIRE(err < 1e-6);
    }

    // tanh / sigmoid
    {
        std::vector<Matrix> xs = {random_matrix(3, 4, rng)};
        double e1 = max_rel_grad_err(xs, [&](Tape& t, const std::vector<NodeId>& in) {
            return weighted(t, tanh_op(t, in[0]));
        });
        double e2 = max_rel_grad_err(xs, [&](Tape& t, const std::vector<NodeId>& in) {
            return weighted(t, sigmoid(t, in[0]));
        });
        REQUIRE(e1 < 1e-6);
        REQUIRE(e2 < 1e-6);
    }

    // scale
    {
        std::vector<Matrix> xs = {random_matrix(3, 4, rng)};
        double err = max_rel_grad_err(xs, [&](Tape& t, const std::vector<NodeId>& in) {
            return weighted(t, scale(t, in[0], -0.37));
        });
        REQUIRE(err < 1e-6);
    }

    // add_rowvec (both the matrix and the broadcast vector)
    {
        std::vector<Matrix> xs = {random_matrix(3, 4, rng), random_matrix(1, 4, rng)};
        double err = max_rel_grad_err(xs, [&](Tape& t, const std::vector<NodeId>& in) {
            return weighted(t, add_rowvec(t, in[0], in[1]));
        });
        REQUIRE(err < 1e-6);
    }

    // row_sum / sum_all
    {
        const Matrix wcol = random_matrix(3, 1, rng);
        std::vector<Matrix> xs = {random_matrix(3, 4, rng)};
        double e1 = max_rel_grad_err(xs, [&](Tape& t, const std::vector<NodeId>& in) {
            return sum_all(t, mul(t, row_sum(t, in[0]), t.leaf(wcol)));
        });
        double e2 = max_rel_grad_err(xs, [](Tape& t, const std::vector<NodeId>& in) {
            return sum_all(t, in[0]);
        });
        REQUIRE(e1 < 1e-6);
        REQUIRE(e2 < 1e-6);
    }

    // sqrt on positive inputs
    {
        std::vector<Matrix> xs = {random_matrix(3, 4, rng, 0.5, 2.0)};
        double err = max_rel_grad_err(xs, [&](Tape& t, const std::vector<NodeId>& in) {
            return weighted(t, sqrt_op(t, in[0]));
        });
        REQUIRE(err < 1e-6);
    }

    // mse: d/d(pred) = 2(pred - target)/n
    {
        Rng r2(7);
        const Matrix tgt = random_matrix(3, 4, r2);
        std::vector<Matrix> xs = {random_matrix(3, 4, rng)};
        double err = max_rel_grad_err(xs, [&](Tape& t, const std::vector<NodeId>& in) {
            return mse(t, in[0], tgt);
        });
        REQUIRE(err < 1e-6);

        // closed form
        Tape t;
        NodeId p = t.leaf(xs[0]);
        backward(t, mse(t, p, tgt));
        for (size_t i = 0; i < xs[0].size(); ++i) {
            double want = 2.0 * (xs[0].d[i] - tgt.d[i]) / static_cast<double>(tgt.size());
            REQUIRE_CLOSE(t.grad(p).d[i], want, 1e-12);
        }
    }

    // blocks: loss touches only the block; outside entries must get zero grad
    {
        std::vector<Matrix> xs = {random_matrix(4, 5, rng)};
        double e1 = max_rel_grad_err(xs, [](Tape& t, const std::vector<NodeId>& in) {
            return sum_all(t, row_block(t, in[0], 1, 3));
        });
        double e2 = max_rel_grad_err(xs, [](Tape& t, const std::vector<NodeId>& in) {
            return sum_all(t, col_block(t, in[0], 2, 5));
        });
        REQUIRE(e1 < 1e-6);
        REQUIRE(e2 < 1e-6);

        Tape t;
        NodeId x = t.leaf(xs[0]);
        backward(t, sum_all(t, row_block(t, x, 1, 3)));
        for (int j = 0; j < 5; ++j) {
            REQUIRE(t.grad(x).at(0, j) == 0.0);
            REQUIRE(t.grad(x).at(3, j) == 0.0);
            REQUIRE(t.grad(x).at(1, j) == 1.0);
        }
    }

    // relu'(0) = 0
    {
        Tape t;
        NodeId x = t.leaf(Matrix::row_vector({-1.0, 0.0, 2.0}));
        backward(t, sum_all(t, relu(t, x)));
        REQUIRE(t.grad(x).d == std::vector<double>({0.0, 0.0, 1.0}));
    }
}

static void test_backward_semantics() {
    testing::section("backward semantics");
    Rng rng(9);

    // constant loss: nothing else gets gradient
    {
        Tape t;
        NodeId w = t.leaf(random_matrix(2, 2, rng));
        NodeId x = t.leaf(random_matrix(2, 2, rng));
        NodeId y = matmul(t, w, x);
        (void)y;
        NodeId c = t.leaf(Matrix::full(1, 1, 3.0));
        backward(t, c);
        for (NodeId id : {w, x, y})
            for (double g : t.grad(id).d) REQUIRE(g == 0.0);
        REQUIRE(t.grad(c).at(0, 0) == 1.0);
    }

    // detached input: grad(x) = 0 bitwise, grad(W) != 0
    {
        Tape t;
        NodeId w = t.leaf(random_matrix(3, 3, rng));
        NodeId x = t.leaf(random_matrix(3, 2, rng));
        NodeId loss = sum_all(t, matmul(t, w, detach(t, x)));
        backward(t, loss);
        for (double g : t.grad(x).d) REQUIRE(g == 0.0);
        double wnorm = 0;
        for (double g : t.grad(w).d) wnorm += std::fabs(g);
        REQUIRE(wnorm > 0.0);
    }

    // nodes unreachable from the loss keep zero grad
    {
        Tape t;
        NodeId x = t.leaf(random_matrix(2, 2, rng));
        NodeId used = tanh_op(t, x);
        NodeId unused = sigmoid(t, x);
        backward(t, sum_all(t, used));
        for (double g : t.grad(unused).d) REQUIRE(g == 0.0);
        double xn = 0;
        for (double g : t.grad(x).d) xn += std::fabs(g);
        REQUIRE(xn > 0.0);
    }

    // detach(g(x)) vs constant target: identical gradients on the online branch
    {
        Matrix wf = random_matrix(3, 3, rng);
        Matrix wg = random_matrix(3, 3, rng);
        Matrix x = random_matrix(3, 2, rng);

        Tape t1;
        NodeId wf1 = t1.leaf(wf), wg1 = t1.leaf(wg), x1 = t1.leaf(x);
        NodeId pred1 = tanh_op(t1, matmul(t1, wf1, x1));
        NodeId tgt1 = detach(t1, tanh_op(t1, matmul(t1, wg1, x1)));
        NodeId diff1 = sub(t1, pred1, tgt1);
        backward(t1, sum_all(t1, mul(t1, diff1, diff1)));

        // target branch parameters get exactly zero
        for (double g : t1.grad(wg1).d) REQUIRE(g == 0.0);

        // same computation with the target as a plain constant leaf
        Tape tc;
        NodeId wgc = tc.leaf(wg), xc0 = tc.leaf(x);
        Matrix tgt_val = tc.value(tanh_op(tc, matmul(tc, wgc, xc0)));

        Tape t2;
        NodeId wf2 = t2.leaf(wf), x2 = t2.leaf(x);
        NodeId pred2 = tanh_op(t2, matmul(t2, wf2, x2));
        NodeId tgt2 = t2.leaf(tgt_val);
        NodeId diff2 = sub(t2, pred2, tgt2);
        backward(t2, sum_all(t2, mul(t2, diff2, diff2)));

        REQUIRE(bits_equal(t1.grad(wf1), t2.grad(wf2)));
    }

    // determinism: same graph twice -> bit-identical grads; backward is
    // idempotent on one tape
    {
        auto build_and_grad = [&](Tape& t) {
            Rng r(123);
            NodeId w1 = t.leaf(testing::random_matrix(4, 3, r));
            NodeId x = t.leaf(testing::random_matrix(3, 5, r));
            NodeId h = relu(t, matmul(t, w1, x));
            NodeId w2 = t.leaf(testing::random_matrix(2, 4, r));
            NodeId loss = mse(t, matmul(t, w2, h), testing::random_matrix(2, 5, r));
            backward(t, loss);
            return std::vector<NodeId>{w1, x, w2};
        };
        Tape ta, tb;
        auto ia = build_and_grad(ta);
        auto ib = build_and_grad(tb);
        for (size_t i = 0; i < ia.size(); ++i)
            REQUIRE(bits_equal(ta.grad(ia[i]), tb.grad(ib[i])));

        Matrix before = ta.grad(ia[0]);
        // find the loss node: last node on tape
        backward(ta, static_cast<NodeId>(ta.size()) - 1);
        REQUIRE(bits_equal(before, ta.grad(ia[0])));
    }
}

static void test_full_mlp_fd() {
    testing::section("full MLP finite-difference check");
    Rng rng(77);
    Matrix x = random_matrix(4, 6, rng);
    Matrix w1 = random_matrix(6, 8, rng, -0.6, 0.6);
    Matrix b1 = random_matrix(1, 8, rng, -0.5, 0.5);
    Matrix w2 = random_matrix(8, 3, rng, -0.6, 0.6);
    Matrix b2 = random_matrix(1, 3, rng, -0.5, 0.5);
    Matrix tgt = random_matrix(4, 3, rng);

    double err = max_rel_grad_err(
        {x, w1, b1, w2, b2}, [&](Tape& t, const std::vector<NodeId>& in) {
            NodeId h = relu(t, add_rowvec(t, matmul(t, in[0], in[1]), in[2]));
            NodeId out = tanh_op(t, add_rowvec(t, matmul(t, h, in[3]), in[4]));
            return mse(t, out, tgt);
        });
    std::printf("   mlp max rel grad err = %.3g\n", err);
    REQUIRE(err < 1e-4);
}

int main() {
    test_matrix_basics();
    test_kernels();
    test_forward_values();
    test_shape_errors();
    test_gradients_per_op();
    test_backward_semantics();
    test_full_mlp_fd();
    testing::done("test_ndnum");
    return 0;
}
