#include <doctest.h>

#include "crispe/error.hpp"
#include "crispe/network.hpp"
#include "support.hpp"

using namespace crispe;
using namespace crispe::testing;

namespace {

// Straight-line evaluation without the library's forward pass.
Vector oracle_logits(const FeedForwardNet& net, const Vector& x) {
    Vector a = x;
    for (std::size_t l = 0; l < net.layer_count(); ++l) {
        const auto& W = net.layer(l).weights;
        Vector s = W.leftCols(W.cols() - 1) * a + W.col(W.cols() - 1);
        switch (net.layer(l).activation) {
        case Activation::Relu: s = s.cwiseMax(0.0); break;
        case Activation::Tanh: s = s.array().tanh().matrix(); break;
        case Activation::Gelu:
            for (auto& v : s) v = 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0)));
            break;
        case Activation::Identity: break;
        }
        a = s;
    }
    return a;
}

double loss_at(const FeedForwardNet& net, const Vector& x, int y) {
    return cross_entropy(forward(net, x).logits, y);
}

FeedForwardNet single_layer(const Matrix& w) {
    return FeedForwardNet({DenseLayer{w, Activation::Identity}});
}

} // namespace

TEST_SUITE("network") {

TEST_CASE("identity network passes inputs through") {
    Matrix w = Matrix::Zero(2, 3);
    w.leftCols(2) = Matrix::Identity(2, 2);
    const auto t = forward(single_layer(w), Vector{{1.0, 2.0}});
    CHECK(t.logits == Vector{{1.0, 2.0}});
    CHECK(t.inputs[0] == Vector{{1.0, 2.0, 1.0}});
}

TEST_CASE("zero weights give a uniform softmax") {
    const auto t = forward(single_layer(Matrix::Zero(4, 3)), Vector{{0.3, 0.7}});
    for (int c = 0; c < 4; ++c) CHECK(t.probs[c] == doctest::Approx(0.25));
}

TEST_CASE("forward matches a hand-rolled evaluation") {
    Rng rng(21);
    for (auto act : {Activation::Relu, Activation::Gelu, Activation::Tanh, Activation::Identity}) {
        const auto net = FeedForwardNet::random({5, 7, 6, 3}, act, rng());
        const Vector x = random_vector(rng, 5);
        const auto t = forward(net, x);
        CHECK(max_abs(t.logits - oracle_logits(net, x)) <= 1e-12);
        CHECK(t.probs.sum() == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("forward rejects mismatched inputs") {
    const auto net = FeedForwardNet::random({3, 2}, Activation::Relu, 1);
    CHECK_THROWS_AS(forward(net, Vector::Zero(4)), Error);
}

TEST_CASE("backward on a zero-weight layer") {
    const auto net = single_layer(Matrix::Zero(2, 3));
    const Vector x{{0.5, -1.0}};
    const auto g = backward(net, forward(net, x), 0);
    const Vector a{{0.5, -1.0, 1.0}};
    CHECK(max_abs(g[0].row(0) - (-0.5) * a.transpose()) < 1e-15);
    CHECK(max_abs(g[0].row(1) - 0.5 * a.transpose()) < 1e-15);
    CHECK_THROWS_AS(backward(net, forward(net, x), 2), Error);
}

TEST_CASE("backward matches central differences") {
    Rng rng(22);
    for (int trial = 0; trial < 20; ++trial) {
        const auto act = trial % 2 == 0 ? Activation::Tanh : Activation::Gelu;
        auto net = FeedForwardNet::random({4, 5, 3}, act, rng(), 1.5);
        const Vector x = random_vector(rng, 4);
        const int y = uniform_int(rng, 0, 2);
        const Vector grad = flatten(backward(net, forward(net, x), y));
        const Vector theta = net.flatten();
        Vector fd(theta.size());
        const double h = 1e-4;
        for (Eigen::Index i = 0; i < theta.size(); ++i) {
            Vector tp = theta, tm = theta;
            tp[i] += h;
            tm[i] -= h;
            net.assign(tp);
            const double lp = loss_at(net, x, y);
            net.assign(tm);
            const double lm = loss_at(net, x, y);
            fd[i] = (lp - lm) / (2 * h);
        }
        net.assign(theta);
        REQUIRE((grad - fd).norm() / std::max(grad.norm(), 1e-12) <= 1e-5);
    }
}

TEST_CASE("logit gradient is softmax minus one-hot") {
    Rng rng(23);
    const auto net = FeedForwardNet::random({3, 4}, Activation::Identity, rng());
    const auto t = forward(net, random_vector(rng, 3));
    Vector expect = t.probs;
    expect[2] -= 1.0;
    const auto g = backward(net, t, 2);
    CHECK(max_abs(g[0].col(3) - expect) < 1e-14); // bias column sees a = 1
}

TEST_CASE("pseudo-gradients") {
    Rng rng(24);
    SUBCASE("single class gives zero") {
        const auto net = FeedForwardNet::random({3, 4, 1}, Activation::Tanh, 5);
        const auto pg = sample_pseudo_gradient(net, forward(net, random_vector(rng, 3)), rng);
        CHECK(pg.preact_grads.back().norm() == 0.0);
    }
    SUBCASE("saturated softmax fixes the label") {
        Matrix w = Matrix::Zero(3, 2);
        w(1, 1) = 1e6;
        const auto net = single_layer(w);
        const auto pg = sample_pseudo_gradient(net, forward(net, Vector{{0.0}}), rng);
        CHECK(pg.label == 1);
        CHECK(pg.preact_grads.back().norm() < 1e-12);
    }
    SUBCASE("score function has zero mean") {
        const auto net = FeedForwardNet::random({3, 4}, Activation::Identity, 6, 2.0);
        const auto t = forward(net, Vector{{0.2, 0.9, 0.4}});
        const int n = 100000;
        Vector mean = Vector::Zero(4);
        Vector sq = Vector::Zero(4);
        for (int i = 0; i < n; ++i) {
            const Vector g = sample_pseudo_gradient(net, t, rng).preact_grads.back();
            mean += g;
            sq += g.cwiseAbs2();
        }
        mean /= n;
        const Vector sd = (sq / n - mean.cwiseAbs2()).cwiseSqrt();
        for (int c = 0; c < 4; ++c) CHECK(std::abs(mean[c]) <= 3.0 * sd[c] / std::sqrt(double(n)) + 1e-15);
    }
    SUBCASE("deterministic given the seed") {
        const auto net = FeedForwardNet::random({3, 5, 4}, Activation::Gelu, 7);
        const auto t = forward(net, Vector{{0.1, 0.2, 0.3}});
        Rng a(99), b(99);
        for (int i = 0; i < 20; ++i) {
            const auto pa = sample_pseudo_gradient(net, t, a);
            const auto pb = sample_pseudo_gradient(net, t, b);
            REQUIRE(pa.label == pb.label);
            REQUIRE(pa.preact_grads[0] == pb.preact_grads[0]);
        }
    }
}

TEST_CASE("per-example Jacobian") {
    Rng rng(25);
    SUBCASE("linear model rows are Kronecker copies of the input") {
        const auto net = FeedForwardNet::random({3, 2}, Activation::Identity, 1);
        const Vector x{{0.5, 0.25, 2.0}};
        const Matrix j = per_example_jacobian(net, x);
        const Vector a{{0.5, 0.25, 2.0, 1.0}};
        for (int r = 0; r < 2; ++r)
            for (int c = 0; c < 4; ++c) {
                CHECK(j(r, c * 2 + r) == doctest::Approx(a[c]));
                CHECK(j(r, c * 2 + (1 - r)) == 0.0);
            }
    }
    SUBCASE("zero input leaves only the bias columns of layer 1") {
        const auto net = FeedForwardNet::random({3, 4, 2}, Activation::Tanh, 2);
        const Matrix j = per_example_jacobian(net, Vector::Zero(3));
        CHECK(max_abs(j.leftCols(12)) == 0.0);
        CHECK(max_abs(j.middleCols(12, 4)) > 0.0);
    }
    SUBCASE("finite differences of the logits") {
        auto net = FeedForwardNet::random({4, 5, 3}, Activation::Gelu, 3, 1.5);
        const Vector x = random_vector(rng, 4);
        const Matrix j = per_example_jacobian(net, x);
        const Vector theta = net.flatten();
        Matrix fd(3, theta.size());
        for (Eigen::Index i = 0; i < theta.size(); ++i) {
            Vector tp = theta, tm = theta;
            tp[i] += 1e-5;
            tm[i] -= 1e-5;
            net.assign(tp);
            const Vector lp = forward(net, x).logits;
            net.assign(tm);
            fd.col(i) = (lp - forward(net, x).logits) / 2e-5;
        }
        CHECK(rel_err(j, fd) <= 1e-5);
    }
    SUBCASE("gradient is J^T (softmax - onehot)") {
        const auto net = FeedForwardNet::random({6, 8, 4}, Activation::Tanh, 4);
        const Vector x = random_vector(rng, 6);
        const auto t = forward(net, x);
        Vector r = t.probs;
        r[1] -= 1.0;
        const Vector via_j = per_example_jacobian(net, x).transpose() * r;
        CHECK(max_abs(via_j - flatten(backward(net, t, 1))) <= 1e-8);
    }
    SUBCASE("size guard") {
        const auto big = FeedForwardNet::random({200, 100, 2}, Activation::Relu, 5);
        try {
            per_example_jacobian(big, Vector::Zero(200));
            FAIL("expected size error");
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::Size);
        }
    }
}

TEST_CASE("Hessian-vector products") {
    Rng rng(26);
    const auto data = random_dataset(rng, 12, 3, 2);
    SUBCASE("zero vector") {
        const auto net = FeedForwardNet::random({3, 4, 2}, Activation::Tanh, 8);
        CHECK(hessian_vector_product(net, data, Vector::Zero(net.param_count())).norm() == 0.0);
    }
    SUBCASE("symmetric bilinear form") {
        const auto net = FeedForwardNet::random({3, 4, 2}, Activation::Tanh, 9);
        const Vector u = random_vector(rng, net.param_count());
        const Vector v = random_vector(rng, net.param_count());
        const Vector hu = hessian_vector_product(net, data, u);
        const Vector hv = hessian_vector_product(net, data, v);
        const double h_est = std::max(hu.norm() / u.norm(), hv.norm() / v.norm());
        CHECK(std::abs(v.dot(hu) - u.dot(hv)) <= 1e-6 * u.norm() * v.norm() * h_est);
    }
    SUBCASE("one parameter matches a scalar second difference") {
        Matrix w = Matrix::Zero(2, 1); // bias-only logits; only w(0,0) will move
        auto net = single_layer(w);
        LabeledDataset d;
        d.class_count = 2;
        d.inputs = Matrix::Zero(3, 0);
        d.labels = {0, 1, 0};
        const Vector e0 = Vector::Unit(2, 0);
        const double hvp = hessian_vector_product(net, d, e0).dot(e0);
        const double h = 1e-3;
        auto at = [&](double t) {
            net.layer(0).weights(0, 0) = t;
            return dataset_loss(net, d);
        };
        const double second = (at(h) - 2 * at(0.0) + at(-h)) / (h * h);
        CHECK(hvp == doctest::Approx(second).epsilon(1e-5));
    }
}

TEST_CASE("flatten order and round trip") {
    const auto net = FeedForwardNet::random({2, 3, 2}, Activation::Relu, 10);
    const Vector theta = net.flatten();
    CHECK(theta.size() == net.param_count());
    CHECK(theta.head(9) == linalg::vec(net.layer(0).weights));
    CHECK(net.offset(1) == 9);
    auto copy = net;
    copy.assign(theta * 2.0);
    CHECK(copy.layer(1).weights == net.layer(1).weights * 2.0);
    const auto g = unflatten(net, theta);
    CHECK(flatten(g) == theta);
}

TEST_CASE("relu subgradient is zero at zero") {
    Matrix w(1, 2);
    w << 1.0, 0.0;
    Matrix w2(2, 2);
    w2 << 1.0, 0.0, -1.0, 0.0;
    const FeedForwardNet net({DenseLayer{w, Activation::Relu}, DenseLayer{w2, Activation::Identity}});
    const auto g = backward(net, forward(net, Vector{{0.0}}), 0);
    CHECK(g[0].norm() == 0.0);
}

}
