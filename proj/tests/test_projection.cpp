#include <doctest.h>

#include <unsupported/Eigen/KroneckerProduct>

#include "crispe/error.hpp"
#include "crispe/projection.hpp"
#include "support.hpp"

using namespace crispe;
using namespace crispe::testing;

namespace {

CurvatureModel kfac_model(std::vector<std::pair<Matrix, Matrix>> as) {
    KfacFactors f;
    std::size_t layer = 0;
    for (auto& [a, s] : as) f.layers.push_back({layer++, std::move(a), std::move(s), 10});
    return CurvatureModel{KfacModel{std::move(f)}};
}

CurvatureModel gnh_model(const Matrix& m, Eigen::Index d_out, Eigen::Index d_in) {
    return CurvatureModel{GnhModel{DenseCurvature{{LayerShape{0, d_out, d_in}}, m, 1}}};
}

// Explicit (U_in (x) U_out) diag(vec M) (U_in (x) U_out)^T.
Matrix explicit_projector(const FactoredProjector& f) {
    const Matrix u = Eigen::kroneckerProduct(f.u_in, f.u_out);
    Vector m(f.mask.size());
    for (Eigen::Index j = 0; j < f.mask.cols(); ++j) m.segment(j * f.mask.rows(), f.mask.rows()) = f.mask.col(j);
    return u * m.asDiagonal() * u.transpose();
}

} // namespace

TEST_SUITE("projection") {

TEST_CASE("rotate-mask-rotate matches the explicit Kronecker projector") {
    Rng rng(61);
    std::uniform_real_distribution<double> u(0.05, 0.99);
    for (int trial = 0; trial < 60; ++trial) {
        const auto d_out = uniform_int(rng, 1, 6), d_in = uniform_int(rng, 1, 6);
        const auto model = kfac_model({{random_psd(rng, d_in), random_psd(rng, d_out)}});
        const auto cache = build_projector(model, u(rng));
        const auto& f = std::get<FactoredProjector>(cache.layers[0].op);
        const Matrix p = explicit_projector(f);
        const Matrix q = random_matrix(rng, d_out, d_in);
        const Matrix fast = project_kron(cache, 0, q);
        const Vector slow = p * linalg::vec(q);
        REQUIRE((linalg::vec(fast) - slow).norm() <= 1e-10 * std::max(1.0, q.norm()));
        REQUIRE(max_abs(p - p.transpose()) <= 1e-10);
        REQUIRE((p * p - p).norm() <= 1e-9);
    }
}

TEST_CASE("projected gradients avoid the retained directions") {
    Rng rng(62);
    const Matrix a = random_psd(rng, 5), s = random_psd(rng, 3);
    const auto cache = build_projector(kfac_model({{a, s}}), 0.9);
    const auto& f = std::get<FactoredProjector>(cache.layers[0].op);
    const Matrix q = random_matrix(rng, 3, 5);
    const Matrix pq = project_kron(cache, 0, q);
    const Matrix rotated = f.u_out.transpose() * pq * f.u_in;
    for (Eigen::Index i = 0; i < 3; ++i)
        for (Eigen::Index j = 0; j < 5; ++j)
            if (f.mask(i, j) == 0.0) CHECK(std::abs(rotated(i, j)) <= 1e-10);
    CHECK(max_abs(project_kron(cache, 0, pq) - pq) <= 1e-10);
    // The constrained update moves the Kronecker quadratic form less than the raw one.
    const auto quad = [&](const Matrix& d) { return (s * d * a).cwiseProduct(d).sum(); };
    CHECK(quad(pq) <= quad(q) + 1e-12);
}

TEST_CASE("dense projector on a known spectrum") {
    const Matrix m = Vector{{6.0, 3.0, 2.0, 1.0}}.asDiagonal();
    const auto cache = build_projector(gnh_model(m, 2, 2), 0.7);
    const auto r = residual_energy(cache, 0);
    CHECK(r.removed_rank == 2);
    CHECK(r.retained_fraction == doctest::Approx(0.75));
    CHECK(cache.layers[0].lambda_gamma == 2.0);
    const Matrix q = Matrix::Ones(2, 2);
    Matrix expect(2, 2);
    expect << 0, 1, 0, 1;
    CHECK(max_abs(project_dense(cache, 0, q) - expect) <= 1e-12);
}

TEST_CASE("dense projectors are symmetric and idempotent") {
    Rng rng(63);
    std::uniform_real_distribution<double> u(0.05, 0.99);
    for (int trial = 0; trial < 40; ++trial) {
        const auto d_out = uniform_int(rng, 1, 4), d_in = uniform_int(rng, 1, 4);
        const auto cache = build_projector(gnh_model(random_psd(rng, d_out * d_in), d_out, d_in), u(rng));
        const Matrix& p = std::get<DenseProjector>(cache.layers[0].op).p;
        REQUIRE(max_abs(p - p.transpose()) <= 1e-10);
        REQUIRE((p * p - p).norm() <= 1e-9);
    }
}

TEST_CASE("indefinite blocks rank directions by magnitude") {
    const Matrix m = Vector{{-5.0, 1.0, 0.5, 0.1}}.asDiagonal();
    const auto cache = build_projector(CurvatureModel{ExactHessianModel{DenseCurvature{{LayerShape{0, 2, 2}}, m, 1}}}, 0.5);
    const Matrix& p = std::get<DenseProjector>(cache.layers[0].op).p;
    CHECK(std::abs(p(0, 0)) <= 1e-12);
    CHECK(p(1, 1) == doctest::Approx(1.0));
}

TEST_CASE("joint projector spans every tracked layer") {
    Rng rng(64);
    std::vector<LayerShape> shapes{{0, 2, 3}, {1, 1, 3}};
    const Matrix m = random_psd(rng, 9);
    const auto cache = build_projector(CurvatureModel{GnhModel{DenseCurvature{shapes, m, 1}}}, 0.8, {true});
    REQUIRE(cache.joint.has_value());
    CHECK(cache.tracked_layers() == std::vector<std::size_t>{0, 1});
    CHECK(cache.tracks(1));
    LayerGradients g;
    g.blocks = {random_matrix(rng, 2, 3), random_matrix(rng, 1, 3)};
    const auto pg = project(cache, g);
    Vector flat(9);
    flat << linalg::vec(g[0]), linalg::vec(g[1]);
    Vector pflat(9);
    pflat << linalg::vec(pg[0]), linalg::vec(pg[1]);
    CHECK((cache.joint->p * flat - pflat).norm() <= 1e-12);
}

TEST_CASE("zero curvature projects to the identity") {
    const auto net = FeedForwardNet::random({3, 4, 2}, Activation::Relu, 3);
    const auto cache = build_projector(zero_curvature(net), 0.9);
    Rng rng(65);
    const auto g = random_like(rng, net);
    const auto pg = project(cache, g);
    for (std::size_t l = 0; l < net.layer_count(); ++l) {
        CHECK(std::get<FactoredProjector>(cache.layers[l].op).passthrough);
        CHECK(pg[l] == g[l]);
    }
    CHECK(max_lambda_gamma(cache) == 0.0);
}

TEST_CASE("activation covariance kills high-energy input directions") {
    Rng rng(66);
    const Vector x = random_vector(rng, 4);
    const Matrix a = x * x.transpose();
    KfacFactors f;
    f.layers.push_back({0, a, Matrix::Identity(3, 3), 1});
    const auto cache = build_projector(CurvatureModel{ActivationCovModel{f}}, 0.9);
    CHECK(cache.layers[0].removed_rank == 3);
    const Matrix q = random_vector(rng, 3) * x.transpose();
    CHECK(max_abs(project_kron(cache, 0, q)) <= 1e-10);
    // Orthogonal inputs pass through untouched.
    Vector y = random_vector(rng, 4);
    y -= x * (x.dot(y) / x.squaredNorm());
    const Matrix r = random_vector(rng, 3) * y.transpose();
    CHECK(max_abs(project_kron(cache, 0, r) - r) <= 1e-10);
}

TEST_CASE("gamma near zero keeps only the sharpest product") {
    const auto cache = build_projector(kfac_model({{Vector{{3.0, 1.0}}.asDiagonal(), Vector{{2.0, 1.0}}.asDiagonal()}}), 1e-9);
    CHECK(cache.layers[0].removed_rank == 1);
    CHECK(cache.layers[0].lambda_gamma == 3.0);
}

TEST_CASE("larger gamma removes at least as many directions") {
    Rng rng(67);
    for (int trial = 0; trial < 30; ++trial) {
        const auto model = kfac_model({{random_psd(rng, 4), random_psd(rng, 3)}});
        std::size_t prev = 0;
        for (double g : {0.1, 0.5, 0.9, 0.99, 0.999}) {
            const auto cache = build_projector(model, g);
            REQUIRE(cache.layers[0].removed_rank >= prev);
            prev = cache.layers[0].removed_rank;
        }
    }
}

TEST_CASE("untracked layers are zeroed by project") {
    const auto net = FeedForwardNet::random({3, 4, 2}, Activation::Relu, 3);
    const auto cache = build_projector(zero_curvature(net, {1}), 0.9);
    Rng rng(68);
    const auto pg = project(cache, random_like(rng, net));
    CHECK(max_abs(pg[0]) == 0.0);
    CHECK(max_abs(pg[1]) > 0.0);
}

TEST_CASE("projection errors") {
    const auto model = kfac_model({{Matrix::Identity(3, 3), Matrix::Identity(2, 2)}});
    for (double g : {0.0, 1.0, -0.5, 1.5}) {
        try {
            build_projector(model, g);
            FAIL("expected validation error");
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::Validation);
            CHECK(std::string(e.what()).find("gamma") != std::string::npos);
        }
    }
    const auto cache = build_projector(model, 0.5);
    try {
        project_kron(cache, 0, Matrix::Zero(3, 3));
        FAIL("expected dimension error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::Dimension);
    }
    CHECK_THROWS_AS(project_dense(cache, 0, Matrix::Zero(2, 3)), Error);
    CHECK_THROWS_AS(project_kron(cache, 4, Matrix::Zero(2, 3)), Error);
    CHECK_THROWS_AS(residual_energy(cache, 4), Error);
}

}
