#include <doctest.h>

#include "crispe/projection.hpp"
#include "crispe/verify.hpp"

using namespace crispe;

TEST_SUITE("verify") {

TEST_CASE("the full report passes at default tolerances") {
    const auto report = verify();
    CHECK(report.passed());
    CHECK(report.failures() == 0);
    CHECK(report.checks.size() >= 20);
    const auto text = report.format();
    CHECK(text.find("FAIL") == std::string::npos);
    CHECK(text.find("kron projector equivalence") != std::string::npos);
}

TEST_CASE("a sign-flipped projector is caught") {
    const KronApply flipped = [](const Matrix& u_out, const Matrix& u_in, const Matrix& mask, const Matrix& q) {
        return Matrix(-rotate_mask_rotate(u_out, u_in, mask, q));
    };
    CHECK_FALSE(check_kron_equivalence(7, 20, 1e-9, flipped).passed);
    CHECK(check_kron_equivalence(7, 20, 1e-9).passed);

    VerifyOptions opts;
    opts.kron_apply = flipped;
    const auto report = verify(opts);
    CHECK_FALSE(report.passed());
    CHECK(report.format().find("FAIL kron projector equivalence") != std::string::npos);
}

TEST_CASE("an impossible tolerance fails numerical checks") {
    VerifyOptions opts;
    opts.tolerance = 1e-300;
    const auto report = verify(opts);
    CHECK_FALSE(report.passed());
    CHECK(report.failures() >= 3);
}

TEST_CASE("individual checks") {
    CHECK(check_kfac_single_sample(3, 1e-10).passed);
    CHECK(check_gradient_fd(3, 5, 1e-5).passed);
    CHECK(check_nullspace_containment(3, 5, 1e-8).passed);
    CHECK(check_constraint_bound(3, 10, 0.9, 1e-9).passed);
    const auto r = check_constraint_bound(3, 10, 0.9, 1e-9);
    CHECK(r.observed <= r.upper);
}

}
