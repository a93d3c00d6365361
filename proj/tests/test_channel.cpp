#include <catch2/catch_amalgamated.hpp>

#include <complex>

#include "passopt/channel.hpp"
#include "passopt/rng.hpp"

using namespace passopt;
using Catch::Approx;

namespace {

WaveguideLayout default_layout() {
    WaveguideLayout g;
    g.n_guides = 4;
    g.pas_per_guide = 4;
    g.x_max = 30.0;
    g.d0y = 3.0;
    g.height = 10.0;
    g.min_spacing = 0.1;
    return g;
}

Scenario default_scenario() {
    Scenario sc;
    sc.guides = default_layout();
    sc.users.n_clusters = 4;
    sc.users.users_per_cluster = 2;
    sc.users.pos.resize(8);
    Rng rng(7);
    for (auto& p : sc.users.pos) p = {rng.uniform(0.0, 30.0), rng.uniform(0.0, 9.0), 0.0};
    return sc;
}

}  // namespace

TEST_CASE("path-loss scale follows c / (4 pi f_c)") {
    PhysConstants pc;
    CHECK(pc.eta() == Approx(pc.c / (4.0 * pi * pc.f_c)).epsilon(1e-14));
    CHECK(pc.lambda() == Approx(pc.c / pc.f_c).epsilon(1e-14));
    CHECK(pc.lambda_g() == Approx(pc.lambda() / pc.n_eff).epsilon(1e-14));
    CHECK(pc.kappa() == Approx(2.0 * pi * pc.f_c / pc.c).epsilon(1e-14));
}

TEST_CASE("free-space channel directly beneath an antenna") {
    PhysConstants pc;
    const Vec3 user{5.0, 3.0, 0.0};
    const Vec3 pa{5.0, 3.0, 10.0};
    const cd h = free_space_channel(pc, user, pa);
    CHECK(std::abs(h) == Approx(pc.eta() / 10.0).epsilon(1e-12));
    const double want_phase = std::remainder(-pc.kappa() * 10.0, 2.0 * pi);
    CHECK(std::remainder(std::arg(h) - want_phase, 2.0 * pi) == Approx(0.0).margin(1e-9));
}

TEST_CASE("free-space magnitude halves when distance doubles") {
    PhysConstants pc;
    Rng rng(11);
    for (int trial = 0; trial < 1000; ++trial) {
        const Vec3 user{rng.uniform(0.0, 30.0), rng.uniform(0.0, 9.0), 0.0};
        const double dx = rng.uniform(-10.0, 10.0);
        const double dy = rng.uniform(-5.0, 5.0);
        const Vec3 pa{user.x + dx, user.y + dy, 10.0};
        const Vec3 far{user.x + 2.0 * dx, user.y + 2.0 * dy, user.z + 2.0 * (pa.z - user.z)};
        const double ratio = std::abs(free_space_channel(pc, user, pa)) /
                             std::abs(free_space_channel(pc, user, far));
        REQUIRE(ratio == Approx(2.0).epsilon(1e-9));
    }
}

TEST_CASE("free-space channel rejects zero distance") {
    PhysConstants pc;
    CHECK_THROWS_AS(free_space_channel(pc, {1.0, 2.0, 3.0}, {1.0, 2.0, 3.0}), std::domain_error);
}

TEST_CASE("in-waveguide response at reference offsets") {
    PhysConstants pc;
    const int L = 4;
    const double amp = 1.0 / std::sqrt(4.0);
    const cd g0 = in_waveguide_response(pc, 0.0, L);
    CHECK(g0.real() == Approx(amp).epsilon(1e-12));
    CHECK(g0.imag() == Approx(0.0).margin(1e-12));

    // One guided wavelength wraps the phase completely.
    const cd g1 = in_waveguide_response(pc, pc.lambda_g(), L);
    CHECK(g1.real() == Approx(amp).epsilon(1e-9));
    CHECK(g1.imag() == Approx(0.0).margin(1e-9));

    const cd ghalf = in_waveguide_response(pc, pc.lambda_g() / 2.0, L);
    CHECK(ghalf.real() == Approx(-amp).epsilon(1e-9));
    CHECK(ghalf.imag() == Approx(0.0).margin(1e-9));

    CHECK_THROWS_AS(in_waveguide_response(pc, -0.1, L), std::domain_error);
    CHECK_THROWS_AS(in_waveguide_response(pc, 1.0, 0), std::invalid_argument);
}

TEST_CASE("feed matrix is block diagonal with unit column norms") {
    PhysConstants pc;
    auto g = default_layout();
    g.n_guides = 2;
    g.pas_per_guide = 2;
    Eigen::MatrixXd xm(2, 2);
    xm << 1.0, 2.0, 3.0, 4.0;
    PinchingConfig X(xm);
    const Eigen::MatrixXcd G = waveguide_matrix(pc, g, X);
    REQUIRE(G.rows() == 4);
    REQUIRE(G.cols() == 2);
    // off-block entries vanish
    CHECK(std::abs(G(0, 1)) == 0.0);
    CHECK(std::abs(G(1, 1)) == 0.0);
    CHECK(std::abs(G(2, 0)) == 0.0);
    CHECK(std::abs(G(3, 0)) == 0.0);
    for (int n = 0; n < 2; ++n) CHECK(G.col(n).norm() == Approx(1.0).epsilon(1e-12));
}

TEST_CASE("effective row for a single antenna per guide") {
    PhysConstants pc;
    auto g = default_layout();
    g.n_guides = 1;
    g.pas_per_guide = 1;
    Eigen::MatrixXd xm(1, 1);
    xm << 12.0;
    PinchingConfig X(xm);
    const Vec3 user{10.0, 0.0, 0.0};
    const auto u = effective_row(pc, g, X, user);
    const cd want = free_space_channel(pc, user, g.pa_position(0, 12.0)) *
                    in_waveguide_response(pc, 12.0, 1);
    CHECK(std::abs(u(0) - want) < 1e-15);
}

TEST_CASE("effective channel matches the brute-force double loop") {
    auto sc = default_scenario();
    Rng rng(23);
    for (int trial = 0; trial < 20; ++trial) {
        Eigen::MatrixXd xm(sc.guides.pas_per_guide, sc.guides.n_guides);
        for (int l = 0; l < xm.rows(); ++l)
            for (int n = 0; n < xm.cols(); ++n) xm(l, n) = rng.uniform(0.0, sc.guides.x_max);
        PinchingConfig X(xm);
        const Eigen::MatrixXcd U = effective_channel(sc, X);
        // independent route: full channel row times full feed matrix
        const Eigen::MatrixXcd G = waveguide_matrix(sc.consts, sc.guides, X);
        for (int r = 0; r < sc.users.total_users(); ++r) {
            const Eigen::RowVectorXcd via_matrix =
                channel_row(sc.consts, sc.guides, X, sc.users.pos[r]) * G;
            REQUIRE((U.row(r) - via_matrix).norm() < 1e-12 * (1.0 + via_matrix.norm()));
        }
    }
}

TEST_CASE("effective gain decays monotonically with lateral offset") {
    PhysConstants pc;
    auto g = default_layout();
    g.n_guides = 1;
    g.pas_per_guide = 1;
    Eigen::MatrixXd xm(1, 1);
    xm << 15.0;
    PinchingConfig X(xm);
    double prev = 1e300;
    for (double off = 0.0; off <= 10.0; off += 0.5) {
        const Vec3 user{15.0 + off, 0.0, 0.0};
        const double gain = effective_row(pc, g, X, user).norm();
        REQUIRE(gain < prev);
        prev = gain;
    }
}

TEST_CASE("position validation reports bound and spacing violations") {
    auto g = default_layout();
    g.min_spacing = 0.5;

    Eigen::MatrixXd ok(2, 1);
    ok << 1.0, 2.0;
    CHECK(validate_positions(g, PinchingConfig(ok)).ok());

    Eigen::MatrixXd tight(2, 1);
    tight << 1.0, 1.25;  // spacing = min_spacing / 2
    auto rep = validate_positions(g, PinchingConfig(tight));
    REQUIRE(rep.violations.size() == 1);
    CHECK(rep.violations[0].kind == PositionViolation::Kind::spacing);
    CHECK(rep.violations[0].amount == Approx(0.25).epsilon(1e-12));

    Eigen::MatrixXd outside(2, 1);
    outside << -1.0, 31.0;
    rep = validate_positions(g, PinchingConfig(outside));
    REQUIRE(rep.violations.size() == 2);
    CHECK(rep.worst == Approx(1.0).epsilon(1e-12));
}

TEST_CASE("pinching config sorts its columns") {
    Eigen::MatrixXd xm(3, 1);
    xm << 5.0, 1.0, 3.0;
    PinchingConfig X(xm);
    CHECK(X.at(0, 0) == 1.0);
    CHECK(X.at(1, 0) == 3.0);
    CHECK(X.at(2, 0) == 5.0);
}

TEST_CASE("effective gain is invariant under a shared x translation when phases rewrap") {
    // Shifting user and antenna together by a full guided wavelength leaves
    // the free-space part identical and rotates only the guided phase.
    PhysConstants pc;
    auto g = default_layout();
    g.n_guides = 1;
    g.pas_per_guide = 2;
    const double shift = pc.lambda_g();
    Eigen::MatrixXd xa(2, 1), xb(2, 1);
    xa << 10.0, 10.4;
    xb << 10.0 + shift, 10.4 + shift;
    const Vec3 ua{9.0, 0.0, 0.0};
    const Vec3 ub{9.0 + shift, 0.0, 0.0};
    const double ga = effective_row(pc, g, PinchingConfig(xa), ua).norm();
    const double gb = effective_row(pc, g, PinchingConfig(xb), ub).norm();
    CHECK(ga == Approx(gb).epsilon(1e-9));
}
