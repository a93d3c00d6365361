#pragma once

#include <Eigen/Dense>
#include <complex>
#include <stdexcept>
#include <string>
#include <vector>

#include "passopt/geometry.hpp"

namespace passopt {

using cd = std::complex<double>;

// Line-of-sight channel seen by a user from one antenna:
// eta * exp(-i * kappa * d) / d.
inline cd free_space_channel(const PhysConstants& pc, const Vec3& user, const Vec3& pa) {
    const double d = distance(user, pa);
    if (d < 1e-9) throw std::domain_error("free_space_channel: zero propagation distance");
    const double phase = -pc.kappa() * d;
    return pc.eta() / d * cd(std::cos(phase), std::sin(phase));
}

// Feed-to-antenna response inside one waveguide for an antenna at offset x:
// equal power split over the L antennas plus the guided-phase delay.
inline cd in_waveguide_response(const PhysConstants& pc, double x, int pas_per_guide) {
    if (pas_per_guide < 1) throw std::invalid_argument("in_waveguide_response: need at least one antenna");
    if (x < 0.0) throw std::domain_error("in_waveguide_response: negative offset");
    const double phase = -2.0 * pi * x / pc.lambda_g();
    return 1.0 / std::sqrt(static_cast<double>(pas_per_guide)) * cd(std::cos(phase), std::sin(phase));
}

// Block-diagonal M x N matrix mapping per-guide feed signals to the M antennas.
// Column n holds the in-waveguide responses of guide n's antennas.
inline Eigen::MatrixXcd waveguide_matrix(const PhysConstants& pc, const WaveguideLayout& g,
                                         const PinchingConfig& X) {
    const int L = g.pas_per_guide;
    const int N = g.n_guides;
    Eigen::MatrixXcd G = Eigen::MatrixXcd::Zero(L * N, N);
    for (int n = 0; n < N; ++n)
        for (int l = 0; l < L; ++l)
            G(n * L + l, n) = in_waveguide_response(pc, X.at(l, n), L);
    return G;
}

// Row of line-of-sight channels from every antenna to one user, ordered to
// match waveguide_matrix rows (guide-major).
inline Eigen::RowVectorXcd channel_row(const PhysConstants& pc, const WaveguideLayout& g,
                                       const PinchingConfig& X, const Vec3& user) {
    const int L = g.pas_per_guide;
    const int N = g.n_guides;
    Eigen::RowVectorXcd h(L * N);
    for (int n = 0; n < N; ++n)
        for (int l = 0; l < L; ++l)
            h(n * L + l) = free_space_channel(pc, user, g.pa_position(n, X.at(l, n)));
    return h;
}

// Effective per-guide channel of one user: row (1 x N) combining free-space
// propagation and the in-waveguide response of every antenna on each guide.
inline Eigen::RowVectorXcd effective_row(const PhysConstants& pc, const WaveguideLayout& g,
                                         const PinchingConfig& X, const Vec3& user) {
    const int L = g.pas_per_guide;
    const int N = g.n_guides;
    Eigen::RowVectorXcd u = Eigen::RowVectorXcd::Zero(N);
    for (int n = 0; n < N; ++n) {
        cd acc(0.0, 0.0);
        for (int l = 0; l < L; ++l) {
            acc += free_space_channel(pc, user, g.pa_position(n, X.at(l, n))) *
                   in_waveguide_response(pc, X.at(l, n), L);
        }
        u(n) = acc;
    }
    return u;
}

// Stacked effective channels, one row per user in (q, k) order: (Q*K) x N.
inline Eigen::MatrixXcd effective_channel(const Scenario& sc, const PinchingConfig& X) {
    const int total = sc.users.total_users();
    Eigen::MatrixXcd U(total, sc.guides.n_guides);
    for (int r = 0; r < total; ++r)
        U.row(r) = effective_row(sc.consts, sc.guides, X, sc.users.pos[r]);
    return U;
}

struct PositionViolation {
    enum class Kind { lower_bound, upper_bound, spacing };
    Kind kind;
    int guide;
    int slot;       // antenna index within the guide (for spacing: the upper one)
    double amount;  // positive violation magnitude, m
};

struct PositionReport {
    std::vector<PositionViolation> violations;
    double worst = 0.0;  // largest violation magnitude, m

    bool ok() const { return violations.empty(); }
};

// Checks bounds 0 <= x <= x_max and per-guide spacing >= min_spacing.
// `tol` absorbs floating-point slack from projections that place antennas
// exactly on a bound.
inline PositionReport validate_positions(const WaveguideLayout& g, const PinchingConfig& X,
                                         double tol = 1e-9) {
    PositionReport rep;
    auto add = [&](PositionViolation::Kind kind, int n, int l, double amount) {
        if (amount <= tol) return;
        rep.violations.push_back({kind, n, l, amount});
        rep.worst = std::max(rep.worst, amount);
    };
    for (int n = 0; n < X.guides(); ++n) {
        for (int l = 0; l < X.per_guide(); ++l) {
            add(PositionViolation::Kind::lower_bound, n, l, -X.at(l, n));
            add(PositionViolation::Kind::upper_bound, n, l, X.at(l, n) - g.x_max);
            if (l > 0)
                add(PositionViolation::Kind::spacing, n, l,
                    g.min_spacing - (X.at(l, n) - X.at(l - 1, n)));
        }
    }
    return rep;
}

}  // namespace passopt
