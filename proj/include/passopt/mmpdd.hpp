#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "passopt/channel.hpp"
#include "passopt/geometry.hpp"
#include "passopt/metrics.hpp"
#include "passopt/psozf.hpp"

namespace passopt {

struct MmPddConfig {
    double rho0 = 1e-4;              // initial penalty weight
    double residual_target0 = 1e-2;  // first dual-update threshold
    int max_outer = 200;
    int inner_sweeps = 3;  // block-update sweeps per outer iteration
    double tol = 1e-6;     // terminal consistency violation
    double rho_shrink = 0.6;
    double rho_floor = 1e-12;
    double trust_frac = 0.25;  // position step box, as a fraction of the guided wavelength
    double dpu_floor = 1e-3;   // smallest admissible auxiliary distance
    double cond_limit = 1e14;  // beam-solve conditioning above this flags failure
    bool collect_block_trace = false;
    std::vector<std::string> placements = {"uniform"};  // of "uniform", "project_users", "stacked"
};

// Solver state. All per-user tables are kept in decode order (weakest member
// first); `user_of[q][k]` maps a decode slot back to the cluster member it
// currently holds so floors and outputs follow user identity.
struct MmPddState {
    std::vector<std::vector<int>> user_of;
    Eigen::MatrixXd gamma;  // Q x K SINR floors, decode order

    Eigen::MatrixXcd W;     // N x Q beams
    Eigen::MatrixXd alpha;  // Q x K shares, decode order
    Eigen::MatrixXd X;      // L x N antenna offsets

    Eigen::MatrixXcd u;     // QK x N auxiliary effective rows
    Eigen::MatrixXcd beta;  // QK x Q auxiliary beam landings

    // Per user and antenna (column m = guide * L + slot): auxiliary phase,
    // auxiliary distance, and the duals of their consistency constraints.
    Eigen::MatrixXd theta, dpu, lam_u, lam_theta;
    Eigen::MatrixXcd lam_beta;  // kept at zero; the runner never updates it

    double rho = 1e-4;
    double target = 1e-2;
    double dpu_floor = 1e-3;
    double trust_frac = 0.25;

    // The auxiliary rows, landings and noise are kept divided by this scale
    // (the RMS effective-channel entry at the start) so the penalty weights
    // see O(1) quantities regardless of the physical gain level. Decode
    // SINRs are invariant to it, and beams stay in physical units.
    double u_scale = 1.0;

    double scaled_noise(double noise_w) const { return noise_w / (u_scale * u_scale); }
};

namespace mmdetail {

inline int aux_col(int n, int l, int L) { return n * L + l; }

inline Vec3 slot_user(const Scenario& sc, const MmPddState& st, int q, int k) {
    const int K = sc.users.users_per_cluster;
    return sc.users.pos[q * K + st.user_of[q][k]];
}

// Effective rows of every decode slot for an arbitrary placement.
inline Eigen::MatrixXcd physical_rows(const Scenario& sc, const MmPddState& st,
                                      const Eigen::MatrixXd& X) {
    const int Q = sc.users.n_clusters;
    const int K = sc.users.users_per_cluster;
    const PinchingConfig pc(X);
    Eigen::MatrixXcd U(Q * K, sc.guides.n_guides);
    for (int q = 0; q < Q; ++q)
        for (int k = 0; k < K; ++k)
            U.row(q * K + k) = effective_row(sc.consts, sc.guides, pc, slot_user(sc, st, q, k));
    return U / st.u_scale;
}

// One antenna's contribution to one user's effective row in the auxiliary
// phase-distance parameterization, in the state's normalized units.
inline cd aux_term(const PhysConstants& pc, int L, double scale, double theta, double dpu) {
    return pc.eta() / (std::sqrt(static_cast<double>(L)) * dpu * scale) *
           cd(std::cos(theta), -std::sin(theta));
}

inline Eigen::MatrixXcd aux_rows(const Scenario& sc, const MmPddState& st) {
    const int Q = sc.users.n_clusters;
    const int K = sc.users.users_per_cluster;
    const int L = sc.guides.pas_per_guide;
    const int N = sc.guides.n_guides;
    Eigen::MatrixXcd U = Eigen::MatrixXcd::Zero(Q * K, N);
    for (int r = 0; r < Q * K; ++r)
        for (int n = 0; n < N; ++n)
            for (int l = 0; l < L; ++l)
                U(r, n) += aux_term(sc.consts, L, st.u_scale, st.theta(r, aux_col(n, l, L)),
                                    st.dpu(r, aux_col(n, l, L)));
    return U;
}

}  // namespace mmdetail

// ---- transmit-beam block ----------------------------------------------

// Block objective: beam power plus the penalized landing residuals.
inline double al_beam_objective(const Eigen::MatrixXcd& U, const Eigen::MatrixXcd& W,
                                const Eigen::MatrixXcd& beta, const Eigen::MatrixXcd& lam_beta,
                                double rho) {
    return W.squaredNorm() + (U * W - beta + rho * lam_beta).squaredNorm() / (2.0 * rho);
}

inline Eigen::MatrixXcd al_beam_gradient(const Eigen::MatrixXcd& U, const Eigen::MatrixXcd& W,
                                         const Eigen::MatrixXcd& beta,
                                         const Eigen::MatrixXcd& lam_beta, double rho) {
    return 2.0 * W + U.adjoint() * (U * W - beta + rho * lam_beta) / rho;
}

inline double beam_lipschitz(const Eigen::MatrixXcd& U, double rho) {
    const double smax = U.jacobiSvd().singularValues()(0);
    return 2.0 + smax * smax / rho;
}

// Exact block minimizer: (2 rho I + U^H U) w_q = U^H (beta_q - rho lam_q).
// Reports the conditioning of the normal matrix when asked.
inline Eigen::MatrixXcd solve_beam(const Eigen::MatrixXcd& U, const Eigen::MatrixXcd& beta,
                                   const Eigen::MatrixXcd& lam_beta, double rho,
                                   double* cond = nullptr) {
    const int N = static_cast<int>(U.cols());
    const Eigen::MatrixXcd A =
        2.0 * rho * Eigen::MatrixXcd::Identity(N, N) + U.adjoint() * U;
    if (cond) {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(A);
        const double lo = es.eigenvalues().minCoeff();
        const double hi = es.eigenvalues().maxCoeff();
        *cond = lo > 0.0 ? hi / lo : std::numeric_limits<double>::infinity();
    }
    return A.ldlt().solve(U.adjoint() * (beta - rho * lam_beta));
}

// ---- phase-distance block ----------------------------------------------

// Auxiliary distance slaved to the phase so the phase-consistency residual
// vanishes whenever the implied distance is physical.
inline double slaved_dpu(const PhysConstants& pc, double theta, double x, double floor_m) {
    return std::max(theta / pc.kappa() - pc.n_eff * x, floor_m);
}

// Objective of one (user, antenna) scalar phase: its beam-landing residuals
// plus its two penalized consistency terms.
namespace mmdetail {

struct PhaseCell {
    int row, n, l;
    double d_phys;  // distance of this antenna to this user at the current X
};

inline double phase_cell_objective(const Scenario& sc, const MmPddState& st, const PhaseCell& c,
                                   double theta, double dpu,
                                   const Eigen::RowVectorXcd& resid_base) {
    const int m = aux_col(c.n, c.l, sc.guides.pas_per_guide);
    const double bu = dpu - c.d_phys;
    const double btheta =
        theta - sc.consts.kappa() * (dpu + sc.consts.n_eff * st.X(c.l, c.n));
    double fit = 0.0;
    const cd psi = aux_term(sc.consts, sc.guides.pas_per_guide, st.u_scale, theta, dpu);
    for (int j = 0; j < st.W.cols(); ++j) fit += std::norm(resid_base(j) + psi * st.W(c.n, j));
    const double pu = bu + st.rho * st.lam_u(c.row, m);
    const double pt = btheta + st.rho * st.lam_theta(c.row, m);
    return fit + (pu * pu + pt * pt) / (2.0 * st.rho);
}

}  // namespace mmdetail

struct BlockTrace {
    std::string label;
    double before;
    double after;
};

// Gauss-Seidel pass of damped Newton steps over every (user, antenna) phase,
// with the distance slaved to the phase. Returns the block objective before
// and after.
inline BlockTrace phase_distance_sweep(const Scenario& sc, MmPddState& st) {
    const int Q = sc.users.n_clusters;
    const int K = sc.users.users_per_cluster;
    const int L = sc.guides.pas_per_guide;
    const int N = sc.guides.n_guides;
    const PhysConstants& pc = sc.consts;
    const double kappa = pc.kappa();

    Eigen::MatrixXcd aux = mmdetail::aux_rows(sc, st);
    double before = 0.0, after = 0.0;

    for (int q = 0; q < Q; ++q) {
        for (int k = 0; k < K; ++k) {
            const int r = q * K + k;
            const Vec3 user = mmdetail::slot_user(sc, st, q, k);
            // Residuals of this user's landings under the auxiliary rows.
            Eigen::RowVectorXcd resid = aux.row(r) * st.W - st.beta.row(r);

            for (int n = 0; n < N; ++n) {
                for (int l = 0; l < L; ++l) {
                    const int m = mmdetail::aux_col(n, l, L);
                    const double x = st.X(l, n);
                    const double d_phys = distance(user, sc.guides.pa_position(n, x));
                    const mmdetail::PhaseCell cell{r, n, l, d_phys};

                    const double theta0 = st.theta(r, m);
                    const double dpu0 = st.dpu(r, m);
                    const cd psi0 = mmdetail::aux_term(pc, L, st.u_scale, theta0, dpu0);
                    const Eigen::RowVectorXcd base = resid - psi0 * st.W.row(n);
                    const double f0 =
                        mmdetail::phase_cell_objective(sc, st, cell, theta0, dpu0, base);
                    before += f0;

                    // Newton direction from the residual linearization plus
                    // the active consistency term.
                    const bool floored = theta0 / kappa - pc.n_eff * x <= st.dpu_floor;
                    const cd dpsi = floored ? cd(0.0, -1.0) * psi0
                                            : psi0 * cd(-1.0 / (kappa * dpu0), -1.0);
                    double g = 0.0, h = 0.0;
                    for (int j = 0; j < st.W.cols(); ++j) {
                        const cd wj = st.W(n, j);
                        g += 2.0 * std::real(std::conj(resid(j)) * wj * dpsi);
                        h += 2.0 * std::norm(wj * dpsi);
                    }
                    if (floored) {
                        const double bt = theta0 - kappa * (dpu0 + pc.n_eff * x);
                        g += (bt + st.rho * st.lam_theta(r, m)) / st.rho;
                        h += 1.0 / st.rho;
                    } else {
                        const double bu = dpu0 - d_phys;
                        g += (bu + st.rho * st.lam_u(r, m)) / (st.rho * kappa);
                        h += 1.0 / (st.rho * kappa * kappa);
                    }
                    h = std::max(h, 1e-30);
                    const double step = -g / h;

                    double theta_best = theta0, dpu_best = dpu0, f_best = f0;
                    for (double tau : {1.0, 0.5, 0.25, 0.125, 0.0625}) {
                        const double theta_try = theta0 + tau * step;
                        const double dpu_try = slaved_dpu(pc, theta_try, x, st.dpu_floor);
                        const double f_try = mmdetail::phase_cell_objective(
                            sc, st, cell, theta_try, dpu_try, base);
                        if (f_try < f_best) {
                            theta_best = theta_try;
                            dpu_best = dpu_try;
                            f_best = f_try;
                            break;
                        }
                    }

                    st.theta(r, m) = theta_best;
                    st.dpu(r, m) = dpu_best;
                    const cd psi_new = mmdetail::aux_term(pc, L, st.u_scale, theta_best, dpu_best);
                    resid = base + psi_new * st.W.row(n);
                    aux(r, n) += psi_new - psi0;
                    after += f_best;
                }
            }
        }
    }
    return {"phase", before, after};
}

// ---- position block -----------------------------------------------------

// Objective of the placement subproblem: beam-landing residuals under the
// physical channel plus the penalized consistency terms of every antenna.
inline double position_objective(const Scenario& sc, const MmPddState& st,
                                 const Eigen::MatrixXd& X) {
    const int Q = sc.users.n_clusters;
    const int K = sc.users.users_per_cluster;
    const int L = sc.guides.pas_per_guide;
    const int N = sc.guides.n_guides;
    const PhysConstants& pc = sc.consts;
    const double kappa = pc.kappa();

    const Eigen::MatrixXcd U = mmdetail::physical_rows(sc, st, X);
    double total = (U * st.W - st.beta).squaredNorm();
    for (int q = 0; q < Q; ++q) {
        for (int k = 0; k < K; ++k) {
            const int r = q * K + k;
            const Vec3 user = mmdetail::slot_user(sc, st, q, k);
            for (int n = 0; n < N; ++n) {
                for (int l = 0; l < L; ++l) {
                    const int m = mmdetail::aux_col(n, l, L);
                    const double d = distance(user, sc.guides.pa_position(n, X(l, n)));
                    const double bu = st.dpu(r, m) - d + st.rho * st.lam_u(r, m);
                    const double bt = st.theta(r, m) -
                                      kappa * (st.dpu(r, m) + pc.n_eff * X(l, n)) +
                                      st.rho * st.lam_theta(r, m);
                    total += (bu * bu + bt * bt) / (2.0 * st.rho);
                }
            }
        }
    }
    return total;
}

namespace mmdetail {

// d/dx of one antenna's physical contribution to a user's effective row, in
// the state's normalized units.
inline cd physical_term_derivative(const PhysConstants& pc, int L, double scale,
                                   const Vec3& user, const Vec3& pa, double* d_out,
                                   double* dprime_out) {
    const double d = distance(user, pa);
    const double dprime = (pa.x - user.x) / d;
    const cd c =
        free_space_channel(pc, user, pa) * in_waveguide_response(pc, pa.x, L) / scale;
    if (d_out) *d_out = d;
    if (dprime_out) *dprime_out = dprime;
    return c * cd(-dprime / d, -pc.kappa() * (dprime + pc.n_eff));
}

}  // namespace mmdetail

// Exact gradient of the placement objective at st.X, ordered by antenna
// column (guide * L + slot).
inline Eigen::VectorXd position_gradient(const Scenario& sc, const MmPddState& st) {
    const int Q = sc.users.n_clusters;
    const int K = sc.users.users_per_cluster;
    const int L = sc.guides.pas_per_guide;
    const int N = sc.guides.n_guides;
    const PhysConstants& pc = sc.consts;
    const double kappa = pc.kappa();

    const Eigen::MatrixXcd U = mmdetail::physical_rows(sc, st, st.X);
    const Eigen::MatrixXcd R = U * st.W - st.beta;  // QK x Q residuals
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(L * N);

    for (int q = 0; q < Q; ++q) {
        for (int k = 0; k < K; ++k) {
            const int r = q * K + k;
            const Vec3 user = mmdetail::slot_user(sc, st, q, k);
            for (int n = 0; n < N; ++n) {
                for (int l = 0; l < L; ++l) {
                    const int m = mmdetail::aux_col(n, l, L);
                    const Vec3 pa = sc.guides.pa_position(n, st.X(l, n));
                    double d = 0.0, dprime = 0.0;
                    const cd dc = mmdetail::physical_term_derivative(pc, L, st.u_scale, user,
                                                                     pa, &d, &dprime);
                    double g = 0.0;
                    for (int j = 0; j < Q; ++j)
                        g += 2.0 * std::real(std::conj(R(r, j)) * st.W(n, j) * dc);
                    const double bu = st.dpu(r, m) - d + st.rho * st.lam_u(r, m);
                    const double bt = st.theta(r, m) -
                                      kappa * (st.dpu(r, m) + pc.n_eff * st.X(l, n)) +
                                      st.rho * st.lam_theta(r, m);
                    g += bu * (-dprime) / st.rho;
                    g += bt * (-kappa * pc.n_eff) / st.rho;
                    grad(m) += g;
                }
            }
        }
    }
    return grad;
}

// Curvature model of one guide's placement subproblem: Gauss-Newton block of
// the landing residuals plus the diagonal second derivatives of the penalty
// terms, floored to positive definite.
inline Eigen::MatrixXd position_curvature(const Scenario& sc, const MmPddState& st, int guide) {
    const int Q = sc.users.n_clusters;
    const int K = sc.users.users_per_cluster;
    const int L = sc.guides.pas_per_guide;
    const PhysConstants& pc = sc.consts;
    const double kappa = pc.kappa();

    Eigen::MatrixXd H = Eigen::MatrixXd::Zero(L, L);
    for (int q = 0; q < Q; ++q) {
        for (int k = 0; k < K; ++k) {
            const int r = q * K + k;
            const Vec3 user = mmdetail::slot_user(sc, st, q, k);
            Eigen::VectorXcd dc(L);
            Eigen::VectorXd d(L), dprime(L);
            for (int l = 0; l < L; ++l) {
                const Vec3 pa = sc.guides.pa_position(guide, st.X(l, guide));
                dc(l) = mmdetail::physical_term_derivative(pc, L, st.u_scale, user, pa,
                                                           &d(l), &dprime(l));
            }
            double wsq = 0.0;
            for (int j = 0; j < Q; ++j) wsq += std::norm(st.W(guide, j));
            for (int l = 0; l < L; ++l)
                for (int l2 = 0; l2 < L; ++l2)
                    H(l, l2) += 2.0 * wsq * std::real(std::conj(dc(l)) * dc(l2));
            for (int l = 0; l < L; ++l) {
                const int m = mmdetail::aux_col(guide, l, L);
                const double bu = st.dpu(r, m) - d(l) + st.rho * st.lam_u(r, m);
                const double curv_d = (d(l) * d(l) - (st.X(l, guide) - user.x) *
                                                         (st.X(l, guide) - user.x)) /
                                      (d(l) * d(l) * d(l));
                H(l, l) += (dprime(l) * dprime(l) - bu * curv_d) / st.rho;
                H(l, l) += kappa * kappa * pc.n_eff * pc.n_eff / st.rho;
            }
        }
    }

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(H);
    const double floor = std::max(1e-10, 1e-12 * es.eigenvalues().cwiseAbs().maxCoeff());
    Eigen::VectorXd ev = es.eigenvalues().cwiseMax(floor);
    return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

// Primal active-set solve of: min 0.5 d'Hd + g'd  subject to  A d <= b,
// starting from the feasible point d = 0 (requires b >= 0 and H positive
// definite).
inline Eigen::VectorXd solve_box_qp(const Eigen::MatrixXd& H, const Eigen::VectorXd& g,
                                    const Eigen::MatrixXd& A, const Eigen::VectorXd& b) {
    const int L = static_cast<int>(g.size());
    const int m = static_cast<int>(A.rows());
    Eigen::VectorXd d = Eigen::VectorXd::Zero(L);
    std::vector<int> active;
    std::vector<bool> in_active(m, false);

    for (int iter = 0; iter < 20 * (m + 1); ++iter) {
        const int nw = static_cast<int>(active.size());
        Eigen::MatrixXd KKT = Eigen::MatrixXd::Zero(L + nw, L + nw);
        KKT.topLeftCorner(L, L) = H;
        for (int i = 0; i < nw; ++i) {
            KKT.block(L + i, 0, 1, L) = A.row(active[i]);
            KKT.block(0, L + i, L, 1) = A.row(active[i]).transpose();
        }
        Eigen::VectorXd rhs(L + nw);
        rhs.head(L) = -(g + H * d);
        rhs.tail(nw).setZero();
        const Eigen::VectorXd sol = KKT.fullPivLu().solve(rhs);
        if (!sol.allFinite()) return d;
        const Eigen::VectorXd p = sol.head(L);

        if (p.norm() <= 1e-12 * (1.0 + d.norm())) {
            int drop = -1;
            double most_negative = -1e-9;
            for (int i = 0; i < nw; ++i) {
                if (sol(L + i) < most_negative) {
                    most_negative = sol(L + i);
                    drop = i;
                }
            }
            if (drop < 0) return d;
            in_active[active[drop]] = false;
            active.erase(active.begin() + drop);
            continue;
        }

        double tau = 1.0;
        int blocking = -1;
        for (int i = 0; i < m; ++i) {
            if (in_active[i]) continue;
            const double along = A.row(i).dot(p);
            if (along <= 1e-12) continue;
            const double room = (b(i) - A.row(i).dot(d)) / along;
            if (room < tau) {
                tau = std::max(0.0, room);
                blocking = i;
            }
        }
        d += tau * p;
        if (blocking >= 0) {
            active.push_back(blocking);
            in_active[blocking] = true;
        } else if (tau == 1.0 && blocking < 0) {
            // Unblocked full Newton step within the working set; the next
            // round either terminates or drops a constraint.
            continue;
        }
        if (static_cast<int>(active.size()) > L) return d;
    }
    return d;
}

// One pass over the guides: per guide, a trust-boxed constrained Newton step
// from the curvature model, accepted through a backtracking line search on
// the true objective. Returns the objective before and after.
inline BlockTrace position_sweep(const Scenario& sc, MmPddState& st) {
    const int L = sc.guides.pas_per_guide;
    const int N = sc.guides.n_guides;
    const double trust = st.trust_frac * sc.consts.lambda_g();
    const double spacing = sc.guides.min_spacing;

    const double before = position_objective(sc, st, st.X);
    double current = before;

    for (int n = 0; n < N; ++n) {
        const Eigen::VectorXd grad_all = position_gradient(sc, st);
        Eigen::VectorXd g(L);
        for (int l = 0; l < L; ++l) g(l) = grad_all(mmdetail::aux_col(n, l, L));
        const Eigen::MatrixXd H = position_curvature(sc, st, n);

        // Constraints on the step d: bounds and trust box per slot, spacing
        // between neighbours.
        const int rows = 2 * L + (L - 1);
        Eigen::MatrixXd A = Eigen::MatrixXd::Zero(rows, L);
        Eigen::VectorXd b(rows);
        for (int l = 0; l < L; ++l) {
            A(l, l) = 1.0;
            b(l) = std::max(0.0, std::min(sc.guides.x_max - st.X(l, n), trust));
            A(L + l, l) = -1.0;
            b(L + l) = std::max(0.0, std::min(st.X(l, n), trust));
        }
        for (int l = 0; l + 1 < L; ++l) {
            A(2 * L + l, l) = 1.0;
            A(2 * L + l, l + 1) = -1.0;
            b(2 * L + l) = std::max(0.0, st.X(l + 1, n) - st.X(l, n) - spacing);
        }

        const Eigen::VectorXd d = solve_box_qp(H, g, A, b);
        if (d.norm() < 1e-15) continue;

        Eigen::MatrixXd X_try = st.X;
        double tau = 1.0;
        for (int bt = 0; bt < 25; ++bt) {
            // The QP solves the constraints to rounding accuracy only; starts
            // sitting exactly on the box faces can otherwise step to -1e-17.
            for (int l = 0; l < L; ++l)
                X_try(l, n) = std::clamp(st.X(l, n) + tau * d(l), 0.0, sc.guides.x_max);
            const double f_try = position_objective(sc, st, X_try);
            if (f_try < current) {
                st.X = X_try;
                current = f_try;
                break;
            }
            tau *= 0.5;
        }
    }
    return {"position", before, current};
}

// ---- auxiliary-row refit and power step ---------------------------------

// Minimum-norm least-squares refit of every auxiliary row against the
// current beams and landings, then landings snap to the refit rows. Flags
// rank deficiency of the beam matrix.
inline BlockTrace refit_aux_rows(MmPddState& st, bool* rank_deficient = nullptr) {
    const double before = (st.u * st.W - st.beta).squaredNorm();
    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXcd> cod(st.W.transpose());
    if (rank_deficient)
        *rank_deficient = cod.rank() < std::min(st.W.rows(), st.W.cols());
    for (int r = 0; r < st.u.rows(); ++r)
        st.u.row(r) = cod.solve(st.beta.row(r).transpose()).transpose();
    const double after = (st.u * st.W - st.beta).squaredNorm();
    st.beta = st.u * st.W;
    return {"aux-rows", before, after};
}

// Per-cluster share-and-scale step against the physical landings: shares
// from the decode-chain recursion, beam norms set so every floor in the
// cluster is met tightly given the other clusters' current beams.
inline void power_allocation_step(const Scenario& sc, MmPddState& st) {
    const int Q = sc.users.n_clusters;
    const int K = sc.users.users_per_cluster;
    const double noise = st.scaled_noise(sc.noise_w);
    st.beta = mmdetail::physical_rows(sc, st, st.X) * st.W;

    for (int q = 0; q < Q; ++q) {
        Eigen::VectorXd a(K);
        bool degenerate = false;
        for (int k = 0; k < K; ++k) {
            double need = 0.0;
            for (int ko = k; ko < K; ++ko) {
                const int r = q * K + ko;
                const double own = std::norm(st.beta(r, q));
                double inter = 0.0;
                for (int j = 0; j < Q; ++j)
                    if (j != q) inter += std::norm(st.beta(r, j));
                if (own <= 1e-30 * (inter + noise)) {
                    degenerate = true;
                    break;
                }
                need = std::max(need, (inter + noise) / own);
            }
            if (degenerate) break;
            a(k) = st.gamma(q, k) * need;
        }
        if (degenerate) continue;

        const Eigen::VectorXd shares = noma_power_recursion(a, st.gamma.row(q).transpose());
        const double total = shares.sum();
        st.alpha.row(q) = shares.transpose() / total;
        const double scale = std::sqrt(total);
        st.W.col(q) *= scale;
        st.beta.col(q) *= scale;
    }
}

// ---- consistency bookkeeping ---------------------------------------------

// Largest absolute consistency violation across the distance and phase
// constraints of every (user, antenna) pair.
inline double constraint_violation(const Scenario& sc, const MmPddState& st) {
    const int Q = sc.users.n_clusters;
    const int K = sc.users.users_per_cluster;
    const int L = sc.guides.pas_per_guide;
    const int N = sc.guides.n_guides;
    const double kappa = sc.consts.kappa();
    double viol = 0.0;
    for (int q = 0; q < Q; ++q) {
        for (int k = 0; k < K; ++k) {
            const int r = q * K + k;
            const Vec3 user = mmdetail::slot_user(sc, st, q, k);
            for (int n = 0; n < N; ++n) {
                for (int l = 0; l < L; ++l) {
                    const int m = mmdetail::aux_col(n, l, L);
                    const double d = distance(user, sc.guides.pa_position(n, st.X(l, n)));
                    viol = std::max(viol, std::abs(st.dpu(r, m) - d));
                    viol = std::max(
                        viol, std::abs(st.theta(r, m) -
                                       kappa * (st.dpu(r, m) + sc.consts.n_eff * st.X(l, n))));
                }
            }
        }
    }
    return viol;
}

// Dual ascent when the violation has met the running target (which then
// tightens), penalty shrink otherwise.
inline void dual_or_penalty_update(const Scenario& sc, MmPddState& st, const MmPddConfig& cfg,
                                   double viol) {
    const int Q = sc.users.n_clusters;
    const int K = sc.users.users_per_cluster;
    const int L = sc.guides.pas_per_guide;
    const int N = sc.guides.n_guides;
    const double kappa = sc.consts.kappa();
    if (viol <= st.target) {
        for (int q = 0; q < Q; ++q) {
            for (int k = 0; k < K; ++k) {
                const int r = q * K + k;
                const Vec3 user = mmdetail::slot_user(sc, st, q, k);
                for (int n = 0; n < N; ++n) {
                    for (int l = 0; l < L; ++l) {
                        const int m = mmdetail::aux_col(n, l, L);
                        const double d = distance(user, sc.guides.pa_position(n, st.X(l, n)));
                        st.lam_u(r, m) += (st.dpu(r, m) - d) / st.rho;
                        st.lam_theta(r, m) +=
                            (st.theta(r, m) -
                             kappa * (st.dpu(r, m) + sc.consts.n_eff * st.X(l, n))) /
                            st.rho;
                    }
                }
            }
        }
        st.target *= 0.5;
    } else {
        st.rho = std::max(cfg.rho_shrink * st.rho, cfg.rho_floor);
    }
}

// ---- initialization and driver -------------------------------------------

inline Eigen::MatrixXd initial_placement(const Scenario& sc, const std::string& kind) {
    const int L = sc.guides.pas_per_guide;
    const int N = sc.guides.n_guides;
    if (kind == "uniform") return PinchingConfig::uniform(sc.guides).x();
    if (kind == "project_users") {
        Eigen::MatrixXd X(L, N);
        const int total = sc.users.total_users();
        for (int n = 0; n < N; ++n) {
            // Nearest users in the cross-guide direction donate their x.
            std::vector<int> idx(total);
            std::iota(idx.begin(), idx.end(), 0);
            const double gy = sc.guides.guide_y(n);
            std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
                return std::abs(sc.users.pos[a].y - gy) < std::abs(sc.users.pos[b].y - gy);
            });
            Eigen::VectorXd x(L);
            for (int l = 0; l < L; ++l) x(l) = sc.users.pos[idx[l % total]].x;
            std::sort(x.data(), x.data() + L);
            X.col(n) = repair_guide_positions(sc.guides, x);
        }
        return X;
    }
    if (kind == "stacked") {
        // Each guide concentrates its antennas in a tight stack under one user,
        // micro-shifting every element (a fraction of the spacing pitch) so the
        // total propagation phase — feed line plus free space — agrees at that
        // user.  The stack then radiates as one coherent aperture, which is the
        // known-good placement heuristic for power minimization and hands the
        // position refinement a basin worth polishing.  Guides claim distinct
        // users greedily (nearest in the cross-guide direction first) so the
        // apertures spread over the service area instead of piling onto one.
        Eigen::MatrixXd X(L, N);
        const int total = sc.users.total_users();
        const double kappa = sc.consts.kappa();
        const double guided = 2.0 * pi / sc.consts.lambda_g();
        std::vector<char> claimed(static_cast<std::size_t>(total), 0);
        for (int n = 0; n < N; ++n) {
            const double gy = sc.guides.guide_y(n);
            int pick = -1;
            for (int u = 0; u < total; ++u)
                if (!claimed[u] &&
                    (pick < 0 ||
                     std::abs(sc.users.pos[u].y - gy) < std::abs(sc.users.pos[pick].y - gy)))
                    pick = u;
            if (pick < 0)  // more guides than users: reuse the nearest user
                for (int u = 0; u < total; ++u)
                    if (pick < 0 ||
                        std::abs(sc.users.pos[u].y - gy) < std::abs(sc.users.pos[pick].y - gy))
                        pick = u;
            claimed[pick] = 1;
            const Vec3 user = sc.users.pos[pick];
            const double pitch = 2.0 * sc.guides.min_spacing;
            const double half = 0.5 * (L - 1) * pitch;
            const double xc =
                std::clamp(user.x, half, std::max(half, sc.guides.x_max - half));
            const double cross2 = (gy - user.y) * (gy - user.y) +
                                  sc.guides.height * sc.guides.height;
            const auto phase = [&](double x) {
                return kappa * std::sqrt((x - user.x) * (x - user.x) + cross2) + guided * x;
            };
            const auto slope = [&](double x) {
                return kappa * (x - user.x) / std::sqrt((x - user.x) * (x - user.x) + cross2) +
                       guided;
            };
            const double ref = phase(xc);
            Eigen::VectorXd x(L);
            for (int l = 0; l < L; ++l) {
                const double nominal = xc + (l - 0.5 * (L - 1)) * pitch;
                double xl = nominal;
                for (int it = 0; it < 3; ++it)
                    xl -= std::remainder(phase(xl) - ref, 2.0 * pi) / slope(xl);
                // The guided-phase slope bounds the aligning shift well under
                // half a pitch; the clamp keeps ordering and spacing intact.
                x(l) = std::clamp(xl, nominal - 0.45 * sc.guides.min_spacing,
                                  nominal + 0.45 * sc.guides.min_spacing);
            }
            X.col(n) = repair_guide_positions(sc.guides, x);
        }
        return X;
    }
    throw std::invalid_argument("initial_placement: unknown kind " + kind);
}

inline MmPddState init_mm_pdd_state(const Scenario& sc, const QosRequirements& qos,
                                    const Eigen::MatrixXd& X0, const MmPddConfig& cfg) {
    const int Q = sc.users.n_clusters;
    const int K = sc.users.users_per_cluster;
    const int L = sc.guides.pas_per_guide;
    const int N = sc.guides.n_guides;
    const int M = L * N;

    MmPddState st;
    st.X = X0;
    st.rho = cfg.rho0;
    st.target = cfg.residual_target0;
    st.dpu_floor = cfg.dpu_floor;
    st.trust_frac = cfg.trust_frac;

    const Eigen::MatrixXcd U_label = effective_channel(sc, PinchingConfig(X0));
    st.u_scale = std::max(U_label.norm() / std::sqrt(static_cast<double>(U_label.size())),
                          std::numeric_limits<double>::min());
    st.user_of = sic_order(U_label, Q, K);
    st.gamma.resize(Q, K);
    for (int q = 0; q < Q; ++q)
        for (int k = 0; k < K; ++k) st.gamma(q, k) = qos.sinr_min(q, st.user_of[q][k]);

    const ZfSolution zf = zf_solution(sc, PinchingConfig(X0), qos);
    if (zf.zf_ok) {
        st.W = zf.ba.W;
        st.alpha.resize(Q, K);
        for (int q = 0; q < Q; ++q)
            for (int k = 0; k < K; ++k) st.alpha(q, k) = zf.ba.alpha(q, st.user_of[q][k]);
    } else {
        // Matched fallback when the representatives are degenerate.
        Eigen::MatrixXcd reps(Q, N);
        for (int q = 0; q < Q; ++q) reps.row(q) = U_label.row(q * K + st.user_of[q].back());
        st.W = reps.adjoint();
        for (int q = 0; q < Q; ++q) st.W.col(q) /= std::max(st.W.col(q).norm(), 1e-30);
        st.alpha = Eigen::MatrixXd::Constant(Q, K, 1.0 / K);
    }

    st.theta.resize(Q * K, M);
    st.dpu.resize(Q * K, M);
    st.lam_u = Eigen::MatrixXd::Zero(Q * K, M);
    st.lam_theta = Eigen::MatrixXd::Zero(Q * K, M);
    st.lam_beta = Eigen::MatrixXcd::Zero(Q * K, Q);
    for (int q = 0; q < Q; ++q) {
        for (int k = 0; k < K; ++k) {
            const int r = q * K + k;
            const Vec3 user = mmdetail::slot_user(sc, st, q, k);
            for (int n = 0; n < N; ++n) {
                for (int l = 0; l < L; ++l) {
                    const int m = mmdetail::aux_col(n, l, L);
                    const double x = X0(l, n);
                    const double d = distance(user, sc.guides.pa_position(n, x));
                    st.dpu(r, m) = d;
                    st.theta(r, m) = sc.consts.kappa() * (d + sc.consts.n_eff * x);
                }
            }
        }
    }

    st.u = mmdetail::physical_rows(sc, st, X0);
    st.beta = st.u * st.W;
    return st;
}

struct MmPddResult {
    PinchingConfig X{Eigen::MatrixXd::Zero(1, 1)};
    BeamAllocation beams;
    double power_w = 0.0;
    bool feasible = false;
    int outer_iters = 0;
    double final_violation = 0.0;
    bool numerical_failure = false;
    bool rank_deficient_beams = false;
    std::vector<double> violation_trace;
    std::vector<double> candidate_trace;  // best feasible power so far, per outer iteration
    std::vector<BlockTrace> block_trace;
    std::string best_placement_kind;
};

namespace mmdetail {

struct Candidate {
    double power = std::numeric_limits<double>::infinity();
    Eigen::MatrixXd X;
    Eigen::MatrixXcd W;
    Eigen::MatrixXd alpha_labels;
};

inline Eigen::MatrixXd alpha_to_labels(const MmPddState& st) {
    Eigen::MatrixXd out(st.alpha.rows(), st.alpha.cols());
    for (int q = 0; q < st.alpha.rows(); ++q)
        for (int k = 0; k < st.alpha.cols(); ++k) out(q, st.user_of[q][k]) = st.alpha(q, k);
    return out;
}

// Certifies the current state against the physical model; keeps it when it
// beats the best candidate so far.
inline void offer_candidate(const Scenario& sc, const QosRequirements& qos, const MmPddState& st,
                            Candidate& best) {
    const BeamAllocation ba{st.W, alpha_to_labels(st)};
    const ScaleResult res = minimal_feasible_scale(sc, PinchingConfig(st.X), ba, qos);
    if (!res.feasible) return;
    const double power = res.scale * res.scale * st.W.squaredNorm();
    if (power < best.power) {
        best.power = power;
        best.X = st.X;
        best.W = res.scale * st.W;
        best.alpha_labels = ba.alpha;
    }
}

// Re-sorts the decode slots by the physical effective gains and carries all
// slot-indexed state along.
inline void reorder_decode_slots(const Scenario& sc, MmPddState& st) {
    const int Q = sc.users.n_clusters;
    const int K = sc.users.users_per_cluster;
    const Eigen::MatrixXcd U = physical_rows(sc, st, st.X);
    const auto perm = sic_order(U, Q, K);

    auto permute_rows_qk = [&](auto& M) {
        auto copy = M;
        for (int q = 0; q < Q; ++q)
            for (int k = 0; k < K; ++k) M.row(q * K + k) = copy.row(q * K + perm[q][k]);
    };
    permute_rows_qk(st.u);
    permute_rows_qk(st.beta);
    permute_rows_qk(st.theta);
    permute_rows_qk(st.dpu);
    permute_rows_qk(st.lam_u);
    permute_rows_qk(st.lam_theta);
    permute_rows_qk(st.lam_beta);
    for (int q = 0; q < Q; ++q) {
        const auto old_users = st.user_of[q];
        const Eigen::VectorXd old_gamma = st.gamma.row(q).transpose();
        const Eigen::VectorXd old_alpha = st.alpha.row(q).transpose();
        for (int k = 0; k < K; ++k) {
            st.user_of[q][k] = old_users[perm[q][k]];
            st.gamma(q, k) = old_gamma(perm[q][k]);
            st.alpha(q, k) = old_alpha(perm[q][k]);
        }
    }
}

}  // namespace mmdetail

// Joint beam, placement and power-share optimization by penalty-dual
// decomposition over an augmented objective with auxiliary effective rows,
// landings, phases and distances. Returns the cheapest solution that the
// physical model certifies feasible; the search state itself need not end
// feasible.
inline MmPddResult run_mm_pdd(const Scenario& sc, const QosRequirements& qos,
                              const MmPddConfig& cfg) {
    MmPddResult out;
    mmdetail::Candidate best;

    for (const std::string& kind : cfg.placements) {
        const Eigen::MatrixXd X0 = initial_placement(sc, kind);
        MmPddState st = init_mm_pdd_state(sc, qos, X0, cfg);

        MmPddResult run;
        mmdetail::Candidate run_best;

        // The fixed-placement solution at the start is candidate zero, so
        // the final answer can never lose to it.
        mmdetail::offer_candidate(sc, qos, st, run_best);

        int t = 0;
        for (; t < cfg.max_outer; ++t) {
            if (t > 0) {
                mmdetail::reorder_decode_slots(sc, st);
                st.u = mmdetail::physical_rows(sc, st, st.X);
            }

            for (int s = 0; s < cfg.inner_sweeps; ++s) {
                const double w_before =
                    al_beam_objective(st.u, st.W, st.beta, st.lam_beta, st.rho);
                double cond = 0.0;
                st.W = solve_beam(st.u, st.beta, st.lam_beta, st.rho, &cond);
                if (cond > cfg.cond_limit) run.numerical_failure = true;
                const double w_after =
                    al_beam_objective(st.u, st.W, st.beta, st.lam_beta, st.rho);
                if (cfg.collect_block_trace)
                    run.block_trace.push_back({"beam", w_before, w_after});

                const BlockTrace ph = phase_distance_sweep(sc, st);
                if (cfg.collect_block_trace) run.block_trace.push_back(ph);

                const BlockTrace pos = position_sweep(sc, st);
                if (cfg.collect_block_trace) run.block_trace.push_back(pos);

                bool rank_def = false;
                const BlockTrace aux = refit_aux_rows(st, &rank_def);
                if (rank_def) run.rank_deficient_beams = true;
                if (cfg.collect_block_trace) run.block_trace.push_back(aux);

                mmdetail::offer_candidate(sc, qos, st, run_best);
            }

            power_allocation_step(sc, st);
            mmdetail::offer_candidate(sc, qos, st, run_best);

            const double viol = constraint_violation(sc, st);
            run.violation_trace.push_back(viol);
            run.candidate_trace.push_back(run_best.power);
            dual_or_penalty_update(sc, st, cfg, viol);
            // Stop only once the tightening schedule itself has run to the
            // tolerance; a merely-consistent state early on is not converged.
            if (viol <= cfg.tol && st.target <= cfg.tol) {
                ++t;
                break;
            }
        }
        run.outer_iters = t;
        run.final_violation = run.violation_trace.empty() ? 0.0 : run.violation_trace.back();

        // Adopt this run's diagnostics when it produced the best candidate
        // so far (or is the first run).
        const bool adopt = out.best_placement_kind.empty() || run_best.power < best.power;
        if (run_best.power < best.power) best = run_best;
        if (adopt) {
            out.outer_iters = run.outer_iters;
            out.final_violation = run.final_violation;
            out.violation_trace = std::move(run.violation_trace);
            out.candidate_trace = std::move(run.candidate_trace);
            out.block_trace = std::move(run.block_trace);
            out.numerical_failure = run.numerical_failure;
            out.rank_deficient_beams = run.rank_deficient_beams;
            out.best_placement_kind = kind;
            // Fallback output in case no start ever finds a certified point.
            out.X = PinchingConfig(st.X);
            out.beams = {st.W, mmdetail::alpha_to_labels(st)};
            out.power_w = st.W.squaredNorm();
        }
    }

    out.feasible = best.power < std::numeric_limits<double>::infinity();
    if (out.feasible) {
        out.X = PinchingConfig(best.X);
        out.beams = {best.W, best.alpha_labels};
        out.power_w = best.power;
    }
    return out;
}

}  // namespace passopt
