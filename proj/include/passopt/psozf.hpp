#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "passopt/channel.hpp"
#include "passopt/geometry.hpp"
#include "passopt/metrics.hpp"
#include "passopt/rng.hpp"

namespace passopt {

struct PsoConfig {
    int particles = 30;
    int iterations = 100;
    double inertia = 0.7;
    double c_personal = 1.5;
    double c_global = 1.5;
    bool inertia_decay = false;  // linear inertia_start -> inertia_end when set
    double inertia_start = 0.9;
    double inertia_end = 0.4;
    double velocity_cap_frac = 0.2;  // max |v| as a fraction of x_max
    double infeasible_penalty = 1e6;
    double qos_rel_tol = 1e-9;
    std::uint64_t seed = 1;
};

// Pools adjacent decreasing runs to their mean until the sequence is
// nondecreasing; this is the least-squares monotone fit.
inline void isotonic_fit(Eigen::VectorXd& y) {
    const int n = static_cast<int>(y.size());
    std::vector<double> val;
    std::vector<int> cnt;
    val.reserve(n);
    cnt.reserve(n);
    for (int i = 0; i < n; ++i) {
        double v = y(i);
        int c = 1;
        while (!val.empty() && val.back() > v) {
            v = (val.back() * cnt.back() + v * c) / (cnt.back() + c);
            c += cnt.back();
            val.pop_back();
            cnt.pop_back();
        }
        val.push_back(v);
        cnt.push_back(c);
    }
    int i = 0;
    for (std::size_t b = 0; b < val.size(); ++b)
        for (int j = 0; j < cnt[b]; ++j) y(i++) = val[b];
}

// Projects one guide's antenna positions onto the feasible set: clip to the
// guide, sort, remove the mandatory spacing so the constraint becomes plain
// monotonicity, take the monotone least-squares fit and clamp it (which is
// exactly the box-constrained fit), then restore the spacing.
inline Eigen::VectorXd repair_guide_positions(const WaveguideLayout& g, Eigen::VectorXd x) {
    const int L = static_cast<int>(x.size());
    const double delta = g.min_spacing;
    for (int l = 0; l < L; ++l) x(l) = std::clamp(x(l), 0.0, g.x_max);
    std::sort(x.data(), x.data() + L);
    Eigen::VectorXd y(L);
    for (int l = 0; l < L; ++l) y(l) = x(l) - l * delta;
    isotonic_fit(y);
    const double y_hi = g.x_max - (L - 1) * delta;
    for (int l = 0; l < L; ++l) x(l) = std::clamp(y(l), 0.0, y_hi) + l * delta;
    return x;
}

inline Eigen::MatrixXd repair_positions(const WaveguideLayout& g, Eigen::MatrixXd X) {
    for (int n = 0; n < X.cols(); ++n) X.col(n) = repair_guide_positions(g, X.col(n));
    return X;
}

// Feasible random start: offsets drawn uniformly, sorted, then spaced out.
inline Eigen::VectorXd random_guide_positions(const WaveguideLayout& g, int L, Rng& rng) {
    const double y_hi = g.x_max - (L - 1) * g.min_spacing;
    Eigen::VectorXd y(L);
    for (int l = 0; l < L; ++l) y(l) = rng.uniform(0.0, y_hi);
    std::sort(y.data(), y.data() + L);
    for (int l = 0; l < L; ++l) y(l) += l * g.min_spacing;
    return y;
}

// One velocity step toward the personal and global bests; draws two fresh
// uniforms per element (columns outer, slots inner) and caps the magnitude.
inline void update_velocity(Eigen::MatrixXd& V, const Eigen::MatrixXd& X,
                            const Eigen::MatrixXd& pbest, const Eigen::MatrixXd& gbest,
                            double inertia, const PsoConfig& cfg, double v_max, Rng& rng) {
    for (int n = 0; n < V.cols(); ++n) {
        for (int l = 0; l < V.rows(); ++l) {
            const double r1 = rng.uniform();
            const double r2 = rng.uniform();
            double v = inertia * V(l, n) + cfg.c_personal * r1 * (pbest(l, n) - X(l, n)) +
                       cfg.c_global * r2 * (gbest(l, n) - X(l, n));
            V(l, n) = std::clamp(v, -v_max, v_max);
        }
    }
}

// Zero-forcing beams on one representative row per cluster: cluster q's beam
// lands with amplitude sqrt(p_q) on its own representative and zero on every
// other cluster's representative.
inline Eigen::MatrixXcd zf_beamforming(const Eigen::MatrixXcd& reps, const Eigen::VectorXd& p) {
    const Eigen::MatrixXcd gram = reps * reps.adjoint();
    const Eigen::MatrixXd amp = p.array().sqrt().matrix().asDiagonal();
    return reps.adjoint() * gram.ldlt().solve(amp.cast<cd>());
}

// Minimal per-message delivered powers at a cluster representative that meets
// the decode-ordered SINR floors, given zero inter-cluster leakage there.
struct ClusterPower {
    Eigen::VectorXd delivered;  // per message, decode order
    double total = 0.0;
};

inline ClusterPower zf_power_allocation(const Eigen::VectorXd& gamma_ordered, double noise_w) {
    ClusterPower cp;
    cp.delivered = noma_power_recursion(gamma_ordered * noise_w, gamma_ordered);
    cp.total = cp.delivered.sum();
    return cp;
}

// Full beam-and-share solution for a fixed placement: decode order from the
// effective gains, representatives are the strongest member of each cluster,
// powers from the per-cluster recursion, beams from zero forcing.
struct ZfSolution {
    BeamAllocation ba;
    double power_w = 0.0;
    bool zf_ok = false;
};

inline ZfSolution zf_solution(const Scenario& sc, const PinchingConfig& X,
                              const QosRequirements& qos) {
    const int Q = sc.users.n_clusters;
    const int K = sc.users.users_per_cluster;
    const int N = sc.guides.n_guides;
    const Eigen::MatrixXcd U = effective_channel(sc, X);
    const auto order = sic_order(U, Q, K);

    Eigen::MatrixXcd reps(Q, N);
    Eigen::VectorXd p(Q);
    ZfSolution sol;
    sol.ba.alpha.resize(Q, K);
    for (int q = 0; q < Q; ++q) {
        reps.row(q) = U.row(q * K + order[q].back());
        Eigen::VectorXd gamma(K);
        for (int k = 0; k < K; ++k) gamma(k) = qos.sinr_min(q, order[q][k]);
        const ClusterPower cp = zf_power_allocation(gamma, sc.noise_w);
        p(q) = cp.total;
        for (int k = 0; k < K; ++k) sol.ba.alpha(q, order[q][k]) = cp.delivered(k) / cp.total;
    }
    sol.ba.W = zf_beamforming(reps, p);
    // Near-singular representatives can yield finite but useless beams, so
    // validate the zero-forcing identity itself.
    const Eigen::MatrixXd amp = p.array().sqrt().matrix().asDiagonal();
    sol.zf_ok = sol.ba.W.allFinite() &&
                (reps * sol.ba.W - amp.cast<cd>()).norm() <= 1e-6 * std::sqrt(p.sum());
    sol.power_w = sol.zf_ok ? total_transmit_power(sol.ba.W) : 0.0;
    return sol;
}

// Search objective: total power when every user's decode SINR clears its
// floor, otherwise a large constant plus the summed linear shortfall.
inline double pso_fitness(const Scenario& sc, const PinchingConfig& X, const QosRequirements& qos,
                          const PsoConfig& cfg) {
    const ZfSolution sol = zf_solution(sc, X, qos);
    if (!sol.zf_ok) return 2.0 * cfg.infeasible_penalty;

    const int Q = sc.users.n_clusters;
    const int K = sc.users.users_per_cluster;
    const Eigen::MatrixXcd U = effective_channel(sc, X);
    const auto order = sic_order(U, Q, K);
    const Eigen::MatrixXcd Uord = detail::permute_rows(U, order);
    const BeamAllocation ordered{sol.ba.W, detail::permute_cols_per_cluster(sol.ba.alpha, order)};
    const Eigen::MatrixXd gamma = detail::permute_cols_per_cluster(qos.sinr_min, order);

    double shortfall = 0.0;
    bool ok = true;
    for (int q = 0; q < Q; ++q) {
        for (int k = 0; k < K; ++k) {
            const double got = min_decode_sinr(Uord, ordered, sc.noise_w, q, k);
            if (got < gamma(q, k) * (1.0 - cfg.qos_rel_tol)) ok = false;
            shortfall += std::max(0.0, gamma(q, k) - got);
        }
    }
    return ok ? sol.power_w : cfg.infeasible_penalty + shortfall;
}

struct PsoResult {
    PinchingConfig X{Eigen::MatrixXd::Zero(1, 1)};
    BeamAllocation beams;
    double power_w = 0.0;
    bool feasible = false;
    double best_fitness = 0.0;
    std::vector<double> best_fitness_trace;  // one entry per iteration, plus the start
    int evaluations = 0;
};

// Particle swarm over antenna placements with a zero-forcing inner solution.
// Synchronous update: every particle moves against the previous iteration's
// global best, then bests are refreshed once.
inline PsoResult run_pso_zf(const Scenario& sc, const QosRequirements& qos, const PsoConfig& cfg) {
    const int L = sc.guides.pas_per_guide;
    const int N = sc.guides.n_guides;
    const double v_max = cfg.velocity_cap_frac * sc.guides.x_max;
    Rng rng(cfg.seed);

    std::vector<Eigen::MatrixXd> X(cfg.particles), V(cfg.particles), pbest(cfg.particles);
    std::vector<double> pfit(cfg.particles);
    for (int p = 0; p < cfg.particles; ++p) {
        X[p].resize(L, N);
        for (int n = 0; n < N; ++n) X[p].col(n) = random_guide_positions(sc.guides, L, rng);
    }
    for (int p = 0; p < cfg.particles; ++p) {
        V[p].resize(L, N);
        for (int n = 0; n < N; ++n)
            for (int l = 0; l < L; ++l) V[p](l, n) = rng.uniform(-v_max, v_max);
    }

    PsoResult res;
    int gbest = 0;
    for (int p = 0; p < cfg.particles; ++p) {
        pbest[p] = X[p];
        pfit[p] = pso_fitness(sc, PinchingConfig(X[p]), qos, cfg);
        ++res.evaluations;
        if (pfit[p] < pfit[gbest]) gbest = p;
    }
    Eigen::MatrixXd gpos = pbest[gbest];
    double gfit = pfit[gbest];
    res.best_fitness_trace.push_back(gfit);

    for (int t = 0; t < cfg.iterations; ++t) {
        double inertia = cfg.inertia;
        if (cfg.inertia_decay) {
            const double frac = cfg.iterations > 1 ? static_cast<double>(t) / (cfg.iterations - 1) : 0.0;
            inertia = cfg.inertia_start + (cfg.inertia_end - cfg.inertia_start) * frac;
        }
        std::vector<double> fit(cfg.particles);
        for (int p = 0; p < cfg.particles; ++p) {
            update_velocity(V[p], X[p], pbest[p], gpos, inertia, cfg, v_max, rng);
            X[p] = repair_positions(sc.guides, X[p] + V[p]);
            fit[p] = pso_fitness(sc, PinchingConfig(X[p]), qos, cfg);
            ++res.evaluations;
        }
        for (int p = 0; p < cfg.particles; ++p) {
            if (fit[p] < pfit[p]) {
                pfit[p] = fit[p];
                pbest[p] = X[p];
            }
            if (pfit[p] < gfit) {
                gfit = pfit[p];
                gpos = pbest[p];
            }
        }
        res.best_fitness_trace.push_back(gfit);
    }

    res.X = PinchingConfig(gpos);
    const ZfSolution sol = zf_solution(sc, res.X, qos);
    res.beams = sol.ba;
    res.power_w = sol.power_w;
    res.best_fitness = gfit;
    res.feasible = gfit < cfg.infeasible_penalty;
    return res;
}

}  // namespace passopt
