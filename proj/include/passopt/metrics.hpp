#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "passopt/channel.hpp"
#include "passopt/geometry.hpp"

namespace passopt {

// Transmit beams (one column per cluster) and intra-cluster power shares
// (one row per cluster, summing to one).
struct BeamAllocation {
    Eigen::MatrixXcd W;     // N x Q
    Eigen::MatrixXd alpha;  // Q x K
};

struct QosRequirements {
    Eigen::MatrixXd sinr_min;  // Q x K, linear scale

    static QosRequirements uniform_db(int Q, int K, double sinr_min_db) {
        return {Eigen::MatrixXd::Constant(Q, K, db_to_linear(sinr_min_db))};
    }
    static QosRequirements from_rate(int Q, int K, double rate_bps_hz) {
        return {Eigen::MatrixXd::Constant(Q, K, rate_to_sinr_threshold(rate_bps_hz))};
    }
    static double rate_to_sinr_threshold(double rate_bps_hz) {
        return std::pow(2.0, rate_bps_hz) - 1.0;
    }
};

// Successive decoding within cluster q assumes users are indexed weakest
// first; message k must be decodable at every user position k' >= k.
// `U` rows and `alpha` are expected in that decode order.
inline double sinr(const Eigen::MatrixXcd& U, const BeamAllocation& ba, double noise_w, int q,
                   int k, int k_obs) {
    const int K = static_cast<int>(ba.alpha.cols());
    const int Q = static_cast<int>(ba.alpha.rows());
    const Eigen::RowVectorXcd row = U.row(q * K + k_obs);
    const double own = std::norm((row * ba.W.col(q)).value());
    double later = 0.0;
    for (int i = k + 1; i < K; ++i) later += ba.alpha(q, i);
    double inter = 0.0;
    for (int j = 0; j < Q; ++j)
        if (j != q) inter += std::norm((row * ba.W.col(j)).value());
    return own * ba.alpha(q, k) / (own * later + inter + noise_w);
}

// Worst decode SINR of message (q, k) over the users that must decode it.
inline double min_decode_sinr(const Eigen::MatrixXcd& U, const BeamAllocation& ba, double noise_w,
                              int q, int k) {
    const int K = static_cast<int>(ba.alpha.cols());
    double worst = std::numeric_limits<double>::infinity();
    for (int k_obs = k; k_obs < K; ++k_obs) worst = std::min(worst, sinr(U, ba, noise_w, q, k, k_obs));
    return worst;
}

inline double achievable_rate(const Eigen::MatrixXcd& U, const BeamAllocation& ba, double noise_w,
                              int q, int k) {
    return std::log2(1.0 + min_decode_sinr(U, ba, noise_w, q, k));
}

inline double total_transmit_power(const Eigen::MatrixXcd& W) { return W.squaredNorm(); }

// Per-cluster decode order: member indices sorted by ascending effective
// channel gain (weakest first). Ties keep the lower original index.
inline std::vector<std::vector<int>> sic_order(const Eigen::MatrixXcd& U, int Q, int K) {
    std::vector<std::vector<int>> order(Q, std::vector<int>(K));
    for (int q = 0; q < Q; ++q) {
        auto& idx = order[q];
        std::iota(idx.begin(), idx.end(), 0);
        std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
            return U.row(q * K + a).norm() < U.row(q * K + b).norm();
        });
    }
    return order;
}

namespace detail {

// Applies a per-cluster decode order to stacked user rows / per-user tables.
inline Eigen::MatrixXcd permute_rows(const Eigen::MatrixXcd& U,
                                     const std::vector<std::vector<int>>& order) {
    Eigen::MatrixXcd out(U.rows(), U.cols());
    const int K = static_cast<int>(order.empty() ? 0 : order[0].size());
    for (int q = 0; q < static_cast<int>(order.size()); ++q)
        for (int k = 0; k < K; ++k) out.row(q * K + k) = U.row(q * K + order[q][k]);
    return out;
}

inline Eigen::MatrixXd permute_cols_per_cluster(const Eigen::MatrixXd& A,
                                                const std::vector<std::vector<int>>& order) {
    Eigen::MatrixXd out(A.rows(), A.cols());
    for (int q = 0; q < A.rows(); ++q)
        for (int k = 0; k < A.cols(); ++k) out(q, k) = A(q, order[q][k]);
    return out;
}

}  // namespace detail

// Minimal power shares per message meeting SINR floors `gamma` under
// successive decoding, when message k sees the later shares as interference
// plus a fixed term a_k:
//   share_k >= a_k + gamma_k * sum_{i > k} share_i,  tight at the optimum.
inline Eigen::VectorXd noma_power_recursion(const Eigen::VectorXd& a, const Eigen::VectorXd& gamma) {
    const int K = static_cast<int>(a.size());
    Eigen::VectorXd share(K);
    double tail = 0.0;
    for (int k = K - 1; k >= 0; --k) {
        share(k) = a(k) + gamma(k) * tail;
        tail += share(k);
    }
    return share;
}

struct FeasibilityReport {
    bool feasible = false;
    double min_sinr_slack = 0.0;     // linear; worst over users of (decode SINR - floor)
    double min_sinr_slack_db = 0.0;  // worst over users of 10*log10(decode SINR / floor)
    double alpha_sum_dev = 0.0;      // worst per-cluster |sum alpha - 1|
    bool alpha_in_range = true;      // every share in (0, 1) (or == 1 when K == 1)
    PositionReport positions;
};

// Evaluates SINR floors, power-share constraints and antenna-placement
// constraints for a candidate solution. The decode order is derived from the
// actual effective gains, and QoS floors follow their users through it.
inline FeasibilityReport check_feasibility(const Scenario& sc, const PinchingConfig& X,
                                           const BeamAllocation& ba, const QosRequirements& qos,
                                           double rel_tol = 1e-9) {
    const int Q = sc.users.n_clusters;
    const int K = sc.users.users_per_cluster;
    FeasibilityReport rep;
    rep.positions = validate_positions(sc.guides, X);

    for (int q = 0; q < Q; ++q) {
        rep.alpha_sum_dev = std::max(rep.alpha_sum_dev, std::abs(ba.alpha.row(q).sum() - 1.0));
        for (int k = 0; k < K; ++k) {
            const double a = ba.alpha(q, k);
            if (!(a > 0.0) || (K > 1 && !(a < 1.0))) rep.alpha_in_range = false;
        }
    }

    const Eigen::MatrixXcd U = effective_channel(sc, X);
    const auto order = sic_order(U, Q, K);
    BeamAllocation ordered{ba.W, detail::permute_cols_per_cluster(ba.alpha, order)};
    const Eigen::MatrixXcd Uord = detail::permute_rows(U, order);
    const Eigen::MatrixXd gamma = detail::permute_cols_per_cluster(qos.sinr_min, order);

    rep.min_sinr_slack = std::numeric_limits<double>::infinity();
    rep.min_sinr_slack_db = std::numeric_limits<double>::infinity();
    bool sinr_ok = true;
    for (int q = 0; q < Q; ++q) {
        for (int k = 0; k < K; ++k) {
            const double got = min_decode_sinr(Uord, ordered, sc.noise_w, q, k);
            const double floor = gamma(q, k);
            rep.min_sinr_slack = std::min(rep.min_sinr_slack, got - floor);
            const double ratio = got > 0.0 ? got / floor : 1e-30;
            rep.min_sinr_slack_db = std::min(rep.min_sinr_slack_db, linear_to_db(ratio));
            if (got < floor * (1.0 - rel_tol)) sinr_ok = false;
        }
    }

    rep.feasible = rep.positions.ok() && rep.alpha_in_range && rep.alpha_sum_dev <= 1e-9 && sinr_ok;
    return rep;
}

struct ScaleResult {
    bool feasible = false;
    double scale = 1.0;  // multiply every beam by this to meet all SINR floors
};

// Exact minimal uniform beam rescale meeting every SINR floor: each
// constraint is linear in the squared scale because signal and interference
// grow together while noise stays fixed. Infeasible when some constraint is
// interference-limited (no scale satisfies it).
inline ScaleResult minimal_feasible_scale(const Scenario& sc, const PinchingConfig& X,
                                          const BeamAllocation& ba, const QosRequirements& qos) {
    const int Q = sc.users.n_clusters;
    const int K = sc.users.users_per_cluster;
    const Eigen::MatrixXcd U = effective_channel(sc, X);
    const auto order = sic_order(U, Q, K);
    const Eigen::MatrixXcd Uord = detail::permute_rows(U, order);
    const Eigen::MatrixXd alpha = detail::permute_cols_per_cluster(ba.alpha, order);
    const Eigen::MatrixXd gamma = detail::permute_cols_per_cluster(qos.sinr_min, order);

    double s2 = 0.0;
    for (int q = 0; q < Q; ++q) {
        for (int k = 0; k < K; ++k) {
            for (int k_obs = k; k_obs < K; ++k_obs) {
                const Eigen::RowVectorXcd row = Uord.row(q * K + k_obs);
                const double own = std::norm((row * ba.W.col(q)).value());
                double later = 0.0;
                for (int i = k + 1; i < K; ++i) later += alpha(q, i);
                double inter = 0.0;
                for (int j = 0; j < Q; ++j)
                    if (j != q) inter += std::norm((row * ba.W.col(j)).value());
                const double bracket = own * alpha(q, k) - gamma(q, k) * (own * later + inter);
                if (bracket <= 0.0) return {false, 1.0};
                s2 = std::max(s2, gamma(q, k) * sc.noise_w / bracket);
            }
        }
    }
    return {true, std::sqrt(s2)};
}

}  // namespace passopt
