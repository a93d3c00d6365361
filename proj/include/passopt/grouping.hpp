#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "passopt/channel.hpp"
#include "passopt/geometry.hpp"
#include "passopt/rng.hpp"

namespace passopt {

struct GroupingConfig {
    double channel_weight = 0.5;   // weight of the channel-similarity term
    double location_scale = 10.0;  // m; normalizes the location-distance exponent
    bool use_magnitude = false;    // |h_k^H h_i| instead of Re{h_k^H h_i}
    int max_iters = 100;
    bool balanced = true;          // post-pass equalizing cluster sizes
};

struct Clustering {
    std::vector<int> cluster_of;  // user -> cluster
    std::vector<int> heads;       // cluster -> head user
    int iters = 0;
    bool converged = false;
};

// Location-only channel estimate used for grouping: one antenna per waveguide
// placed at the user's own x, so the row captures the user's lateral geometry.
inline Eigen::MatrixXcd grouping_channel_rows(const Scenario& sc) {
    const int total = sc.users.total_users();
    const int N = sc.guides.n_guides;
    Eigen::MatrixXcd rows(total, N);
    for (int k = 0; k < total; ++k) {
        const Vec3& u = sc.users.pos[k];
        for (int n = 0; n < N; ++n)
            rows(k, n) = free_space_channel(sc.consts, u, sc.guides.pa_position(n, u.x));
    }
    return rows;
}

// Similarity of two users: normalized channel alignment blended with a
// location-proximity kernel.
inline double joint_correlation(const Eigen::RowVectorXcd& row_k, const Eigen::RowVectorXcd& row_i,
                                const Vec3& pos_k, const Vec3& pos_i, const GroupingConfig& cfg) {
    const double nk = row_k.norm();
    const double ni = row_i.norm();
    if (nk == 0.0 || ni == 0.0) throw std::domain_error("joint_correlation: zero-norm channel row");
    const cd inner = (row_k.conjugate().cwiseProduct(row_i)).sum();
    const double channel_term =
        (cfg.use_magnitude ? std::abs(inner) : inner.real()) / (nk * ni);
    const double location_term = std::exp(-distance(pos_k, pos_i) / cfg.location_scale);
    return cfg.channel_weight * channel_term + (1.0 - cfg.channel_weight) * location_term;
}

inline Eigen::MatrixXd correlation_table(const Eigen::MatrixXcd& rows,
                                         const std::vector<Vec3>& pos, const GroupingConfig& cfg) {
    const int total = static_cast<int>(rows.rows());
    Eigen::MatrixXd C(total, total);
    for (int k = 0; k < total; ++k) {
        for (int i = k; i < total; ++i) {
            const double v = joint_correlation(rows.row(k), rows.row(i), pos[k], pos[i], cfg);
            C(k, i) = v;
            C(i, k) = v;
        }
    }
    return C;
}

// Every non-head user joins the head it correlates with best; ties go to the
// lowest cluster index. Heads stay in their own clusters.
inline std::vector<int> assign_users(const Eigen::MatrixXd& C, const std::vector<int>& heads) {
    const int total = static_cast<int>(C.rows());
    const int Q = static_cast<int>(heads.size());
    std::vector<int> cluster_of(total, -1);
    for (int q = 0; q < Q; ++q) cluster_of[heads[q]] = q;
    for (int k = 0; k < total; ++k) {
        if (cluster_of[k] >= 0) continue;
        int best_q = 0;
        double best = C(k, heads[0]);
        for (int q = 1; q < Q; ++q) {
            if (C(k, heads[q]) > best) {
                best = C(k, heads[q]);
                best_q = q;
            }
        }
        cluster_of[k] = best_q;
    }
    return cluster_of;
}

// New head per cluster: the member with the least total correlation to users
// outside its own cluster; ties go to the lowest user index.
inline std::vector<int> update_heads(const Eigen::MatrixXd& C, const std::vector<int>& cluster_of,
                                     int n_clusters) {
    const int total = static_cast<int>(C.rows());
    std::vector<int> heads(n_clusters, -1);
    std::vector<double> best(n_clusters, 0.0);
    for (int k = 0; k < total; ++k) {
        const int q = cluster_of[k];
        double outside = 0.0;
        for (int j = 0; j < total; ++j)
            if (cluster_of[j] != q) outside += C(k, j);
        if (heads[q] < 0 || outside < best[q]) {
            heads[q] = k;
            best[q] = outside;
        }
    }
    return heads;
}

namespace detail {

// Re-seed empty clusters with the worst-fitting non-head user (lowest
// correlation to its own head), never emptying another cluster.
inline void repair_empty_clusters(const Eigen::MatrixXd& C, std::vector<int>& cluster_of,
                                  std::vector<int>& heads) {
    const int total = static_cast<int>(cluster_of.size());
    const int Q = static_cast<int>(heads.size());
    for (;;) {
        std::vector<int> size(Q, 0);
        for (int c : cluster_of) ++size[c];
        int empty = -1;
        for (int q = 0; q < Q; ++q)
            if (size[q] == 0) {
                empty = q;
                break;
            }
        if (empty < 0) return;
        int worst = -1;
        double worst_c = 0.0;
        for (int k = 0; k < total; ++k) {
            const int q = cluster_of[k];
            if (heads[q] == k || size[q] <= 1) continue;
            const double c = C(k, heads[q]);
            if (worst < 0 || c < worst_c) {
                worst = k;
                worst_c = c;
            }
        }
        if (worst < 0) return;  // fewer users than clusters; leave the report to the caller
        cluster_of[worst] = empty;
        heads[empty] = worst;
    }
}

// Move overflow users out of clusters exceeding `cap` into their best
// cluster with spare capacity.
inline void balance_clusters(const Eigen::MatrixXd& C, std::vector<int>& cluster_of,
                             const std::vector<int>& heads, int cap) {
    const int total = static_cast<int>(cluster_of.size());
    const int Q = static_cast<int>(heads.size());
    for (;;) {
        std::vector<int> size(Q, 0);
        for (int c : cluster_of) ++size[c];
        int from = -1;
        for (int q = 0; q < Q; ++q)
            if (size[q] > cap && (from < 0 || size[q] > size[from])) from = q;
        if (from < 0) return;
        int mover = -1;
        double mover_c = 0.0;
        for (int k = 0; k < total; ++k) {
            if (cluster_of[k] != from || heads[from] == k) continue;
            const double c = C(k, heads[from]);
            if (mover < 0 || c < mover_c) {
                mover = k;
                mover_c = c;
            }
        }
        int to = -1;
        for (int q = 0; q < Q; ++q) {
            if (size[q] >= cap) continue;
            if (to < 0 || C(mover, heads[q]) > C(mover, heads[to])) to = q;
        }
        cluster_of[mover] = to;
    }
}

}  // namespace detail

// Head-rotation clustering: alternate best-head assignment and head updates
// until the head set repeats, then optionally balance cluster sizes.
inline Clustering group_users(const Eigen::MatrixXd& C, const std::vector<Vec3>& pos,
                              int n_clusters, const GroupingConfig& cfg, std::uint64_t seed,
                              const std::vector<int>* initial_heads = nullptr) {
    const int total = static_cast<int>(C.rows());
    if (n_clusters < 1 || n_clusters > total)
        throw std::invalid_argument("group_users: cluster count out of range");
    (void)pos;

    Clustering out;
    out.heads.resize(n_clusters);
    if (initial_heads) {
        out.heads = *initial_heads;
    } else {
        Rng rng(derive_seed(seed, {0x67726f75ULL}));
        std::vector<int> pool(total);
        for (int k = 0; k < total; ++k) pool[k] = k;
        for (int q = 0; q < n_clusters; ++q) {
            const int pick = q + static_cast<int>(rng.uniform_int(total - q));
            std::swap(pool[q], pool[pick]);
            out.heads[q] = pool[q];
        }
    }

    for (out.iters = 1; out.iters <= cfg.max_iters; ++out.iters) {
        out.cluster_of = assign_users(C, out.heads);
        detail::repair_empty_clusters(C, out.cluster_of, out.heads);
        auto new_heads = update_heads(C, out.cluster_of, n_clusters);
        if (new_heads == out.heads) {
            out.converged = true;
            break;
        }
        out.heads = new_heads;
    }
    out.cluster_of = assign_users(C, out.heads);
    detail::repair_empty_clusters(C, out.cluster_of, out.heads);

    if (cfg.balanced && total % n_clusters == 0)
        detail::balance_clusters(C, out.cluster_of, out.heads, total / n_clusters);
    return out;
}

inline Clustering group_users(const Scenario& sc, const GroupingConfig& cfg, std::uint64_t seed,
                              const std::vector<int>* initial_heads = nullptr) {
    const auto rows = grouping_channel_rows(sc);
    const auto C = correlation_table(rows, sc.users.pos, cfg);
    return group_users(C, sc.users.pos, sc.users.n_clusters, cfg, seed, initial_heads);
}

}  // namespace passopt
