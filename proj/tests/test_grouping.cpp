#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <set>

#include "passopt/grouping.hpp"

using namespace passopt;
using Catch::Approx;

namespace {

Scenario blob_scenario() {
    // three tight user blobs, far apart
    Scenario sc;
    sc.guides.n_guides = 3;
    sc.guides.d0y = 4.0;
    sc.users.n_clusters = 3;
    sc.users.users_per_cluster = 3;
    const Vec3 centers[3] = {{5.0, 0.2, 0.0}, {15.0, 4.1, 0.0}, {25.0, 7.9, 0.0}};
    Rng rng(101);
    for (int b = 0; b < 3; ++b)
        for (int k = 0; k < 3; ++k)
            sc.users.pos.push_back({centers[b].x + rng.uniform(-0.3, 0.3),
                                    centers[b].y + rng.uniform(-0.3, 0.3), 0.0});
    return sc;
}

GroupingConfig blob_config() {
    GroupingConfig cfg;
    cfg.channel_weight = 0.2;
    cfg.location_scale = 3.0;
    return cfg;
}

}  // namespace

TEST_CASE("joint correlation of a user with itself is one") {
    Eigen::RowVectorXcd row(2);
    row << cd(1.0, 2.0), cd(-0.5, 0.25);
    GroupingConfig cfg;
    cfg.channel_weight = 0.7;
    CHECK(joint_correlation(row, row, {1, 2, 0}, {1, 2, 0}, cfg) == Approx(1.0).epsilon(1e-12));
}

TEST_CASE("orthogonal rows under pure channel weighting give zero") {
    Eigen::RowVectorXcd a(2), b(2);
    a << cd(1.0, 0.0), cd(0.0, 0.0);
    b << cd(0.0, 0.0), cd(1.0, 0.0);
    GroupingConfig cfg;
    cfg.channel_weight = 1.0;
    CHECK(joint_correlation(a, b, {0, 0, 0}, {9, 9, 0}, cfg) == Approx(0.0).margin(1e-15));
}

TEST_CASE("pure location weighting at one scale length gives 1/e") {
    Eigen::RowVectorXcd a(1), b(1);
    a << cd(1.0, 0.0);
    b << cd(0.0, 1.0);
    GroupingConfig cfg;
    cfg.channel_weight = 0.0;
    cfg.location_scale = 2.5;
    CHECK(joint_correlation(a, b, {0, 0, 0}, {2.5, 0, 0}, cfg) == Approx(std::exp(-1.0)).epsilon(1e-12));
}

TEST_CASE("zero-norm channel row is rejected") {
    Eigen::RowVectorXcd a(2), z(2);
    a << cd(1.0, 0.0), cd(0.0, 1.0);
    z << cd(0.0, 0.0), cd(0.0, 0.0);
    CHECK_THROWS_AS(joint_correlation(a, z, {}, {}, GroupingConfig{}), std::domain_error);
}

TEST_CASE("correlation table is symmetric and bounded") {
    auto sc = blob_scenario();
    auto cfg = blob_config();
    const auto rows = grouping_channel_rows(sc);
    const auto C = correlation_table(rows, sc.users.pos, cfg);
    for (int k = 0; k < C.rows(); ++k) {
        CHECK(C(k, k) == Approx(1.0).epsilon(1e-12));
        for (int i = 0; i < C.cols(); ++i) {
            CHECK(C(k, i) == Approx(C(i, k)).margin(1e-14));
            CHECK(C(k, i) <= 1.0 + 1e-12);
            CHECK(C(k, i) >= -1.0 - 1e-12);
        }
    }

    cfg.use_magnitude = true;
    const auto Cm = correlation_table(rows, sc.users.pos, cfg);
    for (int k = 0; k < Cm.rows(); ++k)
        for (int i = 0; i < Cm.cols(); ++i) REQUIRE(Cm(k, i) >= 0.0);
}

TEST_CASE("assignment ties resolve to the lowest cluster index") {
    Eigen::MatrixXd C(3, 3);
    C << 1.0, 0.5, 0.5,  //
        0.5, 1.0, 0.1,   //
        0.5, 0.1, 1.0;
    // user 0 is equidistant from heads 1 and 2
    const auto cluster_of = assign_users(C, {1, 2});
    CHECK(cluster_of[0] == 0);
    CHECK(cluster_of[1] == 0);
    CHECK(cluster_of[2] == 1);
}

TEST_CASE("a user identical to a head joins that head") {
    Eigen::MatrixXd C(3, 3);
    C << 1.0, 0.2, 0.999,  //
        0.2, 1.0, 0.2,     //
        0.999, 0.2, 1.0;
    const auto cluster_of = assign_users(C, {1, 2});
    CHECK(cluster_of[0] == 1);
}

TEST_CASE("assignment matches a brute-force argmax") {
    Rng rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        Eigen::MatrixXd C(4, 4);
        for (int k = 0; k < 4; ++k)
            for (int i = k; i < 4; ++i) {
                C(k, i) = rng.uniform(-1.0, 1.0);
                C(i, k) = C(k, i);
            }
        C.diagonal().setOnes();
        std::vector<int> heads = {0, 2};
        const auto got = assign_users(C, heads);
        for (int k = 0; k < 4; ++k) {
            if (k == 0 || k == 2) continue;
            int want = C(k, 0) >= C(k, 2) ? 0 : 1;
            REQUIRE(got[k] == want);
        }
    }
}

TEST_CASE("head update keeps a singleton cluster head") {
    Eigen::MatrixXd C(3, 3);
    C << 1.0, 0.9, 0.8,  //
        0.9, 1.0, 0.7,   //
        0.8, 0.7, 1.0;
    const std::vector<int> cluster_of = {0, 0, 1};
    const auto heads = update_heads(C, cluster_of, 2);
    CHECK(heads[1] == 2);
}

TEST_CASE("head update picks the member least correlated with outsiders") {
    Eigen::MatrixXd C = Eigen::MatrixXd::Zero(4, 4);
    C.diagonal().setOnes();
    // cluster {0,1}: user 1 has weaker ties to outsiders 2,3
    C(0, 2) = C(2, 0) = 0.9;
    C(0, 3) = C(3, 0) = 0.9;
    C(1, 2) = C(2, 1) = 0.1;
    C(1, 3) = C(3, 1) = 0.2;
    C(2, 3) = C(3, 2) = 0.5;
    const std::vector<int> cluster_of = {0, 0, 1, 1};
    const auto heads = update_heads(C, cluster_of, 2);
    CHECK(heads[0] == 1);
    CHECK(heads[1] == 2);  // C(2,0)+C(2,1)=1.0 < C(3,0)+C(3,1)=1.1
}

TEST_CASE("head update matches brute force on random tables") {
    Rng rng(17);
    for (int trial = 0; trial < 50; ++trial) {
        const int total = 8;
        Eigen::MatrixXd C(total, total);
        for (int k = 0; k < total; ++k)
            for (int i = k; i < total; ++i) {
                C(k, i) = rng.uniform(0.0, 1.0);
                C(i, k) = C(k, i);
            }
        std::vector<int> cluster_of(total);
        for (int k = 0; k < total; ++k) cluster_of[k] = static_cast<int>(rng.uniform_int(2));
        cluster_of[0] = 0;
        cluster_of[1] = 1;  // keep both clusters non-empty
        const auto got = update_heads(C, cluster_of, 2);
        for (int q = 0; q < 2; ++q) {
            int want = -1;
            double want_v = 0.0;
            for (int k = 0; k < total; ++k) {
                if (cluster_of[k] != q) continue;
                double outside = 0.0;
                for (int j = 0; j < total; ++j)
                    if (cluster_of[j] != q) outside += C(k, j);
                if (want < 0 || outside < want_v) {
                    want = k;
                    want_v = outside;
                }
            }
            REQUIRE(got[q] == want);
        }
    }
}

TEST_CASE("well-separated blobs are recovered") {
    auto sc = blob_scenario();
    const auto res = group_users(sc, blob_config(), 42);
    REQUIRE(res.converged);
    // users 0-2, 3-5, 6-8 must land in three distinct clusters
    for (int b = 0; b < 3; ++b) {
        CHECK(res.cluster_of[3 * b + 1] == res.cluster_of[3 * b]);
        CHECK(res.cluster_of[3 * b + 2] == res.cluster_of[3 * b]);
    }
    std::set<int> labels(res.cluster_of.begin(), res.cluster_of.end());
    CHECK(labels.size() == 3);
}

TEST_CASE("as many clusters as users yields singletons") {
    Scenario sc;
    sc.guides.n_guides = 2;
    sc.users.n_clusters = 4;
    sc.users.users_per_cluster = 1;
    sc.users.pos = {{1, 0, 0}, {8, 1, 0}, {15, 2, 0}, {22, 3, 0}};
    const auto res = group_users(sc, GroupingConfig{}, 3);
    std::set<int> labels(res.cluster_of.begin(), res.cluster_of.end());
    CHECK(labels.size() == 4);
}

TEST_CASE("grouping is deterministic in the seed") {
    auto sc = blob_scenario();
    const auto a = group_users(sc, blob_config(), 99);
    const auto b = group_users(sc, blob_config(), 99);
    CHECK(a.cluster_of == b.cluster_of);
    CHECK(a.heads == b.heads);
}

TEST_CASE("balanced grouping yields equal cluster sizes") {
    auto sc = blob_scenario();
    // move one blob user near another blob so natural sizes are 2/4/3
    sc.users.pos[2] = {15.3, 4.3, 0.0};
    auto cfg = blob_config();
    cfg.balanced = true;
    const auto res = group_users(sc, cfg, 7);
    std::vector<int> size(3, 0);
    for (int c : res.cluster_of) ++size[c];
    CHECK(size == std::vector<int>{3, 3, 3});
}

TEST_CASE("grouping is idempotent from a converged head set") {
    auto sc = blob_scenario();
    auto cfg = blob_config();
    cfg.balanced = false;
    const auto first = group_users(sc, cfg, 42);
    const auto C = correlation_table(grouping_channel_rows(sc), sc.users.pos, cfg);
    const auto again = group_users(C, sc.users.pos, sc.users.n_clusters, cfg, 0, &first.heads);
    CHECK(again.cluster_of == first.cluster_of);
    CHECK(again.heads == first.heads);
    CHECK(again.iters == 1);
}

TEST_CASE("termination within the iteration cap on random instances") {
    Rng rng(31);
    for (int trial = 0; trial < 20; ++trial) {
        Scenario sc;
        sc.guides.n_guides = 4;
        sc.users.n_clusters = 4;
        sc.users.users_per_cluster = 2;
        sc.users.pos.resize(8);
        for (auto& p : sc.users.pos) p = {rng.uniform(0.0, 30.0), rng.uniform(0.0, 9.0), 0.0};
        const auto res = group_users(sc, GroupingConfig{}, derive_seed(1, {static_cast<std::uint64_t>(trial)}));
        REQUIRE(res.iters <= GroupingConfig{}.max_iters);
        std::vector<int> size(4, 0);
        for (int c : res.cluster_of) ++size[c];
        for (int q = 0; q < 4; ++q) REQUIRE(size[q] == 2);
    }
}
