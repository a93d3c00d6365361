#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "passopt/constants.hpp"

namespace passopt {

struct Vec3 {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;
};

inline double distance(const Vec3& a, const Vec3& b) {
    const double dx = a.x - b.x;
    const double dy = a.y - b.y;
    const double dz = a.z - b.z;
    return std::sqrt(dx * dx + dy * dy + dz * dz);
}

// N parallel waveguides along the x axis at height `height`, spaced `d0y`
// apart in y, each feeding `pas_per_guide` movable antennas.
struct WaveguideLayout {
    int n_guides = 4;          // N
    int pas_per_guide = 4;     // L
    double x_max = 30.0;       // service-area length, m
    double d0y = 3.0;          // y spacing between adjacent waveguides, m
    double height = 10.0;      // antenna height above the user plane, m
    double min_spacing = 0.1;  // minimum spacing between antennas on one guide, m

    int total_pas() const { return n_guides * pas_per_guide; }  // M
    double guide_y(int n) const { return n * d0y; }
    Vec3 pa_position(int n, double x) const { return {x, guide_y(n), height}; }

    void validate() const {
        if (n_guides < 1 || pas_per_guide < 1) throw std::invalid_argument("layout: counts must be positive");
        if (x_max <= 0.0 || d0y < 0.0 || height <= 0.0 || min_spacing < 0.0)
            throw std::invalid_argument("layout: nonpositive dimension");
        if ((pas_per_guide - 1) * min_spacing > x_max)
            throw std::invalid_argument("layout: spacing does not fit in [0, x_max]");
    }
};

// Users on the ground plane (z = 0), grouped as Q clusters of K users.
// Index (q, k) is flattened row-major: user = q * K + k.
struct UserLayout {
    int n_clusters = 4;       // Q
    int users_per_cluster = 2;  // K
    std::vector<Vec3> pos;    // size Q * K

    int total_users() const { return n_clusters * users_per_cluster; }
    const Vec3& at(int q, int k) const { return pos[q * users_per_cluster + k]; }
    Vec3& at(int q, int k) { return pos[q * users_per_cluster + k]; }
};

// Antenna x coordinates, one column per waveguide, each column kept ascending.
class PinchingConfig {
  public:
    PinchingConfig() = default;
    explicit PinchingConfig(Eigen::MatrixXd x) : x_(std::move(x)) { sort_columns(); }

    static PinchingConfig uniform(const WaveguideLayout& g) {
        Eigen::MatrixXd x(g.pas_per_guide, g.n_guides);
        for (int l = 0; l < g.pas_per_guide; ++l)
            for (int n = 0; n < g.n_guides; ++n)
                x(l, n) = (l + 1) * g.x_max / (g.pas_per_guide + 1);
        return PinchingConfig(x);
    }

    const Eigen::MatrixXd& x() const { return x_; }
    double at(int l, int n) const { return x_(l, n); }
    int per_guide() const { return static_cast<int>(x_.rows()); }
    int guides() const { return static_cast<int>(x_.cols()); }

    void set(Eigen::MatrixXd x) {
        x_ = std::move(x);
        sort_columns();
    }

  private:
    void sort_columns() {
        for (int n = 0; n < x_.cols(); ++n) {
            std::sort(x_.col(n).begin(), x_.col(n).end());
        }
    }

    Eigen::MatrixXd x_;
};

struct Scenario {
    PhysConstants consts;
    WaveguideLayout guides;
    UserLayout users;
    double noise_w = 1e-11;  // receiver noise power, W (-80 dBm)
};

}  // namespace passopt
