#pragma once

#include <cmath>

namespace passopt {

inline constexpr double pi = 3.14159265358979323846;

// Physical and carrier constants for the free-space / in-waveguide channel.
// All lengths in meters, frequencies in Hz, powers in watts.
struct PhysConstants {
    double c = 2.998e8;    // propagation speed, m/s
    double f_c = 15e9;     // carrier frequency, Hz
    double n_eff = 1.4;    // effective refractive index of the dielectric waveguide

    double lambda() const { return c / f_c; }             // free-space wavelength
    double lambda_g() const { return lambda() / n_eff; }  // guided wavelength
    double kappa() const { return 2.0 * pi / lambda(); }  // free-space wavenumber
    double eta() const { return c / (4.0 * pi * f_c); }   // path-loss scale, m
};

inline double dbm_to_watt(double dbm) { return std::pow(10.0, dbm / 10.0) * 1e-3; }
inline double watt_to_dbm(double w) { return 10.0 * std::log10(w * 1e3); }
inline double db_to_linear(double db) { return std::pow(10.0, db / 10.0); }
inline double linear_to_db(double lin) { return 10.0 * std::log10(lin); }

}  // namespace passopt
