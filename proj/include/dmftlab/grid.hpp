#pragma once

#include <vector>

namespace dmftlab {

// Knots t_i = i * eta for i = 0..m.
struct TimeGrid {
    double eta = 0.1;
    int m = 0;

    // m = floor(T / eta), with a relative slack of 1e-9 so that T = m*eta in
    // decimal input (e.g. T = 2, eta = 0.05) is not truncated by rounding.
    static TimeGrid from_horizon(double eta, double T);

    double time(int i) const { return double(i) * eta; }
    double horizon() const { return time(m); }
    int size() const { return m + 1; }
    std::vector<double> times() const;
    // Knot index of time t; throws std::out_of_range when t is not a knot.
    int knot_of(double t) const;

    bool operator==(const TimeGrid&) const = default;
};

}  // namespace dmftlab
