#include "dmftlab/grid.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "dmftlab/errors.hpp"

namespace dmftlab {

TimeGrid TimeGrid::from_horizon(double eta, double T) {
    if (!(eta > 0.0) || !std::isfinite(eta)) throw ConfigError("grid.eta", "step size must be positive");
    if (!(T >= eta) || !std::isfinite(T)) throw ConfigError("grid.T", "horizon must be at least one step");
    TimeGrid g;
    g.eta = eta;
    g.m = int(std::floor(T / eta * (1.0 + 1e-9)));
    return g;
}

std::vector<double> TimeGrid::times() const {
    std::vector<double> t(size());
    for (int i = 0; i <= m; ++i) t[i] = time(i);
    return t;
}

int TimeGrid::knot_of(double t) const {
    double x = t / eta;
    double i = std::round(x);
    if (std::abs(x - i) > 1e-9 * std::max(1.0, std::abs(x)) || i < 0 || i > m)
        throw std::out_of_range("time " + std::to_string(t) + " is not a grid knot");
    return int(i);
}

}  // namespace dmftlab
