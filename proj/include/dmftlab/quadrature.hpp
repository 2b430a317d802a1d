#pragma once

#include <vector>

namespace dmftlab {

// Gauss-Hermite rule for the standard normal law: sum_i w_i f(x_i) ~ E[f(Z)].
// Weights sum to one.
void gauss_hermite_normal(int n, std::vector<double>& nodes, std::vector<double>& weights);

// Gauss-Legendre rule on [a, b].
void gauss_legendre(int n, double a, double b, std::vector<double>& nodes, std::vector<double>& weights);

}  // namespace dmftlab
