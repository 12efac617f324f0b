#pragma once

#include <span>
#include <vector>

#include "fiberlearn/sphere.hpp"

namespace fiberlearn {

/// Balanced transportation problem. Masses must sum to 1 within 1e-9; sums
/// within 1e-6 are rescaled, anything further off is rejected.
struct TransportInstance {
    std::vector<double> supply;
    std::vector<double> demand;
    std::vector<double> cost;  // supply.size() x demand.size(), row-major

    void validate() const;
};

struct TransportSolution {
    double cost = 0.0;
    std::vector<double> flow;  // row-major, same shape as cost
    int pivots = 0;
};

/// Exact optimum by the transportation simplex (least-cost start, MODI
/// pricing). Returns the optimal plan.
TransportSolution solve_transport(TransportInstance instance);

/// Earth Mover's Distance in degrees between two non-negative coefficient
/// vectors on the dictionary; ground cost is the axial angle between atoms.
/// Both inputs are L1-normalized and entries below 1e-12 are dropped.
double emd(const SphereDictionary& dict, std::span<const double> p, std::span<const double> q);
double emd(const SphereDictionary& dict, std::span<const float> p, std::span<const float> q);

}  // namespace fiberlearn
