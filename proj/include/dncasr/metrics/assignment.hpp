// Minimum-cost one-to-one assignment (Jonker-Volgenant style shortest
// augmenting paths, O(n^3)) on a square cost matrix.
#pragma once

#include <Eigen/Dense>
#include <vector>

namespace dncasr::metrics {

// Returns row -> column; cost must be square.
std::vector<int> solve_assignment(const Eigen::MatrixXd& cost);

double assignment_cost(const Eigen::MatrixXd& cost, const std::vector<int>& row_to_col);

}  // namespace dncasr::metrics
