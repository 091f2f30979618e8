#pragma once

#include <vector>

namespace logo {

// Minimum-cost assignment on a square cost matrix (Jonker-Volgenant shortest
// augmenting path). Returns row -> column. Deterministic: rows are processed
// in order and scans break ties by the lowest index.
std::vector<int> min_cost_assignment(const std::vector<std::vector<double>>& cost);

// Rectangular helper: each row may also stay unmatched at `skip_cost`.
// Returns row -> column or -1 for skipped rows.
std::vector<int> assign_with_skip(const std::vector<std::vector<double>>& cost, double skip_cost);

}  // namespace logo
