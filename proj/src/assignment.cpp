#include "logo/assignment.hpp"

#include <limits>

#include "logo/common.hpp"

namespace logo {

std::vector<int> min_cost_assignment(const std::vector<std::vector<double>>& cost) {
  const int n = static_cast<int>(cost.size());
  if (n == 0) return {};
  for (const auto& row : cost)
    require(static_cast<int>(row.size()) == n, "min_cost_assignment: matrix must be square");

  const double inf = std::numeric_limits<double>::infinity();
  // 1-based potentials; column 0 is a virtual source
  std::vector<double> u(static_cast<size_t>(n + 1), 0.0), v(static_cast<size_t>(n + 1), 0.0);
  std::vector<int> way(static_cast<size_t>(n + 1), 0), match(static_cast<size_t>(n + 1), 0);
  for (int i = 1; i <= n; ++i) {
    match[0] = i;
    int j0 = 0;
    std::vector<double> minv(static_cast<size_t>(n + 1), inf);
    std::vector<char> used(static_cast<size_t>(n + 1), 0);
    do {
      used[static_cast<size_t>(j0)] = 1;
      const int i0 = match[static_cast<size_t>(j0)];
      double delta = inf;
      int j1 = -1;
      for (int j = 1; j <= n; ++j) {
        if (used[static_cast<size_t>(j)]) continue;
        const double cur = cost[static_cast<size_t>(i0 - 1)][static_cast<size_t>(j - 1)] -
                           u[static_cast<size_t>(i0)] - v[static_cast<size_t>(j)];
        if (cur < minv[static_cast<size_t>(j)]) {
          minv[static_cast<size_t>(j)] = cur;
          way[static_cast<size_t>(j)] = j0;
        }
        if (minv[static_cast<size_t>(j)] < delta) {
          delta = minv[static_cast<size_t>(j)];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[static_cast<size_t>(j)]) {
          u[static_cast<size_t>(match[static_cast<size_t>(j)])] += delta;
          v[static_cast<size_t>(j)] -= delta;
        } else {
          minv[static_cast<size_t>(j)] -= delta;
        }
      }
      j0 = j1;
    } while (match[static_cast<size_t>(j0)] != 0);
    do {
      const int j1 = way[static_cast<size_t>(j0)];
      match[static_cast<size_t>(j0)] = match[static_cast<size_t>(j1)];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> row_to_col(static_cast<size_t>(n), -1);
  for (int j = 1; j <= n; ++j)
    if (match[static_cast<size_t>(j)] > 0) row_to_col[static_cast<size_t>(match[static_cast<size_t>(j)] - 1)] = j - 1;
  return row_to_col;
}

std::vector<int> assign_with_skip(const std::vector<std::vector<double>>& cost, double skip_cost) {
  const int rows = static_cast<int>(cost.size());
  if (rows == 0) return {};
  const int cols = cost.empty() ? 0 : static_cast<int>(cost[0].size());
  // square layout: real columns, then one personal skip column per row;
  // padding rows absorb unused columns at zero cost.
  const int n = cols + rows;
  const double big = 1e18;
  std::vector<std::vector<double>> sq(static_cast<size_t>(n),
                                      std::vector<double>(static_cast<size_t>(n), 0.0));
  for (int i = 0; i < rows; ++i) {
    require(static_cast<int>(cost[static_cast<size_t>(i)].size()) == cols,
            "assign_with_skip: ragged cost matrix");
    for (int j = 0; j < cols; ++j) sq[static_cast<size_t>(i)][static_cast<size_t>(j)] = cost[static_cast<size_t>(i)][static_cast<size_t>(j)];
    for (int j = 0; j < rows; ++j)
      sq[static_cast<size_t>(i)][static_cast<size_t>(cols + j)] = (i == j) ? skip_cost : big;
  }
  auto sol = min_cost_assignment(sq);
  std::vector<int> out(static_cast<size_t>(rows), -1);
  for (int i = 0; i < rows; ++i)
    if (sol[static_cast<size_t>(i)] < cols) out[static_cast<size_t>(i)] = sol[static_cast<size_t>(i)];
  return out;
}

}  // namespace logo
