#pragma once

// Dense bounded-variable primal simplex for
//
//   maximize c.x  subject to  A x <= b,  0 <= x <= upper,  with b >= 0,
//
// so the all-slack basis is feasible and no phase one is needed. Bland's rule
// is used for both the entering and leaving choice, which rules out cycling.
// Intended for problems with few rows (tens) and many columns.

#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace entrank {

struct BoundedLp {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> a;      // rows x cols, row-major
  std::vector<double> b;      // rows, >= 0
  std::vector<double> c;      // cols
  std::vector<double> upper;  // cols, may be +inf

  double& at(std::size_t r, std::size_t col) { return a[r * cols + col]; }
};

struct LpSolution {
  std::vector<double> x;      // structural values
  std::vector<double> duals;  // shadow prices of the rows, >= 0
  double objective = 0.0;
  std::size_t iterations = 0;
};

class LpError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline LpSolution solve_bounded_lp(const BoundedLp& lp, double eps = 1e-10,
                                   std::size_t max_iterations = 1000000) {
  const std::size_t m = lp.rows, n = lp.cols, width = n + m;
  if (lp.a.size() != m * n || lp.b.size() != m || lp.c.size() != n || lp.upper.size() != n)
    throw std::invalid_argument("inconsistent LP dimensions");
  for (double v : lp.b)
    if (v < 0.0) throw std::invalid_argument("LP right-hand side must be non-negative");

  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> tab(m * width, 0.0);  // B^-1 [A I]
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t j = 0; j < n; ++j) tab[r * width + j] = lp.a[r * n + j];
    tab[r * width + n + r] = 1.0;
  }
  std::vector<double> cost(width, 0.0), upper(width, kInf);
  for (std::size_t j = 0; j < n; ++j) {
    cost[j] = lp.c[j];
    upper[j] = lp.upper[j];
  }
  std::vector<double> reduced = cost;  // c_j - c_B B^-1 a_j
  std::vector<std::size_t> basis(m);
  std::vector<double> value(m);
  for (std::size_t r = 0; r < m; ++r) basis[r] = n + r, value[r] = lp.b[r];
  std::vector<char> at_upper(width, 0), is_basic(width, 0);
  for (std::size_t r = 0; r < m; ++r) is_basic[n + r] = 1;

  std::size_t iter = 0;
  for (; iter < max_iterations; ++iter) {
    std::size_t enter = width;
    for (std::size_t j = 0; j < width; ++j) {
      if (is_basic[j]) continue;
      if ((!at_upper[j] && reduced[j] > eps && upper[j] > 0.0) || (at_upper[j] && reduced[j] < -eps)) {
        enter = j;
        break;
      }
    }
    if (enter == width) break;

    // Moving the entering variable by +theta (from lower) or -theta (from
    // upper) changes basic values by -dir * theta * column.
    const double dir = at_upper[enter] ? -1.0 : 1.0;
    double theta = upper[enter];
    std::size_t leave = m;
    bool leave_to_upper = false;
    for (std::size_t r = 0; r < m; ++r) {
      const double coef = dir * tab[r * width + enter];
      double limit = kInf;
      bool to_upper = false;
      if (coef > eps) {
        limit = value[r] / coef;
      } else if (coef < -eps && upper[basis[r]] < kInf) {
        limit = (upper[basis[r]] - value[r]) / -coef;
        to_upper = true;
      } else {
        continue;
      }
      if (limit < 0.0) limit = 0.0;
      if (limit < theta || (limit == theta && leave < m && basis[r] < basis[leave])) {
        theta = limit;
        leave = r;
        leave_to_upper = to_upper;
      }
    }
    if (theta == kInf) throw LpError("LP is unbounded");

    for (std::size_t r = 0; r < m; ++r) value[r] -= dir * theta * tab[r * width + enter];

    if (leave == m) {  // bound flip
      at_upper[enter] = !at_upper[enter];
      continue;
    }

    const double entering_value = at_upper[enter] ? upper[enter] - theta : theta;
    const std::size_t out = basis[leave];
    const double pivot = tab[leave * width + enter];
    for (std::size_t j = 0; j < width; ++j) tab[leave * width + j] /= pivot;
    for (std::size_t r = 0; r < m; ++r) {
      if (r == leave) continue;
      const double f = tab[r * width + enter];
      if (f == 0.0) continue;
      for (std::size_t j = 0; j < width; ++j) tab[r * width + j] -= f * tab[leave * width + j];
    }
    const double rf = reduced[enter];
    for (std::size_t j = 0; j < width; ++j) reduced[j] -= rf * tab[leave * width + j];
    reduced[enter] = 0.0;

    is_basic[out] = 0;
    at_upper[out] = leave_to_upper ? 1 : 0;
    is_basic[enter] = 1;
    at_upper[enter] = 0;
    basis[leave] = enter;
    value[leave] = entering_value;
  }
  if (iter == max_iterations) throw LpError("simplex iteration limit reached");

  LpSolution sol;
  sol.iterations = iter;
  sol.x.assign(n, 0.0);
  for (std::size_t j = 0; j < n; ++j)
    if (!is_basic[j] && at_upper[j]) sol.x[j] = upper[j];
  for (std::size_t r = 0; r < m; ++r)
    if (basis[r] < n) sol.x[basis[r]] = std::min(std::max(value[r], 0.0), upper[basis[r]]);
  sol.duals.resize(m);
  for (std::size_t r = 0; r < m; ++r) sol.duals[r] = std::max(0.0, -reduced[n + r]);
  for (std::size_t j = 0; j < n; ++j) sol.objective += lp.c[j] * sol.x[j];
  return sol;
}

}  // namespace entrank
