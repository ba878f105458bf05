#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "csst/autodiff.hpp"

namespace csst::ad {

/// Builds a scalar on `graph` from the leaf `input`.
using ScalarFn = std::function<Tensor(Graph& graph, const Tensor& input)>;

/// Compares the reverse-mode gradient of `fn` at `x` against central
/// differences with step `eps`. Returns
///   max_i |analytic_i - numeric_i| / max(1, |analytic_i|).
/// Throws ShapeError if `fn` does not produce a single element.
double finite_diff_check(const ScalarFn& fn, const Shape& shape, std::span<const double> x,
                         double eps = 1e-5);

}  // namespace csst::ad

namespace csst {

struct GradCheckResult {
  std::string name;
  int points = 0;
  double max_error = 0.0;
  double tolerance = 0.0;
  bool passed() const { return max_error <= tolerance; }
};

/// Every autodiff primitive plus the full toy model, `points` random
/// double-precision points each.
std::vector<GradCheckResult> run_gradcheck_suite(std::uint64_t seed = 7, int points = 10,
                                                 double tolerance = 1e-4);

}  // namespace csst
