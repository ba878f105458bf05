#include "csst/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace csst::ad {

namespace {

double evaluate(const ScalarFn& fn, const Shape& shape, std::vector<double> x) {
  Graph g;
  const Tensor in = g.constant(shape, std::move(x));
  return fn(g, in).item();
}

}  // namespace

double finite_diff_check(const ScalarFn& fn, const Shape& shape, std::span<const double> x,
                         double eps) {
  Graph g;
  const Tensor in = g.leaf(shape, std::vector<double>(x.begin(), x.end()));
  const Tensor out = fn(g, in);
  if (out.size() != 1) {
    throw ShapeError("finite_diff_check", {out.shape()}, "function output is not a scalar");
  }
  const auto grads = g.backward(out);
  const auto analytic = grads.of(in);

  double worst = 0.0;
  std::vector<double> probe(x.begin(), x.end());
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + eps;
    const double up = evaluate(fn, shape, probe);
    probe[i] = orig - eps;
    const double down = evaluate(fn, shape, probe);
    probe[i] = orig;
    const double numeric = (up - down) / (2.0 * eps);
    const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i]));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace csst::ad
