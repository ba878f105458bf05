#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "csst/cst.hpp"
#include "csst/gradcheck.hpp"
#include "csst/model.hpp"
#include "csst/rng.hpp"

namespace csst {

using ad::Graph;
using ad::Shape;
using ad::Tensor;

namespace {

// A case draws any constants it needs from the rng and returns the function
// to differentiate; the input point is drawn from [lo, hi].
struct Case {
  std::string name;
  Shape shape;
  double lo = -1.0, hi = 1.0;
  std::function<ad::ScalarFn(Rng&)> make;
};

std::vector<double> draw(Rng& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(lo, hi);
  return v;
}

// Random linear read-out so that every output element carries a distinct
// weight into the scalar.
Tensor weigh(Graph& g, const Tensor& t, const std::vector<double>& w) {
  return ad::sum(ad::mul(t, g.constant(t.shape(), w)));
}

using Unary = std::function<Tensor(const Tensor&)>;

Case unary(std::string name, Shape shape, Unary op, double lo = -1.0, double hi = 1.0) {
  Case c{std::move(name), shape, lo, hi, {}};
  c.make = [op, shape](Rng& rng) -> ad::ScalarFn {
    Graph probe;
    const std::size_t n = op(probe.constant(shape, std::vector<double>(ad::numel(shape), 1.0))).size();
    return [op, w = draw(rng, n)](Graph& g, const Tensor& x) { return weigh(g, op(x), w); };
  };
  return c;
}

using Binary = std::function<Tensor(const Tensor&, const Tensor&)>;

std::size_t output_size(const Binary& op, const Shape& sa, const Shape& sb) {
  Graph probe;
  return op(probe.constant(sa, std::vector<double>(ad::numel(sa), 1.0)),
            probe.constant(sb, std::vector<double>(ad::numel(sb), 1.0)))
      .size();
}

// Two cases: differentiate with respect to the left, then the right operand.
void binary(std::vector<Case>& out, const std::string& name, Shape sa, Shape sb, Binary op) {
  out.push_back({name + "/lhs", sa, -1.0, 1.0, [=](Rng& rng) -> ad::ScalarFn {
                   const auto b = draw(rng, ad::numel(sb));
                   const auto w = draw(rng, output_size(op, sa, sb));
                   return [=](Graph& g, const Tensor& x) { return weigh(g, op(x, g.constant(sb, b)), w); };
                 }});
  out.push_back({name + "/rhs", sb, -1.0, 1.0, [=](Rng& rng) -> ad::ScalarFn {
                   const auto a = draw(rng, ad::numel(sa));
                   const auto w = draw(rng, output_size(op, sa, sb));
                   return [=](Graph& g, const Tensor& x) { return weigh(g, op(g.constant(sa, a), x), w); };
                 }});
}

std::vector<Case> primitive_cases() {
  std::vector<Case> cs;
  binary(cs, "matmul", {2, 3, 4}, {4, 5}, [](const Tensor& a, const Tensor& b) { return ad::matmul(a, b); });
  binary(cs, "add", {3, 4}, {4}, [](const Tensor& a, const Tensor& b) { return ad::add(a, b); });
  binary(cs, "sub", {3, 1}, {1, 4}, [](const Tensor& a, const Tensor& b) { return ad::sub(a, b); });
  binary(cs, "mul", {3, 1}, {2, 1, 4}, [](const Tensor& a, const Tensor& b) { return ad::mul(a, b); });
  binary(cs, "cosine", {3, 4}, {3, 4},
         [](const Tensor& a, const Tensor& b) { return ad::cosine_similarity(a, b); });
  binary(cs, "concat", {2, 3}, {2, 2}, [](const Tensor& a, const Tensor& b) {
    const std::vector<Tensor> parts{a, b};
    return ad::concat(parts, 1);
  });

  cs.push_back(unary("scale", {3, 4}, [](const Tensor& x) { return ad::scale(x, -1.7); }));
  cs.push_back(unary("add_scalar", {3, 4}, [](const Tensor& x) { return ad::add_scalar(x, 0.3); }));
  cs.push_back(unary("sum", {3, 4}, [](const Tensor& x) { return ad::sum(x); }));
  cs.push_back(unary("sum_axis0", {3, 4}, [](const Tensor& x) { return ad::sum(x, 0); }));
  cs.push_back(unary("sum_axis1", {2, 3, 4}, [](const Tensor& x) { return ad::sum(x, 1); }));
  cs.push_back(unary("mean", {3, 4}, [](const Tensor& x) { return ad::mean(x); }));
  cs.push_back(unary("mean_axis", {3, 4}, [](const Tensor& x) { return ad::mean(x, -1); }));
  cs.push_back(unary("embedding", {5, 3}, [](const Tensor& x) {
    return ad::embedding(x, {0, 2, 2, 4, 1, 0}, {2, 3});
  }));
  cs.push_back(unary("softmax_last", {3, 4}, [](const Tensor& x) { return ad::softmax(x, -1); }, -3, 3));
  cs.push_back(unary("softmax_axis0", {3, 4}, [](const Tensor& x) { return ad::softmax(x, 0); }, -3, 3));
  cs.push_back(unary("sigmoid", {3, 4}, [](const Tensor& x) { return ad::sigmoid(x); }, -4, 4));
  cs.push_back(unary("tanh", {3, 4}, [](const Tensor& x) { return ad::tanh(x); }, -3, 3));
  cs.push_back(unary("log_sigmoid", {3, 4}, [](const Tensor& x) { return ad::log_sigmoid(x); }, -6, 6));
  cs.push_back(unary("masked_fill", {3, 4}, [](const Tensor& x) {
    return ad::softmax(ad::masked_fill(x, {0, 1, 0, 0, 1, 0, 0, 1, 0, 0, 0, 0}), -1);
  }));
  cs.push_back(unary("log", {3, 4}, [](const Tensor& x) { return ad::log(x); }, 0.5, 3.0));
  cs.push_back(unary("exp", {3, 4}, [](const Tensor& x) { return ad::exp(x); }, -2, 2));
  cs.push_back(unary("reshape", {3, 4}, [](const Tensor& x) { return ad::tanh(ad::reshape(x, {2, 6})); }));
  return cs;
}

// Small model so the central differences stay cheap.
ModelDims tiny_dims() {
  ModelDims d;
  d.vocab_size = 7;
  d.n_answers = 5;
  d.feature_dim = 4;
  d.hidden = 4;
  d.embed_dim = 3;
  d.max_tokens = 4;
  return d;
}

std::vector<ModelInput> tiny_inputs(const ModelDims& d, Rng& rng) {
  std::vector<ModelInput> rows(3);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    auto& in = rows[r];
    in.features = draw(rng, 3 * d.feature_dim, 0.0, 1.5);
    in.object_keep = {1, 1, static_cast<std::uint8_t>(r == 1 ? 0 : 1)};
    const std::size_t len = r == 2 ? 3 : 4;
    for (std::size_t j = 0; j < len; ++j) in.tokens.push_back(rng.below(d.vocab_size));
    in.token_present.assign(len, 1);
  }
  return rows;
}

// Fused XE plus a random read-out of the VQA logits, so both heads and the
// fusion are on the path.
Tensor model_scalar(Graph& g, const BoundParams& p, const InputBatch& batch, FusionMode mode,
                    const std::vector<double>& targets, const std::vector<double>& w) {
  const TrainForward fwd = train_forward(g, p, batch, mode);
  return ad::add(xe_loss(g, fwd.fused.logits, targets), weigh(g, fwd.vqa.answers.logits, w));
}

std::vector<Case> model_cases() {
  std::vector<Case> cs;
  const ModelDims d = tiny_dims();
  for (FusionMode mode : {FusionMode::kLogitSum, FusionMode::kSigmoidProduct}) {
    const std::string tag = std::string("model[") + to_string(mode) + "]/";
    for (std::size_t i = 0; i < kParamCount; ++i) {
      const ModelParams shapes = ModelParams::init(d, mode, 0);
      Case c{tag + param_name(static_cast<Param>(i)), shapes.tensors()[i].shape, -1.0, 1.0, {}};
      c.make = [d, mode, i](Rng& rng) -> ad::ScalarFn {
        const ModelParams base = ModelParams::init(d, mode, rng.next());
        const InputBatch batch = pack(tiny_inputs(d, rng), d);
        const auto targets = draw(rng, 3 * d.n_answers, 0.0, 1.0);
        const auto w = draw(rng, 3 * d.n_answers);
        return [=](Graph& g, const Tensor& x) {
          BoundParams p = bind(g, base, false);
          p.t[i] = x;
          return model_scalar(g, p, batch, mode, targets, w);
        };
      };
      cs.push_back(std::move(c));
    }
  }
  return cs;
}

// The object leaf is created inside the forward pass, so the generic checker
// cannot feed it; perturb the packed features instead.
double object_feature_check(Rng& rng) {
  const ModelDims d = tiny_dims();
  const ModelParams params = ModelParams::init(d, FusionMode::kLogitSum, rng.next());
  InputBatch batch = pack(tiny_inputs(d, rng), d);
  const auto w = draw(rng, batch.rows * d.n_answers);
  auto value = [&](const InputBatch& b) {
    Graph g;
    return weigh(g, ad::sigmoid(vqa_forward(g, bind(g, params, false), b).answers.logits), w).item();
  };

  Graph g;
  const VqaOutputs out = vqa_forward(g, bind(g, params, false), batch, true);
  const auto grads = g.backward(weigh(g, ad::sigmoid(out.answers.logits), w));
  const auto analytic = grads.of(out.objects);

  constexpr double eps = 1e-5;
  double worst = 0.0;
  for (std::size_t i = 0; i < batch.features.size(); ++i) {
    const double orig = batch.features[i];
    batch.features[i] = orig + eps;
    const double up = value(batch);
    batch.features[i] = orig - eps;
    const double down = value(batch);
    batch.features[i] = orig;
    const double numeric = (up - down) / (2.0 * eps);
    worst = std::max(worst, std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i])));
  }
  return worst;
}

}  // namespace

std::vector<GradCheckResult> run_gradcheck_suite(std::uint64_t seed, int points, double tolerance) {
  auto cases = primitive_cases();
  auto model = model_cases();
  cases.insert(cases.end(), model.begin(), model.end());

  std::vector<GradCheckResult> out;
  Rng rng(seed, 301);
  for (const auto& c : cases) {
    GradCheckResult r{c.name, points, 0.0, tolerance};
    for (int k = 0; k < points; ++k) {
      const auto fn = c.make(rng);
      const auto x = draw(rng, ad::numel(c.shape), c.lo, c.hi);
      r.max_error = std::max(r.max_error, ad::finite_diff_check(fn, c.shape, x));
    }
    out.push_back(r);
  }
  GradCheckResult obj{"model/object_features", points, 0.0, tolerance};
  for (int k = 0; k < points; ++k) obj.max_error = std::max(obj.max_error, object_feature_check(rng));
  out.push_back(obj);
  return out;
}

}  // namespace csst
