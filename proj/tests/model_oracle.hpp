#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "csst/model.hpp"

namespace csst::testing {

// Straight-line re-implementation of the forward math on plain vectors.
struct Oracle {
  const ModelParams& p;
  const ModelDims& d;

  const std::vector<double>& w(Param k) const { return p[k].values; }

  // y = tanh?(x W + b), W is [in, out] row-major
  std::vector<double> affine(const std::vector<double>& x, Param W, Param b, bool squash) const {
    const std::size_t in = x.size(), out = w(b).size();
    std::vector<double> y(out);
    for (std::size_t o = 0; o < out; ++o) {
      double s = w(b)[o];
      for (std::size_t i = 0; i < in; ++i) s += x[i] * w(W)[i * out + o];
      y[o] = squash ? std::tanh(s) : s;
    }
    return y;
  }

  std::vector<double> pooled(const ModelInput& in) const {
    const std::size_t E = d.embed_dim;
    std::vector<std::vector<double>> rows;
    std::vector<double> score;
    for (std::size_t j = 0; j < in.tokens.size(); ++j) {
      if (!in.token_present[j]) continue;
      std::vector<double> e(E);
      double s = 0;
      for (std::size_t k = 0; k < E; ++k) {
        e[k] = w(Param::kTokenEmbedding)[in.tokens[j] * E + k] + w(Param::kPositional)[j * E + k];
        s += e[k] * w(Param::kQuestionPool)[k];
      }
      rows.push_back(e);
      score.push_back(s);
    }
    const double mx = *std::max_element(score.begin(), score.end());
    double z = 0;
    for (double& s : score) z += (s = std::exp(s - mx));
    std::vector<double> out(E, 0.0);
    for (std::size_t r = 0; r < rows.size(); ++r)
      for (std::size_t k = 0; k < E; ++k) out[k] += score[r] / z * rows[r][k];
    return out;
  }

  std::vector<double> vqa(const ModelInput& in, std::vector<double>* attention = nullptr) const {
    const std::size_t H = d.hidden, F = d.feature_dim;
    const auto q = affine(pooled(in), Param::kQuestionW, Param::kQuestionB, true);
    std::vector<std::vector<double>> objs;
    std::vector<double> score;
    for (std::size_t i = 0; i < in.n_objects(); ++i) {
      if (!in.object_keep[i]) continue;
      std::vector<double> v(in.features.begin() + i * F, in.features.begin() + (i + 1) * F);
      const auto o = affine(v, Param::kObjectW, Param::kObjectB, true);
      double s = 0;
      for (std::size_t h = 0; h < H; ++h) s += o[h] * q[h] * w(Param::kAttention)[h];
      objs.push_back(o);
      score.push_back(s);
    }
    const double mx = *std::max_element(score.begin(), score.end());
    double z = 0;
    for (double& s : score) z += (s = std::exp(s - mx));
    std::vector<double> joint(H, 0.0);
    for (std::size_t r = 0; r < objs.size(); ++r)
      for (std::size_t h = 0; h < H; ++h) joint[h] += score[r] / z * objs[r][h];
    for (std::size_t h = 0; h < H; ++h) joint[h] *= q[h];
    if (attention) {
      attention->clear();
      for (double s : score) attention->push_back(s / z);
    }
    const auto hidden = affine(joint, Param::kHiddenW, Param::kHiddenB, true);
    return affine(hidden, Param::kClassifierW, Param::kClassifierB, false);
  }

  std::vector<double> qonly(const ModelInput& in) const { return head(pooled(in)); }

  std::vector<double> head(const std::vector<double>& pooled_q) const {
    const auto h = affine(pooled_q, Param::kQOnlyW1, Param::kQOnlyB1, true);
    return affine(h, Param::kQOnlyW2, Param::kQOnlyB2, false);
  }
};

}  // namespace csst::testing
