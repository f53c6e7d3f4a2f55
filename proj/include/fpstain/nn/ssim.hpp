#pragma once

#include "fpstain/metrics.hpp"
#include "fpstain/nn/graph.hpp"

namespace fpstain::nn {

/// Differentiable multiscale SSIM between two single-channel tensors, same
/// definition and scale reduction as metrics::ms_ssim.
template <typename S>
typename Graph<S>::Var ms_ssim(Graph<S>& g, typename Graph<S>::Var x, typename Graph<S>::Var y,
                               const metrics::SsimParams& params) {
  using Var = typename Graph<S>::Var;
  params.validate();
  const Tensor<S>& xv = g.value(x);
  if (!xv.same_shape(g.value(y)) || xv.c != 1) throw ShapeError("ms_ssim expects equal single-channel inputs");
  const int levels = metrics::feasible_scales(xv.h, xv.w, params);
  if (levels == 0) throw SizeError("image is smaller than the SSIM window");
  const auto weights = metrics::effective_weights(params, levels);
  std::vector<S> taps;
  for (double t : metrics::gaussian_taps(params.window, params.sigma)) taps.push_back(static_cast<S>(t));
  const S c1 = static_cast<S>(params.c1());
  const S c2 = static_cast<S>(params.c2());

  Var result = -1;
  Var a = x;
  Var b = y;
  for (int level = 0; level < levels; ++level) {
    const Var mu_a = g.filter_valid(a, taps);
    const Var mu_b = g.filter_valid(b, taps);
    const Var mu_aa = g.mul(mu_a, mu_a);
    const Var mu_bb = g.mul(mu_b, mu_b);
    const Var mu_ab = g.mul(mu_a, mu_b);
    const Var var_a = g.sub(g.filter_valid(g.mul(a, a), taps), mu_aa);
    const Var var_b = g.sub(g.filter_valid(g.mul(b, b), taps), mu_bb);
    const Var cov = g.sub(g.filter_valid(g.mul(a, b), taps), mu_ab);
    const Var cs_map = g.div(g.affine(cov, S(2), c2), g.affine(g.add(var_a, var_b), S(1), c2));
    Var factor;
    if (level + 1 < levels) {
      factor = g.relu(g.mean(cs_map));
    } else {
      const Var lum = g.div(g.affine(mu_ab, S(2), c1), g.affine(g.add(mu_aa, mu_bb), S(1), c1));
      factor = g.relu(g.mean(g.mul(lum, cs_map)));
    }
    const Var term = g.pow(factor, static_cast<S>(weights[level]));
    result = result < 0 ? term : g.mul(result, term);
    if (level + 1 < levels) {
      a = g.avg_pool2(a);
      b = g.avg_pool2(b);
    }
  }
  return result;
}

}  // namespace fpstain::nn
