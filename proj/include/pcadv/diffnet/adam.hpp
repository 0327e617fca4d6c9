#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "pcadv/error.hpp"
#include "pcadv/tensor.hpp"

namespace pcadv {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First/second moment estimates for a flat parameter vector.
struct AdamMoments {
  std::vector<float> m;
  std::vector<float> v;
  std::uint64_t step = 0;

  explicit AdamMoments(std::size_t n = 0) : m(n, 0.0f), v(n, 0.0f) {}
};

/// One bias-corrected Adam step, in place.
inline void adam_step(AdamMoments& s, std::span<float> params, std::span<const float> grads, const AdamConfig& cfg) {
  if (params.size() != grads.size() || s.m.size() != params.size())
    throw InvalidArgument("adam: parameter, gradient and state sizes differ");
  ++s.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(s.step));
  const float b1 = static_cast<float>(cfg.beta1), b2 = static_cast<float>(cfg.beta2);
  const float step_size = static_cast<float>(cfg.lr / c1);
  const float inv_sqrt_c2 = static_cast<float>(1.0 / std::sqrt(c2));
  const float eps = static_cast<float>(cfg.eps);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const float g = grads[i];
    s.m[i] = b1 * s.m[i] + (1.0f - b1) * g;
    s.v[i] = b2 * s.v[i] + (1.0f - b2) * g * g;
    params[i] -= step_size * s.m[i] / (std::sqrt(s.v[i]) * inv_sqrt_c2 + eps);
  }
}

/// Adam state for a whole parameter bundle.
struct AdamState {
  TensorBundle m;
  TensorBundle v;
  std::uint64_t step = 0;

  static AdamState init(const TensorBundle& params) { return {params.zeros_like(), params.zeros_like(), 0}; }
};

struct AdamResult {
  AdamState state;
  TensorBundle params;
};

/// Pure bundle-level Adam update: returns the advanced state and new params.
inline AdamResult adam_update(const AdamState& state, const TensorBundle& params, const TensorBundle& grads,
                              const AdamConfig& cfg) {
  if (!params.same_layout(grads) || !params.same_layout(state.m) || !params.same_layout(state.v))
    throw InvalidArgument("adam_update: gradient/state layout does not match parameters");
  AdamResult r{state, params};
  ++r.state.step;
  auto p = r.params.begin();
  auto g = grads.begin();
  auto m = r.state.m.begin();
  auto v = r.state.v.begin();
  for (; p != r.params.end(); ++p, ++g, ++m, ++v) {
    AdamMoments mom;
    mom.m = std::move(m->second.data);
    mom.v = std::move(v->second.data);
    mom.step = state.step;
    adam_step(mom, p->second.data, g->second.data, cfg);
    m->second.data = std::move(mom.m);
    v->second.data = std::move(mom.v);
  }
  return r;
}

}  // namespace pcadv
