#pragma once

#include "prosynth/autodiff.hpp"
#include "prosynth/common.hpp"

namespace ps {

/// Variance schedule for a T-step diffusion process. beta/alpha/alpha_bar are
/// indexed 1..T; alpha_bar(0) = 1 so t = 0 is the identity boundary.
struct DiffusionSchedule {
  int steps = 4;
  Vec beta;       // size T+1, entry 0 unused (0)
  Vec alpha;      // 1 - beta
  Vec alpha_bar;  // cumulative product, alpha_bar(0) = 1

  /// Variance-preserving discretization
  ///   beta_t = 1 - exp(-beta_min/T - (beta_max-beta_min)(2t-1)/(2T^2)).
  static DiffusionSchedule variance_preserving(int steps, double beta_min = 0.1,
                                               double beta_max = 20.0);

  void validate() const;

  double posterior_variance(int t) const;  // beta_tilde_t
  /// Gaussian posterior mean of x_{t-1} given (x_t, x_0).
  Mat posterior_mean(const Mat& x_t, const Mat& x_0, int t) const;

  void check_t(int t, int lowest = 1) const {
    if (t < lowest || t > steps)
      throw ArgumentError("diffusion: t out of range [" + std::to_string(lowest) +
                          ", " + std::to_string(steps) + "]");
  }
};

/// Sample of q(x_t | x_0) = N(sqrt(abar_t) x_0, (1-abar_t) I); t = 0 returns
/// x_0 unchanged without consuming randomness.
Mat forward_diffuse(const Mat& x_0, int t, const DiffusionSchedule& sched, Rng& rng);

/// One forward step q(x_t | x_{t-1}) = N(sqrt(alpha_t) x_{t-1}, beta_t I).
Mat forward_step(const Mat& x_prev, int t, const DiffusionSchedule& sched, Rng& rng);

/// Sample of q(x_{t-1} | x_t, x_0); deterministic (the mean) at t = 1.
Mat posterior_sample(const Mat& x_t, const Mat& x_0, int t,
                     const DiffusionSchedule& sched, Rng& rng);

/// Graph version used in generator training: mean(x_t, x0_pred) + sigma*eps
/// with pre-drawn noise, differentiable through x0_pred.
ad::Var posterior_sample_graph(ad::Graph& g, ad::Var x_t, ad::Var x0_pred, int t,
                               const DiffusionSchedule& sched, const Mat& noise);

}  // namespace ps
