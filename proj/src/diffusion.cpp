#include "prosynth/diffusion.hpp"

namespace ps {

DiffusionSchedule DiffusionSchedule::variance_preserving(int steps,
                                                         double beta_min,
                                                         double beta_max) {
  if (steps < 1) throw ArgumentError("DiffusionSchedule: steps must be >= 1");
  DiffusionSchedule s;
  s.steps = steps;
  s.beta = Vec::Zero(steps + 1);
  s.alpha = Vec::Ones(steps + 1);
  s.alpha_bar = Vec::Ones(steps + 1);
  const double t2 = 2.0 * steps * static_cast<double>(steps);
  for (int t = 1; t <= steps; ++t) {
    const double exponent =
        -beta_min / steps - (beta_max - beta_min) * (2.0 * t - 1.0) / t2;
    s.beta(t) = 1.0 - std::exp(exponent);
    s.alpha(t) = 1.0 - s.beta(t);
    s.alpha_bar(t) = s.alpha_bar(t - 1) * s.alpha(t);
  }
  s.validate();
  return s;
}

void DiffusionSchedule::validate() const {
  if (steps < 1 || beta.size() != steps + 1)
    throw ArgumentError("DiffusionSchedule: malformed");
  for (int t = 1; t <= steps; ++t) {
    if (!(beta(t) > 0.0 && beta(t) < 1.0))
      throw ArgumentError("DiffusionSchedule: beta_t must lie in (0, 1)");
    if (!(alpha_bar(t) < alpha_bar(t - 1)))
      throw ArgumentError("DiffusionSchedule: alpha_bar must strictly decrease");
  }
  if (1.0 - alpha_bar(steps) < 0.999)
    throw ArgumentError("DiffusionSchedule: terminal noise level too low");
}

double DiffusionSchedule::posterior_variance(int t) const {
  check_t(t);
  return (1.0 - alpha_bar(t - 1)) * beta(t) / (1.0 - alpha_bar(t));
}

Mat DiffusionSchedule::posterior_mean(const Mat& x_t, const Mat& x_0, int t) const {
  check_t(t);
  if (t == 1) return x_0;  // alpha_bar(0) = 1 collapses the mean onto x_0
  const double c0 = std::sqrt(alpha_bar(t - 1)) * beta(t) / (1.0 - alpha_bar(t));
  const double ct = std::sqrt(alpha(t)) * (1.0 - alpha_bar(t - 1)) / (1.0 - alpha_bar(t));
  return c0 * x_0 + ct * x_t;
}

Mat forward_diffuse(const Mat& x_0, int t, const DiffusionSchedule& sched,
                    Rng& rng) {
  if (t == 0) return x_0;  // alpha_bar(0) = 1: identity boundary
  sched.check_t(t);
  const double scale = std::sqrt(sched.alpha_bar(t));
  const double stddev = std::sqrt(1.0 - sched.alpha_bar(t));
  return scale * x_0 + stddev * rng.normal_matrix(x_0.rows(), x_0.cols());
}

Mat forward_step(const Mat& x_prev, int t, const DiffusionSchedule& sched,
                 Rng& rng) {
  sched.check_t(t);
  return std::sqrt(sched.alpha(t)) * x_prev +
         std::sqrt(sched.beta(t)) * rng.normal_matrix(x_prev.rows(), x_prev.cols());
}

Mat posterior_sample(const Mat& x_t, const Mat& x_0, int t,
                     const DiffusionSchedule& sched, Rng& rng) {
  if (x_t.rows() != x_0.rows() || x_t.cols() != x_0.cols())
    throw ArgumentError("posterior_sample: shape mismatch");
  Mat mean = sched.posterior_mean(x_t, x_0, t);
  const double var = sched.posterior_variance(t);
  if (var <= 0.0) return mean;  // t = 1 is deterministic
  return mean + std::sqrt(var) * rng.normal_matrix(x_t.rows(), x_t.cols());
}

ad::Var posterior_sample_graph(ad::Graph& g, ad::Var x_t, ad::Var x0_pred, int t,
                               const DiffusionSchedule& sched, const Mat& noise) {
  sched.check_t(t);
  if (t == 1) return x0_pred;
  const double c0 =
      std::sqrt(sched.alpha_bar(t - 1)) * sched.beta(t) / (1.0 - sched.alpha_bar(t));
  const double ct = std::sqrt(sched.alpha(t)) * (1.0 - sched.alpha_bar(t - 1)) /
                    (1.0 - sched.alpha_bar(t));
  ad::Var mean = ad::add(ad::scale(x0_pred, c0), ad::scale(x_t, ct));
  const double var = sched.posterior_variance(t);
  if (var <= 0.0) return mean;
  return ad::add(mean, ad::constant(g, Mat(std::sqrt(var) * noise)));
}

}  // namespace ps
