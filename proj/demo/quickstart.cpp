// Estimates the MI of one correlated Gaussian pair with a PQ + SMILE hybrid
// and compares it against the closed form.

#include <cmath>
#include <cstdio>

#include "mibench/mibench.hpp"

using namespace mibench;

int main() {
  GaussianMixtureTask task;
  task.n_stacks = 1;
  task.eps_mix = 0.0;
  task.delta_mix = 0.0;

  Rng rng(1);
  Dataset data = gm_sample(task, 20000, rng);

  Quantizer q = fit_sign_quantizer(data.x);
  data.codes = q.quantize_rows(data.x);
  const CodeIndex index = CodeIndex::build(data.codes, q.n_codes);

  HybridEstimator est(ProposalModel::predictive_quantization(PqModel::make(q, 1, 11)),
                      CriticModel::separable(1, 1, default_hidden(), 32, 12), EstimatorKind::smile);

  FitConfig fit;
  fit.iterations = 5000;
  double window_sum = 0.0;
  int window_n = 0;
  two_step_fit(est, data, &index, fit, rng, [&](long long step, const MIEstimate& e) {
    if (step >= fit.iterations - 312) {
      window_sum += e.total;
      ++window_n;
    }
    if (step % 1000 == 0)
      std::printf("step %5lld  I_r %.3f  L_f %.3f  total %.3f\n", step, e.generative, e.discriminative, e.total);
  });

  const double truth = -0.5 * std::log(1.0 - task.rho * task.rho);
  std::printf("estimate %.4f nats, closed form %.4f nats\n", window_sum / window_n, truth);
  return 0;
}
