#include "grpg/losses.hpp"

#include <cmath>

namespace grpg {

// Squared distances are averaged over elements so the four terms stay
// commensurate at any latent size; the paper's fixed weights (and its
// alpha-trajectory toward the mean target) assume this reduction.
Var mean_sq_err(Var a, Var b) {
  return scale(mse(a, b), 1.0 / static_cast<double>(a.val().numel()));
}

Var rank_loss(Tape& tape, Var z_out, Var z_plus, Var z_minus, double delta,
              double delta_bar, const LossWeights& w) {
  if (delta_bar <= 0.0) fail("rank_loss: corpus delta_bar must be positive (degenerate corpus)");
  double ratio = delta / delta_bar;
  double margin = w.m0 * std::min(3.0, std::max(0.1, ratio));
  Var gap = sub(mean_sq_err(z_out, z_plus), mean_sq_err(z_out, z_minus));
  return hinge(add_scalar(gap, margin));
}

Var diversity_loss(Tape& tape, Var z_out, const HardMasks& masks) {
  if (masks.k == 1) return make_const_scalar(tape, 0.0);
  const Tensor& zv = z_out.val();
  if (zv.ndim() != 3) fail("diversity_loss: tensor is not C x H x W: " + zv.shape_str());
  int c = zv.shape[0];
  size_t hw = static_cast<size_t>(zv.shape[1]) * zv.shape[2];
  Var z2d = reshape(z_out, {c, static_cast<int>(hw)});

  std::vector<Var> mu;
  for (int k = 0; k < masks.k; ++k) {
    double count = tensor_sum(masks.masks[k]);
    if (count <= 0.0) fail("diversity_loss: region " + std::to_string(k + 1) + " is empty");
    Tensor col = masks.masks[k];
    col.shape = {static_cast<int>(hw), 1};
    for (double& v : col.data) v /= count;
    mu.push_back(matmul(z2d, make_const(tape, col)));  // C x 1 region mean
  }
  Var acc{};
  for (int k = 0; k + 1 < masks.k; ++k) {
    Var d = l2_norm(sub(mu[k], mu[k + 1]));
    acc = (k == 0) ? d : add(acc, d);
  }
  return scale(acc, -1.0 / static_cast<double>(masks.k - 1));
}

double alpha_target(double delta, const LossWeights& w) {
  return w.alpha_max / (1.0 + std::exp(-delta / w.tau_alpha));
}

Var alpha_loss(Tape& tape, Var alpha, double delta, const LossWeights& w) {
  return smooth_l1(alpha, make_const_scalar(tape, alpha_target(delta, w)));
}

TotalLoss total_loss(Tape& tape, const GoldenForward& fwd, const TrainingRecord& rec,
                     const LossWeights& w, double delta_bar, double lambda_alpha_now) {
  HardMasks masks = masks_from_ratios(rec.prompt.layout);
  Var z_plus = make_const(tape, rec.z_plus);
  Var z_minus = make_const(tape, rec.z_minus);

  Var mse_term = mean_sq_err(fwd.z_out, z_plus);
  Var rank_term = rank_loss(tape, fwd.z_out, z_plus, z_minus, rec.delta, delta_bar, w);
  Var div_term = diversity_loss(tape, fwd.z_out, masks);
  Var alpha_term = alpha_loss(tape, fwd.alpha, rec.delta, w);

  Var total = add(mse_term, scale(rank_term, w.lambda_rank));
  total = add(total, scale(div_term, w.lambda_div));
  total = add(total, scale(alpha_term, lambda_alpha_now));

  TotalLoss out{total, {}};
  out.parts.total = total.val()[0];
  out.parts.mse = mse_term.val()[0];
  out.parts.rank = rank_term.val()[0];
  out.parts.div = div_term.val()[0];
  out.parts.alpha = alpha_term.val()[0];
  return out;
}

double lambda_alpha_schedule(int epoch, int total_epochs, int warmup_epochs,
                             double lambda_alpha_base) {
  if (epoch < 0 || epoch >= total_epochs)
    fail("lambda_alpha_schedule: epoch " + std::to_string(epoch) + " outside [0," +
         std::to_string(total_epochs) + ")");
  if (warmup_epochs > total_epochs) fail("lambda_alpha_schedule: warm-up exceeds schedule");
  if (epoch == total_epochs - 1) return 0.0;  // exactly zero at the final epoch
  if (epoch < warmup_epochs) return lambda_alpha_base;
  double frac = static_cast<double>(epoch - warmup_epochs) /
                static_cast<double>(total_epochs - warmup_epochs);
  return lambda_alpha_base * (1.0 - frac);
}

}  // namespace grpg
