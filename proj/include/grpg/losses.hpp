#pragma once

#include "grpg/adapter.hpp"
#include "grpg/geometry.hpp"
#include "grpg/synthetic.hpp"
#include "grpg/tape.hpp"

namespace grpg {

struct LossWeights {
  double lambda_rank = 0.5;
  double lambda_div = 0.05;  // the paper's experiments section uses 0.1
  double lambda_alpha = 1.0;
  double m0 = 0.05;
  double tau_alpha = 0.05;
  double alpha_max = 0.6;
};

// Element-mean squared distance; the reduction used by every squared term.
Var mean_sq_err(Var a, Var b);

// max(0, d(z_out,z+) - d(z_out,z-) + m0 * clip(delta/delta_bar, 0.1, 3))
// with d the mean squared distance.
Var rank_loss(Tape& tape, Var z_out, Var z_plus, Var z_minus, double delta,
              double delta_bar, const LossWeights& w);

// -(1/(K-1)) sum_k |mu_k - mu_{k+1}|_2 over adjacent region means; 0 for K=1.
Var diversity_loss(Tape& tape, Var z_out, const HardMasks& masks);

// SmoothL1(alpha, alpha_max * sigmoid(delta / tau_alpha))
Var alpha_loss(Tape& tape, Var alpha, double delta, const LossWeights& w);
double alpha_target(double delta, const LossWeights& w);

struct LossBreakdown {
  double total = 0, mse = 0, rank = 0, div = 0, alpha = 0;
};

struct TotalLoss {
  Var value;
  LossBreakdown parts;
};

// mse + lambda_r * rank + lambda_d * div + lambda_alpha(epoch) * alpha
TotalLoss total_loss(Tape& tape, const GoldenForward& fwd, const TrainingRecord& rec,
                     const LossWeights& w, double delta_bar, double lambda_alpha_now);

// Constant through the warm-up, linear decay afterwards, exactly 0 at the
// final epoch.
double lambda_alpha_schedule(int epoch, int total_epochs, int warmup_epochs,
                             double lambda_alpha_base);

}  // namespace grpg
