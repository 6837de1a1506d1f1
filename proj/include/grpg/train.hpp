#pragma once

#include <string>
#include <vector>

#include "grpg/adapter.hpp"
#include "grpg/losses.hpp"
#include "grpg/surrogate.hpp"
#include "grpg/synthetic.hpp"

namespace grpg {

struct TrainConfig {
  int epochs = 200;
  int batch_size = 4;
  double lr = 3e-4;
  double weight_decay = 0.01;
  double grad_clip = 1.0;
  int alpha_warmup_epochs = 60;
  double val_fraction = 0.1;
  Variant variant = Variant::V4;
  uint64_t seed = 1;
  double sigma_b = 1.0;
  LossWeights weights;
};

struct EpochRow {
  int epoch = 0;
  double train_loss = 0;
  double val_loss = 0;
  double mse = 0;
  double rank = 0;
  double div = 0;
  double alpha_loss = 0;
  double mean_alpha = 0;
  double lr = 0;
  double lambda_alpha = 0;
};

struct TrainHistory {
  std::vector<EpochRow> rows;
  bool aborted_on_nan = false;
  std::string abort_message;
};

std::string history_csv_header();
std::string history_csv_row(const EpochRow& row);

struct TrainResult {
  AdapterStack stack;
  TrainHistory history;
  double delta_bar = 0.0;
  int completed_epochs = 0;
};

// Computes feature standardization moments over the corpus records.
FeatureMoments compute_feature_moments(const Corpus& corpus);

// AdamW + cosine LR + gradient clipping over the variant's trainable blocks.
// The surrogate is bound without gradients and never updated. A non-finite
// loss aborts the run, restoring the parameters from the last finished epoch.
TrainResult train(const TrainConfig& cfg, const Corpus& corpus, const SurrogateNPNet& net,
                  AdapterStack stack);

// Mean oracle score of the stack's z_out over the given records (evaluation
// mode); used by the ablation harness and the eval CLI.
double mean_oracle_score(const SurrogateNPNet& net, const AdapterStack& stack,
                         Variant variant, const std::vector<const TrainingRecord*>& records,
                         double sigma_b);

}  // namespace grpg
