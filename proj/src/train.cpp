#include "grpg/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace grpg {

std::string history_csv_header() {
  return "epoch,train_loss,val_loss,mse,rank,div,alpha_loss,mean_alpha,lr,lambda_alpha";
}

std::string history_csv_row(const EpochRow& r) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g",
                r.epoch, r.train_loss, r.val_loss, r.mse, r.rank, r.div, r.alpha_loss,
                r.mean_alpha, r.lr, r.lambda_alpha);
  return buf;
}

FeatureMoments compute_feature_moments(const Corpus& corpus) {
  FeatureMoments m;
  if (corpus.records.empty()) return m;
  std::vector<Tensor> feats;
  for (const auto& rec : corpus.records) {
    std::vector<Tensor> e_bar;
    for (const auto& e : rec.prompt.e_k) e_bar.push_back(token_average(e));
    feats.push_back(confidence_features(token_average(rec.prompt.e_g), e_bar).as_tensor());
  }
  for (int i = 0; i < 7; ++i) {
    double mean = 0.0;
    for (const auto& f : feats) mean += f[i];
    mean /= feats.size();
    double var = 0.0;
    for (const auto& f : feats) var += (f[i] - mean) * (f[i] - mean);
    double sd = std::sqrt(var / feats.size());
    m.mean[i] = mean;
    m.stddev[i] = sd > 1e-12 ? sd : 1.0;
  }
  return m;
}

namespace {

struct Split {
  std::vector<int> train;
  std::vector<int> val;
};

Split split_corpus(int n, double val_fraction, uint64_t seed) {
  std::vector<int> idx(n);
  for (int i = 0; i < n; ++i) idx[i] = i;
  RandomStream rng(mix_seed(seed, 0x59117ULL));
  for (int i = n - 1; i > 0; --i) std::swap(idx[i], idx[rng.uniform_int(0, i)]);
  int n_val = static_cast<int>(std::llround(val_fraction * n));
  if (val_fraction > 0.0 && n > 1) n_val = std::max(n_val, 1);
  n_val = std::min(n_val, n - 1);
  if (n_val < 0) n_val = 0;
  Split s;
  for (int i = 0; i < n_val; ++i) s.val.push_back(idx[i]);
  for (int i = n_val; i < n; ++i) s.train.push_back(idx[i]);
  std::sort(s.val.begin(), s.val.end());
  std::sort(s.train.begin(), s.train.end());
  return s;
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const Corpus& corpus, const SurrogateNPNet& net,
                  AdapterStack stack) {
  if (corpus.records.empty()) fail("train: corpus is empty");
  if (cfg.alpha_warmup_epochs > cfg.epochs) fail("train: warm-up epochs exceed epochs");
  if (cfg.batch_size < 1) fail("train: batch size must be positive");

  TrainResult result{std::move(stack), {}, corpus.stats.delta_bar, 0};
  AdapterStack& s = result.stack;
  s.moments = compute_feature_moments(corpus);

  Split split = split_corpus(static_cast<int>(corpus.records.size()), cfg.val_fraction,
                             cfg.seed);
  int n_train = static_cast<int>(split.train.size());
  int steps_per_epoch = (n_train + cfg.batch_size - 1) / cfg.batch_size;
  LrSchedule schedule{cfg.lr, static_cast<long long>(cfg.epochs) * steps_per_epoch};

  std::vector<std::string> trainable = s.trainable_names(cfg.variant);
  OptimState opt = make_optim_state(cfg.weight_decay);
  long long global_step = 0;

  // snapshot for the NaN-abort path
  auto snapshot = [&] {
    std::map<std::string, Tensor> snap;
    for (const auto& name : trainable) snap[name] = s.params.get(name);
    return snap;
  };
  std::map<std::string, Tensor> last_good = snapshot();

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double lambda_alpha_now =
        lambda_alpha_schedule(epoch, cfg.epochs, cfg.alpha_warmup_epochs,
                              cfg.weights.lambda_alpha);
    std::vector<int> order = split.train;
    RandomStream shuffle_rng(mix_seed(cfg.seed, 0xE60C0 + static_cast<uint64_t>(epoch)));
    for (int i = n_train - 1; i > 0; --i)
      std::swap(order[i], order[shuffle_rng.uniform_int(0, i)]);

    EpochRow row;
    row.epoch = epoch;
    row.lambda_alpha = lambda_alpha_now;
    row.lr = cosine_lr(global_step, schedule);
    double alpha_acc = 0.0;
    int sample_count = 0;
    bool aborted = false;

    for (int step = 0; step < steps_per_epoch && !aborted; ++step) {
      int lo = step * cfg.batch_size;
      int hi = std::min(n_train, lo + cfg.batch_size);
      std::map<std::string, Tensor> grads;
      for (const auto& name : trainable) grads[name] = Tensor::zeros(s.params.get(name).shape);
      int batch = hi - lo;

      for (int b = lo; b < hi; ++b) {
        const TrainingRecord& rec = corpus.records[order[b]];
        Tape tape;
        auto sur_pv = bind_params(tape, net.params);
        auto ad_pv = bind_params(tape, s.params, [&](const std::string& n) {
          return std::find(trainable.begin(), trainable.end(), n) != trainable.end();
        });
        RandomStream drop_rng(mix_seed(cfg.seed, 0xD90Full + global_step * 64 + (b - lo)));
        GoldenForwardOptions opt_fwd;
        opt_fwd.variant = cfg.variant;
        opt_fwd.training = true;
        opt_fwd.dropout_rng = &drop_rng;
        opt_fwd.sigma_b = cfg.sigma_b;
        auto fwd = golden_rpg_forward(tape, net, sur_pv, s, ad_pv, rec.z_t, rec.prompt,
                                      opt_fwd);
        TotalLoss loss =
            total_loss(tape, fwd, rec, cfg.weights, result.delta_bar, lambda_alpha_now);
        if (!std::isfinite(loss.parts.total)) {
          result.history.aborted_on_nan = true;
          result.history.abort_message = "non-finite loss at epoch " + std::to_string(epoch) +
                                         ", record " + std::to_string(order[b]);
          aborted = true;
          break;
        }
        tape.backward(loss.value.id);
        for (const auto& name : trainable) {
          const Tensor& g = tape.grad(ad_pv.at(name).id);
          Tensor& acc = grads.at(name);
          for (size_t i = 0; i < acc.numel(); ++i) acc[i] += g[i] / batch;
        }
        row.train_loss += loss.parts.total;
        row.mse += loss.parts.mse;
        row.rank += loss.parts.rank;
        row.div += loss.parts.div;
        row.alpha_loss += loss.parts.alpha;
        alpha_acc += fwd.alpha.val()[0];
        ++sample_count;
      }
      if (aborted) break;
      clip_grad_norm(grads, cfg.grad_clip);
      double lr_now = cosine_lr(global_step, schedule);
      adamw_step(s.params, trainable, grads, opt, lr_now);
      ++global_step;
    }

    if (aborted) {
      for (const auto& [name, value] : last_good) s.params.get(name) = value;
      break;
    }

    row.train_loss /= sample_count;
    row.mse /= sample_count;
    row.rank /= sample_count;
    row.div /= sample_count;
    row.alpha_loss /= sample_count;
    row.mean_alpha = alpha_acc / sample_count;

    // held-out validation in evaluation mode
    if (!split.val.empty()) {
      double val_acc = 0.0;
      for (int idx : split.val) {
        const TrainingRecord& rec = corpus.records[idx];
        Tape tape;
        auto sur_pv = bind_params(tape, net.params);
        auto ad_pv = bind_params(tape, s.params);
        GoldenForwardOptions opt_fwd;
        opt_fwd.variant = cfg.variant;
        opt_fwd.sigma_b = cfg.sigma_b;
        auto fwd = golden_rpg_forward(tape, net, sur_pv, s, ad_pv, rec.z_t, rec.prompt,
                                      opt_fwd);
        val_acc +=
            total_loss(tape, fwd, rec, cfg.weights, result.delta_bar, lambda_alpha_now)
                .parts.total;
      }
      row.val_loss = val_acc / static_cast<double>(split.val.size());
    } else {
      row.val_loss = row.train_loss;
    }

    result.history.rows.push_back(row);
    result.completed_epochs = epoch + 1;
    last_good = snapshot();
  }
  return result;
}

double mean_oracle_score(const SurrogateNPNet& net, const AdapterStack& stack,
                         Variant variant, const std::vector<const TrainingRecord*>& records,
                         double sigma_b) {
  if (records.empty()) fail("mean_oracle_score: no records");
  Tensor projection = oracle_projection(stack.cfg.embed_d, stack.cfg.latent_c);
  double acc = 0.0;
  for (const TrainingRecord* rec : records) {
    Tape tape;
    auto sur_pv = bind_params(tape, net.params);
    auto ad_pv = bind_params(tape, stack.params);
    GoldenForwardOptions opt;
    opt.variant = variant;
    opt.sigma_b = sigma_b;
    auto fwd = golden_rpg_forward(tape, net, sur_pv, stack, ad_pv, rec->z_t, rec->prompt, opt);
    HardMasks masks = masks_from_ratios(rec->prompt.layout);
    std::vector<Tensor> e_bar;
    for (const auto& e : rec->prompt.e_k) e_bar.push_back(token_average(e));
    acc += oracle_score(fwd.z_out.val(), masks, e_bar, projection);
  }
  return acc / static_cast<double>(records.size());
}

}  // namespace grpg
