// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Each criterion enforces its stated tolerance and runtime budget.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <vector>

#include "grpg/cli.hpp"
#include "grpg/config.hpp"
#include "grpg/losses.hpp"
#include "grpg/serialize.hpp"
#include "grpg/train.hpp"

using namespace grpg;
namespace fs = std::filesystem;

namespace {

struct Criterion {
  std::vector<std::string> failures;
  void expect(bool ok, const std::string& what) {
    if (!ok) failures.push_back(what);
  }
  template <typename T>
  void expect_eq(const T& a, const T& b, const std::string& what) {
    if (!(a == b)) failures.push_back(what);
  }
};

bool tensors_bitwise(const Tensor& a, const Tensor& b) {
  return a.same_shape(b) &&
         std::memcmp(a.data.data(), b.data.data(), a.numel() * sizeof(double)) == 0;
}

std::vector<double> random_ratios(RandomStream& rng, int k) {
  std::vector<double> r(k);
  double sum = 0;
  for (double& v : r) {
    v = 0.5 + rng.u01();
    sum += v;
  }
  double acc = 0;
  for (int i = 0; i + 1 < k; ++i) {
    r[i] /= sum;
    acc += r[i];
  }
  r[k - 1] = 1.0 - acc;
  return r;
}

PromptRecord two_region_prompt(const MockTextEncoder& enc, uint64_t seed, int h, int w) {
  RandomStream rng(seed);
  const auto& cs = concept_vocabulary();
  const auto& as = attribute_vocabulary();
  int c1 = rng.uniform_int(0, 15), c2 = (c1 + 1 + rng.uniform_int(0, 14)) % 16;
  return make_prompt_record(enc, 0, {0.5, 0.5},
                            {{{cs[c1], as[rng.uniform_int(0, 7)]}, rng.next_u64()},
                             {{cs[c2], as[rng.uniform_int(0, 7)]}, rng.next_u64()}},
                            rng.next_u64(), h, w, "acceptance");
}

// ---- criterion 1: identity at initialization ----
void criterion_identity(Criterion& c) {
  SurrogateNPNet net = SurrogateNPNet::build(SurrogateConfig{});
  AdapterStack stack = AdapterStack::init(AdapterConfig{});
  MockTextEncoder enc(8, 64);
  RandomStream rng(0xACCE01);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor z_t = Tensor::randn({4, 32, 32}, rng);
    PromptRecord p = two_region_prompt(enc, 1000 + trial, 32, 32);
    Tape tape;
    auto sur_pv = bind_params(tape, net.params);
    auto ad_pv = bind_params(tape, stack.params);
    auto fwd = golden_rpg_forward(tape, net, sur_pv, stack, ad_pv, z_t, p);
    double diff = linf_diff(fwd.z_out.val(), fwd.z_g.val());
    c.expect(diff <= 1e-9,
             "seed " + std::to_string(trial) + ": |z_out - z_g|_inf = " + std::to_string(diff));
  }
}

// ---- criterion 2: gradient suite ----
void criterion_gradients(Criterion& c) {
  MockTextEncoder enc(8, 64);
  const std::vector<std::pair<std::string, std::vector<std::string>>> groups{
      {"FiLM MLP", {"film.w1", "film.b1", "film.w2", "film.b2"}},
      {"W_Q", {"rca.wq"}},
      {"W_K", {"rca.wk"}},
      {"W_V", {"rca.wv"}},
      {"W_O", {"rca.wo"}},
      {"Confidence MLP", {"conf.w1", "conf.b1", "conf.w2", "conf.b2", "conf.w3", "conf.b3"}}};

  SurrogateNPNet net = SurrogateNPNet::build(SurrogateConfig{});
  for (int config = 0; config < 20; ++config) {
    RandomStream rng(0xACCE02 + config * 11);
    AdapterConfig acfg;
    acfg.seed = 5000 + config;
    AdapterStack stack = AdapterStack::init(acfg);
    // keep the clamps at interior points: small perturbations of the raw maps
    for (const char* name : {"film.w2", "film.b2", "rca.wo", "conf.w3", "conf.b3"})
      for (double& v : stack.params.get(name).data) v += rng.normal() * 0.02;

    PromptRecord p = two_region_prompt(enc, 9000 + config, 32, 32);
    Tensor z_t = Tensor::randn({4, 32, 32}, rng);
    Tensor target = Tensor::randn({4, 32, 32}, rng);
    auto build = [&](Tape& tape, std::map<std::string, Var>& ad_pv) {
      auto sur_pv = bind_params(tape, net.params);
      auto fwd = golden_rpg_forward(tape, net, sur_pv, stack, ad_pv, z_t, p);
      // the Eq.-7 blend and the confidence path both feed the loss
      return add(mse(fwd.z_out, make_const(tape, target)), fwd.alpha);
    };

    auto trainable = stack.trainable_names(Variant::V4);
    Tape tape;
    auto ad_pv = bind_params(tape, stack.params, [&](const std::string& n) {
      return std::find(trainable.begin(), trainable.end(), n) != trainable.end();
    });
    Var loss = build(tape, ad_pv);
    tape.backward(loss.id);

    for (const auto& [group, names] : groups) {
      for (const auto& name : names) {
        const Tensor analytic = tape.grad(ad_pv.at(name).id);
        Tensor& param = stack.params.get(name);
        int checks = std::min<size_t>(4, param.numel());
        for (int i = 0; i < checks; ++i) {
          size_t coord =
              param.numel() == 1
                  ? 0
                  : static_cast<size_t>(rng.uniform_int(0, static_cast<int>(param.numel()) - 1));
          double orig = param[coord];
          auto eval = [&](double v) {
            param[coord] = v;
            Tape t2;
            auto pv2 = bind_params(t2, stack.params);
            double r = build(t2, pv2).val()[0];
            param[coord] = orig;
            return r;
          };
          double fd = (eval(orig + 1e-5) - eval(orig - 1e-5)) / 2e-5;
          double err = std::abs(analytic[coord] - fd) /
                       std::max({1.0, std::abs(analytic[coord]), std::abs(fd)});
          c.expect(err <= 1e-4, group + " (" + name + ") config " + std::to_string(config) +
                                    " coord " + std::to_string(coord) + ": rel err " +
                                    std::to_string(err));
        }
      }
    }
  }
}

// ---- criterion 3: loss oracles ----
void criterion_loss_oracles(Criterion& c) {
  LossWeights w;
  c.expect(w.m0 == 0.05, "m0 default");
  c.expect(w.tau_alpha == 0.05, "tau_alpha default");
  c.expect(w.alpha_max == 0.6, "alpha_max default");
  c.expect(w.lambda_rank == 0.5, "lambda_rank default");
  c.expect(w.lambda_alpha == 1.0, "lambda_alpha default");
  c.expect(TrainConfig{}.alpha_warmup_epochs == 60, "warm-up default");

  RandomStream rng(0xACCE03);
  for (int trial = 0; trial < 100; ++trial) {
    int k = rng.uniform_int(1, 5);
    auto masks = masks_from_ratios(RegionLayout::make(random_ratios(rng, k), 8, 24));
    Tensor z = Tensor::randn({3, 8, 24}, rng);
    Tensor zp = Tensor::randn({3, 8, 24}, rng);
    Tensor zm = Tensor::randn({3, 8, 24}, rng);
    double delta = rng.uniform(0, 2), delta_bar = rng.uniform(0.02, 0.8);
    double alpha = rng.uniform(0, 0.6);

    double dp = 0, dm = 0;
    for (size_t i = 0; i < z.numel(); ++i) {
      dp += (z[i] - zp[i]) * (z[i] - zp[i]);
      dm += (z[i] - zm[i]) * (z[i] - zm[i]);
    }
    dp /= static_cast<double>(z.numel());
    dm /= static_cast<double>(z.numel());
    double ratio = std::min(3.0, std::max(0.1, delta / delta_bar));
    double naive_rank = std::max(0.0, dp - dm + w.m0 * ratio);

    double naive_div = 0.0;
    if (k > 1) {
      for (int r = 0; r + 1 < k; ++r) {
        double d2 = 0;
        for (int ch = 0; ch < 3; ++ch) {
          double a = 0, na = 0, b = 0, nb = 0;
          for (int y = 0; y < 8; ++y)
            for (int x = 0; x < 24; ++x) {
              if (masks.masks[r].at2(y, x) == 1.0) {
                a += z.at3(ch, y, x);
                ++na;
              }
              if (masks.masks[r + 1].at2(y, x) == 1.0) {
                b += z.at3(ch, y, x);
                ++nb;
              }
            }
          double diff = a / na - b / nb;
          d2 += diff * diff;
        }
        naive_div += std::sqrt(d2);
      }
      naive_div = -naive_div / (k - 1);
    }

    double target = w.alpha_max / (1.0 + std::exp(-delta / w.tau_alpha));
    double d = alpha - target;
    double naive_al = std::abs(d) < 1.0 ? 0.5 * d * d : std::abs(d) - 0.5;

    Tape tape;
    double rank = rank_loss(tape, make_const(tape, z), make_const(tape, zp),
                            make_const(tape, zm), delta, delta_bar, w)
                      .val()[0];
    double div = diversity_loss(tape, make_const(tape, z), masks).val()[0];
    double al = alpha_loss(tape, make_const_scalar(tape, alpha), delta, w).val()[0];
    c.expect(std::abs(rank - naive_rank) <= 1e-12, "rank vs naive, trial " + std::to_string(trial));
    c.expect(std::abs(div - naive_div) <= 1e-12, "div vs naive, trial " + std::to_string(trial));
    c.expect(std::abs(al - naive_al) <= 1e-12, "alpha vs naive, trial " + std::to_string(trial));

    int total = rng.uniform_int(61, 400);
    int epoch = rng.uniform_int(0, total - 1);
    double naive_lam =
        epoch == total - 1
            ? 0.0
            : (epoch < 60 ? 1.0 : 1.0 - static_cast<double>(epoch - 60) / (total - 60));
    c.expect(std::abs(lambda_alpha_schedule(epoch, total, 60, 1.0) - naive_lam) <= 1e-12,
             "lambda schedule vs naive, trial " + std::to_string(trial));
  }
}

// ---- criterion 4: training-dynamics reproduction ----
void criterion_training_dynamics(Criterion& c) {
  SurrogateNPNet net = SurrogateNPNet::build(SurrogateConfig{});

  CorpusSpec regional;
  regional.size = 64;
  regional.mix = 1.0;
  regional.seed = 0xF162;
  Corpus reg = gen_corpus(regional);

  TrainConfig three;
  three.epochs = 3;
  three.alpha_warmup_epochs = 3;
  three.seed = 21;
  auto r3 = train(three, reg, net, AdapterStack::init(AdapterConfig{}));
  c.expect(r3.history.rows.size() == 3, "3-epoch run completed");
  for (size_t i = 1; i < r3.history.rows.size(); ++i)
    c.expect(r3.history.rows[i].train_loss < r3.history.rows[i - 1].train_loss,
             "train loss not strictly decreasing at epoch " + std::to_string(i));

  TrainConfig eighty;
  eighty.epochs = 80;
  eighty.alpha_warmup_epochs = 60;
  eighty.seed = 22;
  auto r80 = train(eighty, reg, net, AdapterStack::init(AdapterConfig{}));
  double start_alpha = r80.history.rows.front().mean_alpha;
  double peak_alpha = 0.0;
  for (const auto& row : r80.history.rows) peak_alpha = std::max(peak_alpha, row.mean_alpha);
  c.expect(std::abs(start_alpha - 0.40) <= 0.01,
           "regional corpus: mean alpha starts at " + std::to_string(start_alpha));
  c.expect(peak_alpha >= start_alpha + 0.05,
           "regional corpus: mean alpha peaked at " + std::to_string(peak_alpha));

  CorpusSpec uniform = regional;
  uniform.mix = 0.0;
  uniform.seed = 0xF163;
  Corpus uni = gen_corpus(uniform);
  c.expect(uni.stats.delta_bar < 0.02,
           "non-regional corpus delta_bar " + std::to_string(uni.stats.delta_bar));
  auto r80u = train(eighty, uni, net, AdapterStack::init(AdapterConfig{}));
  double min_alpha = 1.0;
  for (const auto& row : r80u.history.rows) min_alpha = std::min(min_alpha, row.mean_alpha);
  c.expect(r80u.history.rows.front().mean_alpha >= 0.39,
           "non-regional corpus: mean alpha starts near 0.40");
  c.expect(min_alpha < 0.35,
           "non-regional corpus: mean alpha only fell to " + std::to_string(min_alpha));
}

// ---- criterion 5: ablation ordering ----
void criterion_ablation(Criterion& c) {
  SurrogateNPNet net = SurrogateNPNet::build(SurrogateConfig{});
  double margin_v4_v3 = 0.0, margin_v3_base = 0.0;
  for (uint64_t seed = 1; seed <= 3; ++seed) {
    CorpusSpec spec;
    spec.size = 48;
    spec.mix = 1.0;
    spec.seed = 0xAB1A + seed;
    Corpus corpus = gen_corpus(spec);

    TrainConfig cfg;
    cfg.epochs = 40;
    cfg.alpha_warmup_epochs = 40;
    cfg.seed = seed;
    cfg.val_fraction = 0.15;

    // held-out split mirrors the trainer's own validation split
    std::vector<const TrainingRecord*> held_out;
    {
      TrainConfig probe = cfg;
      probe.epochs = 0;  // marker: we reproduce the split below instead
      std::vector<int> idx(corpus.records.size());
      for (size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
      RandomStream rng(mix_seed(cfg.seed, 0x59117ULL));
      for (int i = static_cast<int>(idx.size()) - 1; i > 0; --i)
        std::swap(idx[i], idx[rng.uniform_int(0, i)]);
      int n_val = static_cast<int>(std::llround(cfg.val_fraction * idx.size()));
      for (int i = 0; i < n_val; ++i) held_out.push_back(&corpus.records[idx[i]]);
    }

    AdapterStack baseline = AdapterStack::init(AdapterConfig{});
    double base_score = mean_oracle_score(net, baseline, Variant::V4, held_out, 1.0);

    cfg.variant = Variant::FilmOnly;
    auto film = train(cfg, corpus, net, AdapterStack::init(AdapterConfig{}));
    double film_score =
        mean_oracle_score(net, film.stack, Variant::FilmOnly, held_out, 1.0);

    cfg.variant = Variant::V3;
    auto v3 = train(cfg, corpus, net, AdapterStack::init(AdapterConfig{}));
    double v3_score = mean_oracle_score(net, v3.stack, Variant::V3, held_out, 1.0);

    Checkpoint v3_ckpt = make_checkpoint(net, v3.stack, "v3", cfg.epochs, corpus.stats.delta_bar, 0);
    TrainConfig v4cfg = cfg;
    v4cfg.variant = Variant::V4;
    v4cfg.epochs = 40;
    v4cfg.alpha_warmup_epochs = 30;
    auto v4 = train(v4cfg, corpus, net, warm_start_from(v3_ckpt, AdapterConfig{}));
    double v4_score = mean_oracle_score(net, v4.stack, Variant::V4, held_out, 1.0);

    std::printf("         seed %llu: baseline %.4f film %.4f v3 %.4f v4 %.4f\n",
                static_cast<unsigned long long>(seed), base_score, film_score, v3_score,
                v4_score);
    margin_v4_v3 += (v4_score - v3_score) / 3.0;
    margin_v3_base += (v3_score - base_score) / 3.0;
  }
  c.expect(margin_v3_base > 0.0,
           "v3 vs baseline margin " + std::to_string(margin_v3_base));
  c.expect(margin_v4_v3 > 0.0, "v4 vs v3 margin " + std::to_string(margin_v4_v3));
}

// ---- criterion 6: metric oracle equivalence ----
void criterion_metric_oracles(Criterion& c) {
  MockTextEncoder enc(8, 64);
  MockProvider provider(enc, 0.05);
  RandomStream rng(0xACCE06);
  const auto& concepts = concept_vocabulary();
  const auto& attrs = attribute_vocabulary();

  for (int trial = 0; trial < 100; ++trial) {
    int k = rng.uniform_int(2, 3);
    std::vector<double> ratios(k, 1.0 / k);
    double acc = 0;
    for (int i = 0; i + 1 < k; ++i) acc += ratios[i];
    ratios[k - 1] = 1.0 - acc;
    auto masks = masks_from_ratios(RegionLayout::make(ratios, 5, 5));

    SyntheticImage img;
    img.height = img.width = 5;
    img.noise_level = 0.05;
    img.noise_seed = rng.next_u64();
    for (int i = 0; i < 25; ++i) {
      img.concept_idx.push_back(rng.uniform_int(0, 15));
      img.attr_idx.push_back(rng.uniform_int(0, 7));
    }
    std::vector<LabelSpec> labels;
    for (int r = 0; r < k; ++r)
      labels.push_back({concepts[rng.uniform_int(0, 15)], attrs[rng.uniform_int(0, 7)]});

    auto cell_vec = [&](int y, int x) {
      Tensor d = enc.direction({concepts[img.cell_concept(y, x)], attrs[img.cell_attr(y, x)]});
      RandomStream noise(mix_seed(img.noise_seed, static_cast<uint64_t>(y) * 5 + x));
      for (int i = 0; i < 64; ++i) d[i] += img.noise_level * noise.normal();
      return d;
    };
    auto emb_cols = [&](int x0, int x1) {
      std::vector<double> v(64, 0.0);
      for (int y = 0; y < 5; ++y)
        for (int x = x0; x < x1; ++x) {
          Tensor d = cell_vec(y, x);
          for (int i = 0; i < 64; ++i) v[i] += d[i];
        }
      double n = 0;
      for (double z : v) n += z * z;
      n = std::sqrt(n);
      for (double& z : v) z /= n;
      return v;
    };
    auto text_vec = [&](const std::vector<LabelSpec>& ls) {
      std::vector<double> v(64, 0.0);
      for (const auto& l : ls) {
        Tensor d = enc.direction(l);
        for (int i = 0; i < 64; ++i) v[i] += d[i];
      }
      double n = 0;
      for (double z : v) n += z * z;
      n = std::sqrt(n);
      for (double& z : v) z /= n;
      return v;
    };
    auto cosv = [](const std::vector<double>& a, const std::vector<double>& b) {
      double d = 0, na = 0, nb = 0;
      for (size_t i = 0; i < a.size(); ++i) {
        d += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
      }
      return d / std::sqrt(na * nb);
    };

    std::vector<int> cuts{0};
    double cum = 0;
    for (double r : ratios) {
      cum += r;
      cuts.push_back(static_cast<int>(std::floor(5 * cum + 0.5)));
    }
    cuts.back() = 5;

    double bf_rsa = 0, bf_mocq = 0;
    for (int r = 0; r < k; ++r) {
      auto t = text_vec({labels[r]});
      double target = cosv(emb_cols(cuts[r], cuts[r + 1]), t);
      bf_rsa += target;
      double wrong = 0;
      for (int l = 0; l < k; ++l)
        if (l != r) wrong += cosv(emb_cols(cuts[l], cuts[l + 1]), t);
      bf_mocq += target - wrong / (k - 1);
    }
    bf_rsa /= k;
    bf_mocq /= k;
    double bf_crc = 0;
    for (int b = 1; b < k; ++b) {
      int cut = cuts[b];
      bf_crc += cosv(emb_cols(std::max(cuts[b - 1], cut - 1), cut),
                     emb_cols(cut, std::min(cuts[b + 1], cut + 1)));
    }
    bf_crc /= (k - 1);

    c.expect(std::abs(rsa(img, masks, labels, provider) - bf_rsa) < 1e-9,
             "rsa trial " + std::to_string(trial));
    c.expect(std::abs(mocq(img, masks, labels, provider) - bf_mocq) < 1e-9,
             "mocq trial " + std::to_string(trial));
    c.expect(std::abs(crc(img, masks, provider, 1) - bf_crc) < 1e-9,
             "crc trial " + std::to_string(trial));
  }

  // exact anchors: basis-vector provider, aligned / swapped / uniform scenes
  struct BasisProvider : EmbeddingProvider {
    int dim() const override { return 32; }
    int slot(int ci, int ai) const { return (ci * 8 + ai) % 32; }
    Tensor image_embed(const SyntheticImage& img, const Tensor& mask) const override {
      Tensor acc = Tensor::zeros({32});
      for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
          if (mask.at2(y, x) != 0.0) acc[slot(img.cell_concept(y, x), img.cell_attr(y, x))] += 1;
      return normalized_or_throw(acc, "basis embed");
    }
    Tensor text_embed(const std::vector<LabelSpec>& ls) const override {
      Tensor acc = Tensor::zeros({32});
      for (const auto& l : ls)
        acc[slot(vocabulary_index(concept_vocabulary(), l.concept_name),
                 vocabulary_index(attribute_vocabulary(), l.attribute))] += 1;
      return normalized_or_throw(acc, "basis text");
    }
  } basis;

  auto masks = masks_from_ratios(RegionLayout::make({0.5, 0.5}, 4, 4));
  SyntheticImage aligned;
  aligned.height = aligned.width = 4;
  aligned.concept_idx.assign(16, 0);
  aligned.attr_idx.assign(16, 0);
  for (int y = 0; y < 4; ++y)
    for (int x = 2; x < 4; ++x) {
      aligned.concept_idx[y * 4 + x] = 1;
      aligned.attr_idx[y * 4 + x] = 1;
    }
  std::vector<LabelSpec> labels{{concepts[0], attrs[0]}, {concepts[1], attrs[1]}};
  c.expect(rsa(aligned, masks, labels, basis) == 1.0, "anchor: aligned RSA exactly 1");
  c.expect(mocq(aligned, masks, labels, basis) == 1.0, "anchor: aligned MOCQ exactly 1");
  std::vector<LabelSpec> swapped{labels[1], labels[0]};
  c.expect(mocq(aligned, masks, swapped, basis) == -1.0, "anchor: swapped MOCQ exactly -1");
  SyntheticImage uniform = aligned;
  uniform.concept_idx.assign(16, 2);
  uniform.attr_idx.assign(16, 2);
  c.expect(crc(uniform, masks, basis, 1) == 1.0, "anchor: identical bands CRC exactly 1");
}

// ---- criterion 7: geometry invariants ----
void criterion_geometry(Criterion& c) {
  RandomStream rng(0xACCE07);
  for (int trial = 0; trial < 1000; ++trial) {
    int k = rng.uniform_int(1, 8);
    int w = rng.uniform_int(6 * k, 6 * k + 58);
    int h = rng.uniform_int(2, 12);
    auto hm = masks_from_ratios(RegionLayout::make(random_ratios(rng, k), h, w));
    double sigma = rng.uniform(0.0, 3.0);
    auto sm = soften_masks(hm, sigma);
    bool ok = true;
    for (int y = 0; y < h && ok; ++y)
      for (int x = 0; x < w; ++x) {
        double hard = 0, soft = 0;
        for (int r = 0; r < k; ++r) {
          hard += hm.masks[r].at2(y, x);
          soft += sm.masks[r].at2(y, x);
        }
        if (hard != 1.0 || std::abs(soft - 1.0) > 1e-6) {
          ok = false;
          break;
        }
      }
    c.expect(ok, "partition violated at trial " + std::to_string(trial));
    if (k >= 2) {
      int band_px = rng.uniform_int(1, 6);
      auto bands = boundary_bands(hm, band_px);
      for (const auto& b : bands.bands) {
        c.expect(b.left_hi <= b.right_lo && b.left_hi == b.boundary_col &&
                     b.right_lo == b.boundary_col,
                 "band sides overlap at trial " + std::to_string(trial));
        c.expect(b.left_hi - b.left_lo >= 1 && b.left_hi - b.left_lo <= band_px &&
                     b.right_hi - b.right_lo >= 1 && b.right_hi - b.right_lo <= band_px,
                 "band size wrong at trial " + std::to_string(trial));
      }
    }
  }
  // paper's 32-pixel bands at the 1024 canvas
  c.expect(default_band_px(1024) == 32, "band ratio at 1024 is 32 px");
  auto hm = masks_from_ratios(RegionLayout::make({0.5, 0.5}, 8, 1024));
  auto bands = boundary_bands(hm, default_band_px(1024));
  c.expect(bands.bands.size() == 1 && bands.bands[0].left_lo == 480 &&
               bands.bands[0].right_hi == 544,
           "32 px bands sit at columns 480..543 and 512..543 around a 512 boundary");
}

// ---- criterion 8: global bottleneck vs regional locality ----
void criterion_bottleneck(Criterion& c) {
  SurrogateNPNet net = SurrogateNPNet::build(SurrogateConfig{});
  MockTextEncoder enc(8, 64);
  AdapterStack stack = AdapterStack::init(AdapterConfig{});
  RandomStream rng(0xACCE08);
  for (const char* name : {"film.w2", "film.b2", "rca.wo"})
    for (double& v : stack.params.get(name).data) v += rng.normal() * 0.05;

  Tensor z_t = Tensor::randn({4, 32, 32}, rng);
  PromptRecord p1 = two_region_prompt(enc, 0xBEEF, 32, 32);
  PromptRecord p2 = p1;  // same global prompt, region 2's sub-prompt swapped
  p2.e_k[1] = enc.embed({{"lighthouse", "silver"}}, 0xFEED);

  auto run = [&](const PromptRecord& p, double sigma_b) {
    Tape tape;
    auto sur_pv = bind_params(tape, net.params);
    auto ad_pv = bind_params(tape, stack.params);
    GoldenForwardOptions opt;
    opt.sigma_b = sigma_b;
    auto fwd = golden_rpg_forward(tape, net, sur_pv, stack, ad_pv, z_t, p, opt);
    return std::make_pair(fwd.z_g.val(), fwd.z_out.val());
  };

  // the surrogate's globally conditioned path is exactly unchanged
  auto [g1_hard, out1_hard] = run(p1, 0.0);
  auto [g2_hard, out2_hard] = run(p2, 0.0);
  c.expect(tensors_bitwise(g1_hard, g2_hard), "Ada/global path changed under a sub-prompt swap");

  auto hard = masks_from_ratios(p1.layout);
  bool outside_zero = true, inside_changed = false;
  for (int ch = 0; ch < 4; ++ch)
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x) {
        double d = out1_hard.at3(ch, y, x) - out2_hard.at3(ch, y, x);
        if (hard.masks[1].at2(y, x) == 0.0) {
          if (d != 0.0) outside_zero = false;
        } else if (d != 0.0) {
          inside_changed = true;
        }
      }
  c.expect(outside_zero, "hard-mask mode: z_out changed outside the swapped region");
  c.expect(inside_changed, "hard-mask mode: z_out did not react inside the swapped region");

  // soft-mask mode: change confined to the region's soft support
  double sigma_b = 1.0;
  auto [g1, out1] = run(p1, sigma_b);
  auto [g2, out2] = run(p2, sigma_b);
  c.expect(tensors_bitwise(g1, g2), "Ada/global path changed (soft mode)");
  auto soft = soften_masks(hard, sigma_b);
  bool soft_ok = true;
  for (int ch = 0; ch < 4 && soft_ok; ++ch)
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x)
        if (soft.masks[1].at2(y, x) == 0.0 &&
            out1.at3(ch, y, x) != out2.at3(ch, y, x)) {
          soft_ok = false;
          break;
        }
  c.expect(soft_ok, "soft-mask mode: z_out changed outside the region's soft support");
}

// ---- criterion 9: persistence ----
void criterion_persistence(Criterion& c) {
  fs::path dir = fs::temp_directory_path() / "grpg_acceptance";
  fs::create_directories(dir);

  SurrogateNPNet net = SurrogateNPNet::build(SurrogateConfig{});
  AdapterStack v3 = AdapterStack::init(AdapterConfig{});
  RandomStream rng(0xACCE09);
  for (const auto& name : v3.params.names())
    if (name.rfind("conf.", 0) != 0)
      for (double& v : v3.params.get(name).data) v += rng.normal() * 0.05;

  std::string ckpt_path = (dir / "v3.bin").string();
  save_checkpoint(make_checkpoint(net, v3, "v3", 200, 0.31, 777), ckpt_path);
  Checkpoint loaded = load_checkpoint(ckpt_path);
  for (const auto& name : v3.params.names())
    c.expect(tensors_bitwise(loaded.trainable.get(name), v3.params.get(name)),
             "checkpoint array " + name + " not bitwise");
  for (const auto& name : net.params.names())
    c.expect(tensors_bitwise(loaded.frozen.get(name), net.params.get(name)),
             "frozen array " + name + " not bitwise");

  AdapterStack v4 = warm_start_from(loaded, AdapterConfig{});
  for (const auto& name : v4.params.names()) {
    if (name.rfind("conf.", 0) == 0) continue;
    c.expect(tensors_bitwise(v4.params.get(name), v3.params.get(name)),
             "warm start did not copy " + name + " bitwise");
  }
  Tape tape;
  auto pv = bind_params(tape, v4.params);
  ConfidenceFeatures f;
  f.f1 = 0.9;
  f.f5 = 3;
  double alpha = confidence_alpha(tape, pv, v4.cfg, f, v4.moments).val()[0];
  c.expect(std::abs(alpha - 0.40) <= 1e-9,
           "fresh confidence head alpha(init) = " + std::to_string(alpha));

  CorpusSpec spec;
  spec.size = 8;
  spec.seed = 0xC0;
  Corpus corpus = gen_corpus(spec);
  std::string corpus_path = (dir / "corpus.bin").string();
  save_corpus(corpus, corpus_path);
  Corpus corpus2 = load_corpus(corpus_path);
  c.expect(corpus2.stats.delta_bar == corpus.stats.delta_bar, "corpus delta_bar round-trip");
  for (size_t i = 0; i < corpus.records.size(); ++i) {
    c.expect(tensors_bitwise(corpus2.records[i].z_plus, corpus.records[i].z_plus),
             "corpus z_plus round-trip, record " + std::to_string(i));
    c.expect(tensors_bitwise(corpus2.records[i].prompt.e_g, corpus.records[i].prompt.e_g),
             "corpus e_g round-trip, record " + std::to_string(i));
  }
  fs::remove_all(dir);
}

// ---- criterion 10: end-to-end determinism ----
void criterion_determinism(Criterion& c) {
  setenv("GRPG_DETERMINISTIC", "1", 1);
  fs::path dir = fs::temp_directory_path() / "grpg_acceptance_det";
  fs::remove_all(dir);
  fs::create_directories(dir);
  auto slurp = [](const std::string& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
  };
  auto pipeline = [&](const std::string& tag) {
    std::string corpus = (dir / ("c" + tag)).string();
    std::string ckpt = (dir / ("k" + tag)).string();
    std::string hist = (dir / ("h" + tag)).string();
    std::string preds = (dir / ("p" + tag)).string();
    std::string prefix = (dir / ("r" + tag)).string();
    bool ok = run_command({"gen-corpus", "--size", "12", "--seed", "6", "--out", corpus}) == 0;
    ok = ok && run_command({"train", "--corpus", corpus, "--variant", "v4", "--epochs", "3",
                            "--seed", "3", "--out-ckpt", ckpt, "--history", hist}) == 0;
    ok = ok && run_command({"predict", "--ckpt", ckpt, "--corpus", corpus, "--seeds", "2",
                            "--out", preds}) == 0;
    ok = ok && run_command({"eval", "--corpus", corpus, "--pred", "v4=" + preds,
                            "--out-prefix", prefix}) == 0;
    std::vector<std::string> blobs{slurp(corpus), slurp(ckpt), slurp(hist), slurp(preds),
                                   slurp(prefix + "_rows.csv"),
                                   slurp(prefix + "_table.txt")};
    return std::make_pair(ok, blobs);
  };
  auto [ok_a, a] = pipeline("a");
  auto [ok_b, b] = pipeline("b");
  c.expect(ok_a && ok_b, "pipeline runs completed");
  const char* names[] = {"corpus", "checkpoint", "history", "predictions", "rows", "table"};
  for (size_t i = 0; i < a.size(); ++i)
    c.expect(a[i] == b[i], std::string("byte mismatch in ") + names[i]);
  fs::remove_all(dir);
}

}  // namespace

int main() {
  struct Entry {
    int id;
    const char* name;
    double budget_s;
    std::function<void(Criterion&)> fn;
  };
  const std::vector<Entry> entries{
      {1, "identity at initialization (|z_out - z_g|_inf <= 1e-9, 50 seeds)", 10,
       criterion_identity},
      {2, "gradient suite (central FD, rel err <= 1e-4, 20 configurations)", 120,
       criterion_gradients},
      {3, "loss oracles match naive reimplementations within 1e-12", 60,
       criterion_loss_oracles},
      {4, "training dynamics (decreasing loss; alpha rises on regional data, falls on "
          "non-regional)",
       600, criterion_training_dynamics},
      {5, "ablation ordering (v4 >= v3 >= baseline on held-out oracle score, 3 seeds)", 1800,
       criterion_ablation},
      {6, "metric oracle equivalence (100 random 5x5 scenes, exact anchors)", 60,
       criterion_metric_oracles},
      {7, "geometry invariants (1000 random layouts, 32px-at-1024 bands)", 60,
       criterion_geometry},
      {8, "global bottleneck vs regional locality of z_out", 60, criterion_bottleneck},
      {9, "persistence (bitwise round-trips, v3->v4 warm start, alpha init 0.40)", 60,
       criterion_persistence},
      {10, "end-to-end determinism (byte-identical pipeline outputs)", 300,
       criterion_determinism},
  };

  int failed = 0;
  for (const auto& e : entries) {
    Criterion c;
    auto start = std::chrono::steady_clock::now();
    try {
      e.fn(c);
    } catch (const std::exception& ex) {
      c.failures.push_back(std::string("exception: ") + ex.what());
    }
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (secs > e.budget_s)
      c.failures.push_back("runtime " + std::to_string(secs) + "s exceeds budget " +
                           std::to_string(e.budget_s) + "s");
    if (c.failures.empty()) {
      std::printf("[PASS] %2d  %s  (%.1fs)\n", e.id, e.name, secs);
    } else {
      ++failed;
      std::printf("[FAIL] %2d  %s  (%.1fs)\n", e.id, e.name, secs);
      size_t shown = 0;
      for (const auto& f : c.failures) {
        std::printf("         - %s\n", f.c_str());
        if (++shown >= 5) {
          std::printf("         - (%zu more)\n", c.failures.size() - shown);
          break;
        }
      }
    }
    std::fflush(stdout);
  }
  if (failed) {
    std::printf("acceptance: %d criterion(s) FAILED\n", failed);
    return 1;
  }
  std::printf("acceptance: all 10 criteria passed\n");
  return 0;
}
