#include "grpg/synthetic.hpp"

#include <algorithm>
#include <cmath>

namespace grpg {

namespace {
constexpr uint64_t kOracleProjectionSeed = 0x0C0FFEE5EEDULL;
}

MockTextEncoder::MockTextEncoder(int tokens_l, int embed_d, uint64_t vocab_seed)
    : tokens_l_(tokens_l), embed_d_(embed_d), vocab_seed_(vocab_seed) {
  if (tokens_l < 1 || embed_d < 2) fail("MockTextEncoder: degenerate dimensions");
  std::vector<std::string> tags;
  for (const auto& c : concept_vocabulary()) tags.push_back("concept:" + c);
  for (const auto& a : attribute_vocabulary()) tags.push_back("attribute:" + a);
  std::vector<Tensor> ortho;
  for (const auto& tag : tags) {
    Tensor v = raw_direction(tag);
    if (static_cast<int>(ortho.size()) < embed_d_ - 1) {
      for (const auto& u : ortho) {
        double p = dot_value(v, u);
        for (int i = 0; i < embed_d_; ++i) v[i] -= p * u[i];
      }
      v = normalized_or_throw(v, "vocabulary direction");
      ortho.push_back(v);
    }
    basis_.emplace(tag, v);
  }
}

Tensor MockTextEncoder::raw_direction(const std::string& tag) const {
  RandomStream rng(mix_seed(vocab_seed_, fnv1a64(tag)));
  Tensor v = Tensor::randn({embed_d_}, rng);
  return normalized_or_throw(v, "label direction");
}

Tensor MockTextEncoder::direction(const LabelSpec& label) const {
  auto unit_from = [&](const std::string& tag) {
    auto it = basis_.find(tag);
    if (it != basis_.end()) return it->second;
    return raw_direction(tag);  // out-of-vocabulary labels stay usable
  };
  Tensor c = unit_from("concept:" + label.concept_name);
  if (label.attribute.empty()) return c;
  Tensor a = unit_from("attribute:" + label.attribute);
  // The pair term makes attribute binding visible: plain sums of concept and
  // attribute directions are invariant under attribute swaps.
  Tensor pair = raw_direction("pair:" + label.concept_name + "|" + label.attribute);
  for (size_t i = 0; i < c.numel(); ++i)
    c[i] += attr_weight_ * a[i] + pair_weight_ * pair[i];
  return normalized_or_throw(c, "label direction");
}

Tensor MockTextEncoder::embed(const std::vector<LabelSpec>& labels, uint64_t jitter_seed) const {
  if (labels.empty()) fail("embed_text: empty label set");
  Tensor base = Tensor::zeros({embed_d_});
  for (const auto& l : labels) {
    Tensor d = direction(l);
    for (size_t i = 0; i < base.numel(); ++i) base[i] += d[i];
  }
  base = normalized_or_throw(base, "prompt direction");
  Tensor tokens({tokens_l_, embed_d_});
  RandomStream rng(mix_seed(jitter_seed, 0x70C3A5ULL));
  for (int t = 0; t < tokens_l_; ++t) {
    Tensor jitter = Tensor::randn({embed_d_}, rng);
    jitter = normalized_or_throw(jitter, "token jitter");
    Tensor tok = base;
    for (int i = 0; i < embed_d_; ++i) tok[i] += pos_jitter_ * jitter[i];
    tok = normalized_or_throw(tok, "token");
    for (int i = 0; i < embed_d_; ++i) tokens.at2(t, i) = tok[i];
  }
  return tokens;
}

Tensor token_average(const Tensor& tokens) {
  if (tokens.ndim() != 2) fail("token_average: tokens are not 2-D: " + tokens.shape_str());
  int l = tokens.rows(), d = tokens.cols();
  Tensor out({d});
  for (int t = 0; t < l; ++t)
    for (int i = 0; i < d; ++i) out[i] += tokens.at2(t, i);
  for (int i = 0; i < d; ++i) out[i] /= l;
  return out;
}

Tensor ConfidenceFeatures::as_tensor() const {
  return Tensor::from_data({7}, {f1, f2, f3, f4, f5, f6, f7});
}

ConfidenceFeatures confidence_features(const Tensor& e_bar_g,
                                       const std::vector<Tensor>& e_bar_k) {
  int k = static_cast<int>(e_bar_k.size());
  if (k < 1) fail("confidence_features: needs at least one region");
  ConfidenceFeatures f;
  f.f1 = l2_norm_value(e_bar_g);
  Tensor g_hat = normalized_or_throw(e_bar_g, "confidence_features: e_g");

  std::vector<Tensor> hats;
  std::vector<double> norms;
  for (const auto& e : e_bar_k) {
    hats.push_back(normalized_or_throw(e, "confidence_features: e_k"));
    norms.push_back(l2_norm_value(e));
  }

  double f2 = 0.0;
  for (const auto& e : e_bar_k) {
    Tensor d = e;
    for (size_t i = 0; i < d.numel(); ++i) d[i] -= e_bar_g[i];
    f2 += l2_norm_value(d);
  }
  f.f2 = f2 / k;

  if (k > 1) {
    double f3 = 0.0, f7 = 0.0;
    for (int a = 0; a < k; ++a)
      for (int b = 0; b < k; ++b) {
        if (a == b) continue;
        f3 += dot_value(hats[a], hats[b]);
        Tensor d = e_bar_k[a];
        for (size_t i = 0; i < d.numel(); ++i) d[i] -= e_bar_k[b][i];
        f7 = std::max(f7, l2_norm_value(d));
      }
    f.f3 = f3 / (static_cast<double>(k) * (k - 1));
    f.f7 = f7;
  }

  double norm_mean = 0.0;
  for (double n : norms) norm_mean += n;
  norm_mean /= k;
  double var = 0.0;
  for (double n : norms) var += (n - norm_mean) * (n - norm_mean);
  f.f4 = std::sqrt(var / k);

  f.f5 = static_cast<double>(k);

  Tensor hat_mean = Tensor::zeros(e_bar_g.shape);
  for (const auto& h : hats)
    for (size_t i = 0; i < hat_mean.numel(); ++i) hat_mean[i] += h[i] / k;
  f.f6 = cosine_or_zero(hat_mean, g_hat);
  return f;
}

Tensor oracle_projection(int embed_d, int latent_c) {
  if (latent_c > embed_d) fail("oracle_projection: latent channels exceed embedding dim");
  RandomStream rng(mix_seed(kOracleProjectionSeed, mix_seed(embed_d, latent_c)));
  // Gram-Schmidt over seeded Gaussian columns
  std::vector<Tensor> cols;
  for (int c = 0; c < latent_c; ++c) {
    Tensor v = Tensor::randn({embed_d}, rng);
    for (const auto& u : cols) {
      double p = dot_value(v, u);
      for (int i = 0; i < embed_d; ++i) v[i] -= p * u[i];
    }
    cols.push_back(normalized_or_throw(v, "oracle projection column"));
  }
  Tensor p({embed_d, latent_c});
  for (int i = 0; i < embed_d; ++i)
    for (int c = 0; c < latent_c; ++c) p.at2(i, c) = cols[c][i];
  return p;
}

Tensor region_channel_mean(const Tensor& z, const Tensor& mask) {
  if (z.ndim() != 3) fail("region_channel_mean: tensor is not C x H x W: " + z.shape_str());
  int c = z.shape[0];
  size_t hw = static_cast<size_t>(z.shape[1]) * z.shape[2];
  if (mask.numel() != hw)
    fail("region_channel_mean: mask " + mask.shape_str() + " does not match " + z.shape_str());
  double wsum = tensor_sum(mask);
  if (wsum <= 0.0) fail("region_channel_mean: empty region");
  Tensor mu({c});
  for (int ch = 0; ch < c; ++ch) {
    double acc = 0.0;
    for (size_t i = 0; i < hw; ++i) acc += z[ch * hw + i] * mask[i];
    mu[ch] = acc / wsum;
  }
  return mu;
}

namespace {
Tensor project_up(const Tensor& projection, const Tensor& mu) {
  int d = projection.rows(), c = projection.cols();
  Tensor v({d});
  for (int i = 0; i < d; ++i) {
    double acc = 0.0;
    for (int j = 0; j < c; ++j) acc += projection.at2(i, j) * mu[j];
    v[i] = acc;
  }
  return v;
}
}  // namespace

double oracle_score(const Tensor& z, const HardMasks& masks,
                    const std::vector<Tensor>& e_bar_k, const Tensor& projection,
                    int* zero_norm_warnings) {
  int k = masks.k;
  if (static_cast<int>(e_bar_k.size()) != k)
    fail("oracle_score: " + std::to_string(e_bar_k.size()) + " embeddings for " +
         std::to_string(k) + " regions");
  int warn = 0;
  std::vector<Tensor> projected;
  for (int r = 0; r < k; ++r)
    projected.push_back(project_up(projection, region_channel_mean(z, masks.masks[r])));
  auto cos_warn = [&](const Tensor& a, const Tensor& b) {
    if (l2_norm_value(a) == 0.0 || l2_norm_value(b) == 0.0) {
      ++warn;
      return 0.0;
    }
    return cosine_or_zero(a, b);
  };
  double score = 0.0;
  for (int r = 0; r < k; ++r) {
    double target = cos_warn(projected[r], e_bar_k[r]);
    double wrong = 0.0;
    if (k > 1) {
      for (int l = 0; l < k; ++l)
        if (l != r) wrong += cos_warn(projected[l], e_bar_k[r]);
      wrong /= (k - 1);
    }
    score += target - wrong;
  }
  if (zero_norm_warnings) *zero_norm_warnings = warn;
  return score / k;
}

const std::vector<std::string>& concept_vocabulary() {
  static const std::vector<std::string> v{
      "cat",    "dog",   "castle", "forest",     "moon",  "river",
      "mountain", "ship", "robot",  "flower",     "bridge", "dragon",
      "lighthouse", "train", "garden", "tower"};
  return v;
}

const std::vector<std::string>& attribute_vocabulary() {
  static const std::vector<std::string> v{"red",    "blue",  "green",  "golden",
                                          "white",  "black", "purple", "silver"};
  return v;
}

PromptRecord make_prompt_record(const MockTextEncoder& enc, int id,
                                std::vector<double> ratios,
                                std::vector<RegionSpec> regions, uint64_t global_seed,
                                int latent_h, int latent_w, std::string category) {
  PromptRecord p;
  p.id = id;
  p.layout = RegionLayout::make(std::move(ratios), latent_h, latent_w);
  p.regions = std::move(regions);
  p.global_jitter_seed = global_seed;
  p.category = std::move(category);
  std::vector<LabelSpec> all;
  for (const auto& r : p.regions) all.push_back(r.label);
  p.e_g = enc.embed(all, global_seed);
  for (const auto& r : p.regions) p.e_k.push_back(enc.embed({r.label}, r.jitter_seed));
  return p;
}

TrainingRecord build_training_record(const PromptRecord& prompt, const CorpusSpec& spec,
                                     uint64_t seed) {
  if (spec.candidates < 2) fail("build_training_record: needs at least two candidates");
  TrainingRecord rec;
  rec.prompt = prompt;
  rec.seed = seed;
  RandomStream rng(seed);

  HardMasks masks = masks_from_ratios(prompt.layout);
  Tensor projection = oracle_projection(spec.embed_d, spec.latent_c);
  std::vector<Tensor> e_bar;
  for (const auto& e : prompt.e_k) e_bar.push_back(token_average(e));
  // back-projected per-region concept directions in latent channel space
  std::vector<Tensor> planted;
  for (const auto& e : e_bar) {
    Tensor b({spec.latent_c});
    for (int c = 0; c < spec.latent_c; ++c) {
      double acc = 0.0;
      for (int i = 0; i < spec.embed_d; ++i) acc += projection.at2(i, c) * e[i];
      b[c] = acc;
    }
    planted.push_back(normalized_or_throw(b, "planted concept direction"));
  }

  int k = prompt.k();
  std::vector<int> shape{spec.latent_c, spec.latent_h, spec.latent_w};
  size_t hw = static_cast<size_t>(spec.latent_h) * spec.latent_w;
  for (int i = 0; i < spec.candidates; ++i) {
    Tensor cand = Tensor::randn(shape, rng);
    for (int r = 0; r < k; ++r) {
      int assigned = (rng.u01() < spec.correct_placement_prob) ? r : rng.uniform_int(0, k - 1);
      const Tensor& dir = planted[assigned];
      const Tensor& m = masks.masks[r];
      for (int c = 0; c < spec.latent_c; ++c)
        for (size_t p = 0; p < hw; ++p)
          if (m[p] != 0.0) cand[c * hw + p] += spec.plant_amplitude * dir[c];
    }
    rec.candidate_scores.push_back(oracle_score(cand, masks, e_bar, projection));
    rec.candidates.push_back(std::move(cand));
  }

  size_t best = 0, worst = 0;
  for (size_t i = 1; i < rec.candidate_scores.size(); ++i) {
    if (rec.candidate_scores[i] > rec.candidate_scores[best]) best = i;
    if (rec.candidate_scores[i] < rec.candidate_scores[worst]) worst = i;
  }
  rec.z_plus = rec.candidates[best];
  rec.z_minus = rec.candidates[worst];
  rec.delta = rec.candidate_scores[best] - rec.candidate_scores[worst];
  rec.z_t = Tensor::randn(shape, rng);
  return rec;
}

Corpus gen_corpus(const CorpusSpec& spec) {
  if (spec.size < 1) fail("gen_corpus: size must be positive");
  if (spec.k_min < 1 || spec.k_max < spec.k_min) fail("gen_corpus: bad region count range");
  Corpus corpus;
  corpus.spec = spec;
  MockTextEncoder enc(spec.tokens_l, spec.embed_d);
  const auto& concepts = concept_vocabulary();
  const auto& attrs = attribute_vocabulary();

  double delta_sum = 0.0;
  for (int i = 0; i < spec.size; ++i) {
    uint64_t child = mix_seed(spec.seed, static_cast<uint64_t>(i));
    RandomStream rng(child);
    int k = rng.uniform_int(spec.k_min, spec.k_max);
    bool regional = rng.u01() < spec.mix;

    std::vector<double> ratios(k);
    double sum = 0.0;
    for (double& r : ratios) {
      r = 0.6 + rng.u01();  // keeps every region comfortably wide
      sum += r;
    }
    double acc = 0.0;
    for (int j = 0; j + 1 < k; ++j) {
      ratios[j] /= sum;
      acc += ratios[j];
    }
    ratios[k - 1] = 1.0 - acc;

    std::vector<RegionSpec> regions;
    if (regional) {
      // distinct concepts per region
      std::vector<int> order(concepts.size());
      for (size_t j = 0; j < order.size(); ++j) order[j] = static_cast<int>(j);
      for (size_t j = order.size() - 1; j > 0; --j)
        std::swap(order[j], order[rng.uniform_int(0, static_cast<int>(j))]);
      for (int r = 0; r < k; ++r) {
        RegionSpec rs;
        rs.label.concept_name = concepts[order[r]];
        rs.label.attribute = attrs[rng.uniform_int(0, static_cast<int>(attrs.size()) - 1)];
        rs.jitter_seed = rng.next_u64();
        regions.push_back(rs);
      }
    } else {
      // near-duplicate sub-prompts: one label, per-region token jitter
      LabelSpec label;
      label.concept_name = concepts[rng.uniform_int(0, static_cast<int>(concepts.size()) - 1)];
      label.attribute = attrs[rng.uniform_int(0, static_cast<int>(attrs.size()) - 1)];
      for (int r = 0; r < k; ++r) regions.push_back({label, rng.next_u64()});
    }

    PromptRecord prompt =
        make_prompt_record(enc, i, std::move(ratios), std::move(regions), rng.next_u64(),
                           spec.latent_h, spec.latent_w, regional ? "regional" : "uniform");
    TrainingRecord rec = build_training_record(prompt, spec, rng.next_u64());
    delta_sum += rec.delta;
    corpus.stats.categories[rec.prompt.category] += 1;
    corpus.records.push_back(std::move(rec));
  }
  corpus.stats.count = spec.size;
  corpus.stats.delta_bar = delta_sum / spec.size;
  return corpus;
}

}  // namespace grpg
