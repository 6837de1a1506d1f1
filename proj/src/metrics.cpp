#include "grpg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

namespace grpg {

MockProvider::MockProvider(const MockTextEncoder& enc, double noise)
    : enc_(enc), noise_(noise) {
  if (noise < 0.0) fail("MockProvider: noise must be nonnegative");
}

Tensor MockProvider::image_embed(const SyntheticImage& image, const Tensor& mask) const {
  if (mask.ndim() != 2 || mask.shape[0] != image.height || mask.shape[1] != image.width)
    fail("image_embed: mask " + mask.shape_str() + " does not match image " +
         std::to_string(image.height) + "x" + std::to_string(image.width));
  const auto& concepts = concept_vocabulary();
  const auto& attrs = attribute_vocabulary();
  Tensor acc = Tensor::zeros({enc_.dim()});
  size_t cells = 0;
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x) {
      if (mask.at2(y, x) == 0.0) continue;
      LabelSpec label{concepts[image.cell_concept(y, x)], attrs[image.cell_attr(y, x)]};
      Tensor d = enc_.direction(label);
      if (image.noise_level > 0.0) {
        RandomStream rng(mix_seed(image.noise_seed,
                                  static_cast<uint64_t>(y) * image.width + x));
        for (int i = 0; i < enc_.dim(); ++i) d[i] += image.noise_level * rng.normal();
      }
      for (int i = 0; i < enc_.dim(); ++i) acc[i] += d[i];
      ++cells;
    }
  if (cells == 0) fail("image_embed: empty crop");
  return normalized_or_throw(acc, "image embedding");
}

Tensor MockProvider::text_embed(const std::vector<LabelSpec>& labels) const {
  if (labels.empty()) fail("text_embed: empty label set");
  Tensor acc = Tensor::zeros({enc_.dim()});
  for (const auto& l : labels) {
    Tensor d = enc_.direction(l);
    for (int i = 0; i < enc_.dim(); ++i) acc[i] += d[i];
  }
  return normalized_or_throw(acc, "text embedding");
}

double rsa(const SyntheticImage& image, const HardMasks& masks,
           const std::vector<LabelSpec>& sub_prompts, const EmbeddingProvider& provider) {
  if (static_cast<int>(sub_prompts.size()) != masks.k)
    fail("rsa: " + std::to_string(sub_prompts.size()) + " sub-prompts for " +
         std::to_string(masks.k) + " regions");
  double acc = 0.0;
  for (int k = 0; k < masks.k; ++k) {
    Tensor crop = provider.image_embed(image, masks.masks[k]);
    Tensor text = provider.text_embed({sub_prompts[k]});
    acc += dot_value(crop, text) / (l2_norm_value(crop) * l2_norm_value(text));
  }
  return acc / masks.k;
}

double crc(const SyntheticImage& image, const HardMasks& masks,
           const EmbeddingProvider& provider, int band_px, bool* k1_convention) {
  if (k1_convention) *k1_convention = masks.k == 1;
  if (masks.k == 1) return 1.0;
  auto bands = boundary_bands(masks, band_px);
  double acc = 0.0;
  for (const auto& b : bands.bands) {
    Tensor left = provider.image_embed(image, band_mask(masks, b.left_lo, b.left_hi));
    Tensor right = provider.image_embed(image, band_mask(masks, b.right_lo, b.right_hi));
    acc += dot_value(left, right) / (l2_norm_value(left) * l2_norm_value(right));
  }
  return acc / static_cast<double>(bands.bands.size());
}

double mocq(const SyntheticImage& image, const HardMasks& masks,
            const std::vector<LabelSpec>& sub_prompts, const EmbeddingProvider& provider) {
  if (masks.k < 2) fail("mocq: undefined for a single region");
  if (static_cast<int>(sub_prompts.size()) != masks.k)
    fail("mocq: sub-prompt/region count mismatch");
  std::vector<Tensor> crops;
  for (int k = 0; k < masks.k; ++k)
    crops.push_back(provider.image_embed(image, masks.masks[k]));
  double acc = 0.0;
  for (int k = 0; k < masks.k; ++k) {
    Tensor text = provider.text_embed({sub_prompts[k]});
    double target = dot_value(crops[k], text);
    double wrong = 0.0;
    for (int l = 0; l < masks.k; ++l)
      if (l != k) wrong += dot_value(crops[l], text);
    acc += target - wrong / (masks.k - 1);
  }
  return acc / masks.k;
}

std::optional<int> attribute_binding(const SyntheticImage& image,
                                     const std::vector<LabelSpec>& sub_prompts,
                                     const EmbeddingProvider& provider, int* tie_counter) {
  // first pair of regions with distinct attributes defines the swap
  int a = -1, b = -1;
  for (size_t i = 0; i < sub_prompts.size() && a < 0; ++i)
    for (size_t j = i + 1; j < sub_prompts.size(); ++j)
      if (sub_prompts[i].attribute != sub_prompts[j].attribute) {
        a = static_cast<int>(i);
        b = static_cast<int>(j);
        break;
      }
  if (a < 0) return std::nullopt;  // probe uninformative

  std::vector<LabelSpec> swapped = sub_prompts;
  std::swap(swapped[a].attribute, swapped[b].attribute);
  Tensor full({image.height, image.width}, 1.0);
  Tensor img = provider.image_embed(image, full);
  Tensor correct = provider.text_embed(sub_prompts);
  Tensor negative = provider.text_embed(swapped);
  double c = dot_value(img, correct);
  double n = dot_value(img, negative);
  if (c == n) {
    if (tie_counter) ++*tie_counter;
    return 0;
  }
  return c > n ? 1 : 0;
}

double clip_analog(const SyntheticImage& image, const std::vector<LabelSpec>& sub_prompts,
                   const EmbeddingProvider& provider) {
  Tensor full({image.height, image.width}, 1.0);
  Tensor img = provider.image_embed(image, full);
  Tensor text = provider.text_embed(sub_prompts);
  return dot_value(img, text) / (l2_norm_value(img) * l2_norm_value(text));
}

int default_band_px(int image_w) {
  int b = static_cast<int>(std::llround(32.0 * image_w / 1024.0));
  return std::max(1, b);
}

MetricAggregate aggregate_rows(const std::vector<const MetricRow*>& rows,
                               std::string method, std::string category) {
  MetricAggregate agg;
  agg.method = std::move(method);
  agg.category = std::move(category);
  for (const MetricRow* r : rows) {
    if (r->flagged) continue;
    ++agg.count;
    agg.clip += r->clip;
    agg.rsa += r->rsa;
    agg.crc += r->crc;
    agg.mocq += r->mocq;
    if (!r->ab_skipped) {
      agg.ab_rate += r->ab;
      ++agg.ab_count;
    }
  }
  if (agg.count > 0) {
    agg.clip /= agg.count;
    agg.rsa /= agg.count;
    agg.crc /= agg.count;
    agg.mocq /= agg.count;
  }
  if (agg.ab_count > 0) agg.ab_rate /= agg.ab_count;
  return agg;
}

MetricReport eval_suite(const std::vector<const PromptRecord*>& prompts,
                        const std::vector<SyntheticImage>& scenes,
                        const EmbeddingProvider& provider, const EvalConfig& cfg) {
  MetricReport report;
  int band = cfg.band_px > 0 ? cfg.band_px : default_band_px(cfg.image_w);

  std::map<int, const PromptRecord*> by_id;
  for (const PromptRecord* p : prompts) by_id[p->id] = p;

  std::map<std::pair<std::string, uint64_t>, std::map<int, const SyntheticImage*>> grid;
  std::set<std::string> methods;
  std::set<uint64_t> seeds;
  for (const auto& s : scenes) {
    grid[{s.prov.method, s.prov.seed}][s.prov.prompt_id] = &s;
    methods.insert(s.prov.method);
    seeds.insert(s.prov.seed);
  }

  for (const auto& method : methods)
    for (uint64_t seed : seeds)
      for (const auto& [pid, prompt] : by_id) {
        MetricRow row;
        row.prompt_id = pid;
        row.method = method;
        row.seed = seed;
        row.category = prompt->category;
        auto git = grid.find({method, seed});
        const SyntheticImage* img =
            git == grid.end() ? nullptr
                              : (git->second.count(pid) ? git->second.at(pid) : nullptr);
        if (!img) {
          row.flagged = true;
          ++report.missing;
          report.rows.push_back(row);
          continue;
        }
        RegionLayout img_layout =
            RegionLayout::make(prompt->layout.ratios, cfg.image_h, cfg.image_w);
        HardMasks masks = masks_from_ratios(img_layout);
        std::vector<LabelSpec> labels;
        for (const auto& r : prompt->regions) labels.push_back(r.label);

        row.clip = clip_analog(*img, labels, provider);
        row.rsa = rsa(*img, masks, labels, provider);
        row.crc = crc(*img, masks, provider, band);
        row.mocq = masks.k >= 2 ? mocq(*img, masks, labels, provider) : 0.0;
        auto ab = attribute_binding(*img, labels, provider, &report.ties);
        if (ab.has_value()) {
          row.ab = *ab;
        } else {
          row.ab_skipped = true;
        }
        report.rows.push_back(row);
      }

  std::sort(report.rows.begin(), report.rows.end(), [](const MetricRow& a, const MetricRow& b) {
    if (a.method != b.method) return a.method < b.method;
    if (a.prompt_id != b.prompt_id) return a.prompt_id < b.prompt_id;
    return a.seed < b.seed;
  });

  for (const auto& method : methods) {
    std::vector<const MetricRow*> method_rows;
    std::set<std::string> categories;
    for (const auto& r : report.rows)
      if (r.method == method) {
        method_rows.push_back(&r);
        if (!r.flagged) categories.insert(r.category);
      }
    report.aggregates.push_back(aggregate_rows(method_rows, method, "all"));
    for (const auto& cat : categories) {
      std::vector<const MetricRow*> cat_rows;
      for (const MetricRow* r : method_rows)
        if (r->category == cat) cat_rows.push_back(r);
      report.aggregates.push_back(aggregate_rows(cat_rows, method, cat));
    }
  }
  return report;
}

int vocabulary_index(const std::vector<std::string>& vocab, const std::string& word) {
  for (size_t i = 0; i < vocab.size(); ++i)
    if (vocab[i] == word) return static_cast<int>(i);
  fail("vocabulary_index: unknown word '" + word + "'");
}

namespace {

SyntheticImage blank_scene(const PromptRecord& prompt, const EvalConfig& cfg,
                           double noise_level, SceneProvenance prov) {
  SyntheticImage img;
  img.height = cfg.image_h;
  img.width = cfg.image_w;
  img.concept_idx.assign(static_cast<size_t>(cfg.image_h) * cfg.image_w, 0);
  img.attr_idx.assign(static_cast<size_t>(cfg.image_h) * cfg.image_w, 0);
  img.noise_level = noise_level;
  img.noise_seed = mix_seed(mix_seed(prov.seed, fnv1a64(prov.method)),
                            static_cast<uint64_t>(prompt.id));
  img.prov = std::move(prov);
  return img;
}

void paint_region(SyntheticImage& img, const Tensor& mask, const LabelSpec& label) {
  int ci = vocabulary_index(concept_vocabulary(), label.concept_name);
  int ai = vocabulary_index(attribute_vocabulary(), label.attribute);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      if (mask.at2(y, x) == 1.0) {
        img.concept_idx[static_cast<size_t>(y) * img.width + x] = ci;
        img.attr_idx[static_cast<size_t>(y) * img.width + x] = ai;
      }
}

}  // namespace

SyntheticImage decode_scene(const Tensor& z_out, const PromptRecord& prompt,
                            const EvalConfig& cfg, double noise_level,
                            SceneProvenance prov) {
  SyntheticImage img = blank_scene(prompt, cfg, noise_level, std::move(prov));
  HardMasks latent_masks = masks_from_ratios(prompt.layout);
  RegionLayout img_layout = RegionLayout::make(prompt.layout.ratios, cfg.image_h, cfg.image_w);
  HardMasks img_masks = masks_from_ratios(img_layout);
  Tensor projection = oracle_projection(static_cast<int>(token_average(prompt.e_g).numel()),
                                        z_out.shape[0]);
  std::vector<Tensor> e_bar;
  for (const auto& e : prompt.e_k) e_bar.push_back(token_average(e));

  for (int k = 0; k < latent_masks.k; ++k) {
    Tensor mu = region_channel_mean(z_out, latent_masks.masks[k]);
    Tensor lifted({projection.rows()});
    for (int i = 0; i < projection.rows(); ++i) {
      double acc = 0.0;
      for (int j = 0; j < projection.cols(); ++j) acc += projection.at2(i, j) * mu[j];
      lifted[i] = acc;
    }
    int best = 0;
    double best_cos = -2.0;
    for (size_t l = 0; l < e_bar.size(); ++l) {
      double c = cosine_or_zero(lifted, e_bar[l]);
      if (c > best_cos) {
        best_cos = c;
        best = static_cast<int>(l);
      }
    }
    paint_region(img, img_masks.masks[k], prompt.regions[best].label);
  }
  return img;
}

SyntheticImage reference_scene(const PromptRecord& prompt, const EvalConfig& cfg,
                               double noise_level, SceneProvenance prov) {
  SyntheticImage img = blank_scene(prompt, cfg, noise_level, std::move(prov));
  RegionLayout img_layout = RegionLayout::make(prompt.layout.ratios, cfg.image_h, cfg.image_w);
  HardMasks img_masks = masks_from_ratios(img_layout);
  for (int k = 0; k < img_masks.k; ++k)
    paint_region(img, img_masks.masks[k], prompt.regions[k].label);
  return img;
}

}  // namespace grpg
