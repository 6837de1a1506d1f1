#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "grpg/geometry.hpp"
#include "grpg/synthetic.hpp"

namespace grpg {

struct SceneProvenance {
  int prompt_id = 0;
  std::string method;
  uint64_t seed = 0;
};

// Grid of labeled cells standing in for a generated image; noise_seed drives
// the provider's per-cell perturbations deterministically.
struct SyntheticImage {
  int height = 0;
  int width = 0;
  std::vector<int> concept_idx;  // per cell, indices into the vocabularies
  std::vector<int> attr_idx;
  double noise_level = 0.0;
  uint64_t noise_seed = 0;
  SceneProvenance prov;

  int cell_concept(int y, int x) const { return concept_idx[static_cast<size_t>(y) * width + x]; }
  int cell_attr(int y, int x) const { return attr_idx[static_cast<size_t>(y) * width + x]; }
};

class EmbeddingProvider {
public:
  virtual ~EmbeddingProvider() = default;
  virtual int dim() const = 0;
  // Unit embedding of the cells selected by a binary mask (H x W).
  virtual Tensor image_embed(const SyntheticImage& image, const Tensor& mask) const = 0;
  // Unit embedding of a label set.
  virtual Tensor text_embed(const std::vector<LabelSpec>& labels) const = 0;
};

// Crop embedding = normalized mean of the cells' concept+attribute directions
// plus seeded noise of configurable magnitude; shares the mock encoder's
// vocabulary geometry so metrics are analytically predictable.
class MockProvider : public EmbeddingProvider {
public:
  MockProvider(const MockTextEncoder& enc, double noise);
  int dim() const override { return enc_.dim(); }
  Tensor image_embed(const SyntheticImage& image, const Tensor& mask) const override;
  Tensor text_embed(const std::vector<LabelSpec>& labels) const override;

private:
  const MockTextEncoder& enc_;
  double noise_;
};

// Mean cosine between each region crop and its sub-prompt.
double rsa(const SyntheticImage& image, const HardMasks& masks,
           const std::vector<LabelSpec>& sub_prompts, const EmbeddingProvider& provider);

// Mean cosine between the bands on either side of every internal boundary;
// 1.0 by convention for K = 1 (flagged via *k1_convention when given).
double crc(const SyntheticImage& image, const HardMasks& masks,
           const EmbeddingProvider& provider, int band_px, bool* k1_convention = nullptr);

// Target-crop similarity minus mean wrong-crop similarity, averaged over
// sub-prompts. Undefined (fails) for K = 1.
double mocq(const SyntheticImage& image, const HardMasks& masks,
            const std::vector<LabelSpec>& sub_prompts, const EmbeddingProvider& provider);

// 1 iff the full image is closer to the correct prompt than to the
// attribute-swapped negative; 0 on a strict tie (counted). Empty optional
// when fewer than two regions carry distinct attributes (probe skipped).
std::optional<int> attribute_binding(const SyntheticImage& image,
                                     const std::vector<LabelSpec>& sub_prompts,
                                     const EmbeddingProvider& provider,
                                     int* tie_counter = nullptr);

// Full-image vs full-prompt cosine (the CLIP-Score analog).
double clip_analog(const SyntheticImage& image, const std::vector<LabelSpec>& sub_prompts,
                   const EmbeddingProvider& provider);

struct MetricRow {
  int prompt_id = 0;
  std::string method;
  uint64_t seed = 0;
  std::string category;
  double clip = 0, rsa = 0, crc = 0, mocq = 0;
  int ab = 0;
  bool ab_skipped = false;
  bool flagged = false;  // missing scene; excluded from aggregates
};

struct MetricAggregate {
  std::string method;
  std::string category;  // "all" or a prompt category
  int count = 0;
  double clip = 0, rsa = 0, crc = 0, mocq = 0;
  double ab_rate = 0;
  int ab_count = 0;  // rows where the probe applied
};

struct MetricReport {
  std::vector<MetricRow> rows;
  std::vector<MetricAggregate> aggregates;
  int missing = 0;
  int ties = 0;
};

struct EvalConfig {
  int image_h = 64;
  int image_w = 64;
  int band_px = 0;  // 0: round(32 * W / 1024), clamped to >= 1
};

int default_band_px(int image_w);

// One row per (prompt, method, seed) found in `scenes`; combinations implied
// by the method/seed grid but absent from `scenes` are flagged and excluded
// from the aggregates. Deterministic ordering throughout.
MetricReport eval_suite(const std::vector<const PromptRecord*>& prompts,
                        const std::vector<SyntheticImage>& scenes,
                        const EmbeddingProvider& provider, const EvalConfig& cfg);

MetricAggregate aggregate_rows(const std::vector<const MetricRow*>& rows,
                               std::string method, std::string category);

// Renders a scene from a predicted noise tensor: each region's cells take
// the sub-prompt whose embedding best matches the region's projected channel
// mean, so correctly regionalized noise reproduces the intended layout.
SyntheticImage decode_scene(const Tensor& z_out, const PromptRecord& prompt,
                            const EvalConfig& cfg, double noise_level,
                            SceneProvenance prov);

// Ground-truth scene for a prompt (every region rendered as intended).
SyntheticImage reference_scene(const PromptRecord& prompt, const EvalConfig& cfg,
                               double noise_level, SceneProvenance prov);

int vocabulary_index(const std::vector<std::string>& vocab, const std::string& word);

}  // namespace grpg
