#pragma once

#include <map>
#include <string>
#include <vector>

#include "grpg/geometry.hpp"
#include "grpg/tensor.hpp"

namespace grpg {

struct LabelSpec {
  std::string concept_name;
  std::string attribute;
};

// Deterministic stand-in for the frozen text encoders: every label maps to a
// fixed seeded unit direction, tokens are that direction plus a small seeded
// positional jitter. Same inputs, bitwise-same outputs. Directions of the
// built-in vocabulary are orthogonalized in vocabulary order, so disjoint
// concepts have near-zero mean cosine and same-concept/other-attribute pairs
// land at a fixed intermediate value.
class MockTextEncoder {
public:
  MockTextEncoder(int tokens_l, int embed_d, uint64_t vocab_seed = 0x9D5EEDFACEULL);

  int tokens() const { return tokens_l_; }
  int dim() const { return embed_d_; }

  // Unit direction of one (concept, attribute) pair.
  Tensor direction(const LabelSpec& label) const;
  // Token matrix (L x D) for a label set; jitter_seed varies the per-token
  // perturbation without moving the underlying concept directions.
  Tensor embed(const std::vector<LabelSpec>& labels, uint64_t jitter_seed) const;

  double attribute_weight() const { return attr_weight_; }

private:
  Tensor raw_direction(const std::string& tag) const;

  int tokens_l_;
  int embed_d_;
  uint64_t vocab_seed_;
  double attr_weight_ = 0.5;
  double pair_weight_ = 0.25;
  double pos_jitter_ = 0.05;
  std::map<std::string, Tensor> basis_;  // orthogonalized vocabulary directions
};

Tensor token_average(const Tensor& tokens);  // L x D -> D

// The seven Eq.-style prompt statistics. Pairwise terms are 0 for K = 1.
struct ConfidenceFeatures {
  double f1 = 0, f2 = 0, f3 = 0, f4 = 0, f5 = 0, f6 = 0, f7 = 0;
  Tensor as_tensor() const;
};
ConfidenceFeatures confidence_features(const Tensor& e_bar_g,
                                       const std::vector<Tensor>& e_bar_k);

// Fixed seeded projection with orthonormal columns (D x C), shared by corpus
// building, training and evaluation so candidate scores are comparable
// everywhere.
Tensor oracle_projection(int embed_d, int latent_c);

// Masked per-channel spatial mean of z under mask (C-vector).
Tensor region_channel_mean(const Tensor& z, const Tensor& mask);

// Image-free regional alignment score. Each region's projected mean is
// scored against its own sub-prompt embedding and contrasted with the mean
// cosine against the other regions' embeddings; identical sub-prompts make
// every tensor score 0, so the ranking gap collapses for non-regional
// prompts. K = 1 reduces to the plain cosine.
double oracle_score(const Tensor& z, const HardMasks& masks,
                    const std::vector<Tensor>& e_bar_k, const Tensor& projection,
                    int* zero_norm_warnings = nullptr);

struct RegionSpec {
  LabelSpec label;
  uint64_t jitter_seed = 0;
};

struct PromptRecord {
  int id = 0;
  RegionLayout layout;  // latent resolution
  std::vector<RegionSpec> regions;
  uint64_t global_jitter_seed = 0;
  Tensor e_g;                  // L x D
  std::vector<Tensor> e_k;     // K matrices, L x D
  std::string category;        // "regional" | "uniform"
  int k() const { return layout.k; }
};

struct TrainingRecord {
  PromptRecord prompt;
  Tensor z_t;  // seed noise, C x H x W
  Tensor z_plus;
  Tensor z_minus;
  std::vector<Tensor> candidates;
  std::vector<double> candidate_scores;
  double delta = 0.0;
  uint64_t seed = 0;
};

struct CorpusSpec {
  int size = 220;
  int k_min = 2;
  int k_max = 3;
  double mix = 1.0;  // fraction of genuinely multi-concept prompts
  int candidates = 5;
  double plant_amplitude = 0.35;
  double correct_placement_prob = 0.5;
  uint64_t seed = 7;
  int tokens_l = 8;
  int embed_d = 64;
  int latent_c = 4;
  int latent_h = 32;
  int latent_w = 32;
};

struct CorpusStats {
  double delta_bar = 0.0;
  int count = 0;
  std::map<std::string, int> categories;
};

struct Corpus {
  CorpusSpec spec;
  std::vector<TrainingRecord> records;
  CorpusStats stats;
};

const std::vector<std::string>& concept_vocabulary();
const std::vector<std::string>& attribute_vocabulary();

// Draws K_c candidate noises (standard normal plus a per-region concept
// component whose region assignment varies per candidate), ranks them with
// oracle_score, and freezes z+/z-/delta. z_T is an independent draw.
TrainingRecord build_training_record(const PromptRecord& prompt, const CorpusSpec& spec,
                                     uint64_t seed);

// Deterministic corpus: record i derives its own child seed from
// (corpus seed, i), so any evaluation order rebuilds the same records.
Corpus gen_corpus(const CorpusSpec& spec);

PromptRecord make_prompt_record(const MockTextEncoder& enc, int id,
                                std::vector<double> ratios,
                                std::vector<RegionSpec> regions, uint64_t global_seed,
                                int latent_h, int latent_w, std::string category);

}  // namespace grpg
