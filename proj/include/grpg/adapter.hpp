#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "grpg/surrogate.hpp"
#include "grpg/synthetic.hpp"
#include "grpg/tape.hpp"

namespace grpg {

enum class Variant { FilmOnly, V3, V4 };
Variant variant_from_string(const std::string& s);
std::string variant_to_string(Variant v);

struct AdapterConfig {
  int embed_d = 64;
  int latent_c = 4;
  int film_hidden = 128;
  double film_dropout = 0.1;
  double gamma_lo = 0.5;
  double gamma_hi = 1.5;
  int rca_dim = 32;
  int rca_heads = 2;
  // "none": plain zero-init residual (default; the zero-affine branch LN
  // starves W_O of gradient, see the repo notes). "branch_zero_ln" and
  // "paper_post_ln" keep the alternative placements reachable.
  std::string rca_ln_mode = "none";
  int conf_hidden = 32;
  double alpha_max = 0.6;
  double constant_alpha = 0.4;  // v3 / film-only blend
  double eps = 1e-5;
  uint64_t seed = 1;
};

// Per-feature standardization moments frozen at training time.
struct FeatureMoments {
  Tensor mean = Tensor::zeros({7});
  Tensor stddev = Tensor::full({7}, 1.0);
};

// The three trainable blocks. FiLM and Confidence output layers are
// zero-initialized (bias ln 2 for the head), W_O is zero-initialized, so the
// whole stack is the identity on top of the frozen surrogate at start.
struct AdapterStack {
  AdapterConfig cfg;
  ParamSet params;  // film.*, rca.*, conf.*
  FeatureMoments moments;

  static AdapterStack init(const AdapterConfig& cfg);
  std::vector<std::string> trainable_names(Variant v) const;
  void reinit_confidence(uint64_t seed);
  size_t param_count(Variant v) const;
};

struct FilmRegionParams {
  Var gamma;  // C-vector in [gamma_lo, gamma_hi]
  Var beta;   // C-vector in [-tau, tau]
};

// gamma = clamp(1 + raw_gamma), beta = clamp(raw_beta, +-tau); raw values
// come from the two-layer SiLU perceptron over the token-averaged region
// embedding. Dropout is active only when training.
FilmRegionParams film_params(Tape& tape, std::map<std::string, Var>& pv,
                             const AdapterConfig& cfg, const Tensor& e_bar_k, double tau,
                             bool training = false, RandomStream* dropout_rng = nullptr);

// z_film = sum_k m_k (gamma_k * z_g + beta_k); with hard masks this is the
// pure per-region modulation.
Var film_apply(Tape& tape, Var z_g, const std::vector<FilmRegionParams>& region_params,
               const std::vector<Tensor>& masks);

// Masked multi-head cross-attention residual on the inter-stage tokens.
// token_masks are per-token weights on the inter-stage grid (partition of
// unity across regions).
Var region_cross_attention(Tape& tape, std::map<std::string, Var>& pv,
                           const AdapterConfig& cfg, Var f,
                           const std::vector<Tensor>& region_tokens,
                           const std::vector<Tensor>& token_masks);

// alpha = alpha_max * sigmoid(MLP(standardized features)).
Var confidence_alpha(Tape& tape, std::map<std::string, Var>& pv, const AdapterConfig& cfg,
                     const ConfidenceFeatures& features, const FeatureMoments& moments);

struct GoldenForwardOptions {
  Variant variant = Variant::V4;
  bool training = false;
  RandomStream* dropout_rng = nullptr;
  std::optional<double> force_alpha;
  double sigma_b = 1.0;  // soft-mask blur at the latent resolution
};

struct GoldenForward {
  Var z_g;
  Var z_swin;
  Var z_film;
  Var z_out;
  Var alpha;
  double tau = 0.0;
  ConfidenceFeatures features;
  std::vector<std::pair<Tensor, Tensor>> gamma_beta;  // per-region diagnostics
};

// Alg.-style v4 forward: z_swin from the hooked surrogate, z_film over the
// hook-free z_g, confidence blend between them. film_only skips the hook;
// film_only/v3 use the constant blend.
GoldenForward golden_rpg_forward(Tape& tape, const SurrogateNPNet& net,
                                 std::map<std::string, Var>& sur_pv,
                                 const AdapterStack& stack,
                                 std::map<std::string, Var>& ad_pv, const Tensor& z_t,
                                 const PromptRecord& prompt,
                                 const GoldenForwardOptions& options = {});

}  // namespace grpg
