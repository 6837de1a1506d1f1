#pragma once

#include <functional>
#include <map>
#include <string>

#include "grpg/optim.hpp"
#include "grpg/tape.hpp"
#include "grpg/tensor.hpp"

namespace grpg {

struct SurrogateConfig {
  int latent_c = 4;
  int latent_h = 32;
  int latent_w = 32;
  int grid = 8;    // inter-stage token grid (grid x grid)
  int width = 32;  // token width C_s
  int window = 4;  // windowed-attention window edge
  int heads = 2;
  int svd_rank = 4;
  int groups = 2;
  int embed_d = 64;
  double eps = 1e-5;
  double alpha0 = 0.5;
  double beta0 = 1.0;
  uint64_t seed = 2024;
};

// Rank-r truncated SVD reconstruction of z matricized as (C*H) x W, with a
// deterministic sign convention (each left singular vector's largest-
// magnitude entry made positive). Input must not require gradients.
Tensor svd_u(const Tensor& z, int rank);

// Full singular values of the same matricization, descending (test support).
std::vector<double> svd_singular_values(const Tensor& z);

using StageHook = std::function<Var(Tape&, Var)>;

// Frozen NPNet stand-in: SVD low-rank residual + AdaGroupNorm text gating +
// a two-stage windowed-attention stack with an inter-stage hook point.
struct SurrogateNPNet {
  SurrogateConfig cfg;
  ParamSet params;  // all frozen after construction

  // index tables for patchify / unpatchify and the window layout
  std::vector<size_t> patchify_idx;
  std::vector<size_t> unpatchify_idx;
  std::vector<std::vector<int>> window_rows;
  std::vector<int> window_unperm;

  static SurrogateNPNet build(const SurrogateConfig& cfg);
  int patch() const { return cfg.latent_h / cfg.grid; }
  int tokens() const { return cfg.grid * cfg.grid; }
};

// Binds a ParamSet onto a tape; `trainable` selects which entries require
// gradients (none when absent).
std::map<std::string, Var> bind_params(
    Tape& tape, const ParamSet& params,
    const std::function<bool(const std::string&)>& trainable = nullptr);

// Group-normalize z then apply the text-conditioned per-group affine. The
// scale/shift are identical at every spatial position (the global
// bottleneck this artifact demonstrates).
Var ada_group_norm(Tape& tape, const SurrogateNPNet& net,
                   std::map<std::string, Var>& pv, Var z, Var e_bar_g_row);

// Patch-embed z_in, run stage 1, apply the hook (if any) on the inter-stage
// tokens, run stage 2, and project back to latent shape.
struct StagePathOut {
  Var out;       // latent-shaped
  Var features;  // pre-hook inter-stage tokens (N x C_s)
};
StagePathOut stage_forward(Tape& tape, const SurrogateNPNet& net,
                           std::map<std::string, Var>& pv, Var z_in,
                           const StageHook& hook = nullptr);

struct SurrogateForward {
  Var z_g;       // hook-free composition
  Var z_swin;    // with the hook spliced between the stages (== z_g without one)
  Var features;  // pre-hook inter-stage tokens
  double tau;    // std of the z_g value
};

// Exact composition: svd_u(z_T) + (2*sigmoid(a0)-1)*Ada + b0*Swin(z_T + Ada).
SurrogateForward npnet_forward(Tape& tape, const SurrogateNPNet& net,
                               std::map<std::string, Var>& pv, const Tensor& z_t,
                               const Tensor& e_g_tokens, const StageHook& hook = nullptr);

}  // namespace grpg
