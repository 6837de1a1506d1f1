#include "grpg/adapter.hpp"

#include <cmath>

#include "grpg/geometry.hpp"

namespace grpg {

Variant variant_from_string(const std::string& s) {
  if (s == "film_only") return Variant::FilmOnly;
  if (s == "v3") return Variant::V3;
  if (s == "v4") return Variant::V4;
  fail("unknown variant '" + s + "' (expected film_only, v3 or v4)");
}

std::string variant_to_string(Variant v) {
  switch (v) {
    case Variant::FilmOnly: return "film_only";
    case Variant::V3: return "v3";
    case Variant::V4: return "v4";
  }
  return "?";
}

AdapterStack AdapterStack::init(const AdapterConfig& cfg) {
  if (cfg.rca_dim % cfg.rca_heads != 0) fail("adapter: rca_dim not divisible by heads");
  if (cfg.rca_ln_mode != "none" && cfg.rca_ln_mode != "branch_zero_ln" &&
      cfg.rca_ln_mode != "paper_post_ln")
    fail("adapter: unknown rca_ln_mode '" + cfg.rca_ln_mode + "'");
  AdapterStack s;
  s.cfg = cfg;
  RandomStream rng(mix_seed(cfg.seed, 0xADA97ULL));
  int d = cfg.embed_d, h = cfg.film_hidden, c = cfg.latent_c;
  s.params.add("film.w1", Tensor::randn({d, h}, rng, 1.0 / std::sqrt(d)));
  s.params.add("film.b1", Tensor::zeros({h}));
  s.params.add("film.w2", Tensor::zeros({h, 2 * c}));  // zero-init output layer
  s.params.add("film.b2", Tensor::zeros({2 * c}));

  int cs = cfg.rca_dim;  // query width equals the surrogate token width
  s.params.add("rca.wq", Tensor::randn({cs, cs}, rng, 1.0 / std::sqrt(cs)));
  s.params.add("rca.wk", Tensor::randn({d, cs}, rng, 1.0 / std::sqrt(d)));
  s.params.add("rca.wv", Tensor::randn({d, cs}, rng, 1.0 / std::sqrt(d)));
  s.params.add("rca.wo", Tensor::zeros({cs, cs}));  // identity at start
  double ln_gain = cfg.rca_ln_mode == "branch_zero_ln" ? 0.0 : 1.0;
  s.params.add("rca.ln.g", Tensor::full({cs}, ln_gain));
  s.params.add("rca.ln.b", Tensor::zeros({cs}));

  int ch = cfg.conf_hidden;
  s.params.add("conf.w1", Tensor::randn({7, ch}, rng, 1.0 / std::sqrt(7.0)));
  s.params.add("conf.b1", Tensor::zeros({ch}));
  s.params.add("conf.w2", Tensor::randn({ch, ch}, rng, 1.0 / std::sqrt(ch)));
  s.params.add("conf.b2", Tensor::zeros({ch}));
  s.params.add("conf.w3", Tensor::zeros({ch, 1}));
  s.params.add("conf.b3", Tensor::full({1}, std::log(2.0)));  // alpha(init) = 0.40
  return s;
}

void AdapterStack::reinit_confidence(uint64_t seed) {
  RandomStream rng(mix_seed(seed, 0xC04FULL));
  int ch = cfg.conf_hidden;
  params.get("conf.w1") = Tensor::randn({7, ch}, rng, 1.0 / std::sqrt(7.0));
  params.get("conf.b1") = Tensor::zeros({ch});
  params.get("conf.w2") = Tensor::randn({ch, ch}, rng, 1.0 / std::sqrt(ch));
  params.get("conf.b2") = Tensor::zeros({ch});
  params.get("conf.w3") = Tensor::zeros({ch, 1});
  params.get("conf.b3") = Tensor::full({1}, std::log(2.0));
}

std::vector<std::string> AdapterStack::trainable_names(Variant v) const {
  std::vector<std::string> out;
  for (const auto& name : params.names()) {
    bool film = name.rfind("film.", 0) == 0;
    bool rca = name.rfind("rca.", 0) == 0;
    bool conf = name.rfind("conf.", 0) == 0;
    bool ln = name.rfind("rca.ln.", 0) == 0;
    if (ln && cfg.rca_ln_mode == "none") continue;  // unused by the forward
    if (v == Variant::FilmOnly && film) out.push_back(name);
    if (v == Variant::V3 && (film || rca)) out.push_back(name);
    if (v == Variant::V4 && (film || rca || conf)) out.push_back(name);
  }
  return out;
}

size_t AdapterStack::param_count(Variant v) const {
  size_t n = 0;
  for (const auto& name : trainable_names(v)) n += params.get(name).numel();
  return n;
}

FilmRegionParams film_params(Tape& tape, std::map<std::string, Var>& pv,
                             const AdapterConfig& cfg, const Tensor& e_bar_k, double tau,
                             bool training, RandomStream* dropout_rng) {
  if (tau <= 0.0) fail("film_params: tau must be positive");
  Tensor row = e_bar_k;
  row.shape = {1, cfg.embed_d};
  Var x = make_const(tape, row);
  Var h = silu(linear(x, pv.at("film.w1"), pv.at("film.b1")));
  if (training && cfg.film_dropout > 0.0) {
    if (!dropout_rng) fail("film_params: training mode needs a dropout stream");
    h = dropout(h, cfg.film_dropout, *dropout_rng);
  }
  Var raw = linear(h, pv.at("film.w2"), pv.at("film.b2"));  // 1 x 2C
  int c = cfg.latent_c;
  Var raw_gamma = reshape(slice_cols(raw, 0, c), {c});
  Var raw_beta = reshape(slice_cols(raw, c, 2 * c), {c});
  FilmRegionParams out;
  out.gamma = clamp(add_scalar(raw_gamma, 1.0), cfg.gamma_lo, cfg.gamma_hi);
  out.beta = clamp(raw_beta, -tau, tau);
  return out;
}

Var film_apply(Tape& tape, Var z_g, const std::vector<FilmRegionParams>& region_params,
               const std::vector<Tensor>& masks) {
  if (region_params.size() != masks.size())
    fail("film_apply: " + std::to_string(region_params.size()) + " parameter sets for " +
         std::to_string(masks.size()) + " masks");
  if (region_params.empty()) fail("film_apply: no regions");
  Var acc{};
  for (size_t k = 0; k < masks.size(); ++k) {
    Var modulated =
        shift_channels(scale_channels(z_g, region_params[k].gamma), region_params[k].beta);
    Var term = mul_spatial(modulated, make_const(tape, masks[k]));
    acc = (k == 0) ? term : add(acc, term);
  }
  return acc;
}

Var region_cross_attention(Tape& tape, std::map<std::string, Var>& pv,
                           const AdapterConfig& cfg, Var f,
                           const std::vector<Tensor>& region_tokens,
                           const std::vector<Tensor>& token_masks) {
  if (region_tokens.size() != token_masks.size() || region_tokens.empty())
    fail("region_cross_attention: region token/mask count mismatch");
  const Tensor& fv = f.val();
  if (fv.ndim() != 2) fail("region_cross_attention: features are not 2-D: " + fv.shape_str());
  int n = fv.rows();
  int cs = fv.cols();
  if (cs != cfg.rca_dim)
    fail("region_cross_attention: feature width " + std::to_string(cs) +
         " does not match rca_dim " + std::to_string(cfg.rca_dim));
  int dh = cfg.rca_dim / cfg.rca_heads;
  double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

  Var q_all = matmul(f, pv.at("rca.wq"));  // N x d_a
  Var update{};
  for (size_t k = 0; k < region_tokens.size(); ++k) {
    if (token_masks[k].numel() != static_cast<size_t>(n))
      fail("region_cross_attention: token mask " + token_masks[k].shape_str() +
           " does not cover " + std::to_string(n) + " tokens");
    Var t_k = make_const(tape, region_tokens[k]);  // L x D
    Var k_all = matmul(t_k, pv.at("rca.wk"));
    Var v_all = matmul(t_k, pv.at("rca.wv"));
    Var heads_out{};
    for (int head = 0; head < cfg.rca_heads; ++head) {
      Var q = slice_cols(q_all, head * dh, (head + 1) * dh);
      Var kk = slice_cols(k_all, head * dh, (head + 1) * dh);
      Var vv = slice_cols(v_all, head * dh, (head + 1) * dh);
      Var attn = softmax_rows(scale(matmul(q, transpose2d(kk)), inv_sqrt_dh));
      Var ctx = matmul(attn, vv);
      heads_out = (head == 0) ? ctx : concat_cols(heads_out, ctx);
    }
    Var delta = matmul(heads_out, pv.at("rca.wo"));  // N x C_s
    Tensor mask_vec = token_masks[k];
    mask_vec.shape = {n};
    Var masked = scale_rows(delta, make_const(tape, mask_vec));
    update = (k == 0) ? masked : add(update, masked);
  }

  if (cfg.rca_ln_mode == "branch_zero_ln")
    return add(f, layer_norm_rows(update, pv.at("rca.ln.g"), pv.at("rca.ln.b"), cfg.eps));
  if (cfg.rca_ln_mode == "paper_post_ln")
    return layer_norm_rows(add(f, update), pv.at("rca.ln.g"), pv.at("rca.ln.b"), cfg.eps);
  return add(f, update);
}

Var confidence_alpha(Tape& tape, std::map<std::string, Var>& pv, const AdapterConfig& cfg,
                     const ConfidenceFeatures& features, const FeatureMoments& moments) {
  Tensor f = features.as_tensor();
  Tensor x({1, 7});
  for (int i = 0; i < 7; ++i) {
    double s = moments.stddev[i];
    x.at2(0, i) = (f[i] - moments.mean[i]) / (s > 0.0 ? s : 1.0);
  }
  x.check_finite("confidence features");
  Var h1 = silu(linear(make_const(tape, x), pv.at("conf.w1"), pv.at("conf.b1")));
  Var h2 = silu(linear(h1, pv.at("conf.w2"), pv.at("conf.b2")));
  Var logit = reshape(linear(h2, pv.at("conf.w3"), pv.at("conf.b3")), {1});
  return scale(sigmoid(logit), cfg.alpha_max);
}

GoldenForward golden_rpg_forward(Tape& tape, const SurrogateNPNet& net,
                                 std::map<std::string, Var>& sur_pv,
                                 const AdapterStack& stack,
                                 std::map<std::string, Var>& ad_pv, const Tensor& z_t,
                                 const PromptRecord& prompt,
                                 const GoldenForwardOptions& options) {
  const AdapterConfig& cfg = stack.cfg;
  if (static_cast<int>(prompt.e_k.size()) != prompt.k())
    fail("golden_rpg_forward: prompt has " + std::to_string(prompt.e_k.size()) +
         " sub-prompt embeddings for " + std::to_string(prompt.k()) + " regions");

  HardMasks hard = masks_from_ratios(prompt.layout);
  SoftMasks soft = soften_masks(hard, options.sigma_b);
  std::vector<Tensor> soft_masks;
  for (const auto& m : soft.masks) soft_masks.push_back(m);

  // hard masks pooled onto the inter-stage grid, renormalized per token
  std::vector<Tensor> token_masks;
  for (const auto& m : hard.masks)
    token_masks.push_back(downsample_mask(m, net.cfg.grid, net.cfg.grid));
  for (int t = 0; t < net.cfg.grid * net.cfg.grid; ++t) {
    double s = 0.0;
    for (const auto& m : token_masks) s += m[t];
    if (s > 0.0)
      for (auto& m : token_masks) m[t] /= s;
  }

  StageHook hook = nullptr;
  if (options.variant != Variant::FilmOnly) {
    hook = [&](Tape& t, Var f) {
      return region_cross_attention(t, ad_pv, cfg, f, prompt.e_k, token_masks);
    };
  }

  GoldenForward out;
  auto sur = npnet_forward(tape, net, sur_pv, z_t, prompt.e_g, hook);
  out.z_g = sur.z_g;
  out.z_swin = sur.z_swin;
  out.tau = sur.tau;

  std::vector<Tensor> e_bar;
  for (const auto& e : prompt.e_k) e_bar.push_back(token_average(e));
  std::vector<FilmRegionParams> film;
  for (const auto& e : e_bar) {
    film.push_back(film_params(tape, ad_pv, cfg, e, out.tau, options.training,
                               options.dropout_rng));
    out.gamma_beta.emplace_back(film.back().gamma.val(), film.back().beta.val());
  }
  out.z_film = film_apply(tape, out.z_g, film, soft_masks);

  out.features = confidence_features(token_average(prompt.e_g), e_bar);
  if (options.force_alpha.has_value()) {
    out.alpha = make_const_scalar(tape, *options.force_alpha);
  } else if (options.variant == Variant::V4) {
    out.alpha = confidence_alpha(tape, ad_pv, cfg, out.features, stack.moments);
  } else {
    out.alpha = make_const_scalar(tape, cfg.constant_alpha);
  }

  out.z_out = add(out.z_swin, mul_scalar_var(sub(out.z_film, out.z_swin), out.alpha));
  return out;
}

}  // namespace grpg
