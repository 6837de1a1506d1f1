#include "grpg/config.hpp"

#include <fstream>
#include <set>

namespace grpg {

using nlohmann::json;

namespace {

// strict field extraction: every key in `j` must be consumed
class StrictObject {
public:
  StrictObject(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j.is_object()) fail("config: " + where_ + " must be an object");
  }
  template <typename T>
  void read(const char* key, T& out) {
    seen_.insert(key);
    if (j_.contains(key)) out = j_.at(key).get<T>();
  }
  const json* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }
  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key()))
        fail("config: unknown key '" + it.key() + "' in " + where_);
  }

private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

}  // namespace

json surrogate_cfg_to_json(const SurrogateConfig& c) {
  return json{{"latent_channels", c.latent_c}, {"latent_size", c.latent_h},
              {"stage_grid", c.grid},          {"width", c.width},
              {"window", c.window},            {"heads", c.heads},
              {"svd_rank", c.svd_rank},        {"groups", c.groups},
              {"embed", c.embed_d},            {"eps", c.eps},
              {"alpha0", c.alpha0},            {"beta0", c.beta0},
              {"seed", c.seed}};
}

SurrogateConfig surrogate_cfg_from_json(const json& j) {
  SurrogateConfig c;
  StrictObject o(j, "surrogate");
  o.read("latent_channels", c.latent_c);
  int latent_size = c.latent_h;
  o.read("latent_size", latent_size);
  c.latent_h = c.latent_w = latent_size;
  o.read("stage_grid", c.grid);
  o.read("width", c.width);
  o.read("window", c.window);
  o.read("heads", c.heads);
  o.read("svd_rank", c.svd_rank);
  o.read("groups", c.groups);
  o.read("embed", c.embed_d);
  o.read("eps", c.eps);
  o.read("alpha0", c.alpha0);
  o.read("beta0", c.beta0);
  o.read("seed", c.seed);
  o.finish();
  return c;
}

json adapter_cfg_to_json(const AdapterConfig& c) {
  return json{{"embed", c.embed_d},
              {"latent_channels", c.latent_c},
              {"film_hidden", c.film_hidden},
              {"film_dropout", c.film_dropout},
              {"gamma_lo", c.gamma_lo},
              {"gamma_hi", c.gamma_hi},
              {"rca_dim", c.rca_dim},
              {"rca_heads", c.rca_heads},
              {"rca_ln_mode", c.rca_ln_mode},
              {"conf_hidden", c.conf_hidden},
              {"alpha_max", c.alpha_max},
              {"constant_alpha", c.constant_alpha},
              {"eps", c.eps},
              {"seed", c.seed}};
}

AdapterConfig adapter_cfg_from_json(const json& j) {
  AdapterConfig c;
  StrictObject o(j, "adapter");
  o.read("embed", c.embed_d);
  o.read("latent_channels", c.latent_c);
  o.read("film_hidden", c.film_hidden);
  o.read("film_dropout", c.film_dropout);
  o.read("gamma_lo", c.gamma_lo);
  o.read("gamma_hi", c.gamma_hi);
  o.read("rca_dim", c.rca_dim);
  o.read("rca_heads", c.rca_heads);
  o.read("rca_ln_mode", c.rca_ln_mode);
  o.read("conf_hidden", c.conf_hidden);
  o.read("alpha_max", c.alpha_max);
  o.read("constant_alpha", c.constant_alpha);
  o.read("eps", c.eps);
  o.read("seed", c.seed);
  o.finish();
  return c;
}

RunConfig RunConfig::defaults() { return RunConfig{}; }

RunConfig RunConfig::from_json(const json& j) {
  RunConfig c;
  StrictObject root(j, "config");

  if (const json* corpus = root.child("corpus")) {
    StrictObject o(*corpus, "corpus");
    o.read("size", c.corpus.size);
    o.read("k_min", c.corpus.k_min);
    o.read("k_max", c.corpus.k_max);
    o.read("mix", c.corpus.mix);
    o.read("candidates", c.corpus.candidates);
    o.read("plant_amplitude", c.corpus.plant_amplitude);
    o.read("correct_placement_prob", c.corpus.correct_placement_prob);
    o.read("seed", c.corpus.seed);
    o.read("tokens", c.corpus.tokens_l);
    o.read("embed", c.corpus.embed_d);
    o.finish();
  }
  if (const json* sur = root.child("surrogate")) c.surrogate = surrogate_cfg_from_json(*sur);
  if (const json* ad = root.child("adapter")) c.adapter = adapter_cfg_from_json(*ad);
  if (const json* loss = root.child("loss")) {
    StrictObject o(*loss, "loss");
    o.read("lambda_rank", c.train.weights.lambda_rank);
    o.read("lambda_div", c.train.weights.lambda_div);
    o.read("lambda_alpha", c.train.weights.lambda_alpha);
    o.read("m0", c.train.weights.m0);
    o.read("tau_alpha", c.train.weights.tau_alpha);
    o.finish();
  }
  if (const json* train = root.child("train")) {
    StrictObject o(*train, "train");
    o.read("epochs", c.train.epochs);
    o.read("batch_size", c.train.batch_size);
    o.read("lr", c.train.lr);
    o.read("weight_decay", c.train.weight_decay);
    o.read("grad_clip", c.train.grad_clip);
    o.read("alpha_warmup_epochs", c.train.alpha_warmup_epochs);
    o.read("val_fraction", c.train.val_fraction);
    std::string variant = variant_to_string(c.train.variant);
    o.read("variant", variant);
    c.train.variant = variant_from_string(variant);
    o.read("seed", c.train.seed);
    o.read("sigma_b", c.train.sigma_b);
    o.finish();
  }
  if (const json* ev = root.child("eval")) {
    StrictObject o(*ev, "eval");
    o.read("image_size", c.eval.eval.image_h);
    c.eval.eval.image_w = c.eval.eval.image_h;
    o.read("band_px", c.eval.eval.band_px);
    o.read("provider_noise", c.eval.provider_noise);
    o.read("scene_noise", c.eval.scene_noise);
    o.read("seeds", c.eval.seeds);
    o.finish();
  }
  root.finish();

  // each dimension is stated once: the surrogate owns latent geometry, the
  // corpus owns the text dims, the adapter follows both
  c.corpus.latent_c = c.surrogate.latent_c;
  c.corpus.latent_h = c.surrogate.latent_h;
  c.corpus.latent_w = c.surrogate.latent_w;
  c.surrogate.embed_d = c.corpus.embed_d;
  c.adapter.embed_d = c.corpus.embed_d;
  c.adapter.latent_c = c.surrogate.latent_c;
  c.adapter.rca_dim = c.surrogate.width;
  c.train.weights.alpha_max = c.adapter.alpha_max;
  c.validate();
  return c;
}

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("config: cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    fail("config: " + path + " is not valid JSON: " + e.what());
  }
  return from_json(j);
}

json RunConfig::to_json() const {
  json j;
  j["corpus"] = {{"size", corpus.size},
                 {"k_min", corpus.k_min},
                 {"k_max", corpus.k_max},
                 {"mix", corpus.mix},
                 {"candidates", corpus.candidates},
                 {"plant_amplitude", corpus.plant_amplitude},
                 {"correct_placement_prob", corpus.correct_placement_prob},
                 {"seed", corpus.seed},
                 {"tokens", corpus.tokens_l},
                 {"embed", corpus.embed_d}};
  j["surrogate"] = surrogate_cfg_to_json(surrogate);
  j["adapter"] = adapter_cfg_to_json(adapter);
  j["loss"] = {{"lambda_rank", train.weights.lambda_rank},
               {"lambda_div", train.weights.lambda_div},
               {"lambda_alpha", train.weights.lambda_alpha},
               {"m0", train.weights.m0},
               {"tau_alpha", train.weights.tau_alpha}};
  j["train"] = {{"epochs", train.epochs},
                {"batch_size", train.batch_size},
                {"lr", train.lr},
                {"weight_decay", train.weight_decay},
                {"grad_clip", train.grad_clip},
                {"alpha_warmup_epochs", train.alpha_warmup_epochs},
                {"val_fraction", train.val_fraction},
                {"variant", variant_to_string(train.variant)},
                {"seed", train.seed},
                {"sigma_b", train.sigma_b}};
  j["eval"] = {{"image_size", eval.eval.image_h},
               {"band_px", eval.eval.band_px},
               {"provider_noise", eval.provider_noise},
               {"scene_noise", eval.scene_noise},
               {"seeds", eval.seeds}};
  return j;
}

uint64_t RunConfig::hash() const {
  // Covers what determines checkpoint compatibility: architecture, data
  // geometry and loss constants. Run fields (variant, epochs, seeds) are
  // free to differ between a checkpoint and its consumers.
  json j = to_json();
  j.erase("train");
  j.erase("eval");
  json loss = json{{"lambda_rank", train.weights.lambda_rank},
                   {"lambda_div", train.weights.lambda_div},
                   {"lambda_alpha", train.weights.lambda_alpha},
                   {"m0", train.weights.m0},
                   {"tau_alpha", train.weights.tau_alpha}};
  j["loss"] = loss;
  return fnv1a64(j.dump());
}

void RunConfig::validate() const {
  if (surrogate.embed_d != corpus.embed_d || adapter.embed_d != corpus.embed_d)
    fail("config: embedding dims disagree across sections");
  if (surrogate.latent_c != corpus.latent_c || adapter.latent_c != corpus.latent_c)
    fail("config: latent channel counts disagree across sections");
  if (surrogate.latent_h != corpus.latent_h || surrogate.latent_w != corpus.latent_w)
    fail("config: latent canvas sizes disagree across sections");
  if (adapter.rca_dim != surrogate.width)
    fail("config: rca_dim must equal the surrogate token width");
  if (train.weights.alpha_max != adapter.alpha_max)
    fail("config: alpha_max disagrees between loss weights and adapter");
}

}  // namespace grpg
