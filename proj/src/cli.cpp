#include "grpg/cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "grpg/config.hpp"
#include "grpg/losses.hpp"
#include "grpg/train.hpp"

namespace grpg {

namespace {

RunConfig load_config_or_default(const std::string& path) {
  if (path.empty()) return RunConfig::defaults();
  return RunConfig::from_file(path);
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("cannot open " + path + " for writing");
  out << content;
  if (!out) fail("write failed for " + path);
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

PromptRecord prompt_from_manifest(const MockTextEncoder& enc, const nlohmann::json& j,
                                  int latent_h, int latent_w) {
  std::vector<RegionSpec> regions;
  uint64_t seed = j.at("seed").get<uint64_t>();
  int idx = 0;
  for (const auto& r : j.at("regions")) {
    RegionSpec rs;
    rs.label.concept_name = r.at("concept").get<std::string>();
    rs.label.attribute = r.value("attribute", std::string{});
    rs.jitter_seed = mix_seed(seed, 1000 + idx++);
    regions.push_back(rs);
  }
  return make_prompt_record(enc, j.at("id").get<int>(),
                            j.at("ratios").get<std::vector<double>>(), std::move(regions),
                            mix_seed(seed, 0), latent_h, latent_w,
                            j.value("category", std::string("manifest")));
}

Prediction predict_one(const SurrogateNPNet& net, const AdapterStack& stack, Variant variant,
                       const PromptRecord& prompt, uint64_t seed, double sigma_b) {
  RandomStream rng(mix_seed(mix_seed(0x9E0153ULL, static_cast<uint64_t>(prompt.id)), seed));
  Tensor z_t = Tensor::randn({stack.cfg.latent_c, prompt.layout.height, prompt.layout.width},
                             rng);
  Tape tape;
  auto sur_pv = bind_params(tape, net.params);
  auto ad_pv = bind_params(tape, stack.params);
  GoldenForwardOptions opt;
  opt.variant = variant;
  opt.sigma_b = sigma_b;
  auto fwd = golden_rpg_forward(tape, net, sur_pv, stack, ad_pv, z_t, prompt, opt);
  Prediction p;
  p.prompt_id = prompt.id;
  p.seed = seed;
  p.z_out = fwd.z_out.val();
  p.alpha = fwd.alpha.val()[0];
  return p;
}

int cmd_gen_corpus(const std::string& config_path, const std::string& out_path, int size,
                   long long seed, double mix) {
  RunConfig cfg = load_config_or_default(config_path);
  if (size > 0) cfg.corpus.size = size;
  if (seed >= 0) cfg.corpus.seed = static_cast<uint64_t>(seed);
  if (mix >= 0.0) cfg.corpus.mix = mix;
  Corpus corpus = gen_corpus(cfg.corpus);
  save_corpus(corpus, out_path);
  std::printf("wrote %d records to %s (delta_bar %.6f", corpus.stats.count, out_path.c_str(),
              corpus.stats.delta_bar);
  for (const auto& [cat, n] : corpus.stats.categories) std::printf(", %s %d", cat.c_str(), n);
  std::printf(")\n");
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& corpus_path,
              const std::string& ckpt_path, const std::string& history_path,
              const std::string& variant_flag, int epochs, long long seed,
              const std::string& warm_start, bool force) {
  RunConfig cfg = load_config_or_default(config_path);
  if (!variant_flag.empty()) cfg.train.variant = variant_from_string(variant_flag);
  if (epochs > 0) cfg.train.epochs = epochs;
  if (cfg.train.alpha_warmup_epochs > cfg.train.epochs)
    cfg.train.alpha_warmup_epochs = cfg.train.epochs;
  if (seed >= 0) cfg.train.seed = static_cast<uint64_t>(seed);

  Corpus corpus = load_corpus(corpus_path);
  cfg.corpus = corpus.spec;  // the corpus file owns the data dims
  cfg.surrogate.latent_c = corpus.spec.latent_c;
  cfg.surrogate.latent_h = corpus.spec.latent_h;
  cfg.surrogate.latent_w = corpus.spec.latent_w;
  cfg.surrogate.embed_d = corpus.spec.embed_d;
  cfg.adapter.embed_d = corpus.spec.embed_d;
  cfg.adapter.latent_c = corpus.spec.latent_c;
  cfg.validate();

  SurrogateNPNet net = SurrogateNPNet::build(cfg.surrogate);
  AdapterStack stack = AdapterStack::init(cfg.adapter);
  if (!warm_start.empty()) {
    Checkpoint v3 = load_checkpoint(warm_start);
    if (v3.config_hash != cfg.hash()) {
      if (!force) {
        std::fprintf(stderr,
                     "warning: warm-start checkpoint was trained under a different config "
                     "(hash %llu vs %llu); pass --force to silence\n",
                     static_cast<unsigned long long>(v3.config_hash),
                     static_cast<unsigned long long>(cfg.hash()));
      }
    }
    net = surrogate_from_checkpoint(v3);
    stack = warm_start_from(v3, cfg.adapter);
    std::printf("warm-started %s from %s (%s checkpoint, epoch %d)\n",
                variant_to_string(cfg.train.variant).c_str(), warm_start.c_str(),
                v3.variant.c_str(), v3.epoch);
  }

  TrainResult result = train(cfg.train, corpus, net, std::move(stack));

  std::ostringstream csv;
  csv << history_csv_header() << '\n';
  for (const auto& row : result.history.rows) csv << history_csv_row(row) << '\n';
  if (!history_path.empty()) write_text_file(history_path, csv.str());

  Checkpoint ckpt = make_checkpoint(net, result.stack, variant_to_string(cfg.train.variant),
                                    result.completed_epochs, result.delta_bar, cfg.hash());
  save_checkpoint(ckpt, ckpt_path);

  if (result.history.aborted_on_nan) {
    std::fprintf(stderr, "training aborted: %s (last good state saved to %s)\n",
                 result.history.abort_message.c_str(), ckpt_path.c_str());
    return 1;
  }
  const EpochRow& last = result.history.rows.back();
  std::printf("trained %s for %d epochs: train %.5f val %.5f mean_alpha %.4f -> %s\n",
              variant_to_string(cfg.train.variant).c_str(), result.completed_epochs,
              last.train_loss, last.val_loss, last.mean_alpha, ckpt_path.c_str());
  return 0;
}

int cmd_predict(const std::string& ckpt_path, const std::string& manifest_path,
                const std::string& corpus_path, const std::string& out_path, int seeds,
                bool f32) {
  Checkpoint ckpt = load_checkpoint(ckpt_path);
  SurrogateNPNet net = surrogate_from_checkpoint(ckpt);
  AdapterStack stack = adapter_from_checkpoint(ckpt);
  Variant variant = variant_from_string(ckpt.variant);

  PredictionFile out;
  out.variant = ckpt.variant;
  out.config_hash = ckpt.config_hash;

  if (!corpus_path.empty()) {
    Corpus corpus = load_corpus(corpus_path);
    for (const auto& rec : corpus.records)
      for (int s = 1; s <= seeds; ++s)
        out.predictions.push_back(predict_one(net, stack, variant, rec.prompt,
                                              static_cast<uint64_t>(s), 1.0));
  } else if (!manifest_path.empty()) {
    nlohmann::json manifest = nlohmann::json::parse(read_text_file(manifest_path));
    int tokens = manifest.value("tokens", 8);
    MockTextEncoder enc(tokens, stack.cfg.embed_d);
    for (const auto& j : manifest.at("prompts")) {
      PromptRecord p = prompt_from_manifest(enc, j, net.cfg.latent_h, net.cfg.latent_w);
      for (int s = 1; s <= seeds; ++s)
        out.predictions.push_back(predict_one(net, stack, variant, p,
                                              static_cast<uint64_t>(s), 1.0));
    }
  } else {
    fail("predict: pass --corpus or --manifest");
  }
  save_predictions(out, out_path, f32);
  std::printf("wrote %zu predictions (%s) to %s\n", out.predictions.size(),
              out.variant.c_str(), out_path.c_str());
  return 0;
}

int cmd_eval(const std::string& config_path, const std::string& corpus_path,
             const std::vector<std::string>& pred_specs, const std::string& scenes_path,
             const std::string& out_prefix) {
  RunConfig cfg = load_config_or_default(config_path);
  Corpus corpus = load_corpus(corpus_path);
  MockTextEncoder enc(corpus.spec.tokens_l, corpus.spec.embed_d);
  MockProvider provider(enc, cfg.eval.provider_noise);

  std::vector<const PromptRecord*> prompts;
  for (const auto& rec : corpus.records) prompts.push_back(&rec.prompt);

  std::vector<SyntheticImage> scenes;
  if (!scenes_path.empty()) {
    auto loaded = load_scenes(scenes_path);
    scenes.insert(scenes.end(), loaded.begin(), loaded.end());
  }
  for (const auto& spec : pred_specs) {
    auto eq = spec.find('=');
    if (eq == std::string::npos) fail("eval: --pred expects name=path, got '" + spec + "'");
    std::string method = spec.substr(0, eq);
    PredictionFile preds = load_predictions(spec.substr(eq + 1));
    std::map<int, const PromptRecord*> by_id;
    for (const auto* p : prompts) by_id[p->id] = p;
    for (const auto& p : preds.predictions) {
      auto it = by_id.find(p.prompt_id);
      if (it == by_id.end())
        fail("eval: prediction references prompt " + std::to_string(p.prompt_id) +
             " absent from the corpus");
      scenes.push_back(decode_scene(p.z_out, *it->second, cfg.eval.eval,
                                    cfg.eval.scene_noise, {p.prompt_id, method, p.seed}));
    }
  }
  if (scenes.empty()) fail("eval: nothing to evaluate (pass --pred and/or --scenes)");

  MetricReport report = eval_suite(prompts, scenes, provider, cfg.eval.eval);
  write_text_file(out_prefix + "_rows.csv", metric_rows_csv(report));
  std::string table = render_report(report);
  write_text_file(out_prefix + "_table.txt", table);
  save_scenes(scenes, out_prefix + "_scenes.bin");
  std::fputs(table.c_str(), stdout);
  if (report.missing > 0) {
    std::fprintf(stderr, "error: %d (prompt, method, seed) rows had no scene\n",
                 report.missing);
    return 1;
  }
  return 0;
}

int cmd_report(const std::string& rows_path, const std::string& out_path, bool ablation,
               const std::vector<std::string>& ckpt_specs) {
  MetricReport report;
  report.rows = parse_metric_rows_csv(read_text_file(rows_path));
  std::set<std::string> methods;
  for (const auto& r : report.rows) methods.insert(r.method);
  for (const auto& method : methods) {
    std::vector<const MetricRow*> mrows;
    std::set<std::string> cats;
    for (const auto& r : report.rows)
      if (r.method == method) {
        mrows.push_back(&r);
        if (!r.flagged) cats.insert(r.category);
      }
    report.aggregates.push_back(aggregate_rows(mrows, method, "all"));
    for (const auto& c : cats) {
      std::vector<const MetricRow*> crows;
      for (const auto* r : mrows)
        if (r->category == c) crows.push_back(r);
      report.aggregates.push_back(aggregate_rows(crows, method, c));
    }
  }

  std::map<std::string, size_t> params;
  for (const auto& spec : ckpt_specs) {
    auto eq = spec.find('=');
    if (eq == std::string::npos) fail("report: --ckpt expects name=path");
    Checkpoint ckpt = load_checkpoint(spec.substr(eq + 1));
    AdapterStack stack = adapter_from_checkpoint(ckpt);
    params[spec.substr(0, eq)] = stack.param_count(variant_from_string(ckpt.variant));
  }

  std::string table = render_report(report, ablation ? "ablation" : "main", params);
  if (!out_path.empty()) write_text_file(out_path, table);
  std::fputs(table.c_str(), stdout);
  return 0;
}

}  // namespace

std::string render_report(const MetricReport& report, const std::string& style,
                          const std::map<std::string, size_t>& param_counts) {
  std::ostringstream out;
  char buf[512];
  if (style == "ablation") {
    out << "Variant        #Params    CLIP      CRC       MOCQ      RSA\n";
    out << "------------------------------------------------------------\n";
    // canonical ablation order when those methods are present
    std::vector<std::string> order{"film_only", "v3", "v4"};
    std::vector<const MetricAggregate*> rows;
    for (const auto& name : order)
      for (const auto& a : report.aggregates)
        if (a.method == name && a.category == "all") rows.push_back(&a);
    for (const auto& a : report.aggregates)
      if (a.category == "all" &&
          std::find(order.begin(), order.end(), a.method) == order.end())
        rows.push_back(&a);
    for (const MetricAggregate* a : rows) {
      std::string count = "--";
      auto it = param_counts.find(a->method);
      if (it != param_counts.end()) count = std::to_string(it->second);
      std::snprintf(buf, sizeof(buf), "%-14s %-10s %-9.4f %-9.4f %-9.4f %-9.4f\n",
                    a->method.c_str(), count.c_str(), a->clip, a->crc, a->mocq, a->rsa);
      out << buf;
    }
    return out.str();
  }
  out << "Method         Category   CLIP      CLIP-IQA  RSA       CRC       MOCQ      AB  "
         "    FID\n";
  out << "-----------------------------------------------------------------------------------"
         "----\n";
  for (const auto& a : report.aggregates) {
    std::string ab = "--";
    if (a.ab_count > 0) {
      std::snprintf(buf, sizeof(buf), "%.4f", a.ab_rate);
      ab = buf;
    }
    std::snprintf(buf, sizeof(buf), "%-14s %-10s %-9.4f %-9s %-9.4f %-9.4f %-9.4f %-7s %s\n",
                  a.method.c_str(), a.category.c_str(), a.clip, "--", a.rsa, a.crc, a.mocq,
                  ab.c_str(), "--");
    out << buf;
  }
  std::snprintf(buf, sizeof(buf), "(%zu rows, %d flagged missing, %d binding ties)\n",
                report.rows.size(), report.missing, report.ties);
  out << buf;
  return out.str();
}

bool run_selftest(std::ostream& out) {
  bool ok = true;
  auto check = [&](const char* name, bool pass) {
    out << (pass ? "[ok]   " : "[FAIL] ") << name << '\n';
    ok = ok && pass;
  };

  // geometry: partitions and soft-mask sums over random layouts
  {
    RandomStream rng(1);
    bool pass = true;
    for (int trial = 0; trial < 100 && pass; ++trial) {
      int k = rng.uniform_int(1, 8);
      std::vector<double> ratios(k);
      double sum = 0;
      for (double& r : ratios) {
        r = 0.5 + rng.u01();
        sum += r;
      }
      double acc = 0;
      for (int i = 0; i + 1 < k; ++i) {
        ratios[i] /= sum;
        acc += ratios[i];
      }
      ratios[k - 1] = 1.0 - acc;
      auto hm = masks_from_ratios(RegionLayout::make(ratios, 8, 8 * k));
      auto sm = soften_masks(hm, 1.5);
      for (int y = 0; y < hm.height && pass; ++y)
        for (int x = 0; x < hm.width; ++x) {
          double hard_sum = 0, soft_sum = 0;
          for (int r = 0; r < k; ++r) {
            hard_sum += hm.masks[r].at2(y, x);
            soft_sum += sm.masks[r].at2(y, x);
          }
          if (hard_sum != 1.0 || std::abs(soft_sum - 1.0) > 1e-6) {
            pass = false;
            break;
          }
        }
    }
    check("region masks partition the canvas", pass);
  }

  // identity at initialization
  {
    SurrogateNPNet net = SurrogateNPNet::build(SurrogateConfig{});
    AdapterStack stack = AdapterStack::init(AdapterConfig{});
    MockTextEncoder enc(8, 64);
    RandomStream rng(2);
    bool pass = true;
    for (int trial = 0; trial < 3 && pass; ++trial) {
      PromptRecord p = make_prompt_record(
          enc, trial, {0.5, 0.5},
          {{{"cat", "red"}, rng.next_u64()}, {{"dog", "blue"}, rng.next_u64()}},
          rng.next_u64(), 32, 32, "selftest");
      Tensor z_t = Tensor::randn({4, 32, 32}, rng);
      Tape tape;
      auto sur_pv = bind_params(tape, net.params);
      auto ad_pv = bind_params(tape, stack.params);
      auto fwd = golden_rpg_forward(tape, net, sur_pv, stack, ad_pv, z_t, p);
      pass = linf_diff(fwd.z_out.val(), fwd.z_g.val()) <= 1e-9;
    }
    check("fresh v4 stack reproduces the surrogate output", pass);
  }

  // gradient spot check through the full stack
  {
    SurrogateNPNet net = SurrogateNPNet::build(SurrogateConfig{});
    AdapterStack stack = AdapterStack::init(AdapterConfig{});
    RandomStream rng(3);
    for (double& v : stack.params.get("film.w2").data) v += rng.normal() * 0.02;
    MockTextEncoder enc(8, 64);
    PromptRecord p = make_prompt_record(
        enc, 0, {0.5, 0.5},
        {{{"ship", "golden"}, 5}, {{"river", "blue"}, 6}}, 7, 32, 32, "selftest");
    Tensor z_t = Tensor::randn({4, 32, 32}, rng);
    auto build = [&](Tape& tape, std::map<std::string, Var>& ad_pv) {
      auto sur_pv = bind_params(tape, net.params);
      auto fwd = golden_rpg_forward(tape, net, sur_pv, stack, ad_pv, z_t, p);
      return sum_squares(fwd.z_out);
    };
    Tape tape;
    auto ad_pv = bind_params(tape, stack.params,
                             [](const std::string& n) { return n == "film.b2"; });
    Var loss = build(tape, ad_pv);
    tape.backward(loss.id);
    const Tensor analytic = tape.grad(ad_pv.at("film.b2").id);
    bool pass = true;
    for (size_t i = 0; i < analytic.numel() && pass; i += 3) {
      Tensor& b2 = stack.params.get("film.b2");
      double orig = b2[i];
      auto eval = [&](double v) {
        b2[i] = v;
        Tape t2;
        auto pv2 = bind_params(t2, stack.params);
        double r = build(t2, pv2).val()[0];
        b2[i] = orig;
        return r;
      };
      double fd = (eval(orig + 1e-5) - eval(orig - 1e-5)) / 2e-5;
      pass = std::abs(analytic[i] - fd) <= 1e-4 * std::max({1.0, std::abs(fd)});
    }
    check("autodiff matches finite differences through the stack", pass);
  }

  // loss oracles on random inputs
  {
    RandomStream rng(4);
    LossWeights w;
    bool pass = true;
    for (int trial = 0; trial < 10 && pass; ++trial) {
      Tensor z = Tensor::randn({2, 4, 4}, rng);
      Tensor zp = Tensor::randn({2, 4, 4}, rng);
      Tensor zm = Tensor::randn({2, 4, 4}, rng);
      double delta = rng.uniform(0, 1), delta_bar = rng.uniform(0.1, 0.4);
      double dp = 0, dm = 0;
      for (size_t i = 0; i < z.numel(); ++i) {
        dp += (z[i] - zp[i]) * (z[i] - zp[i]);
        dm += (z[i] - zm[i]) * (z[i] - zm[i]);
      }
      dp /= static_cast<double>(z.numel());
      dm /= static_cast<double>(z.numel());
      double r = std::min(3.0, std::max(0.1, delta / delta_bar));
      double expect = std::max(0.0, dp - dm + w.m0 * r);
      Tape tape;
      double got = rank_loss(tape, make_const(tape, z), make_const(tape, zp),
                             make_const(tape, zm), delta, delta_bar, w)
                       .val()[0];
      pass = std::abs(got - expect) < 1e-12;
    }
    check("rank loss matches the naive formula", pass);
  }

  // metric anchors under the zero-noise provider
  {
    MockTextEncoder enc(8, 64);
    MockProvider provider(enc, 0.0);
    auto masks = masks_from_ratios(RegionLayout::make({0.5, 0.5}, 8, 8));
    SyntheticImage img;
    img.height = img.width = 8;
    img.concept_idx.assign(64, 0);
    img.attr_idx.assign(64, 0);
    for (int y = 0; y < 8; ++y)
      for (int x = 4; x < 8; ++x) {
        img.concept_idx[y * 8 + x] = 1;
        img.attr_idx[y * 8 + x] = 1;
      }
    std::vector<LabelSpec> labels{{concept_vocabulary()[0], attribute_vocabulary()[0]},
                                  {concept_vocabulary()[1], attribute_vocabulary()[1]}};
    double r = rsa(img, masks, labels, provider);
    double m = mocq(img, masks, labels, provider);
    std::vector<LabelSpec> swapped{labels[1], labels[0]};
    double m_swapped = mocq(img, masks, swapped, provider);
    check("metric anchors (aligned rsa/mocq, swapped mocq)",
          r > 0.999 && m > 0.5 && m_swapped < -0.5);
  }

  // persistence round-trip
  {
    namespace fs = std::filesystem;
    fs::path dir = fs::temp_directory_path() / "grpg_selftest";
    fs::create_directories(dir);
    SurrogateNPNet net = SurrogateNPNet::build(SurrogateConfig{});
    AdapterStack stack = AdapterStack::init(AdapterConfig{});
    Checkpoint ckpt = make_checkpoint(net, stack, "v4", 0, 0.1, 42);
    std::string path = (dir / "ckpt.bin").string();
    save_checkpoint(ckpt, path);
    Checkpoint loaded = load_checkpoint(path);
    bool pass = loaded.variant == "v4" && loaded.config_hash == 42;
    for (const auto& name : ckpt.trainable.names()) {
      const Tensor& a = ckpt.trainable.get(name);
      const Tensor& b = loaded.trainable.get(name);
      pass = pass && a.same_shape(b) &&
             std::memcmp(a.data.data(), b.data.data(), a.numel() * sizeof(double)) == 0;
    }
    fs::remove_all(dir);
    check("checkpoint round-trips bitwise", pass);
  }

  // corpus determinism
  {
    CorpusSpec spec;
    spec.size = 4;
    spec.latent_h = spec.latent_w = 16;
    Corpus a = gen_corpus(spec);
    Corpus b = gen_corpus(spec);
    bool pass = a.stats.delta_bar == b.stats.delta_bar;
    for (size_t i = 0; i < a.records.size() && pass; ++i)
      pass = linf_diff(a.records[i].z_t, b.records[i].z_t) == 0.0;
    check("corpus generation is deterministic", pass);
  }

  out << (ok ? "selftest: all checks passed\n" : "selftest: FAILURES detected\n");
  return ok;
}

int run_command(const std::vector<std::string>& args) {
  CLI::App app{"Region-aware golden-noise adapter workbench"};
  app.require_subcommand(1);

  // gen-corpus
  std::string gc_config, gc_out = "corpus.bin";
  int gc_size = -1;
  long long gc_seed = -1;
  double gc_mix = -1.0;
  auto* gen = app.add_subcommand("gen-corpus", "generate a synthetic training corpus");
  gen->add_option("--config", gc_config, "JSON config file");
  gen->add_option("--out", gc_out, "output corpus path");
  gen->add_option("--size", gc_size, "number of records");
  gen->add_option("--seed", gc_seed, "corpus seed");
  gen->add_option("--mix", gc_mix, "fraction of genuinely regional prompts");

  // train
  std::string tr_config, tr_corpus, tr_ckpt = "ckpt.bin", tr_history = "history.csv";
  std::string tr_variant, tr_warm;
  int tr_epochs = -1;
  long long tr_seed = -1;
  bool tr_force = false;
  auto* tr = app.add_subcommand("train", "train the adapter stack on a corpus");
  tr->add_option("--config", tr_config, "JSON config file");
  tr->add_option("--corpus", tr_corpus, "corpus file")->required();
  tr->add_option("--out-ckpt", tr_ckpt, "checkpoint output path");
  tr->add_option("--history", tr_history, "history CSV output path");
  tr->add_option("--variant", tr_variant, "film_only | v3 | v4");
  tr->add_option("--epochs", tr_epochs, "training epochs");
  tr->add_option("--seed", tr_seed, "training seed");
  tr->add_option("--warm-start", tr_warm, "v3 checkpoint to warm-start from");
  tr->add_flag("--force", tr_force, "silence config-drift warnings");

  // predict
  std::string pr_ckpt, pr_manifest, pr_corpus, pr_out = "predictions.bin";
  int pr_seeds = 1;
  bool pr_f32 = false;
  auto* pr = app.add_subcommand("predict", "emit z_out tensors and per-sample alpha");
  pr->add_option("--ckpt", pr_ckpt, "checkpoint path")->required();
  pr->add_option("--manifest", pr_manifest, "prompt manifest JSON");
  pr->add_option("--corpus", pr_corpus, "predict over a corpus' prompts");
  pr->add_option("--out", pr_out, "predictions output path");
  pr->add_option("--seeds", pr_seeds, "noise seeds per prompt");
  pr->add_flag("--f32", pr_f32, "store tensors as float32");

  // eval
  std::string ev_config, ev_corpus, ev_scenes, ev_prefix = "report";
  std::vector<std::string> ev_preds;
  auto* ev = app.add_subcommand("eval", "compute the regional metric report");
  ev->add_option("--config", ev_config, "JSON config file");
  ev->add_option("--corpus", ev_corpus, "corpus file")->required();
  ev->add_option("--pred", ev_preds, "method=predictions.bin (repeatable)");
  ev->add_option("--scenes", ev_scenes, "pre-serialized scenes file");
  ev->add_option("--out-prefix", ev_prefix, "output prefix for rows/table/scenes");

  // report
  std::string rp_rows, rp_out;
  bool rp_ablation = false;
  std::vector<std::string> rp_ckpts;
  auto* rp = app.add_subcommand("report", "re-render tables from a rows CSV");
  rp->add_option("--rows", rp_rows, "rows CSV from eval")->required();
  rp->add_option("--out", rp_out, "write the table here as well");
  rp->add_flag("--ablation", rp_ablation, "variant-ablation table layout");
  rp->add_option("--ckpt", rp_ckpts, "name=ckpt, supplies parameter counts");

  auto* st = app.add_subcommand("selftest", "run the invariant suite");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (gen->parsed()) return cmd_gen_corpus(gc_config, gc_out, gc_size, gc_seed, gc_mix);
    if (tr->parsed())
      return cmd_train(tr_config, tr_corpus, tr_ckpt, tr_history, tr_variant, tr_epochs,
                       tr_seed, tr_warm, tr_force);
    if (pr->parsed())
      return cmd_predict(pr_ckpt, pr_manifest, pr_corpus, pr_out, pr_seeds, pr_f32);
    if (ev->parsed()) return cmd_eval(ev_config, ev_corpus, ev_preds, ev_scenes, ev_prefix);
    if (rp->parsed()) return cmd_report(rp_rows, rp_out, rp_ablation, rp_ckpts);
    if (st->parsed()) return run_selftest(std::cout) ? 0 : 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 2;
}

}  // namespace grpg
