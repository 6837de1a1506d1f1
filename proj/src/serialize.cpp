#include "grpg/serialize.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

namespace grpg {

using nlohmann::json;

namespace {

constexpr char kCkptMagic[8] = {'G', 'R', 'P', 'G', 'C', 'K', 'P', 'T'};
constexpr char kCorpMagic[8] = {'G', 'R', 'P', 'G', 'C', 'O', 'R', 'P'};
constexpr char kPredMagic[8] = {'G', 'R', 'P', 'G', 'P', 'R', 'E', 'D'};
constexpr char kScneMagic[8] = {'G', 'R', 'P', 'G', 'S', 'C', 'N', 'E'};
constexpr uint32_t kVersion = 1;

void put_u32(std::ostream& out, uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<char*>(b), 4);
}

void put_u64(std::ostream& out, uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<char*>(b), 8);
}

uint32_t get_u32(std::istream& in, const char* what) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) fail(std::string(what) + ": file truncated");
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
  return v;
}

uint64_t get_u64(std::istream& in, const char* what) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8)) fail(std::string(what) + ": file truncated");
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return v;
}

void put_string(std::ostream& out, const std::string& s) {
  put_u32(out, static_cast<uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& in, const char* what) {
  uint32_t n = get_u32(in, what);
  std::string s(n, '\0');
  if (n && !in.read(s.data(), n)) fail(std::string(what) + ": file truncated");
  return s;
}

void put_magic(std::ostream& out, const char (&magic)[8]) { out.write(magic, 8); }

void check_magic(std::istream& in, const char (&magic)[8], const char* what) {
  char got[8];
  if (!in.read(got, 8)) fail(std::string(what) + ": file truncated");
  if (std::memcmp(got, magic, 8) != 0)
    fail(std::string(what) + ": bad magic (not a " + what + " file)");
  uint32_t version = get_u32(in, what);
  if (version != kVersion)
    fail(std::string(what) + ": unsupported format version " + std::to_string(version));
}

json get_json(std::istream& in, const char* what) {
  std::string s = get_string(in, what);
  try {
    return json::parse(s);
  } catch (const json::exception& e) {
    fail(std::string(what) + ": corrupt metadata block: " + e.what());
  }
}

}  // namespace

void write_array(std::ostream& out, const std::string& name, const Tensor& t, bool as_f32) {
  put_string(out, name);
  char dtype = as_f32 ? 'f' : 'd';
  out.put(dtype);
  put_u32(out, static_cast<uint32_t>(t.shape.size()));
  for (int d : t.shape) put_u64(out, static_cast<uint64_t>(d));
  size_t elem = as_f32 ? 4 : 8;
  put_u64(out, static_cast<uint64_t>(t.numel() * elem));
  if (as_f32) {
    std::vector<float> buf(t.numel());
    for (size_t i = 0; i < t.numel(); ++i) buf[i] = static_cast<float>(t[i]);
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * 4));
  } else {
    out.write(reinterpret_cast<const char*>(t.data.data()),
              static_cast<std::streamsize>(t.numel() * 8));
  }
}

void write_i64_array(std::ostream& out, const std::string& name,
                     const std::vector<long long>& values, const std::vector<int>& shape) {
  if (shape_numel(shape) != values.size()) fail("write_i64_array: shape mismatch");
  put_string(out, name);
  out.put('q');
  put_u32(out, static_cast<uint32_t>(shape.size()));
  for (int d : shape) put_u64(out, static_cast<uint64_t>(d));
  put_u64(out, static_cast<uint64_t>(values.size() * 8));
  out.write(reinterpret_cast<const char*>(values.data()),
            static_cast<std::streamsize>(values.size() * 8));
}

ReadArray read_array(std::istream& in) {
  ReadArray a;
  a.name = get_string(in, "array");
  int dtype = in.get();
  if (dtype == EOF) fail("array '" + a.name + "': file truncated");
  a.dtype = static_cast<char>(dtype);
  uint32_t ndim = get_u32(in, "array");
  size_t numel = 1;
  for (uint32_t i = 0; i < ndim; ++i) {
    uint64_t d = get_u64(in, "array");
    a.shape.push_back(static_cast<int>(d));
    numel *= d;
  }
  uint64_t bytes = get_u64(in, "array");
  size_t elem = a.dtype == 'f' ? 4 : 8;
  if (a.dtype != 'd' && a.dtype != 'f' && a.dtype != 'q')
    fail("array '" + a.name + "': unknown dtype tag");
  if (bytes != numel * elem)
    fail("array '" + a.name + "': expected " + std::to_string(numel * elem) +
         " payload bytes, header says " + std::to_string(bytes));
  if (a.dtype == 'q') {
    a.ints.resize(numel);
    if (numel && !in.read(reinterpret_cast<char*>(a.ints.data()),
                          static_cast<std::streamsize>(bytes)))
      fail("array '" + a.name + "': payload truncated");
    return a;
  }
  std::vector<double> data(numel);
  if (a.dtype == 'f') {
    std::vector<float> buf(numel);
    if (numel && !in.read(reinterpret_cast<char*>(buf.data()),
                          static_cast<std::streamsize>(bytes)))
      fail("array '" + a.name + "': payload truncated");
    for (size_t i = 0; i < numel; ++i) data[i] = buf[i];
  } else {
    if (numel && !in.read(reinterpret_cast<char*>(data.data()),
                          static_cast<std::streamsize>(bytes)))
      fail("array '" + a.name + "': payload truncated");
  }
  a.tensor.shape = a.shape;
  a.tensor.data = std::move(data);
  return a;
}

Tensor read_named_tensor(std::istream& in, const std::string& expected_name) {
  ReadArray a = read_array(in);
  if (a.name != expected_name)
    fail("expected array '" + expected_name + "', found '" + a.name + "'");
  if (a.dtype == 'q') fail("array '" + a.name + "': expected a real tensor");
  return a.tensor;
}

// ---- checkpoint ----

Checkpoint make_checkpoint(const SurrogateNPNet& net, const AdapterStack& stack,
                           const std::string& variant, int epoch, double delta_bar,
                           uint64_t config_hash) {
  Checkpoint c;
  c.config_hash = config_hash;
  c.epoch = epoch;
  c.variant = variant;
  c.delta_bar = delta_bar;
  c.sur_cfg = net.cfg;
  c.ad_cfg = stack.cfg;
  c.moments = stack.moments;
  c.frozen = net.params;
  c.trainable = stack.params;
  return c;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("save_checkpoint: cannot open " + path);
  put_magic(out, kCkptMagic);
  put_u32(out, kVersion);
  json meta{{"config_hash", ckpt.config_hash},
            {"epoch", ckpt.epoch},
            {"variant", ckpt.variant},
            {"delta_bar", ckpt.delta_bar},
            {"surrogate", surrogate_cfg_to_json(ckpt.sur_cfg)},
            {"adapter", adapter_cfg_to_json(ckpt.ad_cfg)},
            {"feature_mean", ckpt.moments.mean.data},
            {"feature_std", ckpt.moments.stddev.data}};
  put_string(out, meta.dump());
  put_u32(out, static_cast<uint32_t>(ckpt.frozen.size()));
  for (const auto& name : ckpt.frozen.names()) write_array(out, name, ckpt.frozen.get(name));
  put_u32(out, static_cast<uint32_t>(ckpt.trainable.size()));
  for (const auto& name : ckpt.trainable.names())
    write_array(out, name, ckpt.trainable.get(name));
  if (!out) fail("save_checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("load_checkpoint: cannot open " + path);
  check_magic(in, kCkptMagic, "checkpoint");
  json meta = get_json(in, "checkpoint");
  Checkpoint c;
  c.config_hash = meta.at("config_hash").get<uint64_t>();
  c.epoch = meta.at("epoch").get<int>();
  c.variant = meta.at("variant").get<std::string>();
  c.delta_bar = meta.at("delta_bar").get<double>();
  c.sur_cfg = surrogate_cfg_from_json(meta.at("surrogate"));
  c.ad_cfg = adapter_cfg_from_json(meta.at("adapter"));
  auto mean = meta.at("feature_mean").get<std::vector<double>>();
  auto sd = meta.at("feature_std").get<std::vector<double>>();
  if (mean.size() != 7 || sd.size() != 7) fail("checkpoint: feature moments must have 7 entries");
  c.moments.mean = Tensor::from_data({7}, mean);
  c.moments.stddev = Tensor::from_data({7}, sd);

  uint32_t n_frozen = get_u32(in, "checkpoint");
  for (uint32_t i = 0; i < n_frozen; ++i) {
    ReadArray a = read_array(in);
    c.frozen.add(a.name, a.tensor);
  }
  uint32_t n_trainable = get_u32(in, "checkpoint");
  for (uint32_t i = 0; i < n_trainable; ++i) {
    ReadArray a = read_array(in);
    c.trainable.add(a.name, a.tensor);
  }
  return c;
}

namespace {
void overwrite_params(ParamSet& target, const ParamSet& source, const char* what) {
  if (target.size() != source.size())
    fail(std::string(what) + ": expected " + std::to_string(target.size()) + " arrays, found " +
         std::to_string(source.size()));
  for (const auto& name : target.names()) {
    if (!source.has(name)) fail(std::string(what) + ": missing array '" + name + "'");
    const Tensor& src = source.get(name);
    Tensor& dst = target.get(name);
    if (!dst.same_shape(src))
      fail(std::string(what) + ": array '" + name + "' has shape " + src.shape_str() +
           ", expected " + dst.shape_str());
    dst = src;
  }
}
}  // namespace

SurrogateNPNet surrogate_from_checkpoint(const Checkpoint& ckpt) {
  SurrogateNPNet net = SurrogateNPNet::build(ckpt.sur_cfg);
  overwrite_params(net.params, ckpt.frozen, "checkpoint frozen section");
  return net;
}

AdapterStack adapter_from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.trainable.size() == 0)
    fail("checkpoint: trainable section is empty but the variant requires adapters");
  AdapterStack stack = AdapterStack::init(ckpt.ad_cfg);
  overwrite_params(stack.params, ckpt.trainable, "checkpoint trainable section");
  stack.moments = ckpt.moments;
  return stack;
}

AdapterStack warm_start_from(const Checkpoint& v3, const AdapterConfig& target_cfg) {
  AdapterStack stack = AdapterStack::init(target_cfg);
  for (const auto& name : stack.params.names()) {
    if (name.rfind("conf.", 0) == 0) continue;  // confidence head stays fresh
    if (!v3.trainable.has(name)) fail("warm start: source checkpoint misses '" + name + "'");
    const Tensor& src = v3.trainable.get(name);
    Tensor& dst = stack.params.get(name);
    if (!dst.same_shape(src))
      fail("warm start: array '" + name + "' has shape " + src.shape_str() + ", expected " +
           dst.shape_str());
    dst = src;
  }
  return stack;
}

// ---- corpus ----

void save_corpus(const Corpus& corpus, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("save_corpus: cannot open " + path);
  put_magic(out, kCorpMagic);
  put_u32(out, kVersion);
  json cats(json::value_t::object);
  for (const auto& [k, v] : corpus.stats.categories) cats[k] = v;
  json header{{"size", corpus.spec.size},
              {"k_min", corpus.spec.k_min},
              {"k_max", corpus.spec.k_max},
              {"mix", corpus.spec.mix},
              {"candidates", corpus.spec.candidates},
              {"plant_amplitude", corpus.spec.plant_amplitude},
              {"correct_placement_prob", corpus.spec.correct_placement_prob},
              {"seed", corpus.spec.seed},
              {"tokens", corpus.spec.tokens_l},
              {"embed", corpus.spec.embed_d},
              {"latent_channels", corpus.spec.latent_c},
              {"latent_h", corpus.spec.latent_h},
              {"latent_w", corpus.spec.latent_w},
              {"delta_bar", corpus.stats.delta_bar},
              {"count", corpus.stats.count},
              {"categories", cats}};
  put_string(out, header.dump());
  for (const auto& rec : corpus.records) {
    json regions = json::array();
    for (const auto& r : rec.prompt.regions)
      regions.push_back({{"concept", r.label.concept_name},
                         {"attribute", r.label.attribute},
                         {"jitter_seed", r.jitter_seed}});
    json meta{{"id", rec.prompt.id},
              {"ratios", rec.prompt.layout.ratios},
              {"regions", regions},
              {"global_seed", rec.prompt.global_jitter_seed},
              {"category", rec.prompt.category},
              {"delta", rec.delta},
              {"seed", rec.seed},
              {"scores", rec.candidate_scores}};
    put_string(out, meta.dump());
    write_array(out, "z_t", rec.z_t);
    write_array(out, "z_plus", rec.z_plus);
    write_array(out, "z_minus", rec.z_minus);
    put_u32(out, static_cast<uint32_t>(rec.candidates.size()));
    for (size_t i = 0; i < rec.candidates.size(); ++i)
      write_array(out, "cand" + std::to_string(i), rec.candidates[i]);
  }
  if (!out) fail("save_corpus: write failed for " + path);
}

Corpus load_corpus(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("load_corpus: cannot open " + path);
  check_magic(in, kCorpMagic, "corpus");
  json header = get_json(in, "corpus");
  Corpus corpus;
  corpus.spec.size = header.at("size").get<int>();
  corpus.spec.k_min = header.at("k_min").get<int>();
  corpus.spec.k_max = header.at("k_max").get<int>();
  corpus.spec.mix = header.at("mix").get<double>();
  corpus.spec.candidates = header.at("candidates").get<int>();
  corpus.spec.plant_amplitude = header.at("plant_amplitude").get<double>();
  corpus.spec.correct_placement_prob = header.at("correct_placement_prob").get<double>();
  corpus.spec.seed = header.at("seed").get<uint64_t>();
  corpus.spec.tokens_l = header.at("tokens").get<int>();
  corpus.spec.embed_d = header.at("embed").get<int>();
  corpus.spec.latent_c = header.at("latent_channels").get<int>();
  corpus.spec.latent_h = header.at("latent_h").get<int>();
  corpus.spec.latent_w = header.at("latent_w").get<int>();
  corpus.stats.delta_bar = header.at("delta_bar").get<double>();
  corpus.stats.count = header.at("count").get<int>();
  for (auto it = header.at("categories").begin(); it != header.at("categories").end(); ++it)
    corpus.stats.categories[it.key()] = it.value().get<int>();

  MockTextEncoder enc(corpus.spec.tokens_l, corpus.spec.embed_d);
  double delta_sum = 0.0;
  for (int i = 0; i < corpus.stats.count; ++i) {
    json meta = get_json(in, "corpus record");
    std::vector<RegionSpec> regions;
    for (const auto& r : meta.at("regions")) {
      RegionSpec rs;
      rs.label.concept_name = r.at("concept").get<std::string>();
      rs.label.attribute = r.at("attribute").get<std::string>();
      rs.jitter_seed = r.at("jitter_seed").get<uint64_t>();
      regions.push_back(rs);
    }
    TrainingRecord rec;
    rec.prompt = make_prompt_record(
        enc, meta.at("id").get<int>(), meta.at("ratios").get<std::vector<double>>(),
        std::move(regions), meta.at("global_seed").get<uint64_t>(), corpus.spec.latent_h,
        corpus.spec.latent_w, meta.at("category").get<std::string>());
    rec.delta = meta.at("delta").get<double>();
    rec.seed = meta.at("seed").get<uint64_t>();
    rec.candidate_scores = meta.at("scores").get<std::vector<double>>();
    rec.z_t = read_named_tensor(in, "z_t");
    rec.z_plus = read_named_tensor(in, "z_plus");
    rec.z_minus = read_named_tensor(in, "z_minus");
    uint32_t n_cand = get_u32(in, "corpus record");
    for (uint32_t c = 0; c < n_cand; ++c)
      rec.candidates.push_back(read_named_tensor(in, "cand" + std::to_string(c)));
    delta_sum += rec.delta;
    corpus.records.push_back(std::move(rec));
  }
  if (corpus.stats.count > 0) {
    double recomputed = delta_sum / corpus.stats.count;
    if (std::abs(recomputed - corpus.stats.delta_bar) > 1e-12)
      fail("load_corpus: stored delta_bar " + std::to_string(corpus.stats.delta_bar) +
           " does not match records (" + std::to_string(recomputed) + ")");
  }
  return corpus;
}

// ---- predictions ----

void save_predictions(const PredictionFile& preds, const std::string& path, bool f32) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("save_predictions: cannot open " + path);
  put_magic(out, kPredMagic);
  put_u32(out, kVersion);
  json header{{"variant", preds.variant},
              {"config_hash", preds.config_hash},
              {"count", preds.predictions.size()}};
  put_string(out, header.dump());
  for (const auto& p : preds.predictions) {
    json meta{{"prompt_id", p.prompt_id}, {"seed", p.seed}, {"alpha", p.alpha}};
    put_string(out, meta.dump());
    write_array(out, "z_out", p.z_out, f32);
  }
  if (!out) fail("save_predictions: write failed for " + path);
}

PredictionFile load_predictions(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("load_predictions: cannot open " + path);
  check_magic(in, kPredMagic, "predictions");
  json header = get_json(in, "predictions");
  PredictionFile preds;
  preds.variant = header.at("variant").get<std::string>();
  preds.config_hash = header.at("config_hash").get<uint64_t>();
  size_t count = header.at("count").get<size_t>();
  for (size_t i = 0; i < count; ++i) {
    json meta = get_json(in, "prediction");
    Prediction p;
    p.prompt_id = meta.at("prompt_id").get<int>();
    p.seed = meta.at("seed").get<uint64_t>();
    p.alpha = meta.at("alpha").get<double>();
    p.z_out = read_named_tensor(in, "z_out");
    preds.predictions.push_back(std::move(p));
  }
  return preds;
}

// ---- scenes ----

void save_scenes(const std::vector<SyntheticImage>& scenes, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("save_scenes: cannot open " + path);
  put_magic(out, kScneMagic);
  put_u32(out, kVersion);
  json header{{"count", scenes.size()}};
  put_string(out, header.dump());
  for (const auto& s : scenes) {
    json meta{{"prompt_id", s.prov.prompt_id}, {"method", s.prov.method},
              {"seed", s.prov.seed},           {"height", s.height},
              {"width", s.width},              {"noise_level", s.noise_level},
              {"noise_seed", s.noise_seed}};
    put_string(out, meta.dump());
    std::vector<long long> c(s.concept_idx.begin(), s.concept_idx.end());
    std::vector<long long> a(s.attr_idx.begin(), s.attr_idx.end());
    write_i64_array(out, "concept", c, {s.height, s.width});
    write_i64_array(out, "attr", a, {s.height, s.width});
  }
  if (!out) fail("save_scenes: write failed for " + path);
}

std::vector<SyntheticImage> load_scenes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("load_scenes: cannot open " + path);
  check_magic(in, kScneMagic, "scenes");
  json header = get_json(in, "scenes");
  size_t count = header.at("count").get<size_t>();
  std::vector<SyntheticImage> scenes;
  for (size_t i = 0; i < count; ++i) {
    json meta = get_json(in, "scene");
    SyntheticImage s;
    s.prov.prompt_id = meta.at("prompt_id").get<int>();
    s.prov.method = meta.at("method").get<std::string>();
    s.prov.seed = meta.at("seed").get<uint64_t>();
    s.height = meta.at("height").get<int>();
    s.width = meta.at("width").get<int>();
    s.noise_level = meta.at("noise_level").get<double>();
    s.noise_seed = meta.at("noise_seed").get<uint64_t>();
    ReadArray c = read_array(in);
    ReadArray a = read_array(in);
    if (c.name != "concept" || a.name != "attr") fail("scenes: unexpected array order");
    s.concept_idx.assign(c.ints.begin(), c.ints.end());
    s.attr_idx.assign(a.ints.begin(), a.ints.end());
    scenes.push_back(std::move(s));
  }
  return scenes;
}

// ---- metric rows ----

std::string metric_rows_csv(const MetricReport& report) {
  std::ostringstream out;
  out << "prompt_id,method,seed,category,clip,rsa,crc,mocq,ab,ab_skipped,flagged\n";
  char buf[256];
  for (const auto& r : report.rows) {
    std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g,%.17g", r.clip, r.rsa, r.crc, r.mocq);
    out << r.prompt_id << ',' << r.method << ',' << r.seed << ',' << r.category << ',' << buf
        << ',' << r.ab << ',' << (r.ab_skipped ? 1 : 0) << ',' << (r.flagged ? 1 : 0) << '\n';
  }
  return out.str();
}

std::vector<MetricRow> parse_metric_rows_csv(const std::string& csv) {
  std::vector<MetricRow> rows;
  std::istringstream in(csv);
  std::string line;
  if (!std::getline(in, line)) fail("metric rows: empty CSV");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string field;
    MetricRow r;
    auto next = [&] {
      if (!std::getline(ls, field, ',')) fail("metric rows: malformed line: " + line);
      return field;
    };
    r.prompt_id = std::stoi(next());
    r.method = next();
    r.seed = std::stoull(next());
    r.category = next();
    r.clip = std::stod(next());
    r.rsa = std::stod(next());
    r.crc = std::stod(next());
    r.mocq = std::stod(next());
    r.ab = std::stoi(next());
    r.ab_skipped = std::stoi(next()) != 0;
    r.flagged = std::stoi(next()) != 0;
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace grpg
