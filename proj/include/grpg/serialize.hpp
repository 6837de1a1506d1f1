#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "grpg/adapter.hpp"
#include "grpg/config.hpp"
#include "grpg/metrics.hpp"
#include "grpg/surrogate.hpp"
#include "grpg/synthetic.hpp"

namespace grpg {

// Named-array binary container: little-endian records of
//   u32 name_len | name | u8 dtype | u32 ndim | u64 dims... | u64 bytes | payload
// dtype 'd' = f64, 'f' = f32 (widened on read), 'q' = i64.
void write_array(std::ostream& out, const std::string& name, const Tensor& t,
                 bool as_f32 = false);
void write_i64_array(std::ostream& out, const std::string& name,
                     const std::vector<long long>& values, const std::vector<int>& shape);

struct ReadArray {
  std::string name;
  char dtype = 'd';
  Tensor tensor;                  // for 'd'/'f'
  std::vector<long long> ints;    // for 'q'
  std::vector<int> shape;
};
ReadArray read_array(std::istream& in);
// Reads an array and checks its name; returns the tensor.
Tensor read_named_tensor(std::istream& in, const std::string& expected_name);

// ---- checkpoint ----

struct Checkpoint {
  uint64_t config_hash = 0;
  int epoch = 0;
  std::string variant = "v4";
  double delta_bar = 0.0;
  SurrogateConfig sur_cfg;
  AdapterConfig ad_cfg;
  FeatureMoments moments;
  ParamSet frozen;     // surrogate arrays
  ParamSet trainable;  // adapter arrays
};

Checkpoint make_checkpoint(const SurrogateNPNet& net, const AdapterStack& stack,
                           const std::string& variant, int epoch, double delta_bar,
                           uint64_t config_hash);
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// Rebuilds the runtime objects; array names and shapes are validated against
// a freshly constructed skeleton.
SurrogateNPNet surrogate_from_checkpoint(const Checkpoint& ckpt);
AdapterStack adapter_from_checkpoint(const Checkpoint& ckpt);

// v3 -> v4 warm start: FiLM and RCA arrays copied bitwise, Confidence Head
// freshly initialized.
AdapterStack warm_start_from(const Checkpoint& v3, const AdapterConfig& target_cfg);

// ---- corpus ----

void save_corpus(const Corpus& corpus, const std::string& path);
Corpus load_corpus(const std::string& path);

// ---- predictions ----

struct Prediction {
  int prompt_id = 0;
  uint64_t seed = 0;
  Tensor z_out;
  double alpha = 0.0;
};

struct PredictionFile {
  std::string variant;
  uint64_t config_hash = 0;
  std::vector<Prediction> predictions;
};

void save_predictions(const PredictionFile& preds, const std::string& path, bool f32 = false);
PredictionFile load_predictions(const std::string& path);

// ---- scenes ----

void save_scenes(const std::vector<SyntheticImage>& scenes, const std::string& path);
std::vector<SyntheticImage> load_scenes(const std::string& path);

// ---- metric rows ----

std::string metric_rows_csv(const MetricReport& report);
std::vector<MetricRow> parse_metric_rows_csv(const std::string& csv);

}  // namespace grpg
