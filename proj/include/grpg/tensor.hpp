#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace grpg {

// Checked mode rejects non-finite values when tensors are built from
// external data (user inputs, files, RNG). Internal op outputs are not
// re-validated on every step; training guards against NaN at the loss.
bool checked_mode();
void set_checked_mode(bool on);

uint64_t splitmix64(uint64_t& state);
uint64_t mix_seed(uint64_t a, uint64_t b);
uint64_t fnv1a64(std::string_view s);

// Deterministic RNG: splitmix64 core + Box-Muller normals. Bit-identical
// streams on every platform, unlike std::normal_distribution.
class RandomStream {
public:
  explicit RandomStream(uint64_t seed) : state_(seed) {}
  uint64_t next_u64();
  double u01();  // [0,1)
  double normal();
  double uniform(double lo, double hi);
  int uniform_int(int lo, int hi);  // inclusive bounds
  RandomStream child(uint64_t salt) const;

private:
  uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;
  bool requires_grad = false;

  Tensor() = default;
  explicit Tensor(std::vector<int> s, double fill = 0.0);

  static Tensor from_data(std::vector<int> s, std::vector<double> values,
                          bool requires_grad = false);
  static Tensor zeros(std::vector<int> s);
  static Tensor full(std::vector<int> s, double v);
  static Tensor scalar(double v);
  static Tensor randn(std::vector<int> s, RandomStream& rng, double stddev = 1.0);

  size_t numel() const { return data.size(); }
  int ndim() const { return static_cast<int>(shape.size()); }
  double& operator[](size_t i) { return data[i]; }
  double operator[](size_t i) const { return data[i]; }

  // 2-D (rows x cols) accessors
  int rows() const;
  int cols() const;
  double& at2(int r, int c);
  double at2(int r, int c) const;
  // 3-D (C x H x W) accessors
  double& at3(int c, int y, int x);
  double at3(int c, int y, int x) const;

  bool same_shape(const Tensor& o) const { return shape == o.shape; }
  void check_finite(std::string_view what) const;
  std::string shape_str() const;
};

size_t shape_numel(const std::vector<int>& s);
std::string shape_to_string(const std::vector<int>& s);

// Plain-value helpers shared across modules (no autodiff involved).
double tensor_sum(const Tensor& t);
double tensor_mean(const Tensor& t);
double tensor_std(const Tensor& t);  // population std
double tensor_min(const Tensor& t);
double tensor_max(const Tensor& t);
double dot_value(const Tensor& a, const Tensor& b);
double l2_norm_value(const Tensor& t);
// Cosine similarity; 0 when either vector has zero norm.
double cosine_or_zero(const Tensor& a, const Tensor& b);
double linf_diff(const Tensor& a, const Tensor& b);
Tensor normalized_or_throw(const Tensor& v, std::string_view what);

[[noreturn]] void fail(const std::string& msg);

}  // namespace grpg
