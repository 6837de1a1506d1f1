#include "grpg/tensor.hpp"

#include <atomic>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace grpg {

namespace {
std::atomic<bool> g_checked{true};
}  // namespace

bool checked_mode() { return g_checked.load(std::memory_order_relaxed); }
void set_checked_mode(bool on) { g_checked.store(on, std::memory_order_relaxed); }

void fail(const std::string& msg) { throw std::runtime_error(msg); }

uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

uint64_t mix_seed(uint64_t a, uint64_t b) {
  uint64_t s = a ^ (0x9E3779B97F4A7C15ULL + (b << 6) + (b >> 2));
  uint64_t x = splitmix64(s);
  return x ^ b;
}

uint64_t fnv1a64(std::string_view s) {
  uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

uint64_t RandomStream::next_u64() { return splitmix64(state_); }

double RandomStream::u01() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RandomStream::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = 0.0;
  do {
    u1 = u01();
  } while (u1 <= 0.0);
  double u2 = u01();
  double r = std::sqrt(-2.0 * std::log(u1));
  double a = 2.0 * M_PI * u2;
  spare_ = r * std::sin(a);
  has_spare_ = true;
  return r * std::cos(a);
}

double RandomStream::uniform(double lo, double hi) { return lo + (hi - lo) * u01(); }

int RandomStream::uniform_int(int lo, int hi) {
  if (hi < lo) fail("uniform_int: empty range");
  uint64_t n = static_cast<uint64_t>(hi - lo) + 1;
  // multiply-shift range reduction
  uint64_t x = next_u64();
  unsigned __int128 m = static_cast<unsigned __int128>(x) * n;
  return lo + static_cast<int>(m >> 64);
}

RandomStream RandomStream::child(uint64_t salt) const {
  return RandomStream(mix_seed(state_, salt));
}

size_t shape_numel(const std::vector<int>& s) {
  size_t n = 1;
  for (int d : s) {
    if (d <= 0) fail("tensor shape has non-positive dimension " + shape_to_string(s));
    n *= static_cast<size_t>(d);
  }
  return n;
}

std::string shape_to_string(const std::vector<int>& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << "x";
    os << s[i];
  }
  os << "]";
  return os.str();
}

Tensor::Tensor(std::vector<int> s, double fill)
    : shape(std::move(s)), data(shape_numel(shape), fill) {}

Tensor Tensor::from_data(std::vector<int> s, std::vector<double> values, bool requires_grad) {
  Tensor t;
  t.shape = std::move(s);
  if (shape_numel(t.shape) != values.size())
    fail("from_data: shape " + shape_to_string(t.shape) + " expects " +
         std::to_string(shape_numel(t.shape)) + " values, got " + std::to_string(values.size()));
  t.data = std::move(values);
  t.requires_grad = requires_grad;
  if (checked_mode()) t.check_finite("from_data");
  return t;
}

Tensor Tensor::zeros(std::vector<int> s) { return Tensor(std::move(s), 0.0); }
Tensor Tensor::full(std::vector<int> s, double v) { return Tensor(std::move(s), v); }
Tensor Tensor::scalar(double v) {
  Tensor t({1}, v);
  if (checked_mode()) t.check_finite("scalar");
  return t;
}

Tensor Tensor::randn(std::vector<int> s, RandomStream& rng, double stddev) {
  Tensor t(std::move(s));
  for (double& v : t.data) v = rng.normal() * stddev;
  return t;
}

int Tensor::rows() const {
  if (ndim() != 2) fail("rows(): tensor is not 2-D: " + shape_str());
  return shape[0];
}
int Tensor::cols() const {
  if (ndim() != 2) fail("cols(): tensor is not 2-D: " + shape_str());
  return shape[1];
}
double& Tensor::at2(int r, int c) { return data[static_cast<size_t>(r) * shape[1] + c]; }
double Tensor::at2(int r, int c) const { return data[static_cast<size_t>(r) * shape[1] + c]; }

double& Tensor::at3(int c, int y, int x) {
  return data[(static_cast<size_t>(c) * shape[1] + y) * shape[2] + x];
}
double Tensor::at3(int c, int y, int x) const {
  return data[(static_cast<size_t>(c) * shape[1] + y) * shape[2] + x];
}

void Tensor::check_finite(std::string_view what) const {
  for (double v : data)
    if (!std::isfinite(v))
      fail(std::string(what) + ": non-finite value in tensor " + shape_str());
}

std::string Tensor::shape_str() const { return shape_to_string(shape); }

double tensor_sum(const Tensor& t) {
  double s = 0.0;
  for (double v : t.data) s += v;
  return s;
}

double tensor_mean(const Tensor& t) {
  if (t.numel() == 0) fail("mean of empty tensor");
  return tensor_sum(t) / static_cast<double>(t.numel());
}

double tensor_std(const Tensor& t) {
  double m = tensor_mean(t);
  double acc = 0.0;
  for (double v : t.data) acc += (v - m) * (v - m);
  return std::sqrt(acc / static_cast<double>(t.numel()));
}

double tensor_min(const Tensor& t) {
  double m = t.data[0];
  for (double v : t.data) m = std::min(m, v);
  return m;
}

double tensor_max(const Tensor& t) {
  double m = t.data[0];
  for (double v : t.data) m = std::max(m, v);
  return m;
}

double dot_value(const Tensor& a, const Tensor& b) {
  if (a.numel() != b.numel())
    fail("dot: size mismatch " + a.shape_str() + " vs " + b.shape_str());
  double s = 0.0;
  for (size_t i = 0; i < a.numel(); ++i) s += a[i] * b[i];
  return s;
}

double l2_norm_value(const Tensor& t) { return std::sqrt(dot_value(t, t)); }

double cosine_or_zero(const Tensor& a, const Tensor& b) {
  double na = l2_norm_value(a);
  double nb = l2_norm_value(b);
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot_value(a, b) / (na * nb);
}

double linf_diff(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b))
    fail("linf_diff: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  double m = 0.0;
  for (size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

Tensor normalized_or_throw(const Tensor& v, std::string_view what) {
  double n = l2_norm_value(v);
  if (n == 0.0) fail(std::string(what) + ": cannot normalize zero vector");
  Tensor out = v;
  for (double& x : out.data) x /= n;
  return out;
}

}  // namespace grpg
