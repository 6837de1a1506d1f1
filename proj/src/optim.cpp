#include "grpg/optim.hpp"

#include <cmath>

namespace grpg {

void ParamSet::add(const std::string& name, Tensor t) {
  if (values_.count(name)) fail("ParamSet: duplicate parameter " + name);
  order_.push_back(name);
  values_.emplace(name, std::move(t));
}

bool ParamSet::has(const std::string& name) const { return values_.count(name) > 0; }

Tensor& ParamSet::get(const std::string& name) {
  auto it = values_.find(name);
  if (it == values_.end()) fail("ParamSet: unknown parameter " + name);
  return it->second;
}

const Tensor& ParamSet::get(const std::string& name) const {
  auto it = values_.find(name);
  if (it == values_.end()) fail("ParamSet: unknown parameter " + name);
  return it->second;
}

size_t ParamSet::total_elements() const {
  size_t n = 0;
  for (const auto& name : order_) n += values_.at(name).numel();
  return n;
}

size_t ParamSet::count_with_prefix(const std::string& prefix) const {
  size_t n = 0;
  for (const auto& name : order_)
    if (name.rfind(prefix, 0) == 0) n += values_.at(name).numel();
  return n;
}

std::vector<std::pair<std::string, Tensor>> ParamSet::items() const {
  std::vector<std::pair<std::string, Tensor>> out;
  out.reserve(order_.size());
  for (const auto& name : order_) out.emplace_back(name, values_.at(name));
  return out;
}

OptimState make_optim_state(double weight_decay) {
  OptimState s;
  s.weight_decay = weight_decay;
  return s;
}

void adamw_step(ParamSet& params, const std::vector<std::string>& trainable,
                const std::map<std::string, Tensor>& grads, OptimState& state, double lr) {
  state.step += 1;
  double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (const auto& name : trainable) {
    auto git = grads.find(name);
    if (git == grads.end()) fail("adamw_step: missing gradient for parameter " + name);
    Tensor& p = params.get(name);
    const Tensor& g = git->second;
    if (!p.same_shape(g))
      fail("adamw_step: gradient shape " + g.shape_str() + " does not match parameter " +
           name + " " + p.shape_str());
    Tensor& m = state.m.try_emplace(name, Tensor::zeros(p.shape)).first->second;
    Tensor& v = state.v.try_emplace(name, Tensor::zeros(p.shape)).first->second;
    for (size_t i = 0; i < p.numel(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      double mhat = m[i] / bc1;
      double vhat = v[i] / bc2;
      p[i] -= lr * (mhat / (std::sqrt(vhat) + state.eps) + state.weight_decay * p[i]);
    }
  }
}

double clip_grad_norm(std::map<std::string, Tensor>& grads, double max_norm) {
  if (max_norm <= 0.0) fail("clip_grad_norm: max_norm must be positive");
  double acc = 0.0;
  for (const auto& [name, g] : grads)
    for (double x : g.data) acc += x * x;
  double norm = std::sqrt(acc);
  if (norm > max_norm) {
    double s = max_norm / norm;
    for (auto& [name, g] : grads)
      for (double& x : g.data) x *= s;
  }
  return norm;
}

double cosine_lr(long long step, const LrSchedule& schedule) {
  if (schedule.total_steps <= 0) fail("cosine_lr: schedule has no steps");
  if (step < 0 || step > schedule.total_steps)
    fail("cosine_lr: step " + std::to_string(step) + " outside [0," +
         std::to_string(schedule.total_steps) + "]");
  double frac = static_cast<double>(step) / static_cast<double>(schedule.total_steps);
  return schedule.base_lr * 0.5 * (1.0 + std::cos(M_PI * frac));
}

}  // namespace grpg
