#pragma once

#include <map>
#include <string>
#include <vector>

#include "grpg/tensor.hpp"

namespace grpg {

// Ordered, named parameter bag. Iteration order is insertion order, which
// fixes the reduction order used by clip_grad_norm and adamw_step.
class ParamSet {
public:
  void add(const std::string& name, Tensor t);
  bool has(const std::string& name) const;
  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;
  const std::vector<std::string>& names() const { return order_; }
  size_t size() const { return order_.size(); }
  size_t total_elements() const;
  // Sum of elements across parameters whose name starts with `prefix`.
  size_t count_with_prefix(const std::string& prefix) const;
  std::vector<std::pair<std::string, Tensor>> items() const;

private:
  std::vector<std::string> order_;
  std::map<std::string, Tensor> values_;
};

struct OptimState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  long long step = 0;
  std::map<std::string, Tensor> m;
  std::map<std::string, Tensor> v;
};

OptimState make_optim_state(double weight_decay);

// Decoupled-weight-decay Adam with bias-corrected moments. Updates only the
// parameters present in `grads`; a trainable parameter missing there fails.
void adamw_step(ParamSet& params, const std::vector<std::string>& trainable,
                const std::map<std::string, Tensor>& grads, OptimState& state, double lr);

// Scales all grads by max_norm/g when the global L2 norm g exceeds max_norm.
// Returns the observed (pre-clip) norm; an empty grad set has norm 0.
double clip_grad_norm(std::map<std::string, Tensor>& grads, double max_norm);

struct LrSchedule {
  double base_lr = 3e-4;
  long long total_steps = 0;
};

// Half-cosine decay to zero, no restarts: base * 0.5 * (1 + cos(pi*s/total)).
double cosine_lr(long long step, const LrSchedule& schedule);

}  // namespace grpg
