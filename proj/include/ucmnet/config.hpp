#pragma once

// Run configuration: flat `key = value` text, `#` starts a comment, unknown
// keys are rejected with their line number. The same key/value grammar backs
// `--set key=value` overrides.

#include <cstdint>
#include <string>

#include "ucmnet/loss.hpp"
#include "ucmnet/network.hpp"

namespace ucmnet {

struct RunConfig {
  ModelConfig model;
  LossConfig loss;

  // optimizer
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double base_lr = 2e-4;
  int64_t total_steps = 0;  // 0: decay schedule spans train.steps

  // training loop
  int64_t steps = 2000;
  int batch_size = 4;
  int crop = 64;
  double noise_std = 1e-3;
  uint64_t seed = 0;
  std::string precision = "f64";  // f32 | f64
  int64_t checkpoint_every = 500;
  int holdout = 8;  // trailing samples reserved for evaluation

  int64_t schedule_steps() const { return total_steps > 0 ? total_steps : steps; }
  void validate() const;

  static RunConfig tiny();
  static RunConfig desk();
  static RunConfig paper_scale();
};

// `origin` names the source in errors ("file.cfg line 3", "--set ...").
RunConfig parse_config_text(const std::string& text, const std::string& origin);
RunConfig load_config(const std::string& path);
void apply_override(RunConfig& cfg, const std::string& assignment);  // "key=value"
std::string config_to_text(const RunConfig& cfg);

}  // namespace ucmnet
