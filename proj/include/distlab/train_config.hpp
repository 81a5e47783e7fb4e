#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

namespace distlab {

enum class Schedule { kCosine, kLinear, kConstant };

std::string to_string(Schedule s);
Schedule parse_schedule(const std::string& s);

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Optimizer, schedule and distillation knobs. Defaults are the published
/// pretraining recipe (lr 7e-4, 8 epochs, batch 128, weight decay 5, 600
/// warm-up steps, cosine; T = 1, alpha = 0.5).
struct TrainConfig {
  double max_learning_rate = 7e-4;
  std::int64_t n_epochs = 8;
  std::int64_t batch_size = 128;
  double weight_decay = 5.0;
  std::int64_t warmup_steps = 600;
  Schedule schedule = Schedule::kCosine;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::optional<double> max_grad_norm = 1.0;
  double distill_temperature = 1.0;
  double distill_alpha = 0.5;
  double attention_dropout = 0.0;
  std::uint64_t seed = 0;

  /// Field-range checks that do not depend on the dataset.
  void validate() const;

  bool operator==(const TrainConfig&) const = default;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
/// Missing keys keep their defaults; unknown keys are rejected.
void from_json(const nlohmann::json& j, TrainConfig& c);

}  // namespace distlab
