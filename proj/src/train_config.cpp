#include "distlab/train_config.hpp"

#include <cmath>
#include <set>

namespace distlab {

std::string to_string(Schedule s) {
  switch (s) {
    case Schedule::kCosine:
      return "cosine";
    case Schedule::kLinear:
      return "linear";
    case Schedule::kConstant:
      return "constant";
  }
  return "cosine";
}

Schedule parse_schedule(const std::string& s) {
  if (s == "cosine") return Schedule::kCosine;
  if (s == "linear") return Schedule::kLinear;
  if (s == "constant") return Schedule::kConstant;
  throw ConfigError("unknown schedule '" + s + "'");
}

void TrainConfig::validate() const {
  if (!(max_learning_rate > 0.0) || !std::isfinite(max_learning_rate)) {
    throw ConfigError("max_learning_rate must be positive and finite");
  }
  if (n_epochs < 0) throw ConfigError("n_epochs must be non-negative");
  if (batch_size <= 0) throw ConfigError("batch_size must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
  if (warmup_steps < 0) throw ConfigError("warmup_steps must be non-negative");
  if (!(adam_beta1 > 0.0 && adam_beta1 < 1.0) || !(adam_beta2 > 0.0 && adam_beta2 < 1.0)) {
    throw ConfigError("Adam betas must lie in (0, 1)");
  }
  if (!(adam_epsilon > 0.0)) throw ConfigError("adam_epsilon must be positive");
  if (max_grad_norm && !(*max_grad_norm > 0.0)) throw ConfigError("max_grad_norm must be positive");
  if (!(distill_temperature > 0.0)) throw ConfigError("distill_temperature must be positive");
  if (!(distill_alpha >= 0.0 && distill_alpha <= 1.0)) throw ConfigError("distill_alpha must lie in [0, 1]");
  if (!(attention_dropout >= 0.0 && attention_dropout < 1.0)) throw ConfigError("attention_dropout must lie in [0, 1)");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"max_learning_rate", c.max_learning_rate},
       {"n_epochs", c.n_epochs},
       {"batch_size", c.batch_size},
       {"weight_decay", c.weight_decay},
       {"warmup_steps", c.warmup_steps},
       {"schedule", to_string(c.schedule)},
       {"adam_beta1", c.adam_beta1},
       {"adam_beta2", c.adam_beta2},
       {"adam_epsilon", c.adam_epsilon},
       {"max_grad_norm", c.max_grad_norm ? nlohmann::json(*c.max_grad_norm) : nlohmann::json(nullptr)},
       {"distill_temperature", c.distill_temperature},
       {"distill_alpha", c.distill_alpha},
       {"attention_dropout", c.attention_dropout},
       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  static const std::set<std::string> known = {
      "max_learning_rate", "n_epochs",   "batch_size",    "weight_decay",        "warmup_steps",
      "schedule",          "adam_beta1", "adam_beta2",    "adam_epsilon",        "max_grad_norm",
      "distill_temperature", "distill_alpha", "attention_dropout", "seed"};
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw ConfigError("unknown training config key '" + key + "'");
  }
  const TrainConfig d;
  c.max_learning_rate = j.value("max_learning_rate", d.max_learning_rate);
  c.n_epochs = j.value("n_epochs", d.n_epochs);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.weight_decay = j.value("weight_decay", d.weight_decay);
  c.warmup_steps = j.value("warmup_steps", d.warmup_steps);
  c.schedule = parse_schedule(j.value("schedule", to_string(d.schedule)));
  c.adam_beta1 = j.value("adam_beta1", d.adam_beta1);
  c.adam_beta2 = j.value("adam_beta2", d.adam_beta2);
  c.adam_epsilon = j.value("adam_epsilon", d.adam_epsilon);
  if (j.contains("max_grad_norm")) {
    c.max_grad_norm = j.at("max_grad_norm").is_null() ? std::nullopt
                                                      : std::optional<double>(j.at("max_grad_norm").get<double>());
  } else {
    c.max_grad_norm = d.max_grad_norm;
  }
  c.distill_temperature = j.value("distill_temperature", d.distill_temperature);
  c.distill_alpha = j.value("distill_alpha", d.distill_alpha);
  c.attention_dropout = j.value("attention_dropout", d.attention_dropout);
  c.seed = j.value("seed", d.seed);
}

}  // namespace distlab
