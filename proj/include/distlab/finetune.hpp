#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "distlab/checkpoint.hpp"
#include "distlab/model.hpp"
#include "distlab/tokenizer.hpp"
#include "distlab/train_config.hpp"

namespace distlab {

/// Per-task fine-tuning recipe. Mirrors one row of a task table.
struct FineTuneTaskConfig {
  std::string task;
  double max_learning_rate = 1e-5;
  std::int64_t batch_size = 32;
  std::int64_t n_epochs = 2;
  double weight_decay = 0.0;
  Schedule schedule = Schedule::kCosine;
  std::int64_t warmup_steps = 0;
  std::int64_t n_classes = 2;
  std::uint64_t seed = 12;

  void validate() const;
  /// Optimizer settings expressed as a TrainConfig (Adam defaults, clip 1.0).
  TrainConfig as_train_config() const;
};

void to_json(nlohmann::json& j, const FineTuneTaskConfig& c);
void from_json(const nlohmann::json& j, FineTuneTaskConfig& c);

/// Accepts {"tasks": [row, ...]} or a bare array of rows.
std::vector<FineTuneTaskConfig> parse_task_configs(const nlohmann::json& j);
std::vector<FineTuneTaskConfig> load_task_configs(const std::filesystem::path& path);
const FineTuneTaskConfig& find_task(std::span<const FineTuneTaskConfig> tasks, const std::string& name);

struct LabeledExample {
  std::string text;
  std::int64_t label = 0;
};

/// JSON-lines, one {"text", "label"} per line.
std::vector<LabeledExample> load_labeled(const std::filesystem::path& path);
void save_labeled(const std::filesystem::path& path, std::span<const LabeledExample> examples);

/// Linear map from the final-normed hidden state of the last token to class
/// logits.
struct ClassifierHead {
  Matrix<float> weight;  // d_model x n_classes
  Matrix<float> bias;    // 1 x n_classes

  static ClassifierHead init(std::int64_t d_model, std::int64_t n_classes, std::uint64_t seed);
  nlohmann::json to_json() const;
  static ClassifierHead from_json(const nlohmann::json& j);
};

/// Class logits for one example ([bos] text). Throws EvalError when the
/// encoded example does not fit the context.
Vector<float> classify_logits(const ModelParams<float>& params, const ModelConfig& config, const ClassifierHead& head,
                              const TokenizerModel& tok, std::string_view text);

double classifier_accuracy(const ModelParams<float>& params, const ModelConfig& config, const ClassifierHead& head,
                           const TokenizerModel& tok, std::span<const LabeledExample> examples);

struct FineTuneResult {
  Checkpoint checkpoint;  // metadata carries the task config and the head
  ClassifierHead head;
  double train_accuracy = 0.0;
  std::optional<double> eval_accuracy;
  std::vector<double> epoch_losses;
};

/// Trains the whole network plus a freshly initialized head with the task's
/// optimizer settings. Throws ConfigError on labels outside [0, n_classes),
/// on a single-class training set, or when warm-up exceeds the step count.
FineTuneResult fine_tune_classifier(const Checkpoint& base, const TokenizerModel& tok,
                                    std::span<const LabeledExample> train, std::span<const LabeledExample> eval,
                                    const FineTuneTaskConfig& task);

}  // namespace distlab
