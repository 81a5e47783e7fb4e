#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "distlab/checkpoint.hpp"
#include "distlab/corpus.hpp"
#include "distlab/model.hpp"
#include "distlab/optim.hpp"
#include "distlab/train_config.hpp"

namespace distlab {

/// Raised when the loss becomes non-finite, or stays above 10x the first
/// step's loss for 100 consecutive steps.
struct TrainingDiverged : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Teacher {
  ModelConfig config;
  ModelParams<float> params;
};

/// Frozen teachers sharing one configuration.
struct TeacherEnsemble {
  std::vector<Teacher> members;

  /// Throws ConfigError when empty or when configurations differ.
  void validate() const;
};

/// Elementwise mean of the teachers' logits.
LogitsBatch<float> ensemble_mean_logits(const TeacherEnsemble& ensemble, const TokenBatch& tokens);

struct StepRecord {
  std::int64_t step;  // 1-based optimizer step
  std::int64_t epoch; // 1-based
  double lr;
  double train_loss;
};

struct EpochRecord {
  std::int64_t epoch;
  std::int64_t step;
  double val_loss;
};

struct LossHistory {
  std::vector<StepRecord> steps;
  std::vector<EpochRecord> epochs;
};

/// Append-only metrics stream: step,epoch,lr,train_loss,val_loss. Step rows
/// leave val_loss empty; epoch rows leave train_loss empty.
class MetricsCsv {
 public:
  explicit MetricsCsv(std::ostream& out);
  void step(const StepRecord& r);
  void epoch(const EpochRecord& r, double lr);

 private:
  std::ostream& out_;
};

/// One training run: CE pretraining, or distillation when an ensemble is
/// attached. Runs epoch by epoch so callers can stop early and resume.
class Trainer {
 public:
  Trainer(ModelConfig model, TrainConfig train, const PackedDataset& train_data,
          const PackedDataset* validation = nullptr, const TeacherEnsemble* teachers = nullptr);

  void set_metrics(MetricsCsv* sink) { metrics_ = sink; }

  /// Trains one more epoch, then evaluates validation CE when a validation
  /// set is attached. Throws TrainingDiverged.
  void train_epoch();
  /// Trains until n_epochs epochs are done.
  void run();

  double validation_loss() const;

  const ModelParams<float>& params() const { return params_; }
  const ModelConfig& model_config() const { return model_; }
  const TrainConfig& train_config() const { return train_; }
  const LossHistory& history() const { return history_; }
  std::int64_t epochs_done() const { return epoch_; }
  std::int64_t steps_done() const { return step_; }
  std::int64_t steps_per_epoch() const { return steps_per_epoch_; }
  std::int64_t total_steps() const { return total_steps_; }

 private:
  void train_step(std::span<const std::size_t> rows);

  ModelConfig model_;
  TrainConfig train_;
  const PackedDataset& data_;
  const PackedDataset* validation_;
  const TeacherEnsemble* teachers_;
  MetricsCsv* metrics_ = nullptr;

  ModelParams<float> params_;
  AdamState<float> adam_;
  LossHistory history_;
  std::int64_t epoch_ = 0;
  std::int64_t step_ = 0;
  std::int64_t steps_per_epoch_ = 0;
  std::int64_t total_steps_ = 0;
  std::optional<double> initial_loss_;
  std::int64_t high_loss_streak_ = 0;
};

/// Steps per epoch: ceil(sequences / batch_size).
std::int64_t steps_per_epoch(std::size_t n_sequences, std::int64_t batch_size);

struct TrainResult {
  ModelParams<float> params;
  LossHistory history;
};

/// Cross-entropy pretraining for train.n_epochs epochs.
TrainResult train_teacher(const ModelConfig& model, const TrainConfig& train, const PackedDataset& train_data,
                          const PackedDataset* validation = nullptr, MetricsCsv* metrics = nullptr);

/// Distillation pretraining against the ensemble's mean logits. The student
/// may differ in size but must share the vocabulary.
TrainResult train_student_distill(const ModelConfig& model, const TrainConfig& train, const PackedDataset& train_data,
                                  const TeacherEnsemble& teachers, const PackedDataset* validation = nullptr,
                                  MetricsCsv* metrics = nullptr);

}  // namespace distlab
