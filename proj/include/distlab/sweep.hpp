#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "distlab/corpus.hpp"
#include "distlab/evaluation.hpp"
#include "distlab/model.hpp"
#include "distlab/random.hpp"
#include "distlab/tokenizer.hpp"
#include "distlab/train_config.hpp"

namespace distlab {

struct SweepError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Distribution of one TrainConfig field.
///   log_normal(mu, sigma): exp(N(mu, sigma^2)), optionally clamped to [lo, hi]
///   log_uniform(lo, hi), uniform(lo, hi), categorical(values)
/// Integer-valued fields are rounded after sampling.
struct PriorSpec {
  enum class Kind { kLogNormal, kLogUniform, kUniform, kCategorical };
  Kind kind = Kind::kUniform;
  double mu = 0.0, sigma = 1.0;
  std::optional<double> lo, hi;
  std::vector<nlohmann::json> values;

  void validate(const std::string& field) const;
  nlohmann::json sample(Rng& rng) const;
};

using Priors = std::map<std::string, PriorSpec>;

/// JSON: {"field": {"dist": "log_uniform", "lo": .., "hi": ..}, ...}. Throws
/// SweepError on unknown distributions, unordered bounds, sigma <= 0, or a
/// field that TrainConfig does not have.
Priors parse_priors(const nlohmann::json& j);
nlohmann::json priors_to_json(const Priors& priors);

/// Draws every prior in field-name order from one stream; unswept fields keep
/// their values from `base`.
TrainConfig sample_config(const Priors& priors, std::uint64_t seed, const TrainConfig& base = {});

/// Survivors per rung: floor(n_trials / eta^k) for k = 0..n_rungs-1. Throws
/// SweepError when n_trials < eta^(n_rungs-1), eta < 2 or n_rungs < 1.
std::vector<std::int64_t> halving_schedule(std::int64_t n_trials, std::int64_t eta, std::int64_t n_rungs);

struct SweepPlan {
  std::int64_t n_trials = 16;
  std::int64_t eta = 2;
  std::int64_t n_rungs = 3;
  std::int64_t min_epochs = 1;  // rung k trains to min_epochs * eta^k epochs
  std::int64_t jobs = 1;
  std::uint64_t seed = 0;
  bool evaluate_stopped = false;  // also score eliminated trials
  TrainConfig base;
  Priors priors;

  void validate() const;
  std::int64_t rung_epochs(std::int64_t rung) const;
};

nlohmann::json plan_to_json(const SweepPlan& plan);
SweepPlan plan_from_json(const nlohmann::json& j);

enum class TrialStatus { kRunning, kStopped, kCompleted, kDiverged, kFailed };
std::string to_string(TrialStatus s);
TrialStatus parse_trial_status(const std::string& s);

struct SweepRecord {
  std::int64_t trial_id = 0;
  TrainConfig config;
  std::vector<double> rung_losses;  // validation CE at the end of each rung reached
  TrialStatus status = TrialStatus::kRunning;
  std::optional<double> test_loss;
  std::map<std::string, double> accuracies;
  std::string error;

  bool completed() const { return status == TrialStatus::kCompleted; }
  nlohmann::json to_json() const;
  static SweepRecord from_json(const nlohmann::json& j);
};

/// Reads a JSON-lines record file; the last line for a trial id wins.
/// Returns records ordered by trial id. A missing file yields no records.
std::vector<SweepRecord> load_records(const std::filesystem::path& path);

struct SweepData {
  const PackedDataset* train = nullptr;
  const PackedDataset* validation = nullptr;
  const PackedDataset* test = nullptr;  // optional
  const TokenizerModel* tokenizer = nullptr;
  std::vector<MinimalPairSuite> suites;
};

struct SweepResult {
  std::vector<SweepRecord> records;
  /// promotions[k] lists the trial ids moved from rung k to rung k+1.
  std::vector<std::vector<std::int64_t>> promotions;
};

/// Random-sampling successive halving. Each trial trains for the last rung's
/// epoch budget under a single schedule and is evaluated at the end of each
/// rung's budget; promotion is by validation loss (ties by trial id);
/// diverged or failed trials never promote. Records are appended to
/// `records_path` as they change. With `resume`, finished rung evaluations
/// already on file are reused and interrupted trials retrain from scratch.
SweepResult run_sweep(const SweepData& data, const ModelConfig& model, const SweepPlan& plan,
                      const std::filesystem::path& records_path, bool resume = false);

/// Recomputes promotion decisions from stored rung losses alone.
std::vector<std::vector<std::int64_t>> replay_promotions(std::span<const SweepRecord> records, const SweepPlan& plan);

struct CorrelationRow {
  std::int64_t trial_id;
  double validation_loss;
  std::optional<double> test_loss;
  std::optional<double> accuracy;  // macro-average over suites
};

struct CorrelationReport {
  std::vector<CorrelationRow> rows;
  std::optional<double> r2_test_vs_validation;
  std::optional<double> slope_test_vs_validation;
  std::optional<double> r2_accuracy_vs_validation;
  std::optional<double> slope_accuracy_vs_validation;

  nlohmann::json to_json() const;
  std::string to_csv() const;
};

/// Uses completed trials (plus stopped ones when asked) that have a
/// validation loss. Requires at least 3 with test loss or accuracy; throws
/// SweepError otherwise.
CorrelationReport correlate_loss_and_scores(std::span<const SweepRecord> records, bool include_stopped = false);

}  // namespace distlab
