#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "distlab/checkpoint.hpp"
#include "distlab/corpus.hpp"
#include "distlab/model.hpp"
#include "distlab/tokenizer.hpp"

namespace distlab {

struct EvalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Splits packed windows of L tokens into model inputs (first L-1) and
/// next-token targets (last L-1).
void make_lm_batch(const PackedDataset& data, std::span<const std::size_t> rows, TokenBatch& inputs,
                   std::vector<std::int32_t>& targets);

/// Token-weighted mean next-token cross-entropy over every packed window.
template <typename Scalar>
double dataset_cross_entropy(const ModelParams<Scalar>& params, const ModelConfig& config, const PackedDataset& data,
                             std::size_t batch_size = 32);

/// Packs documents as [bos] doc [eod] ... into windows of max_seq_len + 1.
PackedDataset pack_documents(const TokenizerModel& tok, std::span<const Document> docs, const ModelConfig& config);

/// Held-out cross-entropy of a checkpoint. Throws EvalError when the
/// tokenizer fingerprint does not match the checkpoint or the documents are
/// too short to fill one window.
double eval_loss(const Checkpoint& ckpt, const TokenizerModel& tok, std::span<const Document> test_docs);

enum class ScoreMode { kSum, kMeanPerToken };

/// Log-likelihood of a sentence given a prepended begin-of-sequence token:
/// sum over sentence tokens of log p(token | prefix). kMeanPerToken divides
/// by the token count. Throws EvalError when the sentence does not fit.
template <typename Scalar>
double score_sentence(const ModelParams<Scalar>& params, const ModelConfig& config, const TokenizerModel& tok,
                      std::string_view sentence, ScoreMode mode = ScoreMode::kSum);

struct MinimalPair {
  std::string sentence_good;
  std::string sentence_bad;
  std::string phenomenon;
};

struct MinimalPairSuite {
  std::string name;
  std::vector<MinimalPair> pairs;
};

/// JSON-lines, one {"sentence_good", "sentence_bad", "phenomenon"?} per line.
/// The suite name defaults to the file stem.
MinimalPairSuite load_suite(const std::filesystem::path& path);
void save_suite(const std::filesystem::path& path, const MinimalPairSuite& suite);

/// Fraction of pairs whose good sentence scores strictly higher; exact ties
/// count one half.
template <typename Scalar>
double minimal_pair_accuracy(const ModelParams<Scalar>& params, const ModelConfig& config, const TokenizerModel& tok,
                             const MinimalPairSuite& suite, ScoreMode mode = ScoreMode::kSum);

/// Accuracy from precomputed (good, bad) score pairs.
double pair_accuracy(std::span<const std::pair<double, double>> scores);

struct EvalReport {
  std::string checkpoint_id;
  std::optional<double> test_loss;
  std::map<std::string, double> suite_accuracy;

  /// Unweighted mean over suites; nullopt without suites.
  std::optional<double> macro_average() const;
  nlohmann::json to_json() const;
};

/// Appends one row (checkpoint_id, test_loss, suite columns..., macro_average)
/// writing the header first when the file is new.
void append_report_csv(const std::filesystem::path& path, const EvalReport& report);

}  // namespace distlab
