#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "distlab/corpus.hpp"
#include "distlab/model.hpp"
#include "distlab/tokenizer.hpp"
#include "distlab/train_config.hpp"

namespace distlab {

/// Nested random subsets: the documents are shuffled once under the seed and
/// each subset is the shortest prefix holding at least the requested number
/// of words. Throws ConfigError when a size exceeds the corpus.
std::vector<std::vector<Document>> nested_subsets(std::span<const Document> docs, std::span<const std::size_t> word_counts,
                                                  std::uint64_t seed);

struct ScalingModel {
  std::string name;
  ModelConfig config;
};

struct ScalingRow {
  std::string model;
  std::int64_t parameters = 0;
  std::size_t subset_words = 0;
  std::size_t subset_documents = 0;
  std::int64_t steps = 0;
  double test_loss = 0.0;
};

struct ScalingOptions {
  std::vector<ScalingModel> models;  // at least 2
  std::vector<std::size_t> subset_words;
  TrainConfig train;
  std::uint64_t seed = 0;
  std::int64_t jobs = 1;
};

/// Trains every (model, subset) pair with the same TrainConfig and reports
/// held-out CE. Warm-up is capped at each run's step count so the smallest
/// subsets still train.
std::vector<ScalingRow> run_scaling(const TokenizerModel& tok, std::span<const Document> train_docs,
                                    std::span<const Document> test_docs, const ScalingOptions& options);

std::string scaling_csv(std::span<const ScalingRow> rows);

}  // namespace distlab
