#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "distlab/corpus.hpp"
#include "distlab/evaluation.hpp"
#include "distlab/finetune.hpp"

namespace distlab {

/// Small probabilistic English grammar with number agreement, reflexives,
/// irregular past tense and auxiliaries. Stands in for a real developmental
/// corpus when exercising the pipeline end to end.
struct SyntheticOptions {
  std::size_t train_bytes = 600'000;  // summed over all genres
  std::size_t test_bytes = 60'000;
  std::size_t pairs_per_phenomenon = 100;
  std::size_t classification_examples = 400;
  std::uint64_t seed = 0;
};

/// Training genres, in file order.
const std::vector<std::string>& synthetic_genres();

struct SyntheticCorpus {
  std::map<std::string, std::vector<Document>> train;  // genre -> documents
  std::vector<Document> test;                          // different genre mix
};

SyntheticCorpus generate_corpus(const SyntheticOptions& options);

/// Two suites: "core" (subject-verb, determiner-noun, anaphor, irregular
/// past) and "supplement" (agreement across an attractor, question
/// auxiliary).
std::vector<MinimalPairSuite> generate_suites(const SyntheticOptions& options);

/// Binary acceptability task: label 1 for grammatical sentences.
std::vector<LabeledExample> generate_acceptability(std::size_t n, std::uint64_t seed);

/// Writes train/<genre>.txt, test.txt, suites/<name>.jsonl,
/// tasks/acceptability_{train,eval}.jsonl and returns a listing of them.
nlohmann::json write_synthetic_dataset(const std::filesystem::path& dir, const SyntheticOptions& options);

}  // namespace distlab
