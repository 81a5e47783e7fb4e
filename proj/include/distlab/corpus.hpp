#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace distlab {

struct CorpusError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CorpusSource {
  std::filesystem::path path;
  std::string kind;  // genre label, carried as metadata only
};

struct CorpusSpec {
  std::vector<CorpusSource> sources;
  double train_fraction = 0.95;
  double validation_fraction = 0.05;
  std::uint64_t seed = 0;
};

struct Document {
  std::string text;
  std::string kind;
};

struct CorpusSplit {
  std::vector<Document> train;
  std::vector<Document> validation;
};

/// Documents are blank-line-separated blocks; surrounding whitespace of each
/// block is trimmed and empty blocks are skipped.
std::vector<Document> split_documents(std::string_view text, std::string_view kind = {});

/// Reads every source as a list of documents. Throws CorpusError on a missing
/// or empty file, or when no documents result.
std::vector<Document> load_documents(std::span<const CorpusSource> sources);

/// Shuffles the documents of all sources under the seed and cuts the sequence
/// at the document boundary whose cumulative character count is closest to the
/// requested train fraction. Both splits are guaranteed non-empty.
CorpusSplit load_and_split(const CorpusSpec& spec);

/// Same cut applied to documents already in memory.
CorpusSplit split_corpus(std::vector<Document> docs, double train_fraction, double validation_fraction,
                         std::uint64_t seed);

/// JSON record of a split: seed, fractions, per-split document counts.
nlohmann::json split_manifest(const CorpusSpec& spec, const CorpusSplit& split);

/// Joins documents back to the on-disk format (blank line between documents).
std::string join_documents(std::span<const Document> docs);

std::size_t count_words(std::string_view text);

/// Contiguous, non-overlapping windows of a flat token stream.
struct PackedDataset {
  std::vector<std::int32_t> token_ids;  // count * sequence_length entries
  std::size_t sequence_length = 0;
  std::size_t count = 0;

  std::span<const std::int32_t> sequence(std::size_t i) const {
    return {token_ids.data() + i * sequence_length, sequence_length};
  }
};

/// Drops the trailing remainder shorter than sequence_length.
/// Throws std::invalid_argument if sequence_length < 2.
PackedDataset pack_sequences(std::span<const std::int32_t> token_ids, std::size_t sequence_length);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view contents);

}  // namespace distlab
