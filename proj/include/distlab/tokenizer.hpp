#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace distlab {

struct TokenizerError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Byte-level BPE. Ids 0..255 are raw bytes, followed by the special tokens,
/// followed by one id per merge in training order.
class TokenizerModel {
 public:
  static constexpr std::int32_t kByteTokens = 256;
  static constexpr std::int32_t kBos = 256;
  static constexpr std::int32_t kEod = 257;
  static constexpr std::int32_t kSpecialTokens = 2;
  static constexpr std::int32_t kFirstMergeId = kByteTokens + kSpecialTokens;
  static constexpr int kFormatVersion = 1;

  using Merge = std::pair<std::int32_t, std::int32_t>;

  TokenizerModel();
  explicit TokenizerModel(std::vector<Merge> merges);

  std::size_t vocab_size() const { return vocab_.size(); }
  const std::vector<Merge>& merges() const { return merges_; }
  /// Byte string of a token; special tokens render as their marker text.
  const std::string& token_bytes(std::int32_t id) const;
  bool is_special(std::int32_t id) const { return id == kBos || id == kEod; }

  std::vector<std::int32_t> encode(std::string_view text) const;
  /// Throws TokenizerError on an id outside the vocabulary. Special tokens
  /// decode to nothing.
  std::string decode(std::span<const std::int32_t> ids) const;

  nlohmann::json to_json() const;
  static TokenizerModel from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static TokenizerModel load(const std::filesystem::path& path);
  /// Fingerprint of the serialized form; checkpoints record it.
  std::string hash() const;

  bool operator==(const TokenizerModel& other) const { return merges_ == other.merges_; }

 private:
  std::vector<Merge> merges_;
  std::vector<std::string> vocab_;
  std::unordered_map<std::uint64_t, std::int32_t> merge_rank_;
};

/// Greedy highest-count pair merging over the raw byte stream. Equal counts
/// are broken by the lexicographically smallest (left, right) byte strings.
/// Stops at target_vocab or when no pair occurs at least twice. A pair whose
/// concatenation is already a token is never merged, keeping the vocabulary
/// bijective.
TokenizerModel bpe_train(std::string_view text, std::size_t target_vocab);

/// Encodes each document as [bos] tokens... [eod] and concatenates.
std::vector<std::int32_t> encode_documents(const TokenizerModel& tok, std::span<const std::string> docs);

}  // namespace distlab
