#include "distlab/tokenizer.hpp"

#include <algorithm>
#include <fstream>
#include <queue>
#include <unordered_set>

#include "distlab/corpus.hpp"
#include "distlab/hash.hpp"

namespace distlab {

namespace {

std::uint64_t pair_key(std::int32_t a, std::int32_t b) {
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) | static_cast<std::uint32_t>(b);
}

std::int32_t key_left(std::uint64_t k) { return static_cast<std::int32_t>(k >> 32); }
std::int32_t key_right(std::uint64_t k) { return static_cast<std::int32_t>(k & 0xffffffffu); }

std::string to_hex(std::string_view s) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * s.size());
  for (unsigned char c : s) {
    out.push_back(digits[c >> 4]);
    out.push_back(digits[c & 15]);
  }
  return out;
}

}  // namespace

TokenizerModel::TokenizerModel() : TokenizerModel(std::vector<Merge>{}) {}

TokenizerModel::TokenizerModel(std::vector<Merge> merges) : merges_(std::move(merges)) {
  vocab_.reserve(kFirstMergeId + merges_.size());
  for (int b = 0; b < kByteTokens; ++b) vocab_.emplace_back(1, static_cast<char>(b));
  vocab_.emplace_back("<|bos|>");
  vocab_.emplace_back("<|eod|>");
  for (std::size_t i = 0; i < merges_.size(); ++i) {
    const auto [l, r] = merges_[i];
    const auto next = static_cast<std::int32_t>(vocab_.size());
    if (l < 0 || r < 0 || l >= next || r >= next || is_special(l) || is_special(r)) {
      throw TokenizerError("merge " + std::to_string(i) + " references an invalid token");
    }
    vocab_.push_back(vocab_[l] + vocab_[r]);
    merge_rank_.emplace(pair_key(l, r), static_cast<std::int32_t>(i));
  }
}

const std::string& TokenizerModel::token_bytes(std::int32_t id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= vocab_.size()) {
    throw TokenizerError("token id " + std::to_string(id) + " outside vocabulary");
  }
  return vocab_[id];
}

std::vector<std::int32_t> TokenizerModel::encode(std::string_view text) const {
  const auto n = static_cast<std::int32_t>(text.size());
  std::vector<std::int32_t> tok(text.size());
  std::vector<std::int32_t> next(text.size());
  std::vector<std::int32_t> prev(text.size());
  for (std::int32_t i = 0; i < n; ++i) {
    tok[i] = static_cast<unsigned char>(text[i]);
    next[i] = i + 1 < n ? i + 1 : -1;
    prev[i] = i - 1;
  }
  if (merges_.empty() || n < 2) return tok;

  // (rank, position); lowest rank first, leftmost first. Stale entries are
  // skipped when popped. Applying merges this way is equivalent to applying
  // each merge in rank order over the whole string.
  using Entry = std::pair<std::int32_t, std::int32_t>;
  std::priority_queue<Entry, std::vector<Entry>, std::greater<>> heap;
  auto push = [&](std::int32_t i) {
    if (i < 0 || next[i] < 0) return;
    auto it = merge_rank_.find(pair_key(tok[i], tok[next[i]]));
    if (it != merge_rank_.end()) heap.emplace(it->second, i);
  };
  for (std::int32_t i = 0; i + 1 < n; ++i) push(i);

  while (!heap.empty()) {
    const auto [rank, i] = heap.top();
    heap.pop();
    if (tok[i] < 0 || next[i] < 0) continue;
    const auto [l, r] = merges_[rank];
    const std::int32_t j = next[i];
    if (tok[i] != l || tok[j] != r) continue;
    tok[i] = kFirstMergeId + rank;
    tok[j] = -1;
    next[i] = next[j];
    if (next[j] >= 0) prev[next[j]] = i;
    push(prev[i]);
    push(i);
  }

  std::vector<std::int32_t> out;
  for (std::int32_t i = 0; i >= 0; i = next[i]) out.push_back(tok[i]);
  return out;
}

std::string TokenizerModel::decode(std::span<const std::int32_t> ids) const {
  std::string out;
  for (auto id : ids) {
    const auto& s = token_bytes(id);
    if (!is_special(id)) out += s;
  }
  return out;
}

nlohmann::json TokenizerModel::to_json() const {
  nlohmann::json merges = nlohmann::json::array();
  for (const auto& [l, r] : merges_) merges.push_back({l, r});
  nlohmann::json vocab = nlohmann::json::array();
  for (const auto& v : vocab_) vocab.push_back(to_hex(v));
  return {{"version", kFormatVersion},
          {"special_tokens", {{"bos", {{"id", kBos}, {"text", vocab_[kBos]}}}, {"eod", {{"id", kEod}, {"text", vocab_[kEod]}}}}},
          {"merges", merges},
          {"vocab_encoding", "hex"},
          {"vocab", vocab}};
}

TokenizerModel TokenizerModel::from_json(const nlohmann::json& j) {
  if (j.value("version", 0) != kFormatVersion) throw TokenizerError("unsupported tokenizer format version");
  std::vector<Merge> merges;
  for (const auto& m : j.at("merges")) merges.emplace_back(m.at(0).get<std::int32_t>(), m.at(1).get<std::int32_t>());
  TokenizerModel model(std::move(merges));
  if (j.contains("vocab")) {
    const auto& vocab = j.at("vocab");
    if (vocab.size() != model.vocab_size()) throw TokenizerError("vocab array does not match merge list");
    for (std::size_t i = 0; i < vocab.size(); ++i) {
      if (vocab[i].get<std::string>() != to_hex(model.vocab_[i])) {
        throw TokenizerError("vocab entry " + std::to_string(i) + " does not match merge list");
      }
    }
  }
  return model;
}

void TokenizerModel::save(const std::filesystem::path& path) const { write_file(path, to_json().dump(1) + "\n"); }

TokenizerModel TokenizerModel::load(const std::filesystem::path& path) {
  try {
    return from_json(nlohmann::json::parse(read_file(path)));
  } catch (const nlohmann::json::exception& e) {
    throw TokenizerError("malformed tokenizer file " + path.string() + ": " + e.what());
  }
}

std::string TokenizerModel::hash() const { return hash_hex(to_json().dump()); }

TokenizerModel bpe_train(std::string_view text, std::size_t target_vocab) {
  if (target_vocab < static_cast<std::size_t>(TokenizerModel::kFirstMergeId)) {
    throw TokenizerError("target vocabulary must be at least " + std::to_string(TokenizerModel::kFirstMergeId));
  }
  if (text.empty()) throw TokenizerError("cannot train a tokenizer on empty text");

  const auto n = static_cast<std::int32_t>(text.size());
  std::vector<std::int32_t> tok(text.size()), next(text.size()), prev(text.size());
  for (std::int32_t i = 0; i < n; ++i) {
    tok[i] = static_cast<unsigned char>(text[i]);
    next[i] = i + 1 < n ? i + 1 : -1;
    prev[i] = i - 1;
  }

  std::vector<std::string> strings;
  for (int b = 0; b < TokenizerModel::kByteTokens; ++b) strings.emplace_back(1, static_cast<char>(b));
  strings.emplace_back();  // specials never take part in merges
  strings.emplace_back();
  std::unordered_set<std::string> existing(strings.begin(), strings.begin() + TokenizerModel::kByteTokens);

  std::unordered_map<std::uint64_t, std::int64_t> counts;
  std::unordered_map<std::uint64_t, std::vector<std::int32_t>> where;
  for (std::int32_t i = 0; i + 1 < n; ++i) {
    const auto k = pair_key(tok[i], tok[i + 1]);
    ++counts[k];
    where[k].push_back(i);
  }

  struct Candidate {
    std::int64_t count;
    std::uint64_t key;
  };
  auto worse = [&strings](const Candidate& a, const Candidate& b) {
    if (a.count != b.count) return a.count < b.count;
    const auto& al = strings[key_left(a.key)];
    const auto& bl = strings[key_left(b.key)];
    if (al != bl) return al > bl;
    return strings[key_right(a.key)] > strings[key_right(b.key)];
  };
  std::priority_queue<Candidate, std::vector<Candidate>, decltype(worse)> heap(worse);
  for (const auto& [k, c] : counts) heap.push({c, k});

  auto add = [&](std::int32_t a, std::int32_t b, std::int64_t delta, std::int32_t pos) {
    const auto k = pair_key(a, b);
    auto& c = counts[k];
    c += delta;
    if (delta > 0) where[k].push_back(pos);
    if (c > 0) heap.push({c, k});
  };

  std::vector<TokenizerModel::Merge> merges;
  std::unordered_set<std::uint64_t> banned;
  while (strings.size() < target_vocab && !heap.empty()) {
    const auto top = heap.top();
    heap.pop();
    auto it = counts.find(top.key);
    if (it == counts.end() || it->second != top.count || banned.count(top.key)) continue;
    if (top.count < 2) break;
    const auto a = key_left(top.key);
    const auto b = key_right(top.key);
    auto merged = strings[a] + strings[b];
    if (existing.count(merged)) {
      banned.insert(top.key);
      continue;
    }
    const auto c = static_cast<std::int32_t>(strings.size());
    merges.emplace_back(a, b);
    existing.insert(merged);
    strings.push_back(std::move(merged));

    auto positions = std::move(where[top.key]);
    where.erase(top.key);
    std::sort(positions.begin(), positions.end());
    for (const auto i : positions) {
      if (tok[i] != a) continue;
      const auto j = next[i];
      if (j < 0 || tok[j] != b) continue;
      const auto p = prev[i];
      const auto q = next[j];
      if (p >= 0) add(tok[p], a, -1, p);
      if (q >= 0) add(b, tok[q], -1, j);
      add(a, b, -1, i);
      tok[i] = c;
      tok[j] = -1;
      next[i] = q;
      if (q >= 0) prev[q] = i;
      if (p >= 0) add(tok[p], c, +1, p);
      if (q >= 0) add(c, tok[q], +1, i);
    }
  }
  return TokenizerModel(std::move(merges));
}

std::vector<std::int32_t> encode_documents(const TokenizerModel& tok, std::span<const std::string> docs) {
  std::vector<std::int32_t> out;
  for (const auto& d : docs) {
    out.push_back(TokenizerModel::kBos);
    const auto ids = tok.encode(d);
    out.insert(out.end(), ids.begin(), ids.end());
    out.push_back(TokenizerModel::kEod);
  }
  return out;
}

}  // namespace distlab
