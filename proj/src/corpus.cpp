#include "distlab/corpus.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "distlab/random.hpp"

namespace distlab {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorpusError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CorpusError("cannot write " + path.string());
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
}

namespace {

bool is_blank(std::string_view line) {
  return line.find_first_not_of(" \t\r") == std::string_view::npos;
}

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

std::vector<Document> split_documents(std::string_view text, std::string_view kind) {
  std::vector<Document> docs;
  std::size_t block_start = 0;
  std::size_t pos = 0;
  auto flush = [&](std::size_t end) {
    auto body = trim(text.substr(block_start, end - block_start));
    if (!body.empty()) docs.push_back({std::string(body), std::string(kind)});
  };
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    if (is_blank(text.substr(pos, nl - pos))) {
      flush(pos);
      block_start = nl + 1;
    }
    pos = nl + 1;
  }
  if (block_start < text.size()) flush(text.size());
  return docs;
}

std::vector<Document> load_documents(std::span<const CorpusSource> sources) {
  std::vector<Document> docs;
  for (const auto& src : sources) {
    if (!std::filesystem::exists(src.path)) throw CorpusError("missing corpus file: " + src.path.string());
    auto text = read_file(src.path);
    auto part = split_documents(text, src.kind);
    if (part.empty()) throw CorpusError("empty corpus file: " + src.path.string());
    for (auto& d : part) docs.push_back(std::move(d));
  }
  if (docs.empty()) throw CorpusError("empty corpus");
  return docs;
}

CorpusSplit split_corpus(std::vector<Document> docs, double train_fraction, double validation_fraction,
                         std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0) || !(validation_fraction > 0.0 && validation_fraction < 1.0) ||
      std::abs(train_fraction + validation_fraction - 1.0) > 1e-9) {
    throw CorpusError("split fractions must lie in (0,1) and sum to 1");
  }
  if (docs.size() < 2) throw CorpusError("need at least two documents to split");

  Rng rng(derive_seed(seed, "corpus.split"));
  rng.shuffle(docs);

  std::vector<double> cumulative(docs.size() + 1, 0.0);
  for (std::size_t i = 0; i < docs.size(); ++i) {
    cumulative[i + 1] = cumulative[i] + static_cast<double>(docs[i].text.size());
  }
  const double target = train_fraction * cumulative.back();
  std::size_t cut = 1;
  double best = std::abs(cumulative[1] - target);
  for (std::size_t k = 2; k < docs.size(); ++k) {
    const double err = std::abs(cumulative[k] - target);
    if (err < best - 1e-9 * cumulative.back()) {
      best = err;
      cut = k;
    }
  }

  CorpusSplit split;
  split.train.assign(std::make_move_iterator(docs.begin()), std::make_move_iterator(docs.begin() + cut));
  split.validation.assign(std::make_move_iterator(docs.begin() + cut), std::make_move_iterator(docs.end()));
  return split;
}

CorpusSplit load_and_split(const CorpusSpec& spec) {
  return split_corpus(load_documents(spec.sources), spec.train_fraction, spec.validation_fraction, spec.seed);
}

nlohmann::json split_manifest(const CorpusSpec& spec, const CorpusSplit& split) {
  nlohmann::json sources = nlohmann::json::array();
  for (const auto& s : spec.sources) sources.push_back({{"path", s.path.string()}, {"kind", s.kind}});
  auto chars = [](const std::vector<Document>& d) {
    return std::accumulate(d.begin(), d.end(), std::size_t{0},
                           [](std::size_t a, const Document& x) { return a + x.text.size(); });
  };
  return {{"seed", spec.seed},
          {"train_fraction", spec.train_fraction},
          {"validation_fraction", spec.validation_fraction},
          {"sources", sources},
          {"train_documents", split.train.size()},
          {"validation_documents", split.validation.size()},
          {"train_characters", chars(split.train)},
          {"validation_characters", chars(split.validation)}};
}

std::string join_documents(std::span<const Document> docs) {
  std::string out;
  for (const auto& d : docs) {
    out += d.text;
    out += "\n\n";
  }
  return out;
}

std::size_t count_words(std::string_view text) {
  std::size_t n = 0;
  bool in_word = false;
  for (char c : text) {
    const bool space = c == ' ' || c == '\n' || c == '\t' || c == '\r';
    if (!space && !in_word) ++n;
    in_word = !space;
  }
  return n;
}

PackedDataset pack_sequences(std::span<const std::int32_t> token_ids, std::size_t sequence_length) {
  if (sequence_length < 2) throw std::invalid_argument("sequence_length must be at least 2");
  PackedDataset out;
  out.sequence_length = sequence_length;
  out.count = token_ids.size() / sequence_length;
  out.token_ids.assign(token_ids.begin(), token_ids.begin() + static_cast<std::ptrdiff_t>(out.count * sequence_length));
  return out;
}

}  // namespace distlab
