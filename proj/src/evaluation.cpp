#include "distlab/evaluation.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "distlab/losses.hpp"

namespace distlab {

void make_lm_batch(const PackedDataset& data, std::span<const std::size_t> rows, TokenBatch& inputs,
                   std::vector<std::int32_t>& targets) {
  const auto L = static_cast<std::int64_t>(data.sequence_length);
  inputs.batch = static_cast<std::int64_t>(rows.size());
  inputs.seq_len = L - 1;
  inputs.ids.resize(rows.size() * static_cast<std::size_t>(L - 1));
  targets.resize(inputs.ids.size());
  std::size_t o = 0;
  for (const auto r : rows) {
    const auto seq = data.sequence(r);
    for (std::int64_t t = 0; t + 1 < L; ++t, ++o) {
      inputs.ids[o] = seq[t];
      targets[o] = seq[t + 1];
    }
  }
}

template <typename Scalar>
double dataset_cross_entropy(const ModelParams<Scalar>& params, const ModelConfig& config, const PackedDataset& data,
                             std::size_t batch_size) {
  if (data.count == 0) throw EvalError("dataset has no complete sequences");
  double total = 0.0;
  std::int64_t count = 0;
  TokenBatch inputs;
  std::vector<std::int32_t> targets;
  std::vector<std::size_t> rows;
  for (std::size_t start = 0; start < data.count; start += batch_size) {
    rows.clear();
    for (std::size_t r = start; r < std::min(data.count, start + batch_size); ++r) rows.push_back(r);
    make_lm_batch(data, rows, inputs, targets);
    const auto logits = forward(params, config, inputs);
    const auto ce = cross_entropy(logits, targets);
    total += ce.value * static_cast<double>(ce.count);
    count += ce.count;
  }
  return total / static_cast<double>(count);
}

PackedDataset pack_documents(const TokenizerModel& tok, std::span<const Document> docs, const ModelConfig& config) {
  std::vector<std::string> texts;
  texts.reserve(docs.size());
  for (const auto& d : docs) texts.push_back(d.text);
  const auto ids = encode_documents(tok, texts);
  return pack_sequences(ids, static_cast<std::size_t>(config.max_seq_len + 1));
}

double eval_loss(const Checkpoint& ckpt, const TokenizerModel& tok, std::span<const Document> test_docs) {
  if (ckpt.tokenizer_hash != tok.hash()) throw EvalError("tokenizer does not match the checkpoint");
  const auto data = pack_documents(tok, test_docs, ckpt.config);
  return dataset_cross_entropy(ckpt.params, ckpt.config, data);
}

template <typename Scalar>
double score_sentence(const ModelParams<Scalar>& params, const ModelConfig& config, const TokenizerModel& tok,
                      std::string_view sentence, ScoreMode mode) {
  std::vector<std::int32_t> ids{TokenizerModel::kBos};
  const auto body = tok.encode(sentence);
  if (body.empty()) throw EvalError("cannot score an empty sentence");
  ids.insert(ids.end(), body.begin(), body.end());
  const auto n = static_cast<std::int64_t>(ids.size()) - 1;
  if (n > config.max_seq_len) throw EvalError("sentence exceeds the model context; truncation refused");
  TokenBatch in{1, n, std::vector<std::int32_t>(ids.begin(), ids.end() - 1)};
  const auto logits = forward(params, config, in);
  double total = 0.0;
  for (std::int64_t t = 0; t < n; ++t) {
    const auto row = logits.values.row(t).template cast<double>();
    const double m = row.maxCoeff();
    const double lse = m + std::log((row.array() - m).exp().sum());
    total += row(ids[t + 1]) - lse;
  }
  return mode == ScoreMode::kSum ? total : total / static_cast<double>(n);
}

namespace {

std::string require_string(const nlohmann::json& j, const char* key, std::size_t line) {
  if (!j.contains(key) || !j.at(key).is_string() || j.at(key).get<std::string>().empty()) {
    throw EvalError("line " + std::to_string(line) + ": missing or empty '" + key + "'");
  }
  return j.at(key).get<std::string>();
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

MinimalPairSuite load_suite(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw EvalError("cannot open suite " + path.string());
  MinimalPairSuite suite{path.stem().string(), {}};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw EvalError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    MinimalPair p{require_string(j, "sentence_good", lineno), require_string(j, "sentence_bad", lineno), ""};
    if (j.contains("phenomenon") && j.at("phenomenon").is_string()) p.phenomenon = j.at("phenomenon");
    else if (j.contains("UID") && j.at("UID").is_string()) p.phenomenon = j.at("UID");
    suite.pairs.push_back(std::move(p));
  }
  if (suite.pairs.empty()) throw EvalError("suite " + path.string() + " has no pairs");
  return suite;
}

void save_suite(const std::filesystem::path& path, const MinimalPairSuite& suite) {
  std::ostringstream out;
  for (const auto& p : suite.pairs) {
    nlohmann::json j = {{"sentence_good", p.sentence_good}, {"sentence_bad", p.sentence_bad}};
    if (!p.phenomenon.empty()) j["phenomenon"] = p.phenomenon;
    out << j.dump() << "\n";
  }
  write_file(path, out.str());
}

double pair_accuracy(std::span<const std::pair<double, double>> scores) {
  if (scores.empty()) throw EvalError("no pairs to score");
  double correct = 0.0;
  for (const auto& [good, bad] : scores) {
    if (good > bad) correct += 1.0;
    else if (good == bad) correct += 0.5;
  }
  return correct / static_cast<double>(scores.size());
}

template <typename Scalar>
double minimal_pair_accuracy(const ModelParams<Scalar>& params, const ModelConfig& config, const TokenizerModel& tok,
                             const MinimalPairSuite& suite, ScoreMode mode) {
  std::vector<std::pair<double, double>> scores;
  scores.reserve(suite.pairs.size());
  for (const auto& p : suite.pairs) {
    scores.emplace_back(score_sentence(params, config, tok, p.sentence_good, mode),
                        score_sentence(params, config, tok, p.sentence_bad, mode));
  }
  return pair_accuracy(scores);
}

std::optional<double> EvalReport::macro_average() const {
  if (suite_accuracy.empty()) return std::nullopt;
  double s = 0.0;
  for (const auto& [_, a] : suite_accuracy) s += a;
  return s / static_cast<double>(suite_accuracy.size());
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json j = {{"checkpoint_id", checkpoint_id}};
  j["test_loss"] = test_loss ? nlohmann::json(*test_loss) : nlohmann::json(nullptr);
  j["suite_accuracy"] = suite_accuracy;
  const auto macro = macro_average();
  j["macro_average"] = macro ? nlohmann::json(*macro) : nlohmann::json(nullptr);
  return j;
}

void append_report_csv(const std::filesystem::path& path, const EvalReport& report) {
  const bool fresh = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::app);
  if (!out) throw EvalError("cannot append to " + path.string());
  out.precision(10);
  if (fresh) {
    out << "checkpoint_id,test_loss";
    for (const auto& [name, _] : report.suite_accuracy) out << "," << csv_field("acc_" + name);
    out << ",macro_average\n";
  }
  out << csv_field(report.checkpoint_id) << ",";
  if (report.test_loss) out << *report.test_loss;
  for (const auto& [_, a] : report.suite_accuracy) out << "," << a;
  out << ",";
  if (auto m = report.macro_average()) out << *m;
  out << "\n";
}

#define DISTLAB_INSTANTIATE(S)                                                                                    \
  template double dataset_cross_entropy(const ModelParams<S>&, const ModelConfig&, const PackedDataset&,         \
                                        std::size_t);                                                             \
  template double score_sentence(const ModelParams<S>&, const ModelConfig&, const TokenizerModel&,              \
                                 std::string_view, ScoreMode);                                                    \
  template double minimal_pair_accuracy(const ModelParams<S>&, const ModelConfig&, const TokenizerModel&,       \
                                        const MinimalPairSuite&, ScoreMode);

DISTLAB_INSTANTIATE(float)
DISTLAB_INSTANTIATE(double)

#undef DISTLAB_INSTANTIATE

}  // namespace distlab
