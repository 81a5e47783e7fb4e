#include "distlab/finetune.hpp"

#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "distlab/corpus.hpp"
#include "distlab/evaluation.hpp"
#include "distlab/losses.hpp"
#include "distlab/optim.hpp"
#include "distlab/random.hpp"

namespace distlab {

void FineTuneTaskConfig::validate() const {
  if (task.empty()) throw ConfigError("fine-tuning task needs a name");
  if (!(max_learning_rate > 0.0)) throw ConfigError(task + ": max_learning_rate must be positive");
  if (batch_size < 1) throw ConfigError(task + ": batch_size must be positive");
  if (n_epochs < 0) throw ConfigError(task + ": n_epochs must be non-negative");
  if (weight_decay < 0.0) throw ConfigError(task + ": weight_decay must be non-negative");
  if (warmup_steps < 0) throw ConfigError(task + ": warmup_steps must be non-negative");
  if (n_classes < 2) throw ConfigError(task + ": n_classes must be at least 2");
}

TrainConfig FineTuneTaskConfig::as_train_config() const {
  TrainConfig c;
  c.max_learning_rate = max_learning_rate;
  c.batch_size = batch_size;
  c.n_epochs = std::max<std::int64_t>(n_epochs, 1);
  c.weight_decay = weight_decay;
  c.schedule = schedule;
  c.warmup_steps = warmup_steps;
  c.seed = seed;
  return c;
}

void to_json(nlohmann::json& j, const FineTuneTaskConfig& c) {
  j = {{"task", c.task},
       {"max_learning_rate", c.max_learning_rate},
       {"batch_size", c.batch_size},
       {"n_epochs", c.n_epochs},
       {"weight_decay", c.weight_decay},
       {"schedule", to_string(c.schedule)},
       {"warmup_steps", c.warmup_steps},
       {"n_classes", c.n_classes},
       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, FineTuneTaskConfig& c) {
  static const std::set<std::string> known{"task",         "max_learning_rate", "batch_size", "n_epochs", "weight_decay",
                                           "schedule",     "warmup_steps",      "n_classes",  "seed"};
  for (const auto& [k, v] : j.items()) {
    if (!known.count(k)) throw ConfigError("unknown fine-tuning key: " + k);
  }
  c = FineTuneTaskConfig{};
  c.task = j.at("task").get<std::string>();
  c.max_learning_rate = j.value("max_learning_rate", c.max_learning_rate);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.n_epochs = j.value("n_epochs", c.n_epochs);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  if (j.contains("schedule")) c.schedule = parse_schedule(j.at("schedule").get<std::string>());
  c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
  c.n_classes = j.value("n_classes", c.n_classes);
  c.seed = j.value("seed", c.seed);
  c.validate();
}

std::vector<FineTuneTaskConfig> parse_task_configs(const nlohmann::json& j) {
  if (j.is_object() && !j.contains("tasks")) throw ConfigError("task table object needs a 'tasks' array");
  const auto& rows = j.is_object() ? j.at("tasks") : j;
  if (!rows.is_array()) throw ConfigError("task table must be an array");
  std::vector<FineTuneTaskConfig> out;
  std::set<std::string> names;
  for (const auto& row : rows) {
    auto c = row.get<FineTuneTaskConfig>();
    if (!names.insert(c.task).second) throw ConfigError("duplicate task " + c.task);
    out.push_back(std::move(c));
  }
  return out;
}

std::vector<FineTuneTaskConfig> load_task_configs(const std::filesystem::path& path) {
  try {
    return parse_task_configs(nlohmann::json::parse(read_file(path)));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("malformed task table " + path.string() + ": " + e.what());
  }
}

const FineTuneTaskConfig& find_task(std::span<const FineTuneTaskConfig> tasks, const std::string& name) {
  for (const auto& t : tasks) {
    if (t.task == name) return t;
  }
  throw ConfigError("no fine-tuning task named " + name);
}

std::vector<LabeledExample> load_labeled(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  std::vector<LabeledExample> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      out.push_back({j.at("text").get<std::string>(), j.at("label").get<std::int64_t>()});
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void save_labeled(const std::filesystem::path& path, std::span<const LabeledExample> examples) {
  std::string out;
  for (const auto& e : examples) out += nlohmann::json{{"text", e.text}, {"label", e.label}}.dump() + "\n";
  write_file(path, out);
}

ClassifierHead ClassifierHead::init(std::int64_t d_model, std::int64_t n_classes, std::uint64_t seed) {
  ClassifierHead h{Matrix<float>(d_model, n_classes), Matrix<float>::Zero(1, n_classes)};
  Rng rng(derive_seed(seed, "classifier_head"));
  for (Eigen::Index i = 0; i < h.weight.size(); ++i) h.weight.data()[i] = static_cast<float>(rng.truncated_normal(0.02));
  return h;
}

nlohmann::json ClassifierHead::to_json() const {
  std::vector<float> w(weight.data(), weight.data() + weight.size());
  std::vector<float> b(bias.data(), bias.data() + bias.size());
  return {{"rows", weight.rows()}, {"cols", weight.cols()}, {"weight", w}, {"bias", b}};
}

ClassifierHead ClassifierHead::from_json(const nlohmann::json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto w = j.at("weight").get<std::vector<float>>();
  const auto b = j.at("bias").get<std::vector<float>>();
  if (static_cast<Eigen::Index>(w.size()) != rows * cols || static_cast<Eigen::Index>(b.size()) != cols) {
    throw ConfigError("classifier head has inconsistent shape");
  }
  ClassifierHead h{Matrix<float>(rows, cols), Matrix<float>(1, cols)};
  std::copy(w.begin(), w.end(), h.weight.data());
  std::copy(b.begin(), b.end(), h.bias.data());
  return h;
}

namespace {

TokenBatch example_tokens(const TokenizerModel& tok, const ModelConfig& config, std::string_view text) {
  TokenBatch b;
  b.ids.push_back(TokenizerModel::kBos);
  const auto ids = tok.encode(text);
  b.ids.insert(b.ids.end(), ids.begin(), ids.end());
  if (static_cast<std::int64_t>(b.ids.size()) > config.max_seq_len) {
    throw EvalError("example of " + std::to_string(b.ids.size()) + " tokens exceeds the context of " +
                    std::to_string(config.max_seq_len));
  }
  b.batch = 1;
  b.seq_len = static_cast<std::int64_t>(b.ids.size());
  return b;
}

}  // namespace

Vector<float> classify_logits(const ModelParams<float>& params, const ModelConfig& config, const ClassifierHead& head,
                              const TokenizerModel& tok, std::string_view text) {
  const auto tokens = example_tokens(tok, config, text);
  const auto hidden = forward_hidden(params, config, tokens);
  return (hidden.row(hidden.rows() - 1) * head.weight + head.bias).transpose();
}

double classifier_accuracy(const ModelParams<float>& params, const ModelConfig& config, const ClassifierHead& head,
                           const TokenizerModel& tok, std::span<const LabeledExample> examples) {
  if (examples.empty()) throw ConfigError("no examples to score");
  std::size_t correct = 0;
  for (const auto& e : examples) {
    const auto z = classify_logits(params, config, head, tok, e.text);
    Eigen::Index arg = 0;
    z.maxCoeff(&arg);
    if (arg == e.label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(examples.size());
}

FineTuneResult fine_tune_classifier(const Checkpoint& base, const TokenizerModel& tok,
                                    std::span<const LabeledExample> train, std::span<const LabeledExample> eval,
                                    const FineTuneTaskConfig& task) {
  task.validate();
  if (base.tokenizer_hash != tok.hash()) throw EvalError("tokenizer does not match the checkpoint");
  if (train.empty()) throw ConfigError("empty fine-tuning set");
  std::set<std::int64_t> classes;
  for (const auto& e : train) {
    if (e.label < 0 || e.label >= task.n_classes) {
      throw ConfigError("label " + std::to_string(e.label) + " outside [0, " + std::to_string(task.n_classes) + ")");
    }
    classes.insert(e.label);
  }
  for (const auto& e : eval) {
    if (e.label < 0 || e.label >= task.n_classes) throw ConfigError("evaluation label out of range");
  }
  if (classes.size() < 2) throw ConfigError("fine-tuning set contains a single class");

  const auto& config = base.config;
  FineTuneResult result;
  result.checkpoint = base;
  auto& params = result.checkpoint.params;
  result.head = ClassifierHead::init(config.d_model, task.n_classes, task.seed);
  auto& head = result.head;

  const auto tc = task.as_train_config();
  const auto B = static_cast<std::size_t>(task.batch_size);
  const std::int64_t steps_per_epoch = static_cast<std::int64_t>((train.size() + B - 1) / B);
  const std::int64_t total = steps_per_epoch * task.n_epochs;
  if (task.n_epochs > 0 && task.warmup_steps > total) {
    throw ConfigError(task.task + ": warmup_steps exceeds the " + std::to_string(total) + " fine-tuning steps");
  }

  std::vector<TokenBatch> encoded;
  encoded.reserve(train.size());
  for (const auto& e : train) encoded.push_back(example_tokens(tok, config, e.text));

  auto adam = AdamState<float>::zeros(config);
  Matrix<float> hw_m = Matrix<float>::Zero(head.weight.rows(), head.weight.cols()), hw_v = hw_m;
  Matrix<float> hb_m = Matrix<float>::Zero(1, head.bias.cols()), hb_v = hb_m;

  std::int64_t step = 0;
  for (std::int64_t epoch = 0; epoch < task.n_epochs; ++epoch) {
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(task.seed, "data_order", static_cast<std::uint64_t>(epoch)));
    rng.shuffle(order);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += B) {
      const auto end = std::min(order.size(), start + B);
      const auto n = static_cast<float>(end - start);
      auto grads = ModelParams<float>::zeros(config);
      Matrix<float> g_w = Matrix<float>::Zero(head.weight.rows(), head.weight.cols());
      Matrix<float> g_b = Matrix<float>::Zero(1, head.bias.cols());
      for (std::size_t k = start; k < end; ++k) {
        const auto i = order[k];
        ForwardCache<float> cache;
        const auto hidden = forward_hidden(params, config, encoded[i], &cache);
        const Matrix<float> pooled = hidden.row(hidden.rows() - 1);
        const Vector<float> z = (pooled * head.weight + head.bias).transpose();
        const auto p = softmax_with_temperature<float>(z, 1.0);
        epoch_loss -= std::log(std::max(static_cast<double>(p(train[i].label)), 1e-30));
        Matrix<float> dz = p.transpose() / n;
        dz(0, train[i].label) -= 1.0f / n;
        g_w.noalias() += pooled.transpose() * dz;
        g_b += dz;
        Matrix<float> d_hidden = Matrix<float>::Zero(hidden.rows(), hidden.cols());
        d_hidden.row(hidden.rows() - 1) = dz * head.weight.transpose();
        backward_hidden(params, config, cache, d_hidden, grads);
      }
      ++step;
      const double norm2 = std::pow(global_grad_norm(grads), 2) + g_w.squaredNorm() + g_b.squaredNorm();
      const double norm = std::sqrt(norm2);
      if (!std::isfinite(norm)) throw ModelError("non-finite fine-tuning gradient at step " + std::to_string(step));
      if (tc.max_grad_norm && norm > *tc.max_grad_norm) {
        const auto scale = static_cast<float>(*tc.max_grad_norm / norm);
        for (auto& t : named_tensors(grads)) *t.tensor *= scale;
        g_w *= scale;
        g_b *= scale;
      }
      const double lr = lr_at_step(tc, step, total);
      adamw_step(params, grads, adam, lr, tc);
      adamw_update(head.weight, g_w, hw_m, hw_v, step, lr, tc, true);
      adamw_update(head.bias, g_b, hb_m, hb_v, step, lr, tc, false);
    }
    result.epoch_losses.push_back(epoch_loss / static_cast<double>(train.size()));
  }

  result.train_accuracy = classifier_accuracy(params, config, head, tok, train);
  if (!eval.empty()) result.eval_accuracy = classifier_accuracy(params, config, head, tok, eval);
  result.checkpoint.metadata["fine_tune"] = {{"task", task}, {"steps", step}, {"train_accuracy", result.train_accuracy}};
  if (result.eval_accuracy) result.checkpoint.metadata["fine_tune"]["eval_accuracy"] = *result.eval_accuracy;
  result.checkpoint.metadata["classifier_head"] = head.to_json();
  return result;
}

}  // namespace distlab
