#include "distlab/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>

#include "distlab/checkpoint.hpp"
#include "distlab/corpus.hpp"
#include "distlab/evaluation.hpp"
#include "distlab/finetune.hpp"
#include "distlab/hash.hpp"
#include "distlab/scaling.hpp"
#include "distlab/sweep.hpp"
#include "distlab/synthetic.hpp"
#include "distlab/tokenizer.hpp"
#include "distlab/training.hpp"

namespace distlab::cli {

nlohmann::json RunManifest::to_json() const {
  nlohmann::json j = {{"command", command},   {"config", config},         {"inputs", inputs},
                      {"outputs", outputs},   {"seed", seed},             {"started_at", started_at},
                      {"wall_seconds", wall_seconds}, {"status", status}};
  if (!error.empty()) j["error"] = error;
  return j;
}

void RunManifest::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  write_file(dir / "manifest.json", to_json().dump(2) + "\n");
}

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::int64_t jobs = 1;
  std::string out_dir;
};

// Overrides of TrainConfig fields from the command line.
struct TrainFlags {
  std::optional<double> lr, weight_decay, alpha, temperature, attention_dropout, max_grad_norm;
  std::optional<std::int64_t> epochs, batch_size, warmup;
  std::optional<std::string> schedule;

  void add(CLI::App* app, bool distill) {
    app->add_option("--lr", lr, "Peak learning rate");
    app->add_option("--epochs", epochs, "Number of epochs")->check(CLI::NonNegativeNumber);
    app->add_option("--batch-size", batch_size, "Sequences per batch")->check(CLI::PositiveNumber);
    app->add_option("--warmup-steps", warmup, "Linear warm-up steps")->check(CLI::NonNegativeNumber);
    app->add_option("--weight-decay", weight_decay, "Decoupled weight decay");
    app->add_option("--schedule", schedule, "cosine | linear | constant")
        ->check(CLI::IsMember({"cosine", "linear", "constant"}));
    app->add_option("--max-grad-norm", max_grad_norm, "Global gradient norm cap (0 disables)");
    app->add_option("--attention-dropout", attention_dropout, "Attention dropout probability");
    if (distill) {
      app->add_option("--alpha", alpha, "Weight of the hard-label cross-entropy term (default 0.5)");
      app->add_option("--temperature", temperature, "Softmax temperature of the soft targets (default 1.0)");
    }
  }

  void apply(TrainConfig& c) const {
    if (lr) c.max_learning_rate = *lr;
    if (epochs) c.n_epochs = *epochs;
    if (batch_size) c.batch_size = *batch_size;
    if (warmup) c.warmup_steps = *warmup;
    if (weight_decay) c.weight_decay = *weight_decay;
    if (schedule) c.schedule = parse_schedule(*schedule);
    if (max_grad_norm) c.max_grad_norm = *max_grad_norm > 0 ? std::optional<double>(*max_grad_norm) : std::nullopt;
    if (attention_dropout) c.attention_dropout = *attention_dropout;
    if (alpha) c.distill_alpha = *alpha;
    if (temperature) c.distill_temperature = *temperature;
  }
};

std::string now_iso8601() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream s;
  s << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return s.str();
}

nlohmann::json read_json(const std::filesystem::path& path) {
  try {
    return nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw UsageError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

nlohmann::json config_section(const nlohmann::json& config, const char* name) {
  if (config.contains(name)) return config.at(name);
  return nlohmann::json::object();
}

// Each path is a file or a directory whose *.txt files are read in name order.
std::vector<CorpusSource> corpus_sources(const std::vector<std::string>& paths) {
  std::vector<CorpusSource> out;
  for (const auto& p : paths) {
    if (std::filesystem::is_directory(p)) {
      std::vector<std::filesystem::path> files;
      for (const auto& e : std::filesystem::directory_iterator(p)) {
        if (e.is_regular_file() && e.path().extension() == ".txt") files.push_back(e.path());
      }
      std::sort(files.begin(), files.end());
      if (files.empty()) throw UsageError("no .txt files in " + p);
      for (const auto& f : files) out.push_back({f, f.stem().string()});
    } else {
      out.push_back({p, std::filesystem::path(p).stem().string()});
    }
  }
  return out;
}

void record_corpus(RunManifest& m, const std::vector<CorpusSource>& sources, const std::string& role) {
  for (const auto& s : sources) m.inputs[role + ":" + s.path.string()] = file_hash_hex(s.path);
}

ModelConfig resolve_model(const nlohmann::json& config, const std::string& path, const TokenizerModel& tok) {
  auto j = path.empty() ? config_section(config, "model") : read_json(path);
  if (!j.contains("vocab_size")) j["vocab_size"] = tok.vocab_size();
  auto model = j.get<ModelConfig>();
  model.validate();
  if (model.vocab_size != static_cast<std::int64_t>(tok.vocab_size())) {
    throw UsageError("model vocab_size " + std::to_string(model.vocab_size) + " differs from the tokenizer's " +
                     std::to_string(tok.vocab_size()));
  }
  return model;
}

TrainConfig resolve_train(const nlohmann::json& config, const TrainFlags& flags, const Globals& g) {
  auto train = config_section(config, "train").get<TrainConfig>();
  flags.apply(train);
  if (g.seed) train.seed = *g.seed;
  train.validate();
  return train;
}

nlohmann::json to_j(const TrainConfig& c) {
  nlohmann::json j;
  to_json(j, c);
  return j;
}

nlohmann::json to_j(const ModelConfig& c) {
  nlohmann::json j;
  to_json(j, c);
  return j;
}

struct Context {
  Globals g;
  nlohmann::json config = nlohmann::json::object();
  std::filesystem::path out;
  std::ostream* out_stream;
  RunManifest manifest;
};

// ---------------------------------------------------------------- commands

void cmd_synth(Context& ctx, const SyntheticOptions& opt) {
  auto o = opt;
  o.seed = ctx.g.seed.value_or(0);
  const auto listing = write_synthetic_dataset(ctx.out, o);
  ctx.manifest.config = {{"train_bytes", o.train_bytes},
                         {"test_bytes", o.test_bytes},
                         {"pairs_per_phenomenon", o.pairs_per_phenomenon},
                         {"classification_examples", o.classification_examples}};
  ctx.manifest.seed = o.seed;
  for (const auto& t : listing["train"]) ctx.manifest.outputs.push_back(t["path"]);
  ctx.manifest.outputs.push_back(listing["test"]);
  for (const auto& s : listing["suites"]) ctx.manifest.outputs.push_back(s);
  for (const auto& s : listing["tasks"]) ctx.manifest.outputs.push_back(s);
  *ctx.out_stream << "wrote synthetic dataset to " << ctx.out.string() << "\n";
}

void cmd_tokenizer_train(Context& ctx, const std::vector<std::string>& corpus, std::size_t vocab_size) {
  const auto sources = corpus_sources(corpus);
  record_corpus(ctx.manifest, sources, "corpus");
  const auto docs = load_documents(sources);
  const auto tok = bpe_train(join_documents(docs), vocab_size);
  const auto path = ctx.out / "tokenizer.json";
  tok.save(path);
  ctx.manifest.config = {{"vocab_size", vocab_size}, {"corpus", corpus}};
  ctx.manifest.outputs.push_back(path.string());
  ctx.manifest.config["tokenizer_hash"] = tok.hash();
  *ctx.out_stream << "tokenizer: " << tok.vocab_size() << " tokens, hash " << tok.hash() << "\n";
}

struct PretrainArgs {
  std::vector<std::string> corpus;
  std::string tokenizer;
  std::string model_config;
  double train_fraction = 0.95;
  std::uint64_t split_seed = 0;
  std::vector<std::string> teachers;
  TrainFlags flags;
};

void cmd_train(Context& ctx, const PretrainArgs& a, bool distill) {
  const auto tok = TokenizerModel::load(a.tokenizer);
  ctx.manifest.inputs["tokenizer:" + a.tokenizer] = tok.hash();
  const auto sources = corpus_sources(a.corpus);
  record_corpus(ctx.manifest, sources, "corpus");

  TeacherEnsemble ensemble;
  std::vector<std::string> teacher_hashes;
  for (const auto& path : a.teachers) {
    Checkpoint t;
    try {
      t = load_checkpoint(path);
    } catch (const CheckpointError& e) {
      throw std::runtime_error("unreadable teacher checkpoint " + path + ": " + e.what());
    }
    if (t.tokenizer_hash != tok.hash()) throw std::runtime_error("teacher " + path + " uses a different tokenizer");
    const auto h = file_hash_hex(path);
    ctx.manifest.inputs["teacher:" + path] = h;
    teacher_hashes.push_back(h);
    ensemble.members.push_back({t.config, std::move(t.params)});
  }
  if (distill) ensemble.validate();

  ModelConfig model;
  if (a.model_config.empty() && !ctx.config.contains("model") && distill) {
    model = ensemble.members.front().config;
  } else {
    model = resolve_model(ctx.config, a.model_config, tok);
  }
  const auto train = resolve_train(ctx.config, a.flags, ctx.g);

  CorpusSpec spec{sources, a.train_fraction, 1.0 - a.train_fraction, a.split_seed};
  const auto split = load_and_split(spec);
  const auto train_data = pack_documents(tok, split.train, model);
  const auto val_data = pack_documents(tok, split.validation, model);
  if (val_data.count == 0) throw std::runtime_error("validation split is shorter than one context window");

  std::filesystem::create_directories(ctx.out);
  std::ofstream metrics_file(ctx.out / "metrics.csv");
  MetricsCsv metrics(metrics_file);
  Trainer trainer(model, train, train_data, &val_data, distill ? &ensemble : nullptr);
  trainer.set_metrics(&metrics);
  trainer.run();

  Checkpoint ckpt;
  ckpt.config = model;
  ckpt.params = trainer.params();
  ckpt.tokenizer_hash = tok.hash();
  ckpt.metadata = {{"role", distill ? "student" : "teacher"},
                   {"train_config", to_j(train)},
                   {"seed", train.seed},
                   {"epochs_done", trainer.epochs_done()},
                   {"steps", trainer.steps_done()},
                   {"final_val_loss", trainer.history().epochs.empty() ? 0.0 : trainer.history().epochs.back().val_loss}};
  if (distill) ckpt.metadata["teachers"] = teacher_hashes;
  const auto ckpt_path = ctx.out / "model.ckpt";
  save_checkpoint(ckpt_path, ckpt);
  write_file(ctx.out / "split.json", split_manifest(spec, split).dump(2) + "\n");

  ctx.manifest.seed = train.seed;
  ctx.manifest.config = {{"model", to_j(model)}, {"train", to_j(train)}, {"train_fraction", a.train_fraction},
                         {"split_seed", a.split_seed}};
  if (distill) ctx.manifest.config["teachers"] = a.teachers;
  ctx.manifest.outputs = {ckpt_path.string(), (ctx.out / "metrics.csv").string(), (ctx.out / "split.json").string()};
  *ctx.out_stream << (distill ? "student" : "teacher") << " trained: " << trainer.steps_done()
                  << " steps, validation loss " << ckpt.metadata["final_val_loss"].get<double>() << "\n";
}

struct EvalArgs {
  std::string checkpoint, tokenizer, report_csv, id;
  std::vector<std::string> test_corpus, suites;
  std::string score_mode = "sum";
};

void cmd_eval(Context& ctx, const EvalArgs& a) {
  if (a.test_corpus.empty() && a.suites.empty()) throw UsageError("eval needs --test-corpus and/or --suite");
  const auto ckpt = load_checkpoint(a.checkpoint);
  const auto tok = TokenizerModel::load(a.tokenizer);
  if (ckpt.tokenizer_hash != tok.hash()) throw EvalError("tokenizer does not match the checkpoint");
  ctx.manifest.inputs["checkpoint:" + a.checkpoint] = file_hash_hex(a.checkpoint);
  ctx.manifest.inputs["tokenizer:" + a.tokenizer] = tok.hash();
  const auto mode = a.score_mode == "mean" ? ScoreMode::kMeanPerToken : ScoreMode::kSum;

  EvalReport report;
  report.checkpoint_id = a.id.empty() ? a.checkpoint : a.id;
  if (!a.test_corpus.empty()) {
    const auto sources = corpus_sources(a.test_corpus);
    record_corpus(ctx.manifest, sources, "test_corpus");
    report.test_loss = eval_loss(ckpt, tok, load_documents(sources));
  }
  for (const auto& path : a.suites) {
    ctx.manifest.inputs["suite:" + path] = file_hash_hex(path);
    const auto suite = load_suite(path);
    report.suite_accuracy[suite.name] = minimal_pair_accuracy(ckpt.params, ckpt.config, tok, suite, mode);
  }
  const auto path = ctx.out / "report.json";
  std::filesystem::create_directories(ctx.out);
  write_file(path, report.to_json().dump(2) + "\n");
  ctx.manifest.outputs.push_back(path.string());
  if (!a.report_csv.empty()) {
    append_report_csv(a.report_csv, report);
    ctx.manifest.outputs.push_back(a.report_csv);
  }
  ctx.manifest.config = {{"score_mode", a.score_mode}, {"model", to_j(ckpt.config)}};
  *ctx.out_stream << report.to_json().dump() << "\n";
}

struct SweepArgs {
  std::vector<std::string> corpus, test_corpus, suites;
  std::string tokenizer, model_config, plan;
  double train_fraction = 0.95;
  std::uint64_t split_seed = 0;
  std::optional<std::int64_t> trials, eta, rungs, min_epochs;
  bool resume = false;
  bool evaluate_stopped = false;
};

void cmd_sweep(Context& ctx, const SweepArgs& a) {
  const auto tok = TokenizerModel::load(a.tokenizer);
  ctx.manifest.inputs["tokenizer:" + a.tokenizer] = tok.hash();
  const auto model = resolve_model(ctx.config, a.model_config, tok);
  auto plan = plan_from_json(a.plan.empty() ? config_section(ctx.config, "sweep") : read_json(a.plan));
  if (a.trials) plan.n_trials = *a.trials;
  if (a.eta) plan.eta = *a.eta;
  if (a.rungs) plan.n_rungs = *a.rungs;
  if (a.min_epochs) plan.min_epochs = *a.min_epochs;
  if (a.evaluate_stopped) plan.evaluate_stopped = true;
  if (ctx.g.seed) plan.seed = *ctx.g.seed;
  plan.jobs = ctx.g.jobs;
  try {
    plan.validate();
  } catch (const SweepError& e) {
    throw UsageError(e.what());
  }

  const auto sources = corpus_sources(a.corpus);
  record_corpus(ctx.manifest, sources, "corpus");
  CorpusSpec spec{sources, a.train_fraction, 1.0 - a.train_fraction, a.split_seed};
  const auto split = load_and_split(spec);
  const auto train_data = pack_documents(tok, split.train, model);
  const auto val_data = pack_documents(tok, split.validation, model);
  std::optional<PackedDataset> test_data;
  SweepData data{&train_data, &val_data, nullptr, &tok, {}};
  if (!a.test_corpus.empty()) {
    const auto test_sources = corpus_sources(a.test_corpus);
    record_corpus(ctx.manifest, test_sources, "test_corpus");
    test_data = pack_documents(tok, load_documents(test_sources), model);
    data.test = &*test_data;
  }
  for (const auto& s : a.suites) {
    ctx.manifest.inputs["suite:" + s] = file_hash_hex(s);
    data.suites.push_back(load_suite(s));
  }

  std::filesystem::create_directories(ctx.out);
  const auto records_path = ctx.out / "records.jsonl";
  const auto result = run_sweep(data, model, plan, records_path, a.resume);
  const auto schedule = halving_schedule(plan.n_trials, plan.eta, plan.n_rungs);
  nlohmann::json decisions = {{"survivors", schedule}, {"promotions", result.promotions}};
  write_file(ctx.out / "promotions.json", decisions.dump(2) + "\n");

  ctx.manifest.seed = plan.seed;
  ctx.manifest.config = {{"model", to_j(model)}, {"plan", plan_to_json(plan)}, {"train_fraction", a.train_fraction},
                         {"split_seed", a.split_seed}};
  ctx.manifest.outputs = {records_path.string(), (ctx.out / "promotions.json").string()};
  std::size_t completed = 0;
  for (const auto& r : result.records) completed += r.completed();
  *ctx.out_stream << "sweep: survivors per rung";
  for (auto s : schedule) *ctx.out_stream << ' ' << s;
  *ctx.out_stream << "; " << completed << " completed trials\n";
}

void cmd_correlate(Context& ctx, const std::string& records, bool include_stopped) {
  ctx.manifest.inputs["records:" + records] = file_hash_hex(records);
  const auto recs = load_records(records);
  const auto report = correlate_loss_and_scores(recs, include_stopped);
  std::filesystem::create_directories(ctx.out);
  write_file(ctx.out / "correlation.csv", report.to_csv());
  write_file(ctx.out / "correlation.json", report.to_json().dump(2) + "\n");
  ctx.manifest.config = {{"include_stopped", include_stopped}};
  ctx.manifest.outputs = {(ctx.out / "correlation.csv").string(), (ctx.out / "correlation.json").string()};
  *ctx.out_stream << report.to_json().dump() << "\n";
}

struct ScalingArgs {
  std::vector<std::string> corpus, test_corpus, models;
  std::string tokenizer;
  std::vector<std::size_t> subset_words;
  TrainFlags flags;
};

void cmd_scaling(Context& ctx, const ScalingArgs& a) {
  const auto tok = TokenizerModel::load(a.tokenizer);
  ctx.manifest.inputs["tokenizer:" + a.tokenizer] = tok.hash();
  const auto section = config_section(ctx.config, "scaling");
  ScalingOptions opt;
  for (const auto& spec : a.models) {
    const auto eq = spec.find('=');
    const auto name = eq == std::string::npos ? std::filesystem::path(spec).stem().string() : spec.substr(0, eq);
    const auto path = eq == std::string::npos ? spec : spec.substr(eq + 1);
    if (!std::filesystem::exists(path)) throw UsageError("model config not found: " + path);
    opt.models.push_back({name, resolve_model(ctx.config, path, tok)});
  }
  if (opt.models.empty() && section.contains("models")) {
    for (const auto& m : section["models"]) {
      auto j = m.at("config");
      if (!j.contains("vocab_size")) j["vocab_size"] = tok.vocab_size();
      opt.models.push_back({m.at("name").get<std::string>(), j.get<ModelConfig>()});
    }
  }
  if (opt.models.size() < 2) throw UsageError("scaling needs at least two --model configurations");
  opt.subset_words = a.subset_words;
  if (opt.subset_words.empty() && section.contains("subset_words")) {
    opt.subset_words = section["subset_words"].get<std::vector<std::size_t>>();
  }
  if (opt.subset_words.empty()) throw UsageError("scaling needs --subset-words");
  opt.train = resolve_train(ctx.config, a.flags, ctx.g);
  opt.seed = opt.train.seed;
  opt.jobs = ctx.g.jobs;

  const auto sources = corpus_sources(a.corpus);
  const auto test_sources = corpus_sources(a.test_corpus);
  record_corpus(ctx.manifest, sources, "corpus");
  record_corpus(ctx.manifest, test_sources, "test_corpus");
  const auto train_docs = load_documents(sources);
  const auto test_docs = load_documents(test_sources);
  std::vector<ScalingRow> rows;
  try {
    rows = run_scaling(tok, train_docs, test_docs, opt);
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
  std::filesystem::create_directories(ctx.out);
  write_file(ctx.out / "scaling.csv", scaling_csv(rows));

  ctx.manifest.seed = opt.seed;
  nlohmann::json models = nlohmann::json::array();
  for (const auto& m : opt.models) models.push_back({{"name", m.name}, {"config", to_j(m.config)}});
  ctx.manifest.config = {{"models", models}, {"subset_words", opt.subset_words}, {"train", to_j(opt.train)}};
  ctx.manifest.outputs = {(ctx.out / "scaling.csv").string()};
  *ctx.out_stream << scaling_csv(rows);
}

struct FinetuneArgs {
  std::string checkpoint, tokenizer, tasks, task, train, eval;
  std::optional<double> lr;
  std::optional<std::int64_t> epochs, batch_size, warmup;
};

void cmd_finetune(Context& ctx, const FinetuneArgs& a) {
  const auto base = load_checkpoint(a.checkpoint);
  const auto tok = TokenizerModel::load(a.tokenizer);
  ctx.manifest.inputs["checkpoint:" + a.checkpoint] = file_hash_hex(a.checkpoint);
  ctx.manifest.inputs["tokenizer:" + a.tokenizer] = tok.hash();
  ctx.manifest.inputs["tasks:" + a.tasks] = file_hash_hex(a.tasks);
  const auto table = load_task_configs(a.tasks);
  FineTuneTaskConfig task;
  try {
    task = find_task(table, a.task);
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
  if (a.lr) task.max_learning_rate = *a.lr;
  if (a.epochs) task.n_epochs = *a.epochs;
  if (a.batch_size) task.batch_size = *a.batch_size;
  if (a.warmup) task.warmup_steps = *a.warmup;
  if (ctx.g.seed) task.seed = *ctx.g.seed;

  const auto train = load_labeled(a.train);
  ctx.manifest.inputs["train:" + a.train] = file_hash_hex(a.train);
  std::vector<LabeledExample> eval;
  if (!a.eval.empty()) {
    eval = load_labeled(a.eval);
    ctx.manifest.inputs["eval:" + a.eval] = file_hash_hex(a.eval);
  }
  const auto result = fine_tune_classifier(base, tok, train, eval, task);
  std::filesystem::create_directories(ctx.out);
  save_checkpoint(ctx.out / "finetuned.ckpt", result.checkpoint);
  nlohmann::json summary = {{"task", task}, {"train_accuracy", result.train_accuracy}, {"epoch_losses", result.epoch_losses}};
  summary["eval_accuracy"] = result.eval_accuracy ? nlohmann::json(*result.eval_accuracy) : nlohmann::json(nullptr);
  write_file(ctx.out / "finetune.json", summary.dump(2) + "\n");
  ctx.manifest.seed = task.seed;
  ctx.manifest.config = {{"task", task}, {"model", to_j(base.config)}};
  ctx.manifest.outputs = {(ctx.out / "finetuned.ckpt").string(), (ctx.out / "finetune.json").string()};
  *ctx.out_stream << summary.dump() << "\n";
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Teacher pretraining, ensemble distillation and evaluation of small Llama-style language models",
               "distlab"};
  app.require_subcommand(1);
  app.fallthrough(true);

  Globals g;
  app.add_option("--config", g.config_path, "JSON file with model/train/sweep/scaling sections")
      ->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Master seed for every random stream");
  app.add_option("--jobs", g.jobs, "Parallel trials or runs")->check(CLI::PositiveNumber);
  app.add_option("--out-dir", g.out_dir, "Output directory (default runs/<command>)");

  SyntheticOptions synth;
  auto* synth_cmd = app.add_subcommand("synth-data", "Generate the synthetic grammar corpus, suites and task");
  synth_cmd->add_option("--train-bytes", synth.train_bytes, "Approximate training text size");
  synth_cmd->add_option("--test-bytes", synth.test_bytes, "Approximate test text size");
  synth_cmd->add_option("--pairs", synth.pairs_per_phenomenon, "Minimal pairs per phenomenon");
  synth_cmd->add_option("--examples", synth.classification_examples, "Acceptability examples");

  std::vector<std::string> tok_corpus;
  std::size_t vocab_size = 16000;
  auto* tok_cmd = app.add_subcommand("tokenizer-train", "Train a byte-level BPE tokenizer");
  tok_cmd->add_option("--corpus", tok_corpus, "Corpus files or directories")->required()->check(CLI::ExistingPath);
  tok_cmd->add_option("--vocab-size", vocab_size, "Target vocabulary size")->capture_default_str();

  PretrainArgs pre, dis;
  auto add_train_inputs = [](CLI::App* c, PretrainArgs& a) {
    c->add_option("--corpus", a.corpus, "Corpus files or directories")->required()->check(CLI::ExistingPath);
    c->add_option("--tokenizer", a.tokenizer, "Tokenizer JSON")->required()->check(CLI::ExistingFile);
    c->add_option("--model-config", a.model_config, "Model config JSON")->check(CLI::ExistingFile);
    c->add_option("--train-fraction", a.train_fraction, "Share of characters used for training")
        ->check(CLI::Range(0.0, 1.0));
    c->add_option("--split-seed", a.split_seed, "Seed of the train/validation document shuffle");
  };
  auto* pre_cmd = app.add_subcommand("pretrain", "Pretrain a teacher with cross-entropy");
  add_train_inputs(pre_cmd, pre);
  pre.flags.add(pre_cmd, false);
  auto* dis_cmd = app.add_subcommand("distill", "Pretrain a student on the mean logits of teacher checkpoints");
  add_train_inputs(dis_cmd, dis);
  dis_cmd->add_option("--teacher", dis.teachers, "Teacher checkpoint (repeat for an ensemble)")->required();
  dis.flags.add(dis_cmd, true);

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Held-out loss and minimal-pair accuracy of a checkpoint");
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "Checkpoint file")->required();
  eval_cmd->add_option("--tokenizer", ev.tokenizer, "Tokenizer JSON")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--test-corpus", ev.test_corpus, "Held-out corpus files")->check(CLI::ExistingPath);
  eval_cmd->add_option("--suite", ev.suites, "Minimal-pair suite (JSON lines)")->check(CLI::ExistingFile);
  eval_cmd->add_option("--score-mode", ev.score_mode, "sum | mean")->check(CLI::IsMember({"sum", "mean"}));
  eval_cmd->add_option("--report-csv", ev.report_csv, "Append a result row to this CSV");
  eval_cmd->add_option("--id", ev.id, "Identifier written to the report");

  SweepArgs sw;
  auto* sweep_cmd = app.add_subcommand("sweep", "Random-sampling successive-halving hyperparameter sweep");
  sweep_cmd->add_option("--corpus", sw.corpus, "Corpus files or directories")->required()->check(CLI::ExistingPath);
  sweep_cmd->add_option("--tokenizer", sw.tokenizer, "Tokenizer JSON")->required()->check(CLI::ExistingFile);
  sweep_cmd->add_option("--model-config", sw.model_config, "Model config JSON")->check(CLI::ExistingFile);
  sweep_cmd->add_option("--plan", sw.plan, "Sweep plan JSON (priors, budgets)")->check(CLI::ExistingFile);
  sweep_cmd->add_option("--trials", sw.trials, "Number of sampled trials");
  sweep_cmd->add_option("--eta", sw.eta, "Halving rate");
  sweep_cmd->add_option("--rungs", sw.rungs, "Number of rungs");
  sweep_cmd->add_option("--min-epochs", sw.min_epochs, "Epoch budget of the first rung");
  sweep_cmd->add_option("--test-corpus", sw.test_corpus, "Held-out corpus for completed trials")
      ->check(CLI::ExistingPath);
  sweep_cmd->add_option("--suite", sw.suites, "Minimal-pair suites for completed trials")->check(CLI::ExistingFile);
  sweep_cmd->add_option("--train-fraction", sw.train_fraction, "Share of characters used for training");
  sweep_cmd->add_option("--split-seed", sw.split_seed, "Seed of the train/validation document shuffle");
  sweep_cmd->add_flag("--resume", sw.resume, "Continue from an existing records file");
  sweep_cmd->add_flag("--evaluate-stopped", sw.evaluate_stopped, "Also score eliminated trials");

  std::string records;
  bool include_stopped = false;
  auto* corr_cmd = app.add_subcommand("correlate", "Loss/score regression over sweep records");
  corr_cmd->add_option("--records", records, "Sweep records (JSON lines)")->required()->check(CLI::ExistingFile);
  corr_cmd->add_flag("--include-stopped", include_stopped, "Include trials eliminated before the last rung");

  ScalingArgs sc;
  auto* scale_cmd = app.add_subcommand("scaling", "Test loss against training-subset size for several models");
  scale_cmd->add_option("--corpus", sc.corpus, "Training corpus")->required()->check(CLI::ExistingPath);
  scale_cmd->add_option("--test-corpus", sc.test_corpus, "Held-out corpus")->required()->check(CLI::ExistingPath);
  scale_cmd->add_option("--tokenizer", sc.tokenizer, "Tokenizer JSON")->required()->check(CLI::ExistingFile);
  scale_cmd->add_option("--model", sc.models, "name=model_config.json (repeat)");
  scale_cmd->add_option("--subset-words", sc.subset_words, "Subset sizes in words")->delimiter(',');
  sc.flags.add(scale_cmd, false);

  FinetuneArgs ft;
  auto* ft_cmd = app.add_subcommand("finetune", "Fine-tune a checkpoint with a classification head");
  ft_cmd->add_option("--checkpoint", ft.checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  ft_cmd->add_option("--tokenizer", ft.tokenizer, "Tokenizer JSON")->required()->check(CLI::ExistingFile);
  ft_cmd->add_option("--tasks", ft.tasks, "Task table JSON")->required()->check(CLI::ExistingFile);
  ft_cmd->add_option("--task", ft.task, "Task name in the table")->required();
  ft_cmd->add_option("--train", ft.train, "Labeled training examples (JSON lines)")->required()->check(CLI::ExistingFile);
  ft_cmd->add_option("--eval", ft.eval, "Labeled evaluation examples (JSON lines)")->check(CLI::ExistingFile);
  ft_cmd->add_option("--lr", ft.lr, "Override the task learning rate");
  ft_cmd->add_option("--epochs", ft.epochs, "Override the task epoch count");
  ft_cmd->add_option("--batch-size", ft.batch_size, "Override the task batch size");
  ft_cmd->add_option("--warmup-steps", ft.warmup, "Override the task warm-up");

  std::vector<std::string> argv_store{"distlab"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& s : argv_store) argv.push_back(s.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsageError;
  }

  CLI::App* cmd = app.get_subcommands().front();
  Context ctx;
  ctx.g = g;
  ctx.out_stream = &out;
  ctx.out = g.out_dir.empty() ? std::filesystem::path("runs") / cmd->get_name() : std::filesystem::path(g.out_dir);
  ctx.manifest.command = cmd->get_name();
  ctx.manifest.started_at = now_iso8601();
  ctx.manifest.seed = g.seed.value_or(0);
  const auto t0 = std::chrono::steady_clock::now();

  int code = kExitOk;
  try {
    if (!g.config_path.empty()) {
      ctx.config = read_json(g.config_path);
      ctx.manifest.inputs["config:" + g.config_path] = file_hash_hex(g.config_path);
    }
    const auto& name = cmd->get_name();
    if (name == "synth-data") cmd_synth(ctx, synth);
    else if (name == "tokenizer-train") cmd_tokenizer_train(ctx, tok_corpus, vocab_size);
    else if (name == "pretrain") cmd_train(ctx, pre, false);
    else if (name == "distill") cmd_train(ctx, dis, true);
    else if (name == "eval") cmd_eval(ctx, ev);
    else if (name == "sweep") cmd_sweep(ctx, sw);
    else if (name == "correlate") cmd_correlate(ctx, records, include_stopped);
    else if (name == "scaling") cmd_scaling(ctx, sc);
    else if (name == "finetune") cmd_finetune(ctx, ft);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    ctx.manifest.status = "usage_error";
    ctx.manifest.error = e.what();
    code = kExitUsageError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    ctx.manifest.status = "failed";
    ctx.manifest.error = e.what();
    code = kExitRuntimeError;
  }
  ctx.manifest.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  try {
    ctx.manifest.save(ctx.out);
  } catch (const std::exception& e) {
    err << "error: cannot write manifest: " << e.what() << "\n";
    if (code == kExitOk) code = kExitRuntimeError;
  }
  return code;
}

}  // namespace distlab::cli
