#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "distlab/checkpoint.hpp"
#include "distlab/cli.hpp"
#include "distlab/corpus.hpp"
#include "test_support.hpp"

using namespace distlab;
using distlab::cli::run;

namespace {

struct Outcome {
  int code;
  std::string out, err;
};

Outcome call(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run(args, out, err);
  return {code, out.str(), err.str()};
}

nlohmann::json read_json(const std::filesystem::path& p) { return nlohmann::json::parse(read_file(p)); }

class Cli : public ::testing::Test {
 protected:
  static inline std::filesystem::path dir;
  static inline std::string data, tok, model;

  static void SetUpTestSuite() {
    dir = distlab::testing::temp_dir("cli");
    data = (dir / "data").string();
    tok = (dir / "tok" / "tokenizer.json").string();
    model = (dir / "model.json").string();
    ASSERT_EQ(call({"synth-data", "--seed", "2", "--train-bytes", "40000", "--test-bytes", "6000", "--pairs", "4",
                    "--examples", "24", "--out-dir", data})
                  .code,
              0);
    ASSERT_EQ(call({"tokenizer-train", "--corpus", data + "/train", "--vocab-size", "300", "--out-dir",
                    (dir / "tok").string()})
                  .code,
              0);
    write_file(model, R"({"n_layers": 1, "n_heads": 2, "n_kv_heads": 1, "d_model": 16, "d_ff": 32, "max_seq_len": 32})");
  }

  static std::vector<std::string> train_args(const std::string& command, const std::string& out,
                                             const std::string& seed = "5") {
    return {command,        "--corpus",       data + "/train", "--tokenizer", tok, "--model-config", model,
            "--epochs",     "1",              "--batch-size",  "16",          "--lr", "3e-3", "--warmup-steps", "2",
            "--seed",       seed,             "--out-dir",     (dir / out).string()};
  }

  static std::string ckpt(const std::string& run_dir) { return (dir / run_dir / "model.ckpt").string(); }
};

}  // namespace

TEST_F(Cli, ExitCodes) {
  EXPECT_EQ(call({}).code, cli::kExitUsageError);
  EXPECT_EQ(call({"frobnicate"}).code, cli::kExitUsageError);
  EXPECT_EQ(call({"--help"}).code, cli::kExitOk);
  EXPECT_EQ(call({"pretrain", "--tokenizer", tok}).code, cli::kExitUsageError);  // --corpus missing
  EXPECT_EQ(call({"tokenizer-train", "--corpus", (dir / "absent").string()}).code, cli::kExitUsageError);
}

TEST_F(Cli, TokenizerDefaultsAndDeterminism) {
  const auto help = call({"tokenizer-train", "--help"});
  EXPECT_EQ(help.code, 0);
  EXPECT_NE(help.out.find("16000"), std::string::npos);

  const auto again = (dir / "tok2").string();
  ASSERT_EQ(call({"tokenizer-train", "--corpus", data + "/train", "--vocab-size", "300", "--out-dir", again}).code, 0);
  EXPECT_EQ(read_file(tok), read_file(again + "/tokenizer.json"));
  const auto m = read_json(again + "/manifest.json");
  EXPECT_EQ(m["command"], "tokenizer-train");
  EXPECT_EQ(m["status"], "ok");
  EXPECT_EQ(m["config"]["vocab_size"], 300);
  EXPECT_EQ(m["inputs"].size(), 6u);  // one hash per genre file
}

TEST_F(Cli, PretrainWritesArtifactsAndIsReproducible) {
  ASSERT_EQ(call(train_args("pretrain", "pre_a")).code, 0);
  ASSERT_EQ(call(train_args("pretrain", "pre_b")).code, 0);
  EXPECT_EQ(read_file(ckpt("pre_a")), read_file(ckpt("pre_b")));
  for (const char* f : {"metrics.csv", "split.json", "manifest.json"}) EXPECT_TRUE(std::filesystem::exists(dir / "pre_a" / f));
  const auto m = read_json(dir / "pre_a" / "manifest.json");
  EXPECT_EQ(m["seed"], 5);
  EXPECT_EQ(m["config"]["model"]["vocab_size"], 300);  // taken from the tokenizer
  EXPECT_EQ(m["config"]["train"]["batch_size"], 16);
  const auto c = load_checkpoint(ckpt("pre_a"));
  EXPECT_EQ(c.metadata["role"], "teacher");

  ASSERT_EQ(call(train_args("pretrain", "pre_c", "6")).code, 0);
  EXPECT_NE(read_file(ckpt("pre_a")), read_file(ckpt("pre_c")));
}

TEST_F(Cli, DistillWithAlphaOneMatchesPretrain) {
  ASSERT_EQ(call(train_args("pretrain", "same_seed", "8")).code, 0);
  ASSERT_EQ(call(train_args("pretrain", "teacher", "9")).code, 0);
  auto args = train_args("distill", "alpha_one", "8");
  args.insert(args.end(), {"--teacher", ckpt("teacher"), "--alpha", "1"});
  ASSERT_EQ(call(args).code, 0);
  const auto a = load_checkpoint(ckpt("same_seed"));
  const auto b = load_checkpoint(ckpt("alpha_one"));
  EXPECT_EQ(serialize_checkpoint({a.config, a.params, "", {}}), serialize_checkpoint({b.config, b.params, "", {}}));
  EXPECT_EQ(b.metadata["role"], "student");
}

TEST_F(Cli, DistillRecordsEveryTeacher) {
  for (const std::string s : {"21", "22", "23"}) ASSERT_EQ(call(train_args("pretrain", "t" + s, s)).code, 0);
  auto args = train_args("distill", "student3", "24");
  for (const std::string s : {"21", "22", "23"}) {
    args.push_back("--teacher");
    args.push_back(ckpt("t" + s));
  }
  ASSERT_EQ(call(args).code, 0);
  const auto m = read_json(dir / "student3" / "manifest.json");
  int teachers = 0;
  for (const auto& [k, v] : m["inputs"].items()) teachers += k.rfind("teacher:", 0) == 0;
  EXPECT_EQ(teachers, 3);
  EXPECT_EQ(load_checkpoint(ckpt("student3")).metadata["teachers"].size(), 3u);
  EXPECT_EQ(m["config"]["train"]["distill_alpha"], 0.5);
  EXPECT_EQ(m["config"]["train"]["distill_temperature"], 1.0);

  auto bad = train_args("distill", "student_bad", "24");
  bad.push_back("--teacher");
  bad.push_back((dir / "nope.ckpt").string());
  EXPECT_EQ(call(bad).code, cli::kExitRuntimeError);
  const auto failed = read_json(dir / "student_bad" / "manifest.json");
  EXPECT_EQ(failed["status"], "failed");
  EXPECT_FALSE(failed["error"].get<std::string>().empty());
}

TEST_F(Cli, EvalReportsAndErrors) {
  ASSERT_EQ(call(train_args("pretrain", "eval_model", "31")).code, 0);
  const auto csv = (dir / "eval_report.csv").string();
  const auto r = call({"eval", "--checkpoint", ckpt("eval_model"), "--tokenizer", tok, "--test-corpus",
                       data + "/test.txt", "--suite", data + "/suites/core.jsonl", "--suite",
                       data + "/suites/supplement.jsonl", "--report-csv", csv, "--id", "m31", "--out-dir",
                       (dir / "eval_out").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto report = read_json(dir / "eval_out" / "report.json");
  EXPECT_GT(report["test_loss"].get<double>(), 0.0);
  EXPECT_LT(report["test_loss"].get<double>(), std::log(300.0) * 1.2);
  for (const auto& [k, v] : report["suite_accuracy"].items()) {
    EXPECT_GE(v.get<double>(), 0.0);
    EXPECT_LE(v.get<double>(), 1.0);
  }
  EXPECT_EQ(report["suite_accuracy"].size(), 2u);
  EXPECT_EQ(report["checkpoint_id"], "m31");
  EXPECT_EQ(read_file(csv).rfind("checkpoint_id,test_loss,acc_core,acc_supplement,macro_average\nm31,", 0), 0u);

  EXPECT_EQ(call({"eval", "--checkpoint", ckpt("eval_model"), "--tokenizer", tok, "--out-dir",
                  (dir / "eval_none").string()})
                .code,
            cli::kExitUsageError);
  ASSERT_EQ(call({"tokenizer-train", "--corpus", data + "/test.txt", "--vocab-size", "270", "--out-dir",
                  (dir / "tok_other").string()})
                .code,
            0);
  EXPECT_EQ(call({"eval", "--checkpoint", ckpt("eval_model"), "--tokenizer", (dir / "tok_other/tokenizer.json").string(),
                  "--test-corpus", data + "/test.txt", "--out-dir", (dir / "eval_mismatch").string()})
                .code,
            cli::kExitRuntimeError);
}

TEST_F(Cli, ModelVocabularyMismatchIsUsageError) {
  const auto wrong = (dir / "wrong_vocab.json").string();
  write_file(wrong, R"({"vocab_size": 999, "n_layers": 1, "n_heads": 2, "n_kv_heads": 1, "d_model": 16, "d_ff": 32, "max_seq_len": 32})");
  auto args = train_args("pretrain", "wrong_vocab");
  args[6] = wrong;
  EXPECT_EQ(call(args).code, cli::kExitUsageError);
  EXPECT_EQ(read_json(dir / "wrong_vocab" / "manifest.json")["status"], "usage_error");
}

TEST_F(Cli, SweepResumeAndCorrelate) {
  const auto plan = (dir / "plan.json").string();
  write_file(plan, R"({"base": {"batch_size": 16, "warmup_steps": 0},
    "priors": {"max_learning_rate": {"dist": "log_uniform", "lo": 1e-4, "hi": 1e-2}}})");
  const std::vector<std::string> args{"sweep", "--corpus", data + "/train", "--tokenizer", tok, "--model-config", model,
                                      "--plan", plan, "--trials", "16", "--eta", "2", "--rungs", "3",
                                      "--test-corpus", data + "/test.txt", "--suite", data + "/suites/core.jsonl",
                                      "--seed", "3", "--out-dir", (dir / "sweep").string()};
  const auto r = call(args);
  ASSERT_EQ(r.code, 0) << r.err;
  const auto decisions = read_json(dir / "sweep" / "promotions.json");
  EXPECT_EQ(decisions["survivors"], nlohmann::json({16, 8, 4}));
  EXPECT_EQ(decisions["promotions"][0].size(), 8u);
  EXPECT_EQ(decisions["promotions"][1].size(), 4u);
  const auto records = read_file(dir / "sweep" / "records.jsonl");

  auto resume = args;
  resume.push_back("--resume");
  ASSERT_EQ(call(resume).code, 0);
  EXPECT_EQ(read_json(dir / "sweep" / "promotions.json"), decisions);

  const auto c = call({"correlate", "--records", (dir / "sweep" / "records.jsonl").string(), "--out-dir",
                       (dir / "corr").string()});
  ASSERT_EQ(c.code, 0) << c.err;
  const auto report = read_json(dir / "corr" / "correlation.json");
  EXPECT_EQ(report["n_trials"], 4);
  EXPECT_TRUE(report["r2_test_vs_validation"].is_number());
  EXPECT_TRUE(std::filesystem::exists(dir / "corr" / "correlation.csv"));

  auto too_few = args;
  too_few[10] = "3";  // 3 trials cannot fill 3 rungs at eta 2
  too_few.back() = (dir / "sweep_bad").string();
  EXPECT_EQ(call(too_few).code, cli::kExitUsageError);
}

TEST_F(Cli, ScalingGrid) {
  const auto small = (dir / "small.json").string();
  write_file(small, R"({"n_layers": 1, "n_heads": 2, "n_kv_heads": 1, "d_model": 8, "d_ff": 16, "max_seq_len": 32})");
  std::vector<std::string> args{"scaling", "--corpus", data + "/train", "--test-corpus", data + "/test.txt",
                                "--tokenizer", tok, "--model", "small=" + small, "--model", "large=" + model,
                                "--subset-words", "500,1000,2000,4000", "--epochs", "1", "--batch-size", "8",
                                "--warmup-steps", "0", "--out-dir", (dir / "scaling").string()};
  const auto r = call(args);
  ASSERT_EQ(r.code, 0) << r.err;
  const auto csv = read_file(dir / "scaling" / "scaling.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 8);

  args[12] = "500,100000000";
  args.back() = (dir / "scaling_big").string();
  EXPECT_EQ(call(args).code, cli::kExitUsageError);
}

TEST_F(Cli, FineTuneFromCheckpoint) {
  ASSERT_EQ(call(train_args("pretrain", "ft_base", "41")).code, 0);
  const auto tasks = (dir / "tasks.json").string();
  write_file(tasks, R"({"tasks": [{"task": "acceptability", "max_learning_rate": 1e-3, "batch_size": 8,
    "n_epochs": 1, "weight_decay": 0.0, "schedule": "constant", "warmup_steps": 0, "n_classes": 2}]})");
  const auto r = call({"finetune", "--checkpoint", ckpt("ft_base"), "--tokenizer", tok, "--tasks", tasks, "--task",
                       "acceptability", "--train", data + "/tasks/acceptability_train.jsonl", "--eval",
                       data + "/tasks/acceptability_eval.jsonl", "--out-dir", (dir / "ft").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto summary = read_json(dir / "ft" / "finetune.json");
  EXPECT_GE(summary["eval_accuracy"].get<double>(), 0.0);
  EXPECT_EQ(summary["epoch_losses"].size(), 1u);
  EXPECT_TRUE(load_checkpoint(dir / "ft" / "finetuned.ckpt").metadata.contains("classifier_head"));

  EXPECT_EQ(call({"finetune", "--checkpoint", ckpt("ft_base"), "--tokenizer", tok, "--tasks", tasks, "--task", "nope",
                  "--train", data + "/tasks/acceptability_train.jsonl", "--out-dir", (dir / "ft_bad").string()})
                .code,
            cli::kExitUsageError);
}

TEST_F(Cli, ConfigFileSectionsAndSeedOverride) {
  const auto config = (dir / "run.json").string();
  write_file(config, R"({"model": {"n_layers": 1, "n_heads": 2, "n_kv_heads": 1, "d_model": 16, "d_ff": 32,
    "max_seq_len": 32}, "train": {"n_epochs": 1, "batch_size": 16, "warmup_steps": 2, "max_learning_rate": 3e-3,
    "seed": 77}})");
  ASSERT_EQ(call({"pretrain", "--config", config, "--corpus", data + "/train", "--tokenizer", tok, "--out-dir",
                  (dir / "cfg_a").string()})
                .code,
            0);
  auto m = read_json(dir / "cfg_a" / "manifest.json");
  EXPECT_EQ(m["seed"], 77);
  EXPECT_EQ(m["config"]["train"]["batch_size"], 16);
  ASSERT_EQ(call({"pretrain", "--config", config, "--seed", "5", "--corpus", data + "/train", "--tokenizer", tok,
                  "--out-dir", (dir / "cfg_b").string()})
                .code,
            0);
  EXPECT_EQ(read_json(dir / "cfg_b" / "manifest.json")["seed"], 5);

  const auto broken = (dir / "broken.json").string();
  write_file(broken, "{not json");
  EXPECT_EQ(call({"pretrain", "--config", broken, "--corpus", data + "/train", "--tokenizer", tok, "--out-dir",
                  (dir / "cfg_c").string()})
                .code,
            cli::kExitUsageError);
}
