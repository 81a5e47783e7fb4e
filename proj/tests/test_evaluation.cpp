#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>

#include "distlab/evaluation.hpp"
#include "distlab/losses.hpp"
#include "distlab/training.hpp"
#include "reference_model.hpp"
#include "test_support.hpp"

using namespace distlab;
using distlab::testing::spread_params;
using distlab::testing::temp_dir;

namespace {

const std::string kText =
    "the cat sat on the mat. the dog ran to the park. a bird sang in the tree. "
    "the cat ran to the mat. the dog sat in the park. a bird sat on the tree. ";

ModelConfig byte_config(std::int64_t seq = 32) {
  ModelConfig c;
  c.vocab_size = TokenizerModel::kFirstMergeId;  // bytes plus the two specials
  c.n_layers = 1;
  c.n_heads = 2;
  c.n_kv_heads = 1;
  c.d_model = 16;
  c.d_ff = 32;
  c.max_seq_len = seq;
  return c;
}

std::vector<Document> repeated_docs(int n) {
  std::vector<Document> docs;
  for (int i = 0; i < n; ++i) docs.push_back({kText, "toy"});
  return docs;
}

TrainConfig fast_train(std::int64_t epochs) {
  TrainConfig t;
  t.max_learning_rate = 1e-2;
  t.n_epochs = epochs;
  t.batch_size = 8;
  t.weight_decay = 0.0;
  t.warmup_steps = 0;
  t.seed = 3;
  return t;
}

double log_softmax_at(const std::vector<double>& row, int idx) {
  const double m = *std::max_element(row.begin(), row.end());
  double s = 0.0;
  for (double v : row) s += std::exp(v - m);
  return row[idx] - m - std::log(s);
}

}  // namespace

TEST(EvalLoss, UntrainedModelIsNearUniform) {
  const TokenizerModel tok;
  const auto c = byte_config();
  const Checkpoint ckpt{c, init_params<float>(c, 1), tok.hash(), {}};
  const auto docs = repeated_docs(6);
  const double loss = eval_loss(ckpt, tok, docs);
  const double ln_v = std::log(static_cast<double>(c.vocab_size));
  EXPECT_LT(std::abs(loss - ln_v) / ln_v, 0.05);
  EXPECT_EQ(loss, eval_loss(ckpt, tok, docs));
}

TEST(EvalLoss, TrainingLowersHeldOutLoss) {
  const TokenizerModel tok;
  const auto c = byte_config();
  const auto docs = repeated_docs(12);
  const auto data = pack_documents(tok, docs, c);
  const auto trained = train_teacher(c, fast_train(6), data);
  const Checkpoint before{c, init_params<float>(c, 3), tok.hash(), {}};
  const Checkpoint after{c, trained.params, tok.hash(), {}};
  const auto test = repeated_docs(3);
  EXPECT_LT(eval_loss(after, tok, test), 0.5 * eval_loss(before, tok, test));
}

TEST(EvalLoss, EqualsTrainerValidationLoss) {
  const TokenizerModel tok;
  const auto c = byte_config();
  const auto train = pack_documents(tok, repeated_docs(8), c);
  const std::vector<Document> held{{"a dog sang to the cat in the tree and the bird ran to the mat.", ""},
                                   {"the mat sat on the park. a cat ran.", ""}};
  const auto val = pack_documents(tok, held, c);
  Trainer t(c, fast_train(2), train, &val);
  t.run();
  const Checkpoint ckpt{c, t.params(), tok.hash(), {}};
  EXPECT_EQ(eval_loss(ckpt, tok, held), t.history().epochs.back().val_loss);
}

TEST(EvalLoss, Errors) {
  const TokenizerModel tok;
  const auto c = byte_config();
  const Checkpoint ckpt{c, init_params<float>(c, 1), tok.hash(), {}};
  const std::vector<Document> tiny{{"hi", ""}};
  EXPECT_THROW(eval_loss(ckpt, tok, tiny), EvalError);
  const TokenizerModel other({{'t', 'h'}});
  EXPECT_THROW(eval_loss(ckpt, other, repeated_docs(2)), EvalError);
}

TEST(Score, IsNonPositiveAndMatchesTokenCrossEntropy) {
  const TokenizerModel tok;
  const auto c = byte_config();
  const auto p = spread_params<float>(c, 4, 0.2);
  const std::string s = "the cat sat.";
  const double score = score_sentence(p, c, tok, s);
  EXPECT_LE(score, 0.0);

  std::vector<std::int32_t> ids{TokenizerModel::kBos};
  for (auto id : tok.encode(s)) ids.push_back(id);
  const auto n = static_cast<std::int64_t>(ids.size()) - 1;
  TokenBatch in{1, n, std::vector<std::int32_t>(ids.begin(), ids.end() - 1)};
  const std::vector<std::int32_t> targets(ids.begin() + 1, ids.end());
  const auto ce = cross_entropy(forward(p, c, in), targets);
  EXPECT_NEAR(score, -static_cast<double>(n) * ce.value, 1e-4 * std::abs(score));
  EXPECT_NEAR(score_sentence(p, c, tok, s, ScoreMode::kMeanPerToken), score / static_cast<double>(n), 1e-12);
}

TEST(Score, ChainRuleAgainstReferenceModel) {
  // A three-token sentence: log p(w1 w2 w3 | bos) summed from the oracle.
  const TokenizerModel tok;
  const auto c = byte_config(8);
  const auto p = spread_params<double>(c, 9);
  const std::string s = "cat";
  const std::vector<int> seq{TokenizerModel::kBos, 'c', 'a', 't'};
  const auto ref = distlab::testing::reference_logits(p, c, std::vector<int>(seq.begin(), seq.end() - 1));
  double want = 0.0;
  for (int t = 0; t < 3; ++t) want += log_softmax_at(ref[t], seq[t + 1]);
  EXPECT_NEAR(score_sentence(p, c, tok, s), want, 1e-8);
}

TEST(Score, RefusesToTruncateOrScoreNothing) {
  const TokenizerModel tok;
  const auto c = byte_config(8);
  const auto p = init_params<float>(c, 1);
  EXPECT_NO_THROW(score_sentence(p, c, tok, "eight ch"));  // bos + 8 tokens: 8 predictions
  EXPECT_THROW(score_sentence(p, c, tok, "nine char"), EvalError);
  EXPECT_THROW(score_sentence(p, c, tok, ""), EvalError);
}

TEST(PairAccuracy, CountsAndTies) {
  const std::vector<std::pair<double, double>> all{{-1, -2}, {-3, -4}};
  EXPECT_EQ(pair_accuracy(all), 1.0);
  const std::vector<std::pair<double, double>> two_of_three{{-1, -2}, {-5, -4}, {-3, -4}};
  EXPECT_DOUBLE_EQ(pair_accuracy(two_of_three), 2.0 / 3.0);
  const std::vector<std::pair<double, double>> ties{{-2, -2}, {-1, -3}};
  EXPECT_EQ(pair_accuracy(ties), 0.75);
  EXPECT_THROW(pair_accuracy({}), EvalError);
}

TEST(PairAccuracy, InvariantToOrderAndMonotoneMaps) {
  std::vector<std::pair<double, double>> s{{-1, -2}, {-5, -4}, {-3, -3}, {-0.5, -7}, {-9, -8.5}};
  const double base = pair_accuracy(s);
  std::reverse(s.begin(), s.end());
  EXPECT_EQ(pair_accuracy(s), base);
  for (auto& [g, b] : s) {
    g = std::exp(3.0 * g) + 1.0;
    b = std::exp(3.0 * b) + 1.0;
  }
  EXPECT_EQ(pair_accuracy(s), base);
}

TEST(MinimalPairs, ZeroOutputHeadTiesEveryEqualLengthPair) {
  const TokenizerModel tok;
  const auto c = byte_config();
  auto p = init_params<float>(c, 2);
  p.output.setZero();
  const MinimalPairSuite suite{"ties", {{"the cat runs.", "the cat rung.", ""}, {"a dog", "a cog", ""}}};
  EXPECT_EQ(minimal_pair_accuracy(p, c, tok, suite), 0.5);
}

TEST(MinimalPairs, ModelTrainedOnGoodSentencesPrefersThem) {
  const TokenizerModel tok;
  const auto c = byte_config();
  std::vector<Document> docs;
  for (int i = 0; i < 40; ++i) {
    docs.push_back({"the cat runs.", ""});
    docs.push_back({"the dogs run.", ""});
  }
  const auto data = pack_documents(tok, docs, c);
  auto tc = fast_train(60);
  tc.max_learning_rate = 2e-2;
  const auto trained = train_teacher(c, tc, data);
  const MinimalPairSuite suite{"agreement", {{"the cat runs.", "the cat run.", ""}, {"the dogs run.", "the dogs runs.", ""}}};
  EXPECT_EQ(minimal_pair_accuracy(trained.params, c, tok, suite), 1.0);
  EXPECT_EQ(minimal_pair_accuracy(trained.params, c, tok, suite, ScoreMode::kMeanPerToken), 1.0);
}

TEST(SuiteIo, RoundTripAndNames) {
  const auto dir = temp_dir("suite_io");
  const MinimalPairSuite suite{"agreement", {{"a \"b\" c", "a b, c", "quotes"}, {"x y", "y x", ""}}};
  save_suite(dir / "agreement.jsonl", suite);
  const auto back = load_suite(dir / "agreement.jsonl");
  EXPECT_EQ(back.name, "agreement");
  ASSERT_EQ(back.pairs.size(), 2u);
  EXPECT_EQ(back.pairs[0].sentence_good, "a \"b\" c");
  EXPECT_EQ(back.pairs[0].sentence_bad, "a b, c");
  EXPECT_EQ(back.pairs[0].phenomenon, "quotes");
  EXPECT_EQ(back.pairs[1].phenomenon, "");

  {
    std::ofstream out(dir / "blimp.jsonl");
    out << R"({"sentence_good": "g", "sentence_bad": "b", "UID": "anaphor"})" << "\n\n";
  }
  EXPECT_EQ(load_suite(dir / "blimp.jsonl").pairs.at(0).phenomenon, "anaphor");
}

TEST(SuiteIo, Errors) {
  const auto dir = temp_dir("suite_err");
  EXPECT_THROW(load_suite(dir / "missing.jsonl"), EvalError);
  auto write = [&](const std::string& name, const std::string& body) {
    std::ofstream(dir / name) << body;
    return dir / name;
  };
  EXPECT_THROW(load_suite(write("empty.jsonl", "\n \n")), EvalError);
  EXPECT_THROW(load_suite(write("bad.jsonl", "{not json}\n")), EvalError);
  EXPECT_THROW(load_suite(write("nogood.jsonl", R"({"sentence_bad": "b"})" "\n")), EvalError);
  EXPECT_THROW(load_suite(write("blank.jsonl", R"({"sentence_good": "", "sentence_bad": "b"})" "\n")), EvalError);
}

TEST(Report, MacroAverageAndJson) {
  EvalReport r{"ckpt", std::nullopt, {}};
  EXPECT_FALSE(r.macro_average());
  EXPECT_TRUE(r.to_json()["test_loss"].is_null());
  EXPECT_TRUE(r.to_json()["macro_average"].is_null());
  r.test_loss = 2.5;
  r.suite_accuracy = {{"a", 0.5}, {"b", 1.0}};
  EXPECT_DOUBLE_EQ(*r.macro_average(), 0.75);
  EXPECT_EQ(r.to_json()["test_loss"], 2.5);
  EXPECT_EQ(r.to_json()["suite_accuracy"]["b"], 1.0);
}

TEST(Report, CsvHeaderOnceAndQuoting) {
  const auto dir = temp_dir("report_csv");
  const auto path = dir / "sub" / "report.csv";
  append_report_csv(path, {"first", 2.0, {{"core", 0.5}}});
  append_report_csv(path, {"with,comma \"q\"", std::nullopt, {{"core", 1.0}}});
  std::ifstream in(path);
  std::string l0, l1, l2, extra;
  std::getline(in, l0);
  std::getline(in, l1);
  std::getline(in, l2);
  EXPECT_FALSE(std::getline(in, extra));
  EXPECT_EQ(l0, "checkpoint_id,test_loss,acc_core,macro_average");
  EXPECT_EQ(l1, "first,2,0.5,0.5");
  EXPECT_EQ(l2, "\"with,comma \"\"q\"\"\",,1,1");
}
