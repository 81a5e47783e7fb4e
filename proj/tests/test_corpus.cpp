#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "distlab/corpus.hpp"
#include "test_support.hpp"

using namespace distlab;

namespace {

std::vector<Document> make_docs(int n) {
  std::vector<Document> docs;
  for (int i = 0; i < n; ++i) docs.push_back({"document number " + std::to_string(i) + std::string(i % 7, 'x'), "k"});
  return docs;
}

std::size_t chars(const std::vector<Document>& d) {
  std::size_t s = 0;
  for (const auto& x : d) s += x.text.size();
  return s;
}

}  // namespace

TEST(Corpus, SplitDocumentsOnBlankLines) {
  const auto docs = split_documents("  first doc\nline two  \n\n\n second\n \n\nthird\n", "wiki");
  ASSERT_EQ(docs.size(), 3u);
  EXPECT_EQ(docs[0].text, "first doc\nline two");
  EXPECT_EQ(docs[1].text, "second");
  EXPECT_EQ(docs[2].text, "third");
  EXPECT_EQ(docs[2].kind, "wiki");
  EXPECT_TRUE(split_documents("\n\n  \n").empty());
}

TEST(Corpus, JoinThenSplitRoundTrips) {
  const auto docs = make_docs(10);
  const auto back = split_documents(join_documents(docs), "k");
  ASSERT_EQ(back.size(), docs.size());
  for (std::size_t i = 0; i < docs.size(); ++i) EXPECT_EQ(back[i].text, docs[i].text);
}

TEST(Corpus, SplitIsDisjointAndCovering) {
  const auto docs = make_docs(200);
  const auto split = split_corpus(docs, 0.9, 0.1, 4);
  EXPECT_EQ(split.train.size() + split.validation.size(), docs.size());
  std::multiset<std::string> all, got;
  for (const auto& d : docs) all.insert(d.text);
  for (const auto& d : split.train) got.insert(d.text);
  for (const auto& d : split.validation) got.insert(d.text);
  EXPECT_EQ(all, got);
  std::set<std::string> train_set;
  for (const auto& d : split.train) train_set.insert(d.text);
  for (const auto& d : split.validation) EXPECT_FALSE(train_set.count(d.text));
}

TEST(Corpus, SplitFractionIsCloseByCharacters) {
  const auto docs = make_docs(500);
  const auto split = split_corpus(docs, 0.95, 0.05, 1);
  const double frac = static_cast<double>(chars(split.train)) / (chars(split.train) + chars(split.validation));
  EXPECT_NEAR(frac, 0.95, 0.01);
}

TEST(Corpus, SplitDeterministicPerSeed) {
  const auto docs = make_docs(100);
  const auto a = split_corpus(docs, 0.8, 0.2, 9);
  const auto b = split_corpus(docs, 0.8, 0.2, 9);
  const auto c = split_corpus(docs, 0.8, 0.2, 10);
  ASSERT_EQ(a.train.size(), b.train.size());
  for (std::size_t i = 0; i < a.train.size(); ++i) EXPECT_EQ(a.train[i].text, b.train[i].text);
  bool differs = a.train.size() != c.train.size();
  for (std::size_t i = 0; !differs && i < a.train.size(); ++i) differs = a.train[i].text != c.train[i].text;
  EXPECT_TRUE(differs);
}

TEST(Corpus, BothSidesNonEmptyEvenWhenSkewed) {
  const auto docs = make_docs(2);
  auto split = split_corpus(docs, 0.999, 0.001, 0);
  EXPECT_EQ(split.train.size(), 1u);
  EXPECT_EQ(split.validation.size(), 1u);
  split = split_corpus(docs, 0.001, 0.999, 0);
  EXPECT_EQ(split.train.size(), 1u);
}

TEST(Corpus, SplitErrors) {
  EXPECT_THROW(split_corpus(make_docs(1), 0.5, 0.5, 0), CorpusError);
  EXPECT_THROW(split_corpus(make_docs(5), 0.5, 0.4, 0), CorpusError);
  EXPECT_THROW(split_corpus(make_docs(5), 1.0, 0.0, 0), CorpusError);
}

TEST(Corpus, LoadAndSplitFromFiles) {
  const auto dir = distlab::testing::temp_dir("corpus");
  write_file(dir / "a.txt", join_documents(make_docs(20)));
  write_file(dir / "b.txt", "alpha beta\n\ngamma delta\n");
  CorpusSpec spec;
  spec.sources = {{dir / "a.txt", "wiki"}, {dir / "b.txt", "dialogue"}};
  spec.seed = 3;
  const auto split = load_and_split(spec);
  EXPECT_EQ(split.train.size() + split.validation.size(), 22u);
  const auto m = split_manifest(spec, split);
  EXPECT_EQ(m["seed"], 3);
  EXPECT_EQ(m["train_documents"].get<std::size_t>(), split.train.size());
  EXPECT_EQ(m["sources"].size(), 2u);
}

TEST(Corpus, MissingOrEmptyFiles) {
  const auto dir = distlab::testing::temp_dir("corpus_err");
  write_file(dir / "empty.txt", "\n\n");
  std::vector<CorpusSource> missing{{dir / "nope.txt", "x"}};
  std::vector<CorpusSource> empty{{dir / "empty.txt", "x"}};
  EXPECT_THROW(load_documents(missing), CorpusError);
  EXPECT_THROW(load_documents(empty), CorpusError);
}

TEST(Corpus, CountWords) {
  EXPECT_EQ(count_words(""), 0u);
  EXPECT_EQ(count_words("  one two\n\nthree\tfour  "), 4u);
}

TEST(Packing, ContiguousNonOverlappingWindows) {
  std::vector<std::int32_t> ids(23);
  for (int i = 0; i < 23; ++i) ids[i] = i;
  const auto packed = pack_sequences(ids, 5);
  EXPECT_EQ(packed.count, 4u);
  for (std::size_t s = 0; s < packed.count; ++s) {
    const auto seq = packed.sequence(s);
    ASSERT_EQ(seq.size(), 5u);
    for (std::size_t k = 0; k < 5; ++k) EXPECT_EQ(seq[k], static_cast<std::int32_t>(s * 5 + k));
  }
}

TEST(Packing, Edges) {
  std::vector<std::int32_t> ids(4, 1);
  EXPECT_EQ(pack_sequences(ids, 5).count, 0u);
  EXPECT_THROW(pack_sequences(ids, 1), std::invalid_argument);
}
