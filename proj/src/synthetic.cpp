#include "distlab/synthetic.hpp"

#include <array>

#include "distlab/random.hpp"

namespace distlab {

namespace {

struct Noun {
  const char* sg;
  const char* pl;
};

struct Verb {
  const char* sg;    // third person singular present
  const char* pl;    // plural present
  const char* past;
  const char* bad_past;  // regularized form, never in the corpus
};

constexpr std::array<Noun, 22> kNouns{{{"cat", "cats"},         {"dog", "dogs"},         {"child", "children"},
                                       {"girl", "girls"},       {"boy", "boys"},         {"teacher", "teachers"},
                                       {"bird", "birds"},       {"friend", "friends"},   {"man", "men"},
                                       {"woman", "women"},      {"king", "kings"},       {"farmer", "farmers"},
                                       {"baby", "babies"},      {"fox", "foxes"},        {"mouse", "mice"},
                                       {"doctor", "doctors"},   {"rabbit", "rabbits"},   {"sister", "sisters"},
                                       {"brother", "brothers"}, {"horse", "horses"},     {"duck", "ducks"},
                                       {"student", "students"}}};

constexpr std::array<Noun, 14> kThings{{{"ball", "balls"},   {"apple", "apples"}, {"book", "books"},
                                        {"box", "boxes"},    {"cake", "cakes"},   {"hat", "hats"},
                                        {"key", "keys"},     {"cup", "cups"},     {"letter", "letters"},
                                        {"song", "songs"},   {"toy", "toys"},     {"flower", "flowers"},
                                        {"story", "stories"}, {"picture", "pictures"}}};

constexpr std::array<Verb, 12> kIntransitive{{{"sleeps", "sleep", "slept", "sleeped"},
                                              {"runs", "run", "ran", "runned"},
                                              {"sings", "sing", "sang", "singed"},
                                              {"swims", "swim", "swam", "swimmed"},
                                              {"laughs", "laugh", "laughed", "laughed"},
                                              {"sits", "sit", "sat", "sitted"},
                                              {"falls", "fall", "fell", "falled"},
                                              {"goes", "go", "went", "goed"},
                                              {"comes", "come", "came", "comed"},
                                              {"jumps", "jump", "jumped", "jumped"},
                                              {"waits", "wait", "waited", "waited"},
                                              {"cries", "cry", "cried", "cried"}}};

constexpr std::array<Verb, 12> kTransitive{{{"sees", "see", "saw", "seed"},
                                            {"finds", "find", "found", "finded"},
                                            {"takes", "take", "took", "taked"},
                                            {"eats", "eat", "ate", "eated"},
                                            {"likes", "like", "liked", "liked"},
                                            {"holds", "hold", "held", "holded"},
                                            {"makes", "make", "made", "maked"},
                                            {"brings", "bring", "brought", "bringed"},
                                            {"wants", "want", "wanted", "wanted"},
                                            {"gives", "give", "gave", "gived"},
                                            {"buys", "buy", "bought", "buyed"},
                                            {"draws", "draw", "drew", "drawed"}}};

// Verbs whose object may be a reflexive.
constexpr std::array<Verb, 5> kReflexive{{{"sees", "see", "saw", "seed"},
                                          {"likes", "like", "liked", "liked"},
                                          {"hurts", "hurt", "hurt", "hurted"},
                                          {"washes", "wash", "washed", "washed"},
                                          {"finds", "find", "found", "finded"}}};

constexpr std::array<const char*, 10> kAdjectives{"big",   "small", "happy", "old",   "little",
                                                  "red",   "quiet", "funny", "brave", "sleepy"};
constexpr std::array<const char*, 10> kPlaces{"the garden", "the park",   "the river", "the house", "the school",
                                              "the forest", "the kitchen", "the farm", "the shop",  "the hill"};
constexpr std::array<const char*, 4> kPrepositions{"in", "near", "behind", "at"};
constexpr std::array<const char*, 4> kSgDets{"the", "a", "this", "that"};
constexpr std::array<const char*, 4> kPlDets{"the", "some", "these", "those"};

struct Name {
  const char* text;
  bool female;
};
constexpr std::array<Name, 10> kNames{{{"Anna", true},
                                       {"Tom", false},
                                       {"Lily", true},
                                       {"Max", false},
                                       {"Emma", true},
                                       {"Sam", false},
                                       {"Mia", true},
                                       {"Ben", false},
                                       {"Zoe", true},
                                       {"Leo", false}}};

template <typename T, std::size_t N>
const T& pick(Rng& rng, const std::array<T, N>& a) {
  return a[rng.below(N)];
}

struct Phrase {
  std::string text;
  bool plural = false;
};

class Grammar {
 public:
  explicit Grammar(std::uint64_t seed) : rng_(seed) {}

  Rng& rng() { return rng_; }

  Phrase noun_phrase(bool allow_adjective = true) {
    const bool plural = rng_.uniform() < 0.45;
    const auto& n = pick(rng_, kNouns);
    std::string s = plural ? pick(rng_, kPlDets) : pick(rng_, kSgDets);
    if (allow_adjective && rng_.uniform() < 0.3) {
      const std::string adj = pick(rng_, kAdjectives);
      if (s == "a" && std::string("aeiou").find(adj[0]) != std::string::npos) s = "an";
      s += " " + adj;
    }
    s += " ";
    s += plural ? n.pl : n.sg;
    return {s, plural};
  }

  std::string object() {
    const auto& t = pick(rng_, kThings);
    if (rng_.uniform() < 0.5) return std::string(rng_.uniform() < 0.5 ? "the " : "a ") + t.sg;
    return std::string(rng_.uniform() < 0.5 ? "the " : "some ") + t.pl;
  }

  std::string place() { return std::string(pick(rng_, kPrepositions)) + " " + pick(rng_, kPlaces); }

  Phrase subject() {
    if (rng_.uniform() < 0.2) return {pick(rng_, kNames).text, false};
    return noun_phrase();
  }

  std::string present_clause() {
    auto s = subject();
    std::string out = s.text;
    if (rng_.uniform() < 0.25) {
      // Attractor of the opposite number between subject and verb.
      const auto& a = pick(rng_, kNouns);
      out += std::string(" ") + pick(rng_, kPrepositions) + " the " + (s.plural ? a.sg : a.pl);
    }
    if (rng_.uniform() < 0.5) {
      const auto& v = pick(rng_, kIntransitive);
      out += std::string(" ") + (s.plural ? v.pl : v.sg);
      if (rng_.uniform() < 0.5) out += " " + place();
    } else {
      const auto& v = pick(rng_, kTransitive);
      out += std::string(" ") + (s.plural ? v.pl : v.sg) + " " + object();
    }
    return out;
  }

  std::string past_clause() {
    auto s = subject();
    std::string out = s.text;
    if (rng_.uniform() < 0.5) {
      out += std::string(" ") + pick(rng_, kIntransitive).past;
      if (rng_.uniform() < 0.5) out += " " + place();
    } else {
      out += std::string(" ") + pick(rng_, kTransitive).past + " " + object();
    }
    if (rng_.uniform() < 0.4) return "yesterday " + out;
    return out;
  }

  std::string reflexive_clause() {
    const auto& v = pick(rng_, kReflexive);
    const double r = rng_.uniform();
    if (r < 0.4) {
      const auto& n = pick(rng_, kNames);
      return std::string(n.text) + " " + v.past + " " + (n.female ? "herself" : "himself");
    }
    const auto np = noun_phrase();
    if (np.plural) return np.text + " " + v.past + " themselves";
    return np.text + " " + v.sg + " " + (rng_.uniform() < 0.5 ? "herself" : "himself");
  }

  std::string adjective_clause() {
    auto s = subject();
    return s.text + (s.plural ? " are " : " is ") + pick(rng_, kAdjectives);
  }

  std::string question() {
    auto s = noun_phrase();
    if (rng_.uniform() < 0.5) {
      return std::string(s.plural ? "are " : "is ") + s.text + " " + pick(rng_, kAdjectives) + " ?";
    }
    const auto& v = pick(rng_, kIntransitive);
    return std::string(s.plural ? "do " : "does ") + s.text + " " + v.pl + " ?";
  }

  std::string declarative() {
    const double r = rng_.uniform();
    if (r < 0.35) return present_clause() + " .";
    if (r < 0.6) return past_clause() + " .";
    if (r < 0.75) return reflexive_clause() + " .";
    return adjective_clause() + " .";
  }

  std::string compound() {
    auto s = declarative();
    s.pop_back();
    return s + (rng_.uniform() < 0.5 ? "and " : "because ") + declarative();
  }

 private:
  Rng rng_;
};

std::string capitalize(std::string s) {
  if (!s.empty() && s[0] >= 'a' && s[0] <= 'z') s[0] = static_cast<char>(s[0] - 'a' + 'A');
  return s;
}

std::string genre_document(Grammar& g, const std::string& genre) {
  auto& rng = g.rng();
  std::string doc;
  auto add_line = [&doc](const std::string& line) {
    if (!doc.empty()) doc += "\n";
    doc += line;
  };
  if (genre == "child_directed") {
    const auto n = 3 + rng.below(5);
    for (std::uint64_t i = 0; i < n; ++i) {
      const double r = rng.uniform();
      if (r < 0.2) add_line(std::string("look ! ") + g.declarative());
      else if (r < 0.45) add_line(g.question());
      else add_line(g.declarative());
    }
    return "*MOT: " + doc;
  }
  if (genre == "stories") {
    const auto n = 4 + rng.below(6);
    std::string text = "once upon a time " + g.past_clause() + " .";
    for (std::uint64_t i = 0; i < n; ++i) text += " " + capitalize(rng.uniform() < 0.6 ? g.declarative() : g.compound());
    return capitalize(text);
  }
  if (genre == "subtitles") {
    const auto n = 3 + rng.below(5);
    for (std::uint64_t i = 0; i < n; ++i) add_line("- " + capitalize(rng.uniform() < 0.3 ? g.question() : g.declarative()));
    return doc;
  }
  if (genre == "simple_wiki") {
    const auto np = g.noun_phrase(false);
    std::string text = capitalize(np.text) + (np.plural ? " are " : " is ") + "a topic .";
    const auto n = 3 + rng.below(5);
    for (std::uint64_t i = 0; i < n; ++i) text += " " + capitalize(g.declarative());
    return "= " + np.text + " =\n" + text;
  }
  if (genre == "conversation") {
    const auto n = 3 + rng.below(5);
    for (std::uint64_t i = 0; i < n; ++i) {
      add_line(std::string(i % 2 ? "B: " : "A: ") + capitalize(rng.uniform() < 0.4 ? g.question() : g.declarative()));
    }
    return doc;
  }
  // books
  const auto n = 5 + rng.below(6);
  std::string text;
  for (std::uint64_t i = 0; i < n; ++i) {
    if (!text.empty()) text += " ";
    if (rng.uniform() < 0.2) {
      const auto& name = kNames[rng.below(kNames.size())];
      text += "\"" + capitalize(g.question()) + "\" asked " + name.text + " .";
    } else {
      text += capitalize(rng.uniform() < 0.5 ? g.compound() : g.declarative());
    }
  }
  return text;
}

std::vector<Document> generate_genre(Grammar& g, const std::string& genre, std::size_t bytes) {
  std::vector<Document> docs;
  std::size_t total = 0;
  while (total < bytes) {
    auto text = genre_document(g, genre);
    total += text.size() + 2;
    docs.push_back({std::move(text), genre});
  }
  return docs;
}

// Train mix (relative weights) and a test mix that shifts toward written text.
const std::map<std::string, double>& train_mix() {
  static const std::map<std::string, double> m{{"child_directed", 0.25}, {"stories", 0.1}, {"subtitles", 0.2},
                                               {"simple_wiki", 0.15},    {"conversation", 0.15}, {"books", 0.15}};
  return m;
}

const std::map<std::string, double>& test_mix() {
  static const std::map<std::string, double> m{{"child_directed", 0.1}, {"stories", 0.2}, {"subtitles", 0.1},
                                               {"simple_wiki", 0.25},   {"conversation", 0.1}, {"books", 0.25}};
  return m;
}

}  // namespace

const std::vector<std::string>& synthetic_genres() {
  static const std::vector<std::string> g{"child_directed", "stories", "subtitles", "simple_wiki", "conversation", "books"};
  return g;
}

SyntheticCorpus generate_corpus(const SyntheticOptions& options) {
  SyntheticCorpus out;
  for (const auto& genre : synthetic_genres()) {
    Grammar g(derive_seed(options.seed, "synthetic.train." + genre));
    out.train[genre] = generate_genre(g, genre, static_cast<std::size_t>(train_mix().at(genre) * options.train_bytes));
  }
  for (const auto& genre : synthetic_genres()) {
    Grammar g(derive_seed(options.seed, "synthetic.test." + genre));
    auto docs = generate_genre(g, genre, static_cast<std::size_t>(test_mix().at(genre) * options.test_bytes));
    out.test.insert(out.test.end(), docs.begin(), docs.end());
  }
  return out;
}

namespace {

MinimalPair subject_verb_pair(Rng& rng) {
  const auto& n = pick(rng, kNouns);
  const auto& v = pick(rng, kIntransitive);
  const bool plural = rng.uniform() < 0.5;
  const std::string subj = std::string("the ") + (plural ? n.pl : n.sg);
  const std::string tail = rng.uniform() < 0.5 ? " " + std::string(pick(rng, kPrepositions)) + " " + pick(rng, kPlaces) : "";
  return {subj + " " + (plural ? v.pl : v.sg) + tail + " .", subj + " " + (plural ? v.sg : v.pl) + tail + " .",
          "subject_verb_agreement"};
}

MinimalPair determiner_noun_pair(Rng& rng) {
  const auto& n = pick(rng, kNouns);
  const auto& v = pick(rng, kTransitive);
  const bool plural = rng.uniform() < 0.5;
  const std::string det = plural ? (rng.uniform() < 0.5 ? "these" : "those") : (rng.uniform() < 0.5 ? "this" : "that");
  const std::string tail = std::string(" ") + (plural ? v.pl : v.sg) + " the " + pick(rng, kThings).sg + " .";
  return {det + " " + (plural ? n.pl : n.sg) + tail, det + " " + (plural ? n.sg : n.pl) + tail,
          "determiner_noun_agreement"};
}

MinimalPair anaphor_pair(Rng& rng) {
  const auto& v = pick(rng, kReflexive);
  if (rng.uniform() < 0.5) {
    const auto& n = pick(rng, kNames);
    const std::string head = std::string(n.text) + " " + v.past + " ";
    return {head + (n.female ? "herself" : "himself") + " .", head + (n.female ? "himself" : "herself") + " .",
            "anaphor_agreement"};
  }
  const auto& n = pick(rng, kNouns);
  const std::string head = std::string("the ") + n.pl + " " + v.past + " ";
  return {head + "themselves .", head + (rng.uniform() < 0.5 ? "himself ." : "herself ."), "anaphor_agreement"};
}

MinimalPair irregular_past_pair(Rng& rng) {
  for (;;) {
    const bool transitive = rng.uniform() < 0.5;
    const auto& v = transitive ? pick(rng, kTransitive) : pick(rng, kIntransitive);
    if (std::string(v.past) == v.bad_past) continue;
    const auto& n = pick(rng, kNouns);
    const std::string head = std::string("yesterday the ") + (rng.uniform() < 0.5 ? n.sg : n.pl) + " ";
    const std::string tail = transitive ? std::string(" the ") + pick(rng, kThings).sg + " ." : std::string(" .");
    return {head + v.past + tail, head + v.bad_past + tail, "irregular_past_tense"};
  }
}

MinimalPair attractor_pair(Rng& rng) {
  const auto& n = pick(rng, kNouns);
  const auto& a = pick(rng, kNouns);
  const auto& v = pick(rng, kIntransitive);
  const bool plural = rng.uniform() < 0.5;
  const std::string head = std::string("the ") + (plural ? n.pl : n.sg) + " " + pick(rng, kPrepositions) + " the " +
                           (plural ? a.sg : a.pl) + " ";
  return {head + (plural ? v.pl : v.sg) + " .", head + (plural ? v.sg : v.pl) + " .", "agreement_across_attractor"};
}

MinimalPair question_aux_pair(Rng& rng) {
  const auto& n = pick(rng, kNouns);
  const bool plural = rng.uniform() < 0.5;
  const std::string np = std::string("the ") + (plural ? n.pl : n.sg);
  if (rng.uniform() < 0.5) {
    const std::string adj = pick(rng, kAdjectives);
    return {std::string(plural ? "are " : "is ") + np + " " + adj + " ?",
            std::string(plural ? "is " : "are ") + np + " " + adj + " ?", "question_auxiliary"};
  }
  const auto& v = pick(rng, kIntransitive);
  return {std::string(plural ? "do " : "does ") + np + " " + v.pl + " ?",
          std::string(plural ? "does " : "do ") + np + " " + v.pl + " ?", "question_auxiliary"};
}

using PairMaker = MinimalPair (*)(Rng&);

MinimalPairSuite make_suite(const std::string& name, std::initializer_list<std::pair<const char*, PairMaker>> makers,
                            const SyntheticOptions& options) {
  MinimalPairSuite suite{name, {}};
  for (const auto& [tag, make] : makers) {
    Rng rng(derive_seed(options.seed, std::string("synthetic.suite.") + tag));
    for (std::size_t i = 0; i < options.pairs_per_phenomenon; ++i) suite.pairs.push_back(make(rng));
  }
  return suite;
}

}  // namespace

std::vector<MinimalPairSuite> generate_suites(const SyntheticOptions& options) {
  return {make_suite("core",
                     {{"subject_verb_agreement", subject_verb_pair},
                      {"determiner_noun_agreement", determiner_noun_pair},
                      {"anaphor_agreement", anaphor_pair},
                      {"irregular_past_tense", irregular_past_pair}},
                     options),
          make_suite("supplement",
                     {{"agreement_across_attractor", attractor_pair}, {"question_auxiliary", question_aux_pair}},
                     options)};
}

std::vector<LabeledExample> generate_acceptability(std::size_t n, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "synthetic.acceptability"));
  constexpr std::array<PairMaker, 6> makers{subject_verb_pair, determiner_noun_pair, anaphor_pair,
                                            irregular_past_pair, attractor_pair, question_aux_pair};
  std::vector<LabeledExample> out;
  while (out.size() < n) {
    const auto pair = makers[rng.below(makers.size())](rng);
    if (rng.uniform() < 0.5) out.push_back({pair.sentence_good, 1});
    else out.push_back({pair.sentence_bad, 0});
  }
  return out;
}

nlohmann::json write_synthetic_dataset(const std::filesystem::path& dir, const SyntheticOptions& options) {
  const auto corpus = generate_corpus(options);
  nlohmann::json listing = {{"seed", options.seed}, {"train", nlohmann::json::array()}};
  std::filesystem::create_directories(dir / "train");
  for (const auto& genre : synthetic_genres()) {
    const auto path = dir / "train" / (genre + ".txt");
    const auto& docs = corpus.train.at(genre);
    write_file(path, join_documents(docs));
    listing["train"].push_back({{"path", path.string()}, {"kind", genre}, {"documents", docs.size()}});
  }
  write_file(dir / "test.txt", join_documents(corpus.test));
  listing["test"] = (dir / "test.txt").string();

  std::filesystem::create_directories(dir / "suites");
  listing["suites"] = nlohmann::json::array();
  for (const auto& suite : generate_suites(options)) {
    const auto path = dir / "suites" / (suite.name + ".jsonl");
    save_suite(path, suite);
    listing["suites"].push_back(path.string());
  }

  std::filesystem::create_directories(dir / "tasks");
  const auto examples = generate_acceptability(options.classification_examples, options.seed);
  const auto cut = examples.size() * 3 / 4;
  save_labeled(dir / "tasks" / "acceptability_train.jsonl",
               std::span<const LabeledExample>(examples.data(), cut));
  save_labeled(dir / "tasks" / "acceptability_eval.jsonl",
               std::span<const LabeledExample>(examples.data() + cut, examples.size() - cut));
  listing["tasks"] = {(dir / "tasks" / "acceptability_train.jsonl").string(),
                      (dir / "tasks" / "acceptability_eval.jsonl").string()};
  return listing;
}

}  // namespace distlab
