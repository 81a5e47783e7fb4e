#include "distlab/sweep.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <memory>
#include <mutex>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

#include "distlab/stats.hpp"
#include "distlab/training.hpp"

namespace distlab {

namespace {

const char* kind_name(PriorSpec::Kind k) {
  switch (k) {
    case PriorSpec::Kind::kLogNormal: return "log_normal";
    case PriorSpec::Kind::kLogUniform: return "log_uniform";
    case PriorSpec::Kind::kUniform: return "uniform";
    case PriorSpec::Kind::kCategorical: return "categorical";
  }
  return "?";
}

}  // namespace

void PriorSpec::validate(const std::string& field) const {
  switch (kind) {
    case Kind::kLogNormal:
      if (!(sigma > 0.0)) throw SweepError(field + ": log_normal sigma must be positive");
      if (lo && hi && !(*lo < *hi)) throw SweepError(field + ": bounds must satisfy lo < hi");
      if (lo && !(*lo > 0.0)) throw SweepError(field + ": log_normal lower bound must be positive");
      break;
    case Kind::kLogUniform:
      if (!lo || !hi || !(*lo > 0.0) || !(*lo < *hi)) throw SweepError(field + ": log_uniform needs 0 < lo < hi");
      break;
    case Kind::kUniform:
      if (!lo || !hi || !(*lo < *hi)) throw SweepError(field + ": uniform needs lo < hi");
      break;
    case Kind::kCategorical:
      if (values.empty()) throw SweepError(field + ": categorical needs at least one value");
      break;
  }
}

nlohmann::json PriorSpec::sample(Rng& rng) const {
  switch (kind) {
    case Kind::kLogNormal: {
      double v = std::exp(mu + sigma * rng.normal());
      if (lo) v = std::max(v, *lo);
      if (hi) v = std::min(v, *hi);
      return v;
    }
    case Kind::kLogUniform: return std::exp(rng.uniform(std::log(*lo), std::log(*hi)));
    case Kind::kUniform: return rng.uniform(*lo, *hi);
    case Kind::kCategorical: return values[rng.below(values.size())];
  }
  return nullptr;
}

Priors parse_priors(const nlohmann::json& j) {
  if (!j.is_object()) throw SweepError("priors must be a JSON object");
  nlohmann::json fields;
  to_json(fields, TrainConfig{});
  Priors out;
  for (const auto& [field, spec] : j.items()) {
    if (!fields.contains(field)) throw SweepError("prior for unknown TrainConfig field: " + field);
    PriorSpec p;
    const auto dist = spec.value("dist", std::string{});
    if (dist == "log_normal") {
      p.kind = PriorSpec::Kind::kLogNormal;
      p.mu = spec.at("mu").get<double>();
      p.sigma = spec.at("sigma").get<double>();
    } else if (dist == "log_uniform") {
      p.kind = PriorSpec::Kind::kLogUniform;
    } else if (dist == "uniform") {
      p.kind = PriorSpec::Kind::kUniform;
    } else if (dist == "categorical") {
      p.kind = PriorSpec::Kind::kCategorical;
      for (const auto& v : spec.at("values")) p.values.push_back(v);
    } else {
      throw SweepError(field + ": unknown distribution '" + dist + "'");
    }
    if (spec.contains("lo")) p.lo = spec.at("lo").get<double>();
    if (spec.contains("hi")) p.hi = spec.at("hi").get<double>();
    p.validate(field);
    out.emplace(field, std::move(p));
  }
  return out;
}

nlohmann::json priors_to_json(const Priors& priors) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [field, p] : priors) {
    nlohmann::json s = {{"dist", kind_name(p.kind)}};
    if (p.kind == PriorSpec::Kind::kLogNormal) {
      s["mu"] = p.mu;
      s["sigma"] = p.sigma;
    }
    if (p.lo) s["lo"] = *p.lo;
    if (p.hi) s["hi"] = *p.hi;
    if (p.kind == PriorSpec::Kind::kCategorical) s["values"] = p.values;
    j[field] = s;
  }
  return j;
}

TrainConfig sample_config(const Priors& priors, std::uint64_t seed, const TrainConfig& base) {
  Rng rng(seed);
  nlohmann::json j;
  to_json(j, base);
  for (const auto& [field, prior] : priors) {
    auto v = prior.sample(rng);
    if (v.is_number_float() && j[field].is_number_integer()) v = static_cast<std::int64_t>(std::llround(v.get<double>()));
    j[field] = v;
  }
  try {
    auto c = j.get<TrainConfig>();
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw SweepError(std::string("sampled configuration is malformed: ") + e.what());
  }
}

std::vector<std::int64_t> halving_schedule(std::int64_t n_trials, std::int64_t eta, std::int64_t n_rungs) {
  if (eta < 2) throw SweepError("eta must be at least 2");
  if (n_rungs < 1) throw SweepError("need at least one rung");
  std::int64_t need = 1;
  for (std::int64_t k = 1; k < n_rungs; ++k) need *= eta;
  if (n_trials < need) {
    throw SweepError(std::to_string(n_trials) + " trials cannot fill " + std::to_string(n_rungs) + " rungs at eta " +
                     std::to_string(eta) + " (need at least " + std::to_string(need) + ")");
  }
  std::vector<std::int64_t> out;
  std::int64_t survivors = n_trials;
  for (std::int64_t k = 0; k < n_rungs; ++k) {
    out.push_back(survivors);
    survivors /= eta;
  }
  return out;
}

void SweepPlan::validate() const {
  halving_schedule(n_trials, eta, n_rungs);
  if (min_epochs < 1) throw SweepError("min_epochs must be positive");
  if (jobs < 1) throw SweepError("jobs must be positive");
  for (const auto& [field, p] : priors) p.validate(field);
  base.validate();
}

std::int64_t SweepPlan::rung_epochs(std::int64_t rung) const {
  std::int64_t e = min_epochs;
  for (std::int64_t k = 0; k < rung; ++k) e *= eta;
  return e;
}

nlohmann::json plan_to_json(const SweepPlan& plan) {
  nlohmann::json base;
  to_json(base, plan.base);
  return {{"n_trials", plan.n_trials}, {"eta", plan.eta},   {"n_rungs", plan.n_rungs},
          {"min_epochs", plan.min_epochs}, {"jobs", plan.jobs}, {"seed", plan.seed},
          {"evaluate_stopped", plan.evaluate_stopped}, {"base", base}, {"priors", priors_to_json(plan.priors)}};
}

SweepPlan plan_from_json(const nlohmann::json& j) {
  static const std::set<std::string> known{"n_trials", "eta",  "n_rungs", "min_epochs", "jobs",
                                           "seed",     "evaluate_stopped", "base",    "priors"};
  for (const auto& [k, v] : j.items()) {
    if (!known.count(k)) throw SweepError("unknown sweep plan key: " + k);
  }
  SweepPlan p;
  p.n_trials = j.value("n_trials", p.n_trials);
  p.eta = j.value("eta", p.eta);
  p.n_rungs = j.value("n_rungs", p.n_rungs);
  p.min_epochs = j.value("min_epochs", p.min_epochs);
  p.jobs = j.value("jobs", p.jobs);
  p.seed = j.value("seed", p.seed);
  p.evaluate_stopped = j.value("evaluate_stopped", p.evaluate_stopped);
  if (j.contains("base")) p.base = j.at("base").get<TrainConfig>();
  if (j.contains("priors")) p.priors = parse_priors(j.at("priors"));
  p.validate();
  return p;
}

std::string to_string(TrialStatus s) {
  switch (s) {
    case TrialStatus::kRunning: return "running";
    case TrialStatus::kStopped: return "stopped";
    case TrialStatus::kCompleted: return "completed";
    case TrialStatus::kDiverged: return "diverged";
    case TrialStatus::kFailed: return "failed";
  }
  return "?";
}

TrialStatus parse_trial_status(const std::string& s) {
  for (auto t : {TrialStatus::kRunning, TrialStatus::kStopped, TrialStatus::kCompleted, TrialStatus::kDiverged,
                 TrialStatus::kFailed}) {
    if (to_string(t) == s) return t;
  }
  throw SweepError("unknown trial status: " + s);
}

nlohmann::json SweepRecord::to_json() const {
  nlohmann::json cfg;
  distlab::to_json(cfg, config);
  nlohmann::json j = {{"trial_id", trial_id},
                      {"config", cfg},
                      {"rung_losses", rung_losses},
                      {"status", to_string(status)},
                      {"completed", completed()},
                      {"accuracies", accuracies}};
  j["test_loss"] = test_loss ? nlohmann::json(*test_loss) : nlohmann::json(nullptr);
  if (!error.empty()) j["error"] = error;
  return j;
}

SweepRecord SweepRecord::from_json(const nlohmann::json& j) {
  SweepRecord r;
  r.trial_id = j.at("trial_id").get<std::int64_t>();
  r.config = j.at("config").get<TrainConfig>();
  r.rung_losses = j.at("rung_losses").get<std::vector<double>>();
  r.status = parse_trial_status(j.at("status").get<std::string>());
  if (j.contains("test_loss") && !j["test_loss"].is_null()) r.test_loss = j["test_loss"].get<double>();
  if (j.contains("accuracies")) r.accuracies = j["accuracies"].get<std::map<std::string, double>>();
  r.error = j.value("error", std::string{});
  return r;
}

std::vector<SweepRecord> load_records(const std::filesystem::path& path) {
  std::map<std::int64_t, SweepRecord> latest;
  if (!std::filesystem::exists(path)) return {};
  std::ifstream in(path);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      auto r = SweepRecord::from_json(nlohmann::json::parse(line));
      latest[r.trial_id] = std::move(r);
    } catch (const std::exception& e) {
      // A torn final line from an interrupted writer is dropped; anything
      // earlier is corruption.
      if (in.peek() == std::char_traits<char>::eof()) break;
      throw SweepError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  std::vector<SweepRecord> out;
  for (auto& [id, r] : latest) out.push_back(std::move(r));
  return out;
}

namespace {

// Promotion at one rung: eligible trials ordered by (loss, id), best `keep`.
std::vector<std::int64_t> promote(const std::map<std::int64_t, const SweepRecord*>& alive, std::int64_t rung,
                                  std::int64_t keep) {
  std::vector<std::pair<double, std::int64_t>> ranked;
  for (const auto& [id, r] : alive) {
    // A trial that diverged in a later rung keeps its earlier losses.
    if (static_cast<std::int64_t>(r->rung_losses.size()) > rung && std::isfinite(r->rung_losses[rung])) {
      ranked.emplace_back(r->rung_losses[rung], id);
    }
  }
  std::sort(ranked.begin(), ranked.end());
  std::vector<std::int64_t> out;
  for (std::size_t i = 0; i < ranked.size() && static_cast<std::int64_t>(i) < keep; ++i) out.push_back(ranked[i].second);
  std::sort(out.begin(), out.end());
  return out;
}

// Cuts an unterminated final line left by an interrupted writer so that
// appended records start on a fresh line.
void drop_torn_tail(const std::filesystem::path& path) {
  const auto text = read_file(path);
  if (text.empty() || text.back() == '\n') return;
  const auto keep = text.find_last_of('\n');
  std::filesystem::resize_file(path, keep == std::string::npos ? 0 : keep + 1);
}

class RecordWriter {
 public:
  RecordWriter(const std::filesystem::path& path, bool append) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    if (append && std::filesystem::exists(path)) drop_torn_tail(path);
    out_.open(path, append ? std::ios::app : std::ios::trunc);
    if (!out_) throw SweepError("cannot open record file " + path.string());
  }
  void write(const SweepRecord& r) {
    std::lock_guard<std::mutex> lock(mu_);
    out_ << r.to_json().dump() << '\n';
    out_.flush();
  }

 private:
  std::mutex mu_;
  std::ofstream out_;
};

void parallel_for(std::size_t n, std::int64_t jobs, const std::function<void(std::size_t)>& fn) {
  const auto workers = static_cast<std::size_t>(std::max<std::int64_t>(1, std::min<std::int64_t>(jobs, n)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace

std::vector<std::vector<std::int64_t>> replay_promotions(std::span<const SweepRecord> records, const SweepPlan& plan) {
  const auto schedule = halving_schedule(plan.n_trials, plan.eta, plan.n_rungs);
  std::map<std::int64_t, const SweepRecord*> alive;
  for (const auto& r : records) {
    if (r.trial_id >= 0 && r.trial_id < plan.n_trials) alive[r.trial_id] = &r;
  }
  std::vector<std::vector<std::int64_t>> out;
  for (std::int64_t k = 0; k + 1 < plan.n_rungs; ++k) {
    auto promoted = promote(alive, k, schedule[k + 1]);
    std::map<std::int64_t, const SweepRecord*> next;
    for (auto id : promoted) next[id] = alive.at(id);
    alive = std::move(next);
    out.push_back(std::move(promoted));
  }
  return out;
}

SweepResult run_sweep(const SweepData& data, const ModelConfig& model, const SweepPlan& plan,
                      const std::filesystem::path& records_path, bool resume) {
  plan.validate();
  if (!data.train || !data.validation) throw SweepError("sweep needs training and validation data");
  const auto schedule = halving_schedule(plan.n_trials, plan.eta, plan.n_rungs);
  const auto max_epochs = plan.rung_epochs(plan.n_rungs - 1);

  std::vector<SweepRecord> records(static_cast<std::size_t>(plan.n_trials));
  for (std::int64_t i = 0; i < plan.n_trials; ++i) {
    auto& r = records[i];
    r.trial_id = i;
    r.config = sample_config(plan.priors, derive_seed(plan.seed, "trial", static_cast<std::uint64_t>(i)), plan.base);
    r.config.n_epochs = max_epochs;
    r.config.seed = derive_seed(plan.seed, "trial_train", static_cast<std::uint64_t>(i));
  }
  if (resume) {
    for (auto& stored : load_records(records_path)) {
      if (stored.trial_id < 0 || stored.trial_id >= plan.n_trials) {
        throw SweepError("record file holds trial " + std::to_string(stored.trial_id) + " outside this plan");
      }
      if (!(stored.config == records[stored.trial_id].config)) {
        throw SweepError("record file was produced by a different plan (trial " + std::to_string(stored.trial_id) +
                         " configuration differs)");
      }
      records[stored.trial_id] = std::move(stored);
    }
  }
  RecordWriter writer(records_path, resume);

  std::vector<std::unique_ptr<Trainer>> trainers(records.size());
  auto train_to = [&](SweepRecord& r, std::int64_t epochs) -> Trainer* {
    auto& t = trainers[r.trial_id];
    try {
      if (!t) t = std::make_unique<Trainer>(model, r.config, *data.train, data.validation);
      while (t->epochs_done() < epochs) t->train_epoch();
      return t.get();
    } catch (const TrainingDiverged& e) {
      r.status = TrialStatus::kDiverged;
      r.error = e.what();
    } catch (const std::exception& e) {
      r.status = TrialStatus::kFailed;
      r.error = e.what();
    }
    t.reset();
    return nullptr;
  };

  auto evaluate = [&](SweepRecord& r) {
    const bool want_test = data.test && !r.test_loss;
    const bool want_suites = !data.suites.empty() && r.accuracies.empty();
    if (!want_test && !want_suites) return;
    const auto epochs = plan.rung_epochs(static_cast<std::int64_t>(r.rung_losses.size()) - 1);
    Trainer* t = train_to(r, epochs);
    if (!t) return;
    if (want_test) r.test_loss = dataset_cross_entropy(t->params(), model, *data.test);
    if (want_suites) {
      for (const auto& suite : data.suites) {
        r.accuracies[suite.name] = minimal_pair_accuracy(t->params(), model, *data.tokenizer, suite);
      }
    }
  };

  SweepResult result;
  std::vector<std::int64_t> alive(static_cast<std::size_t>(plan.n_trials));
  std::iota(alive.begin(), alive.end(), std::int64_t{0});
  for (std::int64_t k = 0; k < plan.n_rungs; ++k) {
    std::vector<std::int64_t> todo;
    for (auto id : alive) {
      const auto& r = records[id];
      if (r.status == TrialStatus::kDiverged || r.status == TrialStatus::kFailed) continue;
      if (static_cast<std::int64_t>(r.rung_losses.size()) <= k) todo.push_back(id);
    }
    parallel_for(todo.size(), plan.jobs, [&](std::size_t i) {
      auto& r = records[todo[i]];
      r.status = TrialStatus::kRunning;
      if (Trainer* t = train_to(r, plan.rung_epochs(k))) {
        r.rung_losses.resize(static_cast<std::size_t>(k));
        r.rung_losses.push_back(t->history().epochs.back().val_loss);
        if (!std::isfinite(r.rung_losses.back())) {
          r.status = TrialStatus::kDiverged;
          r.error = "non-finite validation loss";
          trainers[r.trial_id].reset();
        }
      }
      writer.write(r);
    });

    std::map<std::int64_t, const SweepRecord*> current;
    for (auto id : alive) current[id] = &records[id];
    std::vector<std::int64_t> promoted;
    if (k + 1 < plan.n_rungs) {
      promoted = promote(current, k, schedule[k + 1]);
      result.promotions.push_back(promoted);
    }
    std::vector<std::int64_t> finished;
    for (auto id : alive) {
      auto& r = records[id];
      if (r.status == TrialStatus::kDiverged || r.status == TrialStatus::kFailed) continue;
      if (k + 1 == plan.n_rungs) {
        r.status = TrialStatus::kCompleted;
        finished.push_back(id);
      } else if (!std::binary_search(promoted.begin(), promoted.end(), id)) {
        r.status = TrialStatus::kStopped;
        if (plan.evaluate_stopped) finished.push_back(id);
        else trainers[id].reset();
      }
    }
    parallel_for(finished.size(), plan.jobs, [&](std::size_t i) {
      auto& r = records[finished[i]];
      evaluate(r);
      if (r.status == TrialStatus::kStopped) trainers[r.trial_id].reset();
    });
    for (auto id : alive) {
      if (records[id].status != TrialStatus::kRunning) writer.write(records[id]);
    }
    alive = std::move(promoted);
  }
  result.records = std::move(records);
  return result;
}

nlohmann::json CorrelationReport::to_json() const {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  auto sign = [](const std::optional<double>& v) -> nlohmann::json {
    if (!v) return nullptr;
    return *v > 0 ? 1 : (*v < 0 ? -1 : 0);
  };
  return {{"n_trials", rows.size()},
          {"r2_test_vs_validation", opt(r2_test_vs_validation)},
          {"slope_test_vs_validation", opt(slope_test_vs_validation)},
          {"r2_accuracy_vs_validation", opt(r2_accuracy_vs_validation)},
          {"slope_accuracy_vs_validation", opt(slope_accuracy_vs_validation)},
          {"accuracy_slope_sign", sign(slope_accuracy_vs_validation)}};
}

std::string CorrelationReport::to_csv() const {
  std::ostringstream out;
  out.precision(10);
  out << "trial_id,validation_loss,test_loss,accuracy\n";
  for (const auto& r : rows) {
    out << r.trial_id << ',' << r.validation_loss << ',';
    if (r.test_loss) out << *r.test_loss;
    out << ',';
    if (r.accuracy) out << *r.accuracy;
    out << '\n';
  }
  return out.str();
}

CorrelationReport correlate_loss_and_scores(std::span<const SweepRecord> records, bool include_stopped) {
  CorrelationReport report;
  std::vector<double> vx, ty, ax, ay;
  for (const auto& r : records) {
    const bool usable = r.completed() || (include_stopped && r.status == TrialStatus::kStopped);
    if (!usable || r.rung_losses.empty() || !std::isfinite(r.rung_losses.back())) continue;
    CorrelationRow row{r.trial_id, r.rung_losses.back(), r.test_loss, std::nullopt};
    if (!r.accuracies.empty()) {
      double s = 0.0;
      for (const auto& [name, a] : r.accuracies) s += a;
      row.accuracy = s / static_cast<double>(r.accuracies.size());
    }
    if (row.test_loss) {
      vx.push_back(row.validation_loss);
      ty.push_back(*row.test_loss);
    }
    if (row.accuracy) {
      ax.push_back(row.validation_loss);
      ay.push_back(*row.accuracy);
    }
    report.rows.push_back(row);
  }
  if (vx.size() < 3 && ax.size() < 3) {
    throw SweepError("need at least 3 completed trials with scores, found " +
                     std::to_string(std::max(vx.size(), ax.size())));
  }
  if (vx.size() >= 3) {
    const auto fit = ols_fit(vx, ty);
    report.r2_test_vs_validation = fit.r2;
    report.slope_test_vs_validation = fit.slope;
  }
  if (ax.size() >= 3) {
    const auto fit = ols_fit(ax, ay);
    report.r2_accuracy_vs_validation = fit.r2;
    report.slope_accuracy_vs_validation = fit.slope;
  }
  return report;
}

}  // namespace distlab
