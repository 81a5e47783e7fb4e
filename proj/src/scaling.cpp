#include "distlab/scaling.hpp"

#include <atomic>
#include <sstream>
#include <thread>

#include "distlab/evaluation.hpp"
#include "distlab/random.hpp"
#include "distlab/training.hpp"

namespace distlab {

std::vector<std::vector<Document>> nested_subsets(std::span<const Document> docs, std::span<const std::size_t> word_counts,
                                                  std::uint64_t seed) {
  std::vector<Document> shuffled(docs.begin(), docs.end());
  Rng rng(derive_seed(seed, "scaling.subset"));
  rng.shuffle(shuffled);
  std::vector<std::size_t> cumulative{0};
  for (const auto& d : shuffled) cumulative.push_back(cumulative.back() + count_words(d.text));

  std::vector<std::vector<Document>> out;
  for (const auto target : word_counts) {
    if (target == 0) throw ConfigError("subset sizes must be positive");
    if (target > cumulative.back()) {
      throw ConfigError("subset of " + std::to_string(target) + " words exceeds the corpus (" +
                        std::to_string(cumulative.back()) + " words)");
    }
    const auto it = std::lower_bound(cumulative.begin(), cumulative.end(), target);
    const auto n = static_cast<std::size_t>(it - cumulative.begin());
    out.emplace_back(shuffled.begin(), shuffled.begin() + static_cast<std::ptrdiff_t>(n));
  }
  return out;
}

std::vector<ScalingRow> run_scaling(const TokenizerModel& tok, std::span<const Document> train_docs,
                                    std::span<const Document> test_docs, const ScalingOptions& options) {
  if (options.models.size() < 2) throw ConfigError("scaling needs at least two model configurations");
  if (options.subset_words.empty()) throw ConfigError("scaling needs at least one subset size");
  const auto subsets = nested_subsets(train_docs, options.subset_words, options.seed);

  struct Job {
    std::size_t model, subset;
  };
  std::vector<Job> jobs;
  for (std::size_t m = 0; m < options.models.size(); ++m) {
    for (std::size_t s = 0; s < subsets.size(); ++s) jobs.push_back({m, s});
  }
  std::vector<ScalingRow> rows(jobs.size());
  std::vector<std::exception_ptr> errors(jobs.size());

  auto run_one = [&](std::size_t i) {
    try {
      const auto& [m, s] = jobs[i];
      const auto& model = options.models[m];
      const auto data = pack_documents(tok, subsets[s], model.config);
      const auto test = pack_documents(tok, test_docs, model.config);
      auto train = options.train;
      train.seed = derive_seed(options.seed, "scaling.train." + model.name, s);
      const auto total = steps_per_epoch(data.count, train.batch_size) * train.n_epochs;
      train.warmup_steps = std::min(train.warmup_steps, total);
      const auto result = train_teacher(model.config, train, data);
      std::size_t words = 0;
      for (const auto& d : subsets[s]) words += count_words(d.text);
      rows[i] = {model.name, param_count(model.config), words, subsets[s].size(), total,
                 dataset_cross_entropy(result.params, model.config, test)};
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };

  const auto workers = static_cast<std::size_t>(std::clamp<std::int64_t>(options.jobs, 1, jobs.size()));
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < jobs.size(); i = next++) run_one(i);
    });
  }
  for (std::size_t i = next++; i < jobs.size(); i = next++) run_one(i);
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return rows;
}

std::string scaling_csv(std::span<const ScalingRow> rows) {
  std::ostringstream out;
  out.precision(10);
  out << "model,parameters,subset_words,subset_documents,steps,test_loss\n";
  for (const auto& r : rows) {
    out << r.model << ',' << r.parameters << ',' << r.subset_words << ',' << r.subset_documents << ',' << r.steps
        << ',' << r.test_loss << '\n';
  }
  return out.str();
}

}  // namespace distlab
