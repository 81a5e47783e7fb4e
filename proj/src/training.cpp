#include "distlab/training.hpp"

#include <cmath>
#include <numeric>

#include "distlab/evaluation.hpp"
#include "distlab/losses.hpp"
#include "distlab/random.hpp"

namespace distlab {

void TeacherEnsemble::validate() const {
  if (members.empty()) throw ConfigError("teacher ensemble is empty");
  for (const auto& t : members) {
    if (!(t.config == members.front().config)) throw ConfigError("teachers must share one model configuration");
  }
}

LogitsBatch<float> ensemble_mean_logits(const TeacherEnsemble& ensemble, const TokenBatch& tokens) {
  ensemble.validate();
  auto mean = forward(ensemble.members.front().params, ensemble.members.front().config, tokens);
  for (std::size_t i = 1; i < ensemble.members.size(); ++i) {
    mean.values += forward(ensemble.members[i].params, ensemble.members[i].config, tokens).values;
  }
  if (ensemble.members.size() > 1) mean.values /= static_cast<float>(ensemble.members.size());
  return mean;
}

MetricsCsv::MetricsCsv(std::ostream& out) : out_(out) {
  out_.precision(9);
  out_ << "step,epoch,lr,train_loss,val_loss\n";
}

void MetricsCsv::step(const StepRecord& r) {
  out_ << r.step << ',' << r.epoch << ',' << r.lr << ',' << r.train_loss << ",\n";
}

void MetricsCsv::epoch(const EpochRecord& r, double lr) {
  out_ << r.step << ',' << r.epoch << ',' << lr << ",," << r.val_loss << '\n';
  out_.flush();
}

std::int64_t steps_per_epoch(std::size_t n_sequences, std::int64_t batch_size) {
  return (static_cast<std::int64_t>(n_sequences) + batch_size - 1) / batch_size;
}

Trainer::Trainer(ModelConfig model, TrainConfig train, const PackedDataset& train_data,
                 const PackedDataset* validation, const TeacherEnsemble* teachers)
    : model_(model), train_(train), data_(train_data), validation_(validation), teachers_(teachers) {
  model_.validate();
  train_.validate();
  if (data_.count == 0) throw ConfigError("training set has no complete sequences");
  if (static_cast<std::int64_t>(data_.sequence_length) - 1 > model_.max_seq_len) {
    throw ConfigError("training windows exceed the model context");
  }
  if (teachers_) {
    teachers_->validate();
    if (teachers_->members.front().config.vocab_size != model_.vocab_size) {
      throw ConfigError("student and teachers must share a vocabulary");
    }
  }
  steps_per_epoch_ = distlab::steps_per_epoch(data_.count, train_.batch_size);
  total_steps_ = steps_per_epoch_ * train_.n_epochs;
  if (train_.warmup_steps > total_steps_ && total_steps_ > 0) {
    throw ConfigError("warmup_steps (" + std::to_string(train_.warmup_steps) + ") exceeds total steps (" +
                      std::to_string(total_steps_) + ")");
  }
  params_ = init_params<float>(model_, train_.seed);
  adam_ = AdamState<float>::zeros(model_);
}

double Trainer::validation_loss() const {
  if (!validation_) throw ConfigError("no validation set attached");
  return dataset_cross_entropy(params_, model_, *validation_);
}

void Trainer::train_step(std::span<const std::size_t> rows) {
  TokenBatch inputs;
  std::vector<std::int32_t> targets;
  make_lm_batch(data_, rows, inputs, targets);

  ForwardCache<float> cache;
  const DropoutOptions dropout{train_.attention_dropout, derive_seed(train_.seed, "dropout", static_cast<std::uint64_t>(step_))};
  const auto logits = forward(params_, model_, inputs, &cache, dropout);
  LossResult<float> loss;
  if (teachers_) {
    const auto teacher_logits = ensemble_mean_logits(*teachers_, inputs);
    loss = distillation_loss(targets, logits, teacher_logits, train_.distill_alpha, train_.distill_temperature, {},
                             true);
  } else {
    loss = cross_entropy(logits, targets, {}, true);
  }

  const std::int64_t step = step_ + 1;
  if (!std::isfinite(loss.value)) {
    throw TrainingDiverged("non-finite loss at step " + std::to_string(step));
  }
  if (!initial_loss_) initial_loss_ = loss.value;
  high_loss_streak_ = loss.value > 10.0 * *initial_loss_ ? high_loss_streak_ + 1 : 0;
  if (high_loss_streak_ >= 100) {
    throw TrainingDiverged("loss above 10x its initial value for 100 steps (step " + std::to_string(step) +
                           ", loss " + std::to_string(loss.value) + ")");
  }

  auto grads = ModelParams<float>::zeros(model_);
  backward(params_, model_, cache, loss.grad, grads);
  if (train_.max_grad_norm) clip_grad_norm(grads, *train_.max_grad_norm);
  const double lr = lr_at_step(train_, step, total_steps_);
  try {
    adamw_step(params_, grads, adam_, lr, train_);
  } catch (const ModelError& e) {
    throw TrainingDiverged(std::string(e.what()) + " at step " + std::to_string(step));
  }
  step_ = step;
  const StepRecord rec{step, epoch_ + 1, lr, loss.value};
  history_.steps.push_back(rec);
  if (metrics_) metrics_->step(rec);
}

void Trainer::train_epoch() {
  std::vector<std::size_t> order(data_.count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(train_.seed, "data_order", static_cast<std::uint64_t>(epoch_)));
  rng.shuffle(order);
  const auto B = static_cast<std::size_t>(train_.batch_size);
  for (std::size_t start = 0; start < order.size(); start += B) {
    const auto end = std::min(order.size(), start + B);
    train_step(std::span<const std::size_t>(order.data() + start, end - start));
  }
  ++epoch_;
  if (validation_) {
    const EpochRecord rec{epoch_, step_, validation_loss()};
    history_.epochs.push_back(rec);
    if (metrics_) metrics_->epoch(rec, history_.steps.empty() ? 0.0 : history_.steps.back().lr);
  }
}

void Trainer::run() {
  while (epoch_ < train_.n_epochs) train_epoch();
}

TrainResult train_teacher(const ModelConfig& model, const TrainConfig& train, const PackedDataset& train_data,
                          const PackedDataset* validation, MetricsCsv* metrics) {
  Trainer t(model, train, train_data, validation);
  t.set_metrics(metrics);
  t.run();
  return {t.params(), t.history()};
}

TrainResult train_student_distill(const ModelConfig& model, const TrainConfig& train, const PackedDataset& train_data,
                                  const TeacherEnsemble& teachers, const PackedDataset* validation,
                                  MetricsCsv* metrics) {
  Trainer t(model, train, train_data, validation, &teachers);
  t.set_metrics(metrics);
  t.run();
  return {t.params(), t.history()};
}

}  // namespace distlab
