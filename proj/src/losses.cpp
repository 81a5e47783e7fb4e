#include "distlab/losses.hpp"

#include <cmath>

namespace distlab {

template <typename Scalar>
Vector<Scalar> softmax_with_temperature(const Vector<Scalar>& z, Scalar temperature) {
  if (!(temperature > 0)) throw LossError("temperature must be positive");
  if (z.size() == 0 || !z.allFinite()) throw LossError("softmax input must be finite and non-empty");
  Vector<Scalar> e = ((z.array() - z.maxCoeff()) / temperature).exp();
  return e / e.sum();
}

template <typename Scalar>
Scalar kl_divergence(const Vector<Scalar>& p, const Vector<Scalar>& q) {
  if (p.size() != q.size()) throw LossError("distributions differ in length");
  Scalar total = 0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (p(i) <= 0) continue;
    if (!(q(i) > 0)) throw LossError("KL support violation: q is zero where p is positive");
    total += p(i) * std::log(p(i) / q(i));
  }
  return total;
}

namespace {

template <typename Scalar>
void check_targets(const LogitsBatch<Scalar>& logits, std::span<const std::int32_t> targets,
                   std::span<const std::uint8_t> ignore) {
  const auto rows = static_cast<std::size_t>(logits.values.rows());
  if (targets.size() != rows) throw LossError("one target per logits row required");
  if (!ignore.empty() && ignore.size() != rows) throw LossError("ignore mask length mismatch");
  for (std::size_t i = 0; i < rows; ++i) {
    if ((ignore.empty() || !ignore[i]) && (targets[i] < 0 || targets[i] >= logits.values.cols())) {
      throw LossError("target out of range");
    }
  }
}

template <typename Scalar>
std::int64_t active_count(std::size_t rows, std::span<const std::uint8_t> ignore) {
  std::int64_t n = 0;
  for (std::size_t i = 0; i < rows; ++i) n += (ignore.empty() || !ignore[i]) ? 1 : 0;
  if (n == 0) throw LossError("every position is masked");
  return n;
}

}  // namespace

template <typename Scalar>
LossResult<Scalar> cross_entropy(const LogitsBatch<Scalar>& logits, std::span<const std::int32_t> targets,
                                 std::span<const std::uint8_t> ignore, bool want_grad) {
  check_targets(logits, targets, ignore);
  const auto& z = logits.values;
  const auto rows = static_cast<std::size_t>(z.rows());
  LossResult<Scalar> out;
  out.count = active_count<Scalar>(rows, ignore);
  const auto inv_n = static_cast<Scalar>(1.0 / static_cast<double>(out.count));
  if (want_grad) out.grad = Matrix<Scalar>::Zero(z.rows(), z.cols());
  double total = 0.0;
  for (std::size_t i = 0; i < rows; ++i) {
    if (!ignore.empty() && ignore[i]) continue;
    const auto row = z.row(static_cast<Eigen::Index>(i));
    const Scalar m = row.maxCoeff();
    const Scalar sum = (row.array() - m).exp().sum();
    const Scalar lse = m + std::log(sum);
    total += static_cast<double>(lse - row(targets[i]));
    if (want_grad) {
      auto g = out.grad.row(static_cast<Eigen::Index>(i));
      g = ((row.array() - lse).exp() * inv_n).matrix();
      g(targets[i]) -= inv_n;
    }
  }
  out.value = total / static_cast<double>(out.count);
  out.cross_entropy = out.value;
  return out;
}

template <typename Scalar>
LossResult<Scalar> distillation_loss(std::span<const std::int32_t> targets, const LogitsBatch<Scalar>& student,
                                     const LogitsBatch<Scalar>& teacher, double alpha, double temperature,
                                     std::span<const std::uint8_t> ignore, bool want_grad) {
  if (student.values.rows() != teacher.values.rows() || student.values.cols() != teacher.values.cols()) {
    throw LossError("student and teacher logits differ in shape");
  }
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw LossError("alpha must lie in [0, 1]");
  if (!(temperature > 0.0)) throw LossError("temperature must be positive");
  if (alpha == 1.0) return cross_entropy(student, targets, ignore, want_grad);

  const auto& zs = student.values;
  const auto& zt = teacher.values;
  const auto rows = static_cast<std::size_t>(zs.rows());
  LossResult<Scalar> out;
  if (alpha > 0.0) {
    out = cross_entropy(student, targets, ignore, want_grad);
  } else {
    if (!ignore.empty() && ignore.size() != rows) throw LossError("ignore mask length mismatch");
    out.count = active_count<Scalar>(rows, ignore);
    if (want_grad) out.grad = Matrix<Scalar>::Zero(zs.rows(), zs.cols());
  }
  const auto a = static_cast<Scalar>(alpha);
  const auto T = static_cast<Scalar>(temperature);
  if (want_grad && alpha > 0.0) out.grad *= a;

  // d/dz_s of T^2 KL(p_t || q_s) with q_s = softmax(z_s / T) is T (q_s - p_t).
  const auto soft_scale = static_cast<Scalar>((1.0 - alpha) * temperature / static_cast<double>(out.count));
  double kl_total = 0.0;
  for (std::size_t i = 0; i < rows; ++i) {
    if (!ignore.empty() && ignore[i]) continue;
    const auto r = static_cast<Eigen::Index>(i);
    const auto ts = (zs.row(r).array() / T).eval();
    const auto tt = (zt.row(r).array() / T).eval();
    const Scalar ms = ts.maxCoeff();
    const Scalar mt = tt.maxCoeff();
    const Scalar lse_s = ms + std::log((ts - ms).exp().sum());
    const Scalar lse_t = mt + std::log((tt - mt).exp().sum());
    const auto log_p = (tt - lse_t).eval();
    const auto log_q = (ts - lse_s).eval();
    const auto p = log_p.exp().eval();
    kl_total += static_cast<double>((p * (log_p - log_q)).sum());
    if (want_grad) out.grad.row(r) += ((log_q.exp() - p) * soft_scale).matrix();
  }
  const double kl_mean = kl_total / static_cast<double>(out.count);
  out.soft_target = temperature * temperature * kl_mean;
  out.value = alpha * out.cross_entropy + (1.0 - alpha) * out.soft_target;
  return out;
}

#define DISTLAB_INSTANTIATE(S)                                                                                     \
  template Vector<S> softmax_with_temperature(const Vector<S>&, S);                                                \
  template S kl_divergence(const Vector<S>&, const Vector<S>&);                                                    \
  template LossResult<S> cross_entropy(const LogitsBatch<S>&, std::span<const std::int32_t>,                       \
                                       std::span<const std::uint8_t>, bool);                                       \
  template LossResult<S> distillation_loss(std::span<const std::int32_t>, const LogitsBatch<S>&,                   \
                                           const LogitsBatch<S>&, double, double, std::span<const std::uint8_t>, \
                                           bool);

DISTLAB_INSTANTIATE(float)
DISTLAB_INSTANTIATE(double)

#undef DISTLAB_INSTANTIATE

}  // namespace distlab
