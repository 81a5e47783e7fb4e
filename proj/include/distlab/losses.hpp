#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>

#include "distlab/model.hpp"

namespace distlab {

struct LossError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// softmax(z / T), max-subtracted. Throws LossError on non-finite input or T <= 0.
template <typename Scalar>
Vector<Scalar> softmax_with_temperature(const Vector<Scalar>& z, Scalar temperature);

/// sum p * ln(p / q) with 0 ln 0 = 0. Throws LossError where p > 0 but q = 0.
template <typename Scalar>
Scalar kl_divergence(const Vector<Scalar>& p, const Vector<Scalar>& q);

/// Loss value plus its gradient with respect to the (student) logits.
template <typename Scalar>
struct LossResult {
  double value = 0.0;
  double cross_entropy = 0.0;  // mean hard-label term
  double soft_target = 0.0;    // mean T^2-scaled KL term (distillation only)
  std::int64_t count = 0;      // positions that entered the mean
  Matrix<Scalar> grad;         // empty unless requested
};

/// Mean natural-log negative log-likelihood over positions whose
/// ignore_mask entry is zero (an empty mask ignores nothing).
/// Throws LossError if every position is ignored or a target is out of range.
template <typename Scalar>
LossResult<Scalar> cross_entropy(const LogitsBatch<Scalar>& logits, std::span<const std::int32_t> targets,
                                 std::span<const std::uint8_t> ignore_mask = {}, bool want_grad = false);

/// alpha * CE(targets, softmax(student))
///   + (1 - alpha) * T^2 * KL(softmax(teacher / T) || softmax(student / T)),
/// each averaged over the unignored positions. The teacher distribution is
/// the first KL argument. alpha == 1 returns the cross-entropy result itself.
template <typename Scalar>
LossResult<Scalar> distillation_loss(std::span<const std::int32_t> targets, const LogitsBatch<Scalar>& student,
                                     const LogitsBatch<Scalar>& teacher, double alpha, double temperature,
                                     std::span<const std::uint8_t> ignore_mask = {}, bool want_grad = false);

}  // namespace distlab
