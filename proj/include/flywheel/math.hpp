#pragma once

#include "flywheel/types.hpp"

#include <cmath>
#include <span>

namespace flywheel {

/// Logistic function, evaluated without overflow for large |z|.
template <typename Scalar>
Scalar sigmoid(Scalar z) {
  using std::exp;
  if (z >= Scalar(0)) {
    return Scalar(1) / (Scalar(1) + exp(-z));
  }
  const Scalar e = exp(z);
  return e / (Scalar(1) + e);
}

/// log(sigmoid(z)) computed as -softplus(-z).
template <typename Scalar>
Scalar log_sigmoid(Scalar z) {
  using std::exp;
  using std::log1p;
  if (z >= Scalar(0)) {
    return -log1p(exp(-z));
  }
  return z - log1p(exp(z));
}

/// Binary cross-entropy of sigmoid(logit) against a 0/1 target.
template <typename Scalar>
Scalar binary_cross_entropy(Scalar logit, int target) {
  return target == 1 ? -log_sigmoid(logit) : -log_sigmoid(-logit);
}

template <typename Derived>
VectorX<typename Derived::Scalar> softmax(const Eigen::MatrixBase<Derived>& logits) {
  using Scalar = typename Derived::Scalar;
  const Scalar peak = logits.maxCoeff();
  VectorX<Scalar> p = (logits.array() - peak).exp().matrix();
  return p / p.sum();
}

template <typename Derived>
VectorX<typename Derived::Scalar> log_softmax(const Eigen::MatrixBase<Derived>& logits) {
  using Scalar = typename Derived::Scalar;
  const Scalar peak = logits.maxCoeff();
  const Scalar log_norm = peak + std::log((logits.array() - peak).exp().sum());
  return (logits.array() - log_norm).matrix();
}

/// Neumaier-compensated summation; order-independent to ~1 ulp of the total.
template <typename Scalar>
class CompensatedSum {
 public:
  void add(Scalar x) {
    const Scalar t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x)) {
      compensation_ += (sum_ - t) + x;
    } else {
      compensation_ += (x - t) + sum_;
    }
    sum_ = t;
  }
  Scalar value() const { return sum_ + compensation_; }

 private:
  Scalar sum_{0};
  Scalar compensation_{0};
};

template <typename Scalar>
Scalar compensated_sum(std::span<const Scalar> xs) {
  CompensatedSum<Scalar> acc;
  for (Scalar x : xs) acc.add(x);
  return acc.value();
}

/// Unbiased sample variance (n - 1 denominator); zero for fewer than two values.
template <typename Scalar>
Scalar sample_variance(std::span<const Scalar> xs) {
  const auto n = static_cast<Scalar>(xs.size());
  if (xs.size() < 2) return Scalar(0);
  const Scalar mean = compensated_sum(xs) / n;
  CompensatedSum<Scalar> acc;
  for (Scalar x : xs) acc.add((x - mean) * (x - mean));
  return acc.value() / (n - Scalar(1));
}

}  // namespace flywheel
