#pragma once
// Classification heads, cross-entropy, low-level (MSE) and high-level (KL)
// distillation, and assembly of the gamma-weighted total loss. Teachers are
// detached in both distillation losses so their gradients update only the
// student path.

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "mer/tensor.hpp"

namespace mer {

constexpr float kLogFloor = 1e-12f;

// softmax(h W + b) row-wise
template <class T>
TensorT<T> classify(const TensorT<T>& h, const TensorT<T>& w, const TensorT<T>& b) {
  return masked_softmax(add_rowvec(matmul(h, w), b), 1);
}

// -(1/n_valid) sum_i log probs[i, y_i]; the ignore-sentinel (label == C)
// must be masked out by the caller
template <class T>
TensorT<T> cross_entropy(const TensorT<T>& probs, const std::vector<int>& labels,
                         const std::vector<uint8_t>& mask = {}) {
  if (int64_t(labels.size()) != probs.rows())
    throw std::invalid_argument("cross_entropy: label count mismatch");
  std::vector<int> safe_labels = labels;
  if (!mask.empty()) {
    if (mask.size() != labels.size())
      throw std::invalid_argument("cross_entropy: mask length mismatch");
    for (size_t i = 0; i < safe_labels.size(); ++i)
      if (!mask[i]) safe_labels[i] = 0;  // excluded from the mean anyway
  }
  auto picked = select_per_row(probs, safe_labels);
  auto logs = log_clamped(picked, T(kLogFloor));
  return scale(masked_mean_vec(logs, mask), T(-1));
}

// squared Frobenius distance over valid rows, teacher detached
template <class T>
TensorT<T> low_level_distill(const TensorT<T>& teacher_h, const TensorT<T>& student_h,
                             const std::vector<uint8_t>& mask = {}) {
  detail::check_same_shape(teacher_h, student_h, "low_level_distill");
  auto diff = mask_rows(sub(detach(teacher_h), student_h), mask);
  return sum_all(mul(diff, diff));
}

// mean over valid rows of KL(teacher row || student row), teacher detached,
// both log arguments clamped
template <class T>
TensorT<T> high_level_distill(const TensorT<T>& teacher_probs, const TensorT<T>& student_probs,
                              const std::vector<uint8_t>& mask = {}) {
  detail::check_same_shape(teacher_probs, student_probs, "high_level_distill");
  const int64_t n = teacher_probs.rows(), c = teacher_probs.cols();
  if (!mask.empty() && int64_t(mask.size()) != n)
    throw std::invalid_argument("high_level_distill: mask length mismatch");

  auto teacher = detach(teacher_probs);
  int64_t n_valid = 0;
  double entropy_term = 0.0;  // sum of t * log t over valid rows
  for (int64_t i = 0; i < n; ++i) {
    if (!mask.empty() && !mask[size_t(i)]) continue;
    ++n_valid;
    for (int64_t j = 0; j < c; ++j) {
      const double t = std::max(double(teacher.values()[size_t(i * c + j)]), double(kLogFloor));
      entropy_term += double(teacher.values()[size_t(i * c + j)]) * std::log(t);
    }
  }
  if (n_valid == 0) throw std::invalid_argument("high_level_distill: no valid positions");

  auto log_student = log_clamped(student_probs, T(kLogFloor));
  auto cross_term = sum_all(mask_rows(mul(teacher, log_student), mask));
  auto kl = scale(sub(TensorT<T>::scalar(T(entropy_term)), cross_term),
                  T(1.0 / double(n_valid)));
  return kl;
}

struct NonFiniteLossError : std::runtime_error {
  explicit NonFiniteLossError(const std::string& term)
      : std::runtime_error("non-finite loss term: " + term) {}
};

// named loss terms and the gamma-weighted total; inactive entries stay zero
struct LossParts {
  double re = 0.0;
  std::array<double, 4> ce{0, 0, 0, 0};    // t, a, v, x
  std::array<double, 3> mse{0, 0, 0};      // per student modality
  std::array<double, 3> kl{0, 0, 0};
  double total = 0.0;
  double gamma1 = 0.0, gamma2 = 0.0;

  double ce_sum() const { return ce[0] + ce[1] + ce[2] + ce[3]; }
  double mse_sum() const { return mse[0] + mse[1] + mse[2]; }
  double kl_sum() const { return kl[0] + kl[1] + kl[2]; }
  double recomposed() const { return ce_sum() + re + gamma1 * mse_sum() + gamma2 * kl_sum(); }

  void check_finite() const {
    const char* names[4] = {"ce_t", "ce_a", "ce_v", "ce_x"};
    for (int i = 0; i < 4; ++i)
      if (!std::isfinite(ce[size_t(i)])) throw NonFiniteLossError(names[i]);
    if (!std::isfinite(re)) throw NonFiniteLossError("re");
    for (int i = 0; i < 3; ++i) {
      if (!std::isfinite(mse[size_t(i)])) throw NonFiniteLossError("mse");
      if (!std::isfinite(kl[size_t(i)])) throw NonFiniteLossError("kl");
    }
    if (!std::isfinite(total)) throw NonFiniteLossError("total");
  }
};

inline LossParts average_loss_parts(const std::vector<LossParts>& parts) {
  if (parts.empty()) throw std::invalid_argument("average_loss_parts: empty");
  LossParts out;
  out.gamma1 = parts[0].gamma1;
  out.gamma2 = parts[0].gamma2;
  const double inv = 1.0 / double(parts.size());
  for (const auto& p : parts) {
    out.re += p.re * inv;
    out.total += p.total * inv;
    for (int i = 0; i < 4; ++i) out.ce[size_t(i)] += p.ce[size_t(i)] * inv;
    for (int i = 0; i < 3; ++i) {
      out.mse[size_t(i)] += p.mse[size_t(i)] * inv;
      out.kl[size_t(i)] += p.kl[size_t(i)] * inv;
    }
  }
  return out;
}

}  // namespace mer
