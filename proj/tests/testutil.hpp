#pragma once
// Shared test helpers: random tensors, a least-squares linear-probe oracle
// (independent of the model code), and dataset flattening utilities.

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "mer/data.hpp"
#include "mer/rng.hpp"
#include "mer/tensor.hpp"

namespace testutil {

inline std::vector<float> random_values(size_t n, mer::Rng& rng, float scale = 1.f) {
  std::vector<float> v(n);
  for (auto& e : v) e = scale * rng.normal();
  return v;
}

inline mer::Tensor random_tensor(mer::Shape s, mer::Rng& rng, bool requires_grad = false,
                                 float scale = 1.f) {
  auto v = random_values(size_t(mer::shape_numel(s)), rng, scale);
  return mer::Tensor::from_data(std::move(s), std::move(v), requires_grad);
}

// materialize a float constant at the parameter store's precision
template <class PS>
auto typed_const(const PS&, const mer::Shape& s, const std::vector<float>& v) {
  using S = typename PS::value_type;
  std::vector<S> data(v.begin(), v.end());
  return mer::TensorT<S>::from_data(s, std::move(data));
}

// ---------------------------------------------------------------------------
// least-squares linear probe (one-vs-all ridge regression, argmax decode)
// ---------------------------------------------------------------------------

namespace detail {

// solve (A + ridge I) W = B for SPD A via Cholesky, in double
inline std::vector<double> spd_solve(std::vector<double> a, std::vector<double> b, int n,
                                     int rhs, double ridge) {
  for (int i = 0; i < n; ++i) a[size_t(i * n + i)] += ridge;
  // in-place Cholesky A = L L^T
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j <= i; ++j) {
      double sum = a[size_t(i * n + j)];
      for (int k = 0; k < j; ++k) sum -= a[size_t(i * n + k)] * a[size_t(j * n + k)];
      if (i == j) {
        if (sum <= 0) throw std::runtime_error("probe: matrix not positive definite");
        a[size_t(i * n + j)] = std::sqrt(sum);
      } else {
        a[size_t(i * n + j)] = sum / a[size_t(j * n + j)];
      }
    }
  }
  // forward/backward substitution per right-hand side
  std::vector<double> w(size_t(n * rhs), 0.0);
  std::vector<double> y(size_t(n), 0.0);
  for (int r = 0; r < rhs; ++r) {
    for (int i = 0; i < n; ++i) {
      double sum = b[size_t(i * rhs + r)];
      for (int k = 0; k < i; ++k) sum -= a[size_t(i * n + k)] * y[size_t(k)];
      y[size_t(i)] = sum / a[size_t(i * n + i)];
    }
    for (int i = n - 1; i >= 0; --i) {
      double sum = y[size_t(i)];
      for (int k = i + 1; k < n; ++k) sum -= a[size_t(k * n + i)] * w[size_t(k * rhs + r)];
      w[size_t(i * rhs + r)] = sum / a[size_t(i * n + i)];
    }
  }
  return w;
}

}  // namespace detail

// Fit W on (x_train, y_train) with a bias column, score on (x_eval, y_eval).
inline double linear_probe_accuracy(const std::vector<std::vector<float>>& x_train,
                                    const std::vector<int>& y_train,
                                    const std::vector<std::vector<float>>& x_eval,
                                    const std::vector<int>& y_eval, int num_classes,
                                    double ridge = 1e-3) {
  if (x_train.empty() || x_train.size() != y_train.size())
    throw std::invalid_argument("probe: bad training data");
  const int d = int(x_train[0].size()) + 1;  // + bias
  const int n = int(x_train.size());

  std::vector<double> xtx(size_t(d * d), 0.0);
  std::vector<double> xty(size_t(d) * size_t(num_classes), 0.0);
  std::vector<double> row(size_t(d), 0.0);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j + 1 < d; ++j) row[size_t(j)] = double(x_train[size_t(i)][size_t(j)]);
    row[size_t(d - 1)] = 1.0;
    for (int j = 0; j < d; ++j) {
      for (int k = j; k < d; ++k) xtx[size_t(j * d + k)] += row[size_t(j)] * row[size_t(k)];
      xty[size_t(j * num_classes + y_train[size_t(i)])] += row[size_t(j)];
    }
  }
  for (int j = 0; j < d; ++j)
    for (int k = 0; k < j; ++k) xtx[size_t(j * d + k)] = xtx[size_t(k * d + j)];

  const auto w = detail::spd_solve(std::move(xtx), std::move(xty), d, num_classes, ridge);

  int correct = 0;
  for (size_t i = 0; i < x_eval.size(); ++i) {
    int best = 0;
    double best_score = -1e300;
    for (int c = 0; c < num_classes; ++c) {
      double score = w[size_t((d - 1) * num_classes + c)];
      for (int j = 0; j + 1 < d; ++j)
        score += double(x_eval[i][size_t(j)]) * w[size_t(j * num_classes + c)];
      if (score > best_score) {
        best_score = score;
        best = c;
      }
    }
    if (best == y_eval[i]) ++correct;
  }
  return x_eval.empty() ? 0.0 : double(correct) / double(x_eval.size());
}

// flatten per-utterance features of the given modalities (concatenated)
inline void flatten_features(const mer::Dataset& ds, const std::vector<int>& modalities,
                             std::vector<std::vector<float>>& x, std::vector<int>& y) {
  for (const auto& conv : ds.convs) {
    for (int64_t i = 0; i < conv.length(); ++i) {
      std::vector<float> row;
      for (int m : modalities) {
        const int dm = ds.modality_dims[size_t(m)];
        const float* p = conv.feats[size_t(m)].data() + i * dm;
        row.insert(row.end(), p, p + dm);
      }
      x.push_back(std::move(row));
      y.push_back(conv.labels[size_t(i)]);
    }
  }
}

}  // namespace testutil
