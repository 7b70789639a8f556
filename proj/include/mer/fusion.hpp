#pragma once
// Variational fusion: map each augmented modality stream to a Gaussian,
// average the Gaussians into the multimodal distribution, and draw the
// fused representation via the reparameterization trick.

#include <vector>

#include "mer/rng.hpp"
#include "mer/tensor.hpp"

namespace mer {

constexpr float kSigmaFloor = 1e-4f;

template <class T>
struct MlpParamsT {
  TensorT<T> w1, b1, w2, b2;  // d -> d_h -> d, ReLU hidden
};

template <class T>
struct GaussianPairT {
  TensorT<T> mu;     // n x d
  TensorT<T> sigma;  // n x d, entries > kSigmaFloor
};

template <class T>
TensorT<T> mlp_forward(const TensorT<T>& x, const MlpParamsT<T>& p) {
  auto hidden = relu(add_rowvec(matmul(x, p.w1), p.b1));
  return add_rowvec(matmul(hidden, p.w2), p.b2);
}

// mu = mu-MLP(h); sigma = softplus(sigma-MLP(h)) + floor
template <class T>
GaussianPairT<T> modality_gaussian(const TensorT<T>& h, const MlpParamsT<T>& mu_mlp,
                                   const MlpParamsT<T>& sigma_mlp) {
  GaussianPairT<T> out;
  out.mu = mlp_forward(h, mu_mlp);
  auto raw = mlp_forward(h, sigma_mlp);
  out.sigma = add(softplus(raw), TensorT<T>::filled(raw.shape(), T(kSigmaFloor)));
  return out;
}

// arithmetic mean of means and of standard deviations
template <class T>
GaussianPairT<T> mix_gaussians(const std::vector<GaussianPairT<T>>& pairs) {
  if (pairs.empty()) throw std::invalid_argument("mix_gaussians: empty list");
  std::vector<TensorT<T>> mus, sigmas;
  for (const auto& p : pairs) {
    mus.push_back(p.mu);
    sigmas.push_back(p.sigma);
  }
  GaussianPairT<T> out;
  out.mu = mean_tensors(mus);
  out.sigma = mean_tensors(sigmas);
  return out;
}

enum class Mode { kTrain, kEval };

// train: mu + eps .* sigma with eps ~ N(0, I); eval: mu exactly
template <class T>
TensorT<T> reparameterize(const GaussianPairT<T>& pair, Mode mode, Rng* rng) {
  if (mode == Mode::kEval) return pair.mu;
  if (!rng) throw std::invalid_argument("reparameterize: train mode needs an rng");
  std::vector<T> eps(size_t(pair.mu.size()));
  for (auto& e : eps) e = T(rng->normal());
  auto eps_t = TensorT<T>::from_data(pair.mu.shape(), std::move(eps));
  return add(pair.mu, mul(pair.sigma, eps_t));
}

}  // namespace mer
