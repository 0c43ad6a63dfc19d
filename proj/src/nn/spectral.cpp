#include "saalae/nn/spectral.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

#include "saalae/ops.hpp"

namespace saalae::nn {

namespace {

template <typename T>
void check_weight(const Tensor<T>& w) {
  if (w.rank() == 0 || w.size() == 0) throw std::invalid_argument("spectral norm: empty weight");
  bool nonzero = false;
  for (auto x : w.storage()) {
    if (!std::isfinite(x)) throw std::domain_error("spectral norm: non-finite weight entry");
    nonzero = nonzero || x != T(0);
  }
  if (!nonzero) throw std::domain_error("degenerate weight");
}

template <typename T>
T normalize(std::vector<T>& v) {
  T n = 0;
  for (auto x : v) n += x * x;
  n = std::sqrt(n);
  if (!(n > T(0))) return n;
  for (auto& x : v) x /= n;
  return n;
}

}  // namespace

template <typename T>
SpectralState<T> SpectralState<T>::random(std::int64_t rows, std::int64_t cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  auto draw = [&](std::int64_t n) {
    std::vector<T> v(static_cast<std::size_t>(n));
    for (auto& x : v) x = static_cast<T>(nd(rng));
    normalize(v);
    return Tensor<T>({n}, std::move(v));
  };
  SpectralState s;
  s.u = draw(rows);
  s.v = draw(cols);
  return s;
}

template <typename T>
T power_iterate(const Tensor<T>& weight, SpectralState<T>& state, int iterations) {
  check_weight(weight);
  const std::int64_t rows = weight.dim(0), cols = weight.size() / rows;
  if (state.u.size() != rows || state.v.size() != cols) {
    throw std::invalid_argument("spectral norm: state does not match weight " + shape_to_string(weight.shape()));
  }
  std::vector<T> u(state.u.storage()), v(static_cast<std::size_t>(cols));
  for (int it = 0; it < iterations; ++it) {
    ops::gemm(u.data(), false, weight.data(), false, v.data(), 1, cols, rows);
    if (!(normalize(v) > T(0))) throw std::domain_error("degenerate weight");
    ops::gemm(weight.data(), false, v.data(), false, u.data(), rows, 1, cols);
    if (!(normalize(u) > T(0))) throw std::domain_error("degenerate weight");
  }
  if (iterations > 0) {
    state.u.storage() = u;
    state.v.storage() = v;
  }
  return spectral_norm_estimate(weight, state);
}

template <typename T>
T spectral_norm_estimate(const Tensor<T>& weight, const SpectralState<T>& state) {
  const std::int64_t rows = weight.dim(0), cols = weight.size() / rows;
  std::vector<T> wv(static_cast<std::size_t>(rows));
  ops::gemm(weight.data(), false, state.v.data(), false, wv.data(), rows, 1, cols);
  T sigma = 0;
  for (std::int64_t i = 0; i < rows; ++i) sigma += state.u[i] * wv[static_cast<std::size_t>(i)];
  return sigma;
}

template <typename T>
Tensor<T> spectral_normalize(const Tensor<T>& weight, SpectralState<T>& state, int n_power_iters) {
  if (n_power_iters < 1) throw std::invalid_argument("spectral_normalize: n_power_iters must be positive");
  const T sigma = power_iterate(weight, state, n_power_iters);
  if (!(sigma > T(0)) || !std::isfinite(sigma)) throw std::domain_error("degenerate weight");
  Tensor<T> out = weight;
  for (auto& x : out.storage()) x /= sigma;
  return out;
}

template <typename T>
Var<T> spectral_normalized(const Var<T>& weight, SpectralState<T>& state, bool update, int n_power_iters) {
  const Tensor<T>& w = weight->value;
  const T sigma = update ? power_iterate(w, state, n_power_iters) : (check_weight(w), spectral_norm_estimate(w, state));
  if (!(sigma > T(0)) || !std::isfinite(sigma)) throw std::domain_error("degenerate weight");
  Tensor<T> out = w;
  for (auto& x : out.storage()) x /= sigma;
  auto u = std::make_shared<Tensor<T>>(state.u);
  auto v = std::make_shared<Tensor<T>>(state.v);
  return detail::make_result<T>(std::move(out), {weight}, [sigma, u, v](Node<T>& self) {
    auto& p = self.parents[0];
    auto& g = p->grad_buffer();
    const std::int64_t rows = u->size(), cols = v->size();
    T inner = 0;  // <G, W_sn>
    for (std::int64_t i = 0; i < self.grad.size(); ++i) inner += self.grad[i] * self.value[i];
    for (std::int64_t r = 0; r < rows; ++r)
      for (std::int64_t c = 0; c < cols; ++c) {
        const std::int64_t i = r * cols + c;
        g[i] += (self.grad[i] - inner * (*u)[r] * (*v)[c]) / sigma;
      }
  });
}

#define SAALAE_INSTANTIATE(T)                                                          \
  template struct SpectralState<T>;                                                    \
  template T power_iterate(const Tensor<T>&, SpectralState<T>&, int);                  \
  template T spectral_norm_estimate(const Tensor<T>&, const SpectralState<T>&);        \
  template Tensor<T> spectral_normalize(const Tensor<T>&, SpectralState<T>&, int);     \
  template Var<T> spectral_normalized(const Var<T>&, SpectralState<T>&, bool, int);

SAALAE_INSTANTIATE(float)
SAALAE_INSTANTIATE(double)
#undef SAALAE_INSTANTIATE

}  // namespace saalae::nn
