#pragma once

// Central finite differences of L = sum(W .* f(X)) for an MLP, compared with
// its reverse-mode gradients. The loss is re-evaluated in extended precision
// so that cancellation in L(+h) - L(-h) stays below the tolerance even for
// tiny gradients of wide nets.

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "tscopf/mlp.hpp"

namespace oracle {

struct GradCheck {
  double worst_param = 0.0;
  double worst_input = 0.0;
  int checked = 0;
};

/// Forward pass written out independently, in long double.
inline long double loss_ld(const tscopf::nn::Mlp& net, const tscopf::nn::Matrix& x, const tscopf::nn::Matrix& w) {
  using M = Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic>;
  M a = x.cast<long double>();
  for (std::size_t l = 0; l < net.n_layers(); ++l) {
    M z = net.weight(l).cast<long double>() * a;
    for (Eigen::Index j = 0; j < z.cols(); ++j) z.col(j) += net.bias(l).cast<long double>();
    if (l + 1 < net.n_layers()) {
      a = z.cwiseMax(0.0L);
    } else if (net.output_activation() == tscopf::nn::OutputActivation::TanhScaled) {
      a = z;
      for (Eigen::Index i = 0; i < z.rows(); ++i) {
        const long double lo = net.lower()(i), hi = net.upper()(i);
        for (Eigen::Index j = 0; j < z.cols(); ++j) a(i, j) = lo + (hi - lo) / 2 * (std::tanh(z(i, j)) + 1);
      }
    } else {
      a = z;
    }
  }
  return (a.array() * w.cast<long double>().array()).sum();
}

inline double relative_error(double analytic, double numeric) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
  return std::abs(analytic - numeric) / scale;
}

/// Checks every parameter when the net is small, otherwise `sample` random
/// coordinates (always including each layer's first and last weights).
inline GradCheck gradient_check(tscopf::nn::Mlp net, const tscopf::nn::Matrix& x, const tscopf::nn::Matrix& w,
                                std::mt19937_64& rng, int sample = 300, double h = 1e-6) {
  using tscopf::nn::Matrix;
  auto loss = [&](const tscopf::nn::Mlp& m, const Matrix& in) { return loss_ld(m, in, w); };
  tscopf::nn::Mlp::Cache cache;
  net.forward(x, &cache);
  const auto g = net.backward(cache, w);

  const auto n = static_cast<std::size_t>(net.params().size());
  std::vector<std::size_t> idx;
  if (n <= static_cast<std::size_t>(sample)) {
    for (std::size_t i = 0; i < n; ++i) idx.push_back(i);
  } else {
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    for (int i = 0; i < sample; ++i) idx.push_back(pick(rng));
    idx.push_back(0);
    idx.push_back(n - 1);
  }
  GradCheck r;
  for (auto i : idx) {
    const double keep = net.params()(static_cast<Eigen::Index>(i));
    const double p_up = keep + h, p_down = keep - h;
    net.params()(static_cast<Eigen::Index>(i)) = p_up;
    const long double up = loss(net, x);
    net.params()(static_cast<Eigen::Index>(i)) = p_down;
    const long double down = loss(net, x);
    net.params()(static_cast<Eigen::Index>(i)) = keep;
    const auto numeric = static_cast<double>((up - down) / (static_cast<long double>(p_up) - p_down));
    r.worst_param = std::max(r.worst_param, relative_error(g.params(static_cast<Eigen::Index>(i)), numeric));
    ++r.checked;
  }
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      Matrix xp = x, xm = x;
      xp(i, j) += h;
      xm(i, j) -= h;
      const auto numeric =
          static_cast<double>((loss(net, xp) - loss(net, xm)) / (static_cast<long double>(xp(i, j)) - xm(i, j)));
      r.worst_input = std::max(r.worst_input, relative_error(g.input(i, j), numeric));
      ++r.checked;
    }
  return r;
}

/// The random-net family: 20 actor-shaped, 20 critic-shaped (38-256x3-19 and
/// 57-256x3-1), 60 random small shapes with linear or tanh-scaled heads.
inline std::vector<tscopf::nn::Mlp> gradient_check_nets(std::mt19937_64& rng) {
  using namespace tscopf::nn;
  std::vector<Mlp> nets;
  std::uniform_int_distribution<int> width(1, 12), depth(1, 4);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto bounded = [&](std::vector<int> dims) {
    const int out = dims.back();
    Vector lo(out), hi(out);
    for (int k = 0; k < out; ++k) {
      lo(k) = -1.0 - unit(rng);
      hi(k) = lo(k) + 0.5 + 2.0 * unit(rng);
    }
    return Mlp(std::move(dims), lo, hi);
  };
  for (int i = 0; i < 20; ++i) nets.push_back(bounded({38, 256, 256, 256, 19}));
  for (int i = 0; i < 20; ++i) nets.push_back(Mlp({57, 256, 256, 256, 1}));
  for (int i = 0; i < 60; ++i) {
    std::vector<int> dims{width(rng)};
    for (int l = depth(rng); l > 0; --l) dims.push_back(width(rng));
    dims.push_back(width(rng));
    nets.push_back(i % 2 ? bounded(dims) : Mlp(dims));
  }
  for (auto& n : nets) n.initialize(rng);
  return nets;
}

}  // namespace oracle
