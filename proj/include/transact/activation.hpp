#pragma once

#include <cmath>

#include "transact/config.hpp"

namespace transact {

template <typename T>
T activate(Activation kind, T x) {
  switch (kind) {
    case Activation::silu: return x / (T(1) + std::exp(-x));
    case Activation::relu: return x > T(0) ? x : T(0);
    case Activation::gelu: return T(0.5) * x * (T(1) + std::erf(x / std::sqrt(T(2))));
  }
  return x;
}

/// dσ/dx
template <typename T>
T activate_grad(Activation kind, T x) {
  switch (kind) {
    case Activation::silu: {
      const T s = T(1) / (T(1) + std::exp(-x));
      return s + x * s * (T(1) - s);
    }
    case Activation::relu: return x > T(0) ? T(1) : T(0);
    case Activation::gelu: {
      const T pi = T(3.14159265358979323846);
      const T cdf = T(0.5) * (T(1) + std::erf(x / std::sqrt(T(2))));
      const T pdf = std::exp(-x * x / T(2)) / std::sqrt(T(2) * pi);
      return cdf + x * pdf;
    }
  }
  return T(1);
}

}  // namespace transact
