#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "soupkit/error.hpp"

namespace soupkit {

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// Decoupled (AdamW-style) decay applied to every parameter.
  double weight_decay = 0.0;
};

/// Adam with bias correction over a flat parameter vector.
class Adam {
 public:
  Adam(std::size_t n, AdamOptions opts) : opts_(opts), m_(n, 0.0), v_(n, 0.0) {}

  /// Decay pulls toward `anchor` instead of zero (L2-SP style) once set.
  void set_decay_anchor(std::vector<double> anchor) { anchor_ = std::move(anchor); }

  void step(std::span<double> params, std::span<const double> grads) {
    if (params.size() != m_.size() || grads.size() != m_.size())
      fail("adam: parameter count changed between steps");
    ++t_;
    const double c1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = opts_.beta1 * m_[i] + (1.0 - opts_.beta1) * grads[i];
      v_[i] = opts_.beta2 * v_[i] + (1.0 - opts_.beta2) * grads[i] * grads[i];
      params[i] -= opts_.learning_rate * ((m_[i] / c1) / (std::sqrt(v_[i] / c2) + opts_.eps) +
                                          opts_.weight_decay * (params[i] - (anchor_.empty() ? 0.0 : anchor_[i])));
    }
  }

  [[nodiscard]] long steps_taken() const noexcept { return t_; }

 private:
  AdamOptions opts_;
  std::vector<double> m_, v_, anchor_;
  long t_ = 0;
};

}  // namespace soupkit
