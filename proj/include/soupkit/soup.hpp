#pragma once

// Weight-space soups of two base checkpoints: one global ratio, or one learned
// coefficient pair per mapping trained on a small dev set with the bases frozen.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "soupkit/adam.hpp"
#include "soupkit/data.hpp"
#include "soupkit/error.hpp"
#include "soupkit/io.hpp"
#include "soupkit/model.hpp"
#include "soupkit/transformer.hpp"

namespace soupkit {

enum class ActivationKind { sigmoid, linear, clamp, softmax };

inline constexpr ActivationKind kAllActivations[] = {ActivationKind::sigmoid, ActivationKind::linear,
                                                     ActivationKind::clamp, ActivationKind::softmax};

inline std::string_view activation_name(ActivationKind k) {
  switch (k) {
    case ActivationKind::sigmoid: return "sigmoid";
    case ActivationKind::linear: return "linear";
    case ActivationKind::clamp: return "clamp";
    case ActivationKind::softmax: return "softmax";
  }
  return "?";
}

inline ActivationKind parse_activation(std::string_view name) {
  for (auto k : kAllActivations)
    if (activation_name(k) == name) return k;
  fail("unknown activation '", std::string(name), "'");
}

inline std::size_t raw_arity(ActivationKind k) { return k == ActivationKind::softmax ? 2 : 1; }

struct AlphaPair {
  double alpha1 = 0.5;
  double alpha2 = 0.5;
  bool operator==(const AlphaPair&) const = default;
};

namespace detail {

// Returns (a, 1 - a) with a + (1 - a) == 1 in floating point. For a < 0 the
// difference 1 - a can round, so a is re-derived from it.
inline AlphaPair complete_pair(double a) {
  double b = 1.0 - a;
  if (a < 0.0) a = 1.0 - b;
  return {a, b};
}

}  // namespace detail

inline AlphaPair activate(std::span<const double> raw, ActivationKind kind) {
  if (raw.size() != raw_arity(kind))
    fail("activation ", std::string(activation_name(kind)), " expects ",
         std::to_string(raw_arity(kind)), " raw values, got ", std::to_string(raw.size()));
  switch (kind) {
    case ActivationKind::sigmoid: return detail::complete_pair(1.0 / (1.0 + std::exp(-raw[0])));
    case ActivationKind::linear: return detail::complete_pair(raw[0]);
    case ActivationKind::clamp: return detail::complete_pair(std::clamp(raw[0], 0.0, 1.0));
    case ActivationKind::softmax:
      return detail::complete_pair(1.0 / (1.0 + std::exp(raw[1] - raw[0])));
  }
  return {};
}

/// d(alpha1)/d(raw). alpha2 = 1 - alpha1, so its Jacobian is the negation.
inline std::vector<double> activation_jacobian(std::span<const double> raw, ActivationKind kind) {
  const AlphaPair a = activate(raw, kind);
  switch (kind) {
    case ActivationKind::sigmoid: return {a.alpha1 * a.alpha2};
    case ActivationKind::linear: return {1.0};
    case ActivationKind::clamp: return {(raw[0] >= 0.0 && raw[0] <= 1.0) ? 1.0 : 0.0};
    case ActivationKind::softmax: return {a.alpha1 * a.alpha2, -a.alpha1 * a.alpha2};
  }
  return {};
}

/// Initialization that activates to (0.5, 0.5).
inline std::vector<double> default_raw(ActivationKind kind) {
  switch (kind) {
    case ActivationKind::sigmoid: return {0.0};
    case ActivationKind::linear: return {0.5};
    case ActivationKind::clamp: return {0.5};
    case ActivationKind::softmax: return {0.5, 0.5};
  }
  return {};
}

using AlphaMap = std::map<SoupUnitId, AlphaPair>;
using RawMap = std::map<SoupUnitId, std::vector<double>>;

struct AlphaSet {
  ActivationKind activation = ActivationKind::softmax;
  RawMap raw;

  [[nodiscard]] AlphaMap activated() const {
    AlphaMap out;
    for (const auto& [unit, r] : raw) out.emplace(unit, activate(r, activation));
    return out;
  }

  [[nodiscard]] double mean_alpha1() const {
    double s = 0.0;
    for (const auto& [unit, r] : raw) s += activate(r, activation).alpha1;
    return raw.empty() ? 0.0 : s / static_cast<double>(raw.size());
  }

  [[nodiscard]] double mean_abs_raw() const {
    double s = 0.0;
    std::size_t n = 0;
    for (const auto& [unit, r] : raw)
      for (double v : r) {
        s += std::abs(v);
        ++n;
      }
    return n ? s / static_cast<double>(n) : 0.0;
  }

  bool operator==(const AlphaSet&) const = default;
};

inline AlphaSet default_alpha_set(const ModelConfig& cfg, ActivationKind kind) {
  AlphaSet set{kind, {}};
  for (const auto& u : enumerate_units(cfg)) set.raw.emplace(u, default_raw(kind));
  return set;
}

inline void check_compatible(const Checkpoint& c1, const Checkpoint& c2) {
  if (!(c1.config == c2.config)) fail("soup: base checkpoints have different model configs");
  for (const auto& [name, t] : c1.tensors) {
    auto it = c2.tensors.find(name);
    if (it == c2.tensors.end()) fail("soup: tensor '", name, "' missing from second base");
    if (it->second.shape != t.shape) fail("soup: tensor '", name, "' has mismatched shapes");
  }
  if (c1.tensors.size() != c2.tensors.size()) fail("soup: bases have different tensor sets");
}

template <class Map>
void check_unit_keys(const Map& keyed, const ModelConfig& cfg) {
  const auto units = enumerate_units(cfg);
  for (const auto& u : units)
    if (!keyed.count(u)) fail("soup: no alpha for unit ", u.label());
  if (keyed.size() != units.size()) {
    for (const auto& [u, v] : keyed)
      if (std::find(units.begin(), units.end(), u) == units.end())
        fail("soup: alpha given for unknown unit ", u.label());
  }
}

/// theta_s = alpha1 * theta_1 + alpha2 * theta_2 per unit.
inline Checkpoint merge(const Checkpoint& c1, const Checkpoint& c2, const AlphaMap& alphas) {
  check_compatible(c1, c2);
  check_unit_keys(alphas, c1.config);
  Checkpoint out;
  out.config = c1.config;
  out.seed = c1.seed;
  out.lineage = {"soup"};
  out.lineage.insert(out.lineage.end(), c1.lineage.begin(), c1.lineage.end());
  out.lineage.insert(out.lineage.end(), c2.lineage.begin(), c2.lineage.end());
  for (const auto& [unit, a] : alphas) {
    const auto name = unit.tensor_name();
    const auto& t1 = c1.at(name);
    const auto& t2 = c2.at(name);
    Tensor t(t1.shape);
    for (std::size_t i = 0; i < t.size(); ++i) t.data[i] = a.alpha1 * t1.data[i] + a.alpha2 * t2.data[i];
    out.tensors.emplace(name, std::move(t));
  }
  return out;
}

inline Checkpoint vanilla_soup(const Checkpoint& c1, const Checkpoint& c2, double alpha1) {
  if (!(alpha1 >= 0.0 && alpha1 <= 1.0)) fail("vanilla soup: alpha1 must lie in [0, 1]");
  AlphaMap alphas;
  const AlphaPair pair = detail::complete_pair(alpha1);
  for (const auto& u : enumerate_units(c1.config)) alphas.emplace(u, pair);
  return merge(c1, c2, alphas);
}

inline Checkpoint apply_alpha(const Checkpoint& c1, const Checkpoint& c2, const AlphaSet& alphas) {
  check_unit_keys(alphas.raw, c1.config);
  return merge(c1, c2, alphas.activated());
}

/// Chain rule from merged-weight gradients to raw soup parameters:
/// dL/dalpha1 = <g_u, theta1_u - theta2_u>, then the activation Jacobian.
inline RawMap alpha_grad(const TensorMap& weight_grads, const Checkpoint& c1, const Checkpoint& c2,
                         const AlphaSet& alphas) {
  check_compatible(c1, c2);
  check_unit_keys(alphas.raw, c1.config);
  RawMap out;
  for (const auto& [unit, raw] : alphas.raw) {
    const auto name = unit.tensor_name();
    auto git = weight_grads.find(name);
    if (git == weight_grads.end()) fail("alpha_grad: no weight gradient for '", name, "'");
    const auto& g = git->second.data;
    const auto& t1 = c1.at(name).data;
    const auto& t2 = c2.at(name).data;
    if (g.size() != t1.size()) fail("alpha_grad: gradient '", name, "' has the wrong size");
    double d_alpha1 = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) d_alpha1 += g[i] * (t1[i] - t2[i]);
    auto jac = activation_jacobian(raw, alphas.activation);
    for (double& j : jac) j *= d_alpha1;
    out.emplace(unit, std::move(jac));
  }
  return out;
}

struct SoupTrainConfig {
  double learning_rate = 0.1;
  std::size_t epochs = 3;
  std::size_t batch_size = 8;
  double lambda_l1 = 0.0;
  ActivationKind activation = ActivationKind::softmax;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(learning_rate > 0.0)) fail("soup training: learning rate must be positive");
    if (epochs < 1) fail("soup training: epochs must be >= 1");
    if (batch_size < 1) fail("soup training: batch size must be >= 1");
    if (!(lambda_l1 >= 0.0)) fail("soup training: lambda must be non-negative");
  }
};

struct SoupStep {
  std::size_t step = 0;
  double data_loss = 0.0;
  double l1_penalty = 0.0;
  double mean_alpha1 = 0.0;
};

struct SoupTrainResult {
  AlphaSet alphas;
  std::vector<SoupStep> history;
};

/// Minimizes dev loss + lambda * ||raw||_1 over the soup parameters with Adam.
inline SoupTrainResult train_alpha(const Checkpoint& c1, const Checkpoint& c2, const Dataset& dev,
                                   const SoupTrainConfig& cfg) {
  cfg.validate();
  check_compatible(c1, c2);
  if (dev.empty()) fail("soup training: empty dev set");
  check_fits(dev, c1.config);

  SoupTrainResult result{default_alpha_set(c1.config, cfg.activation), {}};
  AlphaSet& alphas = result.alphas;
  const std::size_t arity = raw_arity(cfg.activation);
  std::vector<double> flat(alphas.raw.size() * arity), flat_grad(flat.size());
  Adam opt(flat.size(), {.learning_rate = cfg.learning_rate});

  Rng rng(cfg.seed);
  std::vector<std::size_t> order(dev.size());
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);
    for (const auto& batch : make_batches(dev, order, cfg.batch_size)) {
      const Checkpoint merged = apply_alpha(c1, c2, alphas);
      const auto lg = loss_and_weight_grads(merged, batch.inputs, batch.targets, kPad);
      if (!std::isfinite(lg.loss))
        throw NumericError("soup training: non-finite loss at step " + std::to_string(step),
                           static_cast<long>(step));
      const auto grads = alpha_grad(lg.grads, c1, c2, alphas);

      double penalty = 0.0;
      std::size_t k = 0;
      for (const auto& [unit, raw] : alphas.raw) {
        const auto& g = grads.at(unit);
        for (std::size_t j = 0; j < arity; ++j, ++k) {
          const double r = raw[j];
          penalty += std::abs(r);
          flat[k] = r;
          // Subgradient of |r| is taken as 0 at r = 0.
          const double sign = r > 0.0 ? 1.0 : (r < 0.0 ? -1.0 : 0.0);
          flat_grad[k] = g[j] + cfg.lambda_l1 * sign;
        }
      }
      result.history.push_back({step, lg.loss, cfg.lambda_l1 * penalty, alphas.mean_alpha1()});

      opt.step(flat, flat_grad);
      k = 0;
      for (auto& [unit, raw] : alphas.raw)
        for (std::size_t j = 0; j < arity; ++j) raw[j] = flat[k++];
      for (double v : flat)
        if (!std::isfinite(v))
          throw NumericError("soup training: non-finite soup parameter after step " + std::to_string(step),
                             static_cast<long>(step));
      ++step;
    }
  }
  return result;
}

// Alpha CSV: unit_kind,layer,activation,raw0,raw1,alpha1,alpha2

inline std::string alpha_csv(const AlphaSet& alphas) {
  std::string out = "unit_kind,layer,activation,raw0,raw1,alpha1,alpha2\n";
  std::vector<SoupUnitId> units;
  for (const auto& [u, r] : alphas.raw) units.push_back(u);
  std::sort(units.begin(), units.end(),
            [](const SoupUnitId& a, const SoupUnitId& b) { return canonical_rank(a) < canonical_rank(b); });
  for (const auto& u : units) {
    const auto& r = alphas.raw.at(u);
    const AlphaPair a = activate(r, alphas.activation);
    out += std::string(kind_name(u.kind)) + "," + (u.layer ? std::to_string(*u.layer) : "") + "," +
           std::string(activation_name(alphas.activation)) + "," + format_full(r[0]) + "," +
           (r.size() > 1 ? format_full(r[1]) : "") + "," + format_full(a.alpha1) + "," +
           format_full(a.alpha2) + "\n";
  }
  return out;
}

inline AlphaSet parse_alpha_csv(std::string_view text) {
  const auto lines = split_lines(text);
  if (lines.empty() || lines[0] != "unit_kind,layer,activation,raw0,raw1,alpha1,alpha2")
    fail("alpha CSV: missing or unexpected header");
  AlphaSet set;
  bool have_kind = false;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto cols = split(lines[i], ',');
    if (cols.size() != 7) fail("alpha CSV line ", std::to_string(i + 1), ": expected 7 columns");
    SoupUnitId unit{parse_kind(cols[0]), std::nullopt};
    if (!cols[1].empty()) unit.layer = static_cast<std::size_t>(parse_int(cols[1]));
    if (is_per_layer(unit.kind) != unit.layer.has_value())
      fail("alpha CSV line ", std::to_string(i + 1), ": layer must be given iff the unit is per-layer");
    const ActivationKind kind = parse_activation(cols[2]);
    if (have_kind && kind != set.activation) fail("alpha CSV: mixed activations");
    set.activation = kind;
    have_kind = true;
    std::vector<double> raw{parse_double(cols[3])};
    if (raw_arity(kind) == 2) raw.push_back(parse_double(cols[4]));
    else if (!cols[4].empty()) fail("alpha CSV line ", std::to_string(i + 1), ": raw1 must be empty");
    for (double v : raw)
      if (!std::isfinite(v)) fail("alpha CSV line ", std::to_string(i + 1), ": non-finite raw value");
    if (!set.raw.emplace(unit, std::move(raw)).second)
      fail("alpha CSV: duplicate unit ", unit.label());
  }
  if (!have_kind) fail("alpha CSV: no rows");
  return set;
}

}  // namespace soupkit
