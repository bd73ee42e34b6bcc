#pragma once

#include <cmath>
#include <functional>

#include "soupkit/data.hpp"
#include "soupkit/model.hpp"
#include "soupkit/rng.hpp"
#include "soupkit/transformer.hpp"

namespace soupkit::test {

inline ModelConfig tiny_config() {
  ModelConfig c;
  c.d_model = 8;
  c.n_layers = 1;
  c.n_heads = 2;
  c.d_ff = 16;
  c.vocab_size = 8;
  c.max_seq_len = 8;
  return c;
}

/// Random small config: d_model <= 16, n_layers <= 2.
inline ModelConfig random_config(Rng& rng) {
  ModelConfig c;
  const std::size_t heads[] = {1, 2, 4};
  c.n_heads = heads[rng.below(3)];
  c.d_model = c.n_heads * (1 + rng.below(16 / c.n_heads));
  c.n_layers = 1 + rng.below(2);
  c.d_ff = 2 + rng.below(15);
  c.vocab_size = 3 + rng.below(10);
  c.max_seq_len = 4 + rng.below(5);
  return c;
}

inline bool is_norm_tensor(const std::string& name) { return name.find("norm") != std::string::npos; }

/// Ancestor with non-unit norm gains so their gradients are exercised too.
inline Checkpoint random_checkpoint(const ModelConfig& cfg, std::uint64_t seed, double scale = 0.5) {
  Checkpoint ck = init_ancestor(cfg, static_cast<std::int64_t>(seed));
  Rng rng(seed ^ 0xabcdefULL);
  for (auto& [name, t] : ck.tensors)
    for (double& v : t.data) v = is_norm_tensor(name) ? 1.0 + 0.3 * rng.normal() : scale * rng.normal();
  return ck;
}

struct RandomBatch {
  TokenMatrix inputs, targets;
};

inline RandomBatch random_batch(const ModelConfig& cfg, Rng& rng, std::size_t rows, std::size_t cols,
                                int pad_id = -1) {
  RandomBatch b{TokenMatrix(rows, cols), TokenMatrix(rows, cols)};
  for (auto& id : b.inputs.ids) id = static_cast<int>(rng.below(cfg.vocab_size));
  for (auto& id : b.targets.ids) id = static_cast<int>(rng.below(cfg.vocab_size));
  if (pad_id >= 0 && cols > 1) b.targets(0, cols - 1) = pad_id;
  return b;
}

inline double central_difference(const std::function<double(double)>& f, double x, double eps) {
  return (f(x + eps) - f(x - eps)) / (2.0 * eps);
}

/// |a - b| / max(|a|, |b|, floor); the floor avoids dividing by ~0 gradients.
inline double rel_err(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

}  // namespace soupkit::test
