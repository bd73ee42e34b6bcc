#pragma once

// Full-weight finetuning, used to derive base variants from the ancestor.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "soupkit/adam.hpp"
#include "soupkit/data.hpp"
#include "soupkit/model.hpp"
#include "soupkit/transformer.hpp"

namespace soupkit {

struct FinetuneConfig {
  double learning_rate = 3e-3;
  std::size_t steps = 1000;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
  std::string tag = "task";
  double weight_decay = 0.0;
  /// Decay toward the starting weights rather than toward zero.
  bool decay_to_start = false;
};

struct FinetuneResult {
  Checkpoint checkpoint;
  std::vector<double> losses;
};

inline FinetuneResult finetune(const Checkpoint& base, const Dataset& data, const FinetuneConfig& cfg) {
  if (data.empty()) fail("finetune: empty dataset");
  if (!(cfg.learning_rate > 0.0)) fail("finetune: learning rate must be positive");
  if (cfg.batch_size == 0) fail("finetune: batch size must be positive");
  check_fits(data, base.config);

  FinetuneResult result{base, {}};
  Checkpoint& ckpt = result.checkpoint;
  ckpt.lineage.push_back("finetune:" + cfg.tag);
  const auto units = enumerate_units(ckpt.config);
  std::size_t n_params = 0;
  for (const auto& u : units) n_params += ckpt.at(u).size();
  Adam opt(n_params, {.learning_rate = cfg.learning_rate, .weight_decay = cfg.weight_decay});
  std::vector<double> flat(n_params), flat_grad(n_params);
  if (cfg.decay_to_start) {
    std::size_t off = 0;
    for (const auto& u : units) {
      const auto& w = ckpt.at(u).data;
      std::copy(w.begin(), w.end(), flat.begin() + static_cast<long>(off));
      off += w.size();
    }
    opt.set_decay_anchor(flat);
  }

  Rng rng(cfg.seed);
  std::vector<std::size_t> order;
  std::size_t cursor = 0;
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    if (cursor >= order.size()) {
      order.resize(data.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      rng.shuffle(order);
      cursor = 0;
    }
    std::vector<const Sample*> rows;
    for (; rows.size() < cfg.batch_size && cursor < order.size(); ++cursor)
      rows.push_back(&data[order[cursor]]);
    const Batch batch = make_batch(rows);
    const auto lg = loss_and_weight_grads(ckpt, batch.inputs, batch.targets, kPad);
    if (!std::isfinite(lg.loss))
      throw NumericError("finetune: non-finite loss at step " + std::to_string(step), static_cast<long>(step));
    result.losses.push_back(lg.loss);

    std::size_t off = 0;
    for (const auto& u : units) {
      const auto name = u.tensor_name();
      const auto& w = ckpt.tensors.at(name).data;
      const auto& g = lg.grads.at(name).data;
      std::copy(w.begin(), w.end(), flat.begin() + static_cast<long>(off));
      std::copy(g.begin(), g.end(), flat_grad.begin() + static_cast<long>(off));
      off += w.size();
    }
    opt.step(flat, flat_grad);
    off = 0;
    for (const auto& u : units) {
      auto& w = ckpt.tensors.at(u.tensor_name()).data;
      std::copy(flat.begin() + static_cast<long>(off), flat.begin() + static_cast<long>(off + w.size()), w.begin());
      off += w.size();
    }
  }
  return result;
}

}  // namespace soupkit
