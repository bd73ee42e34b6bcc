#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "soupkit/model.hpp"
#include "soupkit/soup.hpp"
#include "soupkit/transformer.hpp"
#include "test_util.hpp"

namespace soupkit {
namespace {

using test::tiny_config;

TEST(ModelConfig, RejectsIndivisibleHeads) {
  ModelConfig c = tiny_config();
  c.n_heads = 3;
  EXPECT_THROW(c.validate(), ValidationError);
  c = tiny_config();
  c.max_seq_len = 1;
  EXPECT_THROW(c.validate(), ValidationError);
}

TEST(Units, CountsAndOrder) {
  ModelConfig c = tiny_config();
  c.n_layers = 2;
  EXPECT_EQ(enumerate_units(c).size(), 21u);
  c.n_layers = 32;
  EXPECT_EQ(enumerate_units(c).size(), 291u);
  c.n_layers = 1;
  const auto units = enumerate_units(c);
  EXPECT_EQ(units.front().kind, UnitKind::embed);
  EXPECT_EQ(units.back().kind, UnitKind::lm_head);
  EXPECT_EQ(units[1].kind, UnitKind::input_norm);
  EXPECT_EQ(units[9].kind, UnitKind::mlp_down);
  EXPECT_EQ(units[10].kind, UnitKind::final_norm);
}

TEST(Units, CanonicalRankMatchesEnumeration) {
  ModelConfig c = tiny_config();
  c.n_layers = 3;
  const auto units = enumerate_units(c);
  for (std::size_t i = 1; i < units.size(); ++i)
    EXPECT_LT(canonical_rank(units[i - 1]), canonical_rank(units[i]));
}

TEST(Units, LayerPresenceIsChecked) {
  const auto c = tiny_config();
  EXPECT_THROW(make_unit(UnitKind::attn_q, std::nullopt, c), ValidationError);
  EXPECT_THROW(make_unit(UnitKind::embed, 0, c), ValidationError);
  EXPECT_THROW(make_unit(UnitKind::attn_q, 1, c), ValidationError);
  EXPECT_NO_THROW(make_unit(UnitKind::attn_q, 0, c));
}

TEST(Units, BijectionOntoTensorNames) {
  Rng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    const auto cfg = test::random_config(rng);
    const auto ck = init_ancestor(cfg, trial);
    std::set<std::string> names;
    for (const auto& u : enumerate_units(cfg)) names.insert(u.tensor_name());
    std::set<std::string> ck_names;
    for (const auto& [n, t] : ck.tensors) ck_names.insert(n);
    EXPECT_EQ(names, ck_names);
    EXPECT_EQ(names.size(), enumerate_units(cfg).size());
  }
}

TEST(InitAncestor, Contract) {
  const auto c = tiny_config();
  const auto ck = init_ancestor(c, 7);
  EXPECT_EQ(ck.tensors.size(), 12u);
  EXPECT_EQ(ck.lineage, std::vector<std::string>{"ancestor@seed=7"});
  EXPECT_NO_THROW(ck.validate());
  EXPECT_EQ(ck.at("embed.weight").shape, (Shape{16, 8}));
  for (const auto& [name, t] : ck.tensors) {
    if (test::is_norm_tensor(name)) {
      for (double v : t.data) EXPECT_EQ(v, 1.0);
    }
  }
  // Sample stddev of the embedding should be near 0.02.
  const auto& e = ck.at("embed.weight").data;
  double ss = 0.0;
  for (double v : e) ss += v * v;
  EXPECT_NEAR(std::sqrt(ss / static_cast<double>(e.size())), 0.02, 0.006);
}

TEST(InitAncestor, DeterministicInSeed) {
  const auto c = tiny_config();
  EXPECT_EQ(init_ancestor(c, 7), init_ancestor(c, 7));
  const auto a = init_ancestor(c, 7), b = init_ancestor(c, 8);
  bool differs = false;
  for (const auto& [name, t] : a.tensors) differs |= t.data != b.at(name).data;
  EXPECT_TRUE(differs);
}

TEST(Forward, ShapeContract) {
  ModelConfig c = tiny_config();
  c.vocab_size = 32;
  const auto ck = init_ancestor(c, 1);
  Rng rng(1);
  auto batch = test::random_batch(c, rng, 2, 8);
  const auto logits = forward(ck, batch.inputs);
  EXPECT_EQ(logits.shape, (Shape{2, 8, 32}));
  EXPECT_TRUE(logits.all_finite());
}

TEST(Forward, RejectsBadInput) {
  const auto c = tiny_config();
  const auto ck = init_ancestor(c, 1);
  TokenMatrix bad(1, 3, 0);
  bad(0, 1) = 8;
  EXPECT_THROW(forward(ck, bad), ValidationError);
  EXPECT_THROW(forward(ck, TokenMatrix(1, 9, 0)), ValidationError);
}

TEST(Forward, Causality) {
  Rng rng(11);
  for (int trial = 0; trial < 5; ++trial) {
    const auto cfg = test::random_config(rng);
    const auto ck = test::random_checkpoint(cfg, 100 + trial);
    auto batch = test::random_batch(cfg, rng, 2, cfg.max_seq_len);
    const auto before = forward(ck, batch.inputs);
    const std::size_t t = rng.below(cfg.max_seq_len);
    for (std::size_t r = 0; r < 2; ++r)
      batch.inputs(r, t) = static_cast<int>((batch.inputs(r, t) + 1) % cfg.vocab_size);
    const auto after = forward(ck, batch.inputs);
    const std::size_t V = cfg.vocab_size, T = cfg.max_seq_len;
    for (std::size_t r = 0; r < 2; ++r)
      for (std::size_t p = 0; p < t; ++p)
        for (std::size_t v = 0; v < V; ++v)
          EXPECT_EQ(before.data[(r * T + p) * V + v], after.data[(r * T + p) * V + v]);
  }
}

TEST(Forward, IdentitySoupMatchesBase) {
  const auto c = tiny_config();
  const auto c1 = test::random_checkpoint(c, 1), c2 = test::random_checkpoint(c, 2);
  AlphaMap ones;
  for (const auto& u : enumerate_units(c)) ones[u] = {1.0, 0.0};
  Rng rng(5);
  auto batch = test::random_batch(c, rng, 2, 6);
  EXPECT_EQ(forward(merge(c1, c2, ones), batch.inputs).data, forward(c1, batch.inputs).data);
}

TEST(NllLoss, UniformLogits) {
  Tensor logits({1, 3, 32}, 0.25);
  TokenMatrix targets(1, 3, 5);
  EXPECT_NEAR(nll_loss(logits, targets, 0), std::log(32.0), 1e-12);
  EXPECT_NEAR(std::log(32.0), 3.4657, 1e-4);
}

TEST(NllLoss, AllPaddedIsError) {
  Tensor logits({1, 2, 4}, 0.0);
  TokenMatrix targets(1, 2, 0);
  EXPECT_THROW(nll_loss(logits, targets, 0), ValidationError);
}

TEST(NllLoss, MatchesScalarOracle) {
  // Two positions, vocab 4; second position padded out in one variant.
  const double l0[4] = {0.3, -1.2, 2.0, 0.5};
  const double l1[4] = {-0.7, 0.1, 0.4, 1.9};
  Tensor logits({1, 2, 4});
  std::copy(l0, l0 + 4, logits.data.begin());
  std::copy(l1, l1 + 4, logits.data.begin() + 4);
  TokenMatrix targets(1, 2);
  targets(0, 0) = 2;
  targets(0, 1) = 1;
  auto ce = [](const double* l, int tgt) {
    double z = 0.0;
    for (int v = 0; v < 4; ++v) z += std::exp(l[v]);
    return -std::log(std::exp(l[tgt]) / z);
  };
  const double expected = 0.5 * (ce(l0, 2) + ce(l1, 1));
  EXPECT_NEAR(nll_loss(logits, targets, -1), expected, 1e-12);
  targets(0, 1) = 3;
  EXPECT_NEAR(nll_loss(logits, targets, 3), ce(l0, 2), 1e-12);
}

TEST(WeightGrads, NameSetMatchesCheckpoint) {
  const auto c = tiny_config();
  const auto ck = init_ancestor(c, 3);
  Rng rng(3);
  auto b = test::random_batch(c, rng, 2, 5);
  const auto lg = loss_and_weight_grads(ck, b.inputs, b.targets, -1);
  ASSERT_EQ(lg.grads.size(), ck.tensors.size());
  for (const auto& [name, t] : ck.tensors) EXPECT_EQ(lg.grads.at(name).shape, t.shape);
}

TEST(WeightGrads, LossMatchesForward) {
  const auto c = tiny_config();
  const auto ck = test::random_checkpoint(c, 4);
  Rng rng(4);
  auto b = test::random_batch(c, rng, 3, 6, 0);
  const auto lg = loss_and_weight_grads(ck, b.inputs, b.targets, 0);
  EXPECT_NEAR(lg.loss, nll_loss(forward(ck, b.inputs), b.targets, 0), 1e-12);
}

TEST(WeightGrads, DuplicatedRowsLeaveGradientsUnchanged) {
  const auto c = tiny_config();
  const auto ck = test::random_checkpoint(c, 9);
  Rng rng(9);
  auto b = test::random_batch(c, rng, 2, 5);
  TokenMatrix in2(4, 5), tg2(4, 5);
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t t = 0; t < 5; ++t) {
      in2(r, t) = b.inputs(r % 2, t);
      tg2(r, t) = b.targets(r % 2, t);
    }
  const auto g1 = loss_and_weight_grads(ck, b.inputs, b.targets, -1);
  const auto g2 = loss_and_weight_grads(ck, in2, tg2, -1);
  EXPECT_NEAR(g1.loss, g2.loss, 1e-13);
  for (const auto& [name, t] : g1.grads)
    for (std::size_t i = 0; i < t.size(); ++i) EXPECT_NEAR(t.data[i], g2.grads.at(name).data[i], 1e-13);
}

TEST(WeightGrads, BitwiseDeterministic) {
  const auto c = tiny_config();
  const auto ck = test::random_checkpoint(c, 12);
  Rng rng(12);
  auto b = test::random_batch(c, rng, 2, 7);
  const auto g1 = loss_and_weight_grads(ck, b.inputs, b.targets, -1);
  const auto g2 = loss_and_weight_grads(ck, b.inputs, b.targets, -1);
  EXPECT_EQ(g1.loss, g2.loss);
  EXPECT_EQ(g1.grads, g2.grads);
}

// Every sampled coordinate against central differences of the scalar loss.
TEST(WeightGrads, MatchCentralDifferences) {
  Rng rng(2024);
  const double eps = 1e-5;
  int checked = 0;
  double worst = 0.0;
  for (int trial = 0; trial < 8; ++trial) {
    const auto cfg = test::random_config(rng);
    auto ck = test::random_checkpoint(cfg, 500 + trial);
    auto b = test::random_batch(cfg, rng, 2, cfg.max_seq_len, 0);
    const auto lg = loss_and_weight_grads(ck, b.inputs, b.targets, 0);
    const auto units = enumerate_units(cfg);
    // One coordinate per unit, plus random extras.
    for (std::size_t probe = 0; probe < units.size() + 20; ++probe) {
      const auto& unit = probe < units.size() ? units[probe] : units[rng.below(units.size())];
      const auto name = unit.tensor_name();
      auto& w = ck.tensors.at(name).data;
      const std::size_t i = rng.below(w.size());
      const double orig = w[i];
      auto f = [&](double x) {
        w[i] = x;
        return nll_loss(forward(ck, b.inputs), b.targets, 0);
      };
      const double fd = test::central_difference(f, orig, eps);
      w[i] = orig;
      const double an = lg.grads.at(name).data[i];
      const double err = test::rel_err(an, fd);
      worst = std::max(worst, err);
      EXPECT_LE(err, 1e-5) << name << "[" << i << "] analytic " << an << " fd " << fd;
      ++checked;
    }
  }
  EXPECT_GE(checked, 100);
  RecordProperty("worst_rel_err", std::to_string(worst));
}

}  // namespace
}  // namespace soupkit
