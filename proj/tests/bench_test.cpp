#include <gtest/gtest.h>

#include <cmath>

#include "soupkit/bench.hpp"
#include "soupkit/finetune.hpp"
#include "test_util.hpp"

namespace soupkit {
namespace {

ModelConfig small_config() {
  ModelConfig c = test::tiny_config();
  c.vocab_size = 64;
  c.max_seq_len = 24;
  return c;
}

struct Fixture {
  ModelConfig cfg = small_config();
  std::vector<MetaSet> sets{gen_task_reverse(1, 60, 12, {3, 4}, 24), gen_task_modadd(2, 20, 5, 5)};
  Checkpoint c1 = test::random_checkpoint(cfg, 1, 0.3);
  Checkpoint c2 = test::random_checkpoint(cfg, 2, 0.3);
};

const Fixture& fx() {
  static const Fixture f;
  return f;
}

/// A tiny model that actually solves part of mod-5 addition.
const Checkpoint& trained() {
  static const Checkpoint ck = [] {
    const auto set = gen_task_modadd(3, 25, 0, 5);
    FinetuneConfig cfg;
    cfg.learning_rate = 1e-2;
    cfg.steps = 300;
    cfg.batch_size = 8;
    cfg.seed = 1;
    return finetune(init_ancestor(small_config(), 3), set.train, cfg).checkpoint;
  }();
  return ck;
}

TEST(Evaluate, ExactMatchAgreesWithGreedyDecoding) {
  const auto data = gen_task_modadd(3, 25, 0, 5).train;
  const auto& ck = trained();
  std::size_t hits = 0;
  for (const auto& s : data) {
    const auto out = greedy_complete(ck, s.prompt_tokens());
    hits += decode(out) == s.answer();
  }
  const auto m = evaluate(ck, data);
  EXPECT_EQ(m.exact_match, static_cast<double>(hits) / static_cast<double>(data.size()));
  EXPECT_GT(hits, 0u);
  EXPECT_NEAR(m.ppl, std::exp(m.nll), 1e-12 * m.ppl);
}

TEST(Evaluate, MetricsContract) {
  const auto& f = fx();
  const auto m = evaluate(f.c1, f.sets[0]);
  EXPECT_GE(m.exact_match, 0.0);
  EXPECT_LE(m.exact_match, 1.0);
  EXPECT_GT(m.nll, 0.0);
  EXPECT_EQ(m.ppl, std::exp(m.nll));
  EXPECT_EQ(evaluate(f.c1, f.sets[0]), m);
  MetaSet empty{"empty", {}, {}};
  EXPECT_THROW(evaluate(f.c1, empty), ValidationError);
}

TEST(Evaluate, IdentitySoupEvaluatesLikeBase) {
  const auto& f = fx();
  EXPECT_EQ(evaluate(vanilla_soup(f.c1, f.c2, 1.0), f.sets[1]), evaluate(f.c1, f.sets[1]));
}

TEST(Evaluate, ArgmaxTiesGoLow) {
  const double row[] = {0.1, 0.7, 0.7, -1.0};
  EXPECT_EQ(argmax(row, 4), 1);
}

TEST(VanillaSweep, ElevenOrderedRecords) {
  const auto& f = fx();
  const auto recs = run_vanilla_sweep(f.c1, f.c2, f.sets);
  ASSERT_EQ(recs.size(), 11u);
  for (std::size_t i = 0; i < recs.size(); ++i) {
    ASSERT_TRUE(recs[i].alpha1);
    EXPECT_DOUBLE_EQ(*recs[i].alpha1, static_cast<double>(i) / 10.0);
    EXPECT_EQ(recs[i].metrics.size(), 2u);
  }
  EXPECT_EQ(recs.back().train_spec, "vanilla@1");
  EXPECT_EQ(recs[3].train_spec, "vanilla@0.3");
  EXPECT_EQ(recs.back().metrics[0].metrics, evaluate(f.c1, f.sets[0]));
  EXPECT_EQ(recs.front().metrics[1].metrics, evaluate(f.c2, f.sets[1]));
  EXPECT_EQ(recs[5].metrics[0].metrics, evaluate(vanilla_soup(f.c1, f.c2, 0.5), f.sets[0]));

  const auto best = best_vanilla_alpha(recs);
  ASSERT_EQ(best.size(), 2u);
  EXPECT_EQ(best[0].first, "reverse");
}

GridSpec small_grid() {
  GridSpec g;
  g.train_specs = {"reverse:8+modadd:8"};
  g.epochs = {1, 2};
  g.learning_rates = {0.01, 0.1};
  g.activations = {ActivationKind::softmax, ActivationKind::sigmoid};
  g.seed = 11;
  return g;
}

TEST(Grid, CartesianProduct) {
  GridSpec g;
  g.train_specs = {"a:1"};
  g.epochs = {1, 3, 5, 7, 9};
  g.learning_rates = {0.001, 0.003, 0.01, 0.03, 0.1, 0.3};
  g.activations = {ActivationKind::softmax};
  EXPECT_EQ(g.size(), 30u);
  EXPECT_EQ(grid_points(g).size(), 30u);
  const auto d = default_round_one_grid("a:1", 0);
  EXPECT_EQ(d.size(), 54u);
  EXPECT_EQ(d.learning_rates, (std::vector<double>{0.001, 0.003, 0.01, 0.03, 0.1, 0.3}));
}

TEST(Grid, RecordsAndDeterminism) {
  const auto& f = fx();
  const auto g = small_grid();
  const auto a = run_grid(f.c1, f.c2, f.sets, g, f.sets);
  ASSERT_EQ(a.size(), 8u);
  for (const auto& r : a) {
    EXPECT_FALSE(r.failed);
    EXPECT_EQ(r.metrics.size(), 2u);
    EXPECT_TRUE(r.alphas.has_value());
  }
  EXPECT_EQ(a[0].epochs, 1u);
  EXPECT_EQ(a[0].learning_rate, 0.01);
  EXPECT_EQ(a[0].activation, "softmax");
  EXPECT_EQ(a[1].activation, "sigmoid");
  EXPECT_EQ(sweep_csv(run_grid(f.c1, f.c2, f.sets, g, f.sets)), sweep_csv(a));
  EXPECT_EQ(sweep_csv(run_grid(f.c1, f.c2, f.sets, g, f.sets, 3)), sweep_csv(a));
}

TEST(Grid, PointSeedsIgnoreOtherAxes) {
  auto g = small_grid();
  std::map<std::string, std::uint64_t> before;
  for (const auto& p : grid_points(g)) before[p.key()] = point_seed(g.seed, p);
  g.learning_rates.insert(g.learning_rates.begin(), 0.003);
  g.epochs.push_back(4);
  std::size_t matched = 0;
  for (const auto& p : grid_points(g))
    if (before.count(p.key())) {
      EXPECT_EQ(point_seed(g.seed, p), before[p.key()]);
      ++matched;
    }
  EXPECT_EQ(matched, before.size());
  std::set<std::uint64_t> all;
  for (const auto& [k, s] : before) all.insert(s);
  EXPECT_EQ(all.size(), before.size());
}

TEST(Grid, FailedPointIsIsolated) {
  const auto& f = fx();
  auto g = small_grid();
  g.activations = {ActivationKind::linear};
  g.learning_rates = {0.01, 1e300};
  const auto recs = run_grid(f.c1, f.c2, f.sets, g, f.sets);
  ASSERT_EQ(recs.size(), 4u);
  for (const auto& r : recs) {
    EXPECT_EQ(r.failed, r.learning_rate == 1e300);
    EXPECT_EQ(r.metrics.size(), 2u);
    if (r.failed) {
      EXPECT_FALSE(r.error.empty());
    }
  }
  g.learning_rates = {0.01};
  const auto clean = run_grid(f.c1, f.c2, f.sets, g, f.sets);
  EXPECT_EQ(clean[0].metrics, recs[0].metrics);
  EXPECT_EQ(clean[1].metrics, recs[2].metrics);
  const auto rows = summarize(recs);
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].points, 2u);
  const auto parsed = parse_sweep_csv(sweep_csv(recs));
  EXPECT_TRUE(parsed[1].failed);
}

TEST(Grid, EmptyAxisRejected) {
  const auto& f = fx();
  auto g = small_grid();
  g.epochs.clear();
  EXPECT_THROW(run_grid(f.c1, f.c2, f.sets, g, f.sets), ValidationError);
}

TEST(Grid, RatioSpec) {
  SoupTrainConfig best;
  best.epochs = 2;
  const auto g = ratio_grid_spec("reverse", "modadd", 100, best, 4);
  ASSERT_EQ(g.size(), 10u);
  EXPECT_EQ(g.train_specs[2], "reverse:25+modadd:75");
  EXPECT_EQ(g.epochs, std::vector<std::size_t>{2});
}

SweepRecord fake(std::string spec, std::size_t epochs, double lr, std::string act, double em_a, double em_b) {
  SweepRecord r;
  r.train_spec = std::move(spec);
  r.epochs = epochs;
  r.learning_rate = lr;
  r.activation = std::move(act);
  r.metrics = {{"A", {1.0, std::exp(1.0), em_a}}, {"B", {1.0, std::exp(1.0), em_b}}};
  return r;
}

TEST(Summarize, SingleRecord) {
  const auto rows = summarize({fake("s", 1, 0.1, "softmax", 0.25, 0.5)});
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].mean, (std::vector<double>{0.25, 0.5}));
  EXPECT_EQ(rows[0].max, rows[0].mean);
  EXPECT_EQ(rows[0].sum_mean, 0.75);
  EXPECT_EQ(rows[0].sum_max, 0.75);
}

TEST(Summarize, MatchesRecomputation) {
  Rng rng(5);
  std::vector<SweepRecord> recs;
  for (const std::string spec : {"x:1", "y:2"})
    for (std::size_t e = 1; e <= 3; ++e)
      for (double lr : {0.01, 0.1}) recs.push_back(fake(spec, e, lr, "softmax", rng.uniform(), rng.uniform()));
  recs[4].failed = true;
  const auto rows = summarize(recs);
  ASSERT_EQ(rows.size(), 2u);
  for (const auto& row : rows) {
    double sa = 0, sb = 0, ma = -1, mb = -1;
    int n = 0;
    for (const auto& r : recs) {
      if (r.train_spec != row.train_spec || r.failed) continue;
      sa += r.metrics[0].metrics.exact_match;
      sb += r.metrics[1].metrics.exact_match;
      ma = std::max(ma, r.metrics[0].metrics.exact_match);
      mb = std::max(mb, r.metrics[1].metrics.exact_match);
      ++n;
    }
    EXPECT_EQ(row.points, static_cast<std::size_t>(n));
    EXPECT_NEAR(row.mean[0], sa / n, 1e-12);
    EXPECT_NEAR(row.mean[1], sb / n, 1e-12);
    EXPECT_EQ(row.max[0], ma);
    EXPECT_EQ(row.max[1], mb);
    EXPECT_NEAR(row.sum_mean, sa / n + sb / n, 1e-12);
    EXPECT_NEAR(row.sum_max, ma + mb, 1e-12);
  }
  EXPECT_EQ(rows[0].points, 5u);
}

TEST(SelectBest, DominantPointWins) {
  const std::vector<SweepRecord> recs = {fake("s:1", 1, 0.1, "softmax", 0.2, 0.2),
                                         fake("s:1", 3, 0.3, "linear", 0.9, 0.3),
                                         fake("s:1", 2, 0.01, "sigmoid", 0.5, 0.5)};
  const auto best = select_best(recs, 8, 4);
  EXPECT_EQ(best.record_index, 1u);
  EXPECT_EQ(best.config.epochs, 3u);
  EXPECT_EQ(best.config.activation, ActivationKind::linear);
  EXPECT_EQ(best.mix.label(), "s:1");
  EXPECT_EQ(best.mix.seed, 4u);
  EXPECT_NEAR(best.score, 1.2, 1e-15);
}

TEST(SelectBest, TieBreaks) {
  // Lower learning rate first.
  EXPECT_EQ(select_best({fake("s:1", 1, 0.1, "softmax", 0.5, 0.5), fake("s:1", 1, 0.01, "softmax", 0.5, 0.5)})
                .config.learning_rate,
            0.01);
  // Then fewer epochs.
  EXPECT_EQ(select_best({fake("s:1", 5, 0.1, "softmax", 0.5, 0.5), fake("s:1", 2, 0.1, "softmax", 0.5, 0.5)})
                .config.epochs,
            2u);
  // Then sigmoid, clamp, softmax, linear.
  EXPECT_EQ(select_best({fake("s:1", 1, 0.1, "linear", 0.5, 0.5), fake("s:1", 1, 0.1, "softmax", 0.5, 0.5),
                         fake("s:1", 1, 0.1, "clamp", 0.5, 0.5)})
                .config.activation,
            ActivationKind::clamp);
  EXPECT_EQ(select_best({fake("s:1", 1, 0.1, "softmax", 0.5, 0.5), fake("s:1", 1, 0.1, "sigmoid", 0.5, 0.5)})
                .config.activation,
            ActivationKind::sigmoid);
}

TEST(SelectBest, SkipsFailedAndVanilla) {
  auto failed = fake("s:1", 1, 0.1, "softmax", 1.0, 1.0);
  failed.failed = true;
  auto vanilla = fake("vanilla@0.5", 0, 0.0, "none", 1.0, 1.0);
  vanilla.alpha1 = 0.5;
  EXPECT_THROW(select_best({}), ValidationError);
  EXPECT_THROW(select_best({failed, vanilla}), ValidationError);
  EXPECT_EQ(select_best({failed, vanilla, fake("s:1", 2, 0.1, "clamp", 0.1, 0.1)}).record_index, 2u);
}

TEST(SweepCsv, RoundTrip) {
  const auto& f = fx();
  const auto recs = run_grid(f.c1, f.c2, f.sets, small_grid(), f.sets);
  const auto csv = sweep_csv(recs);
  EXPECT_EQ(split_lines(csv)[0], kSweepCsvHeader);
  EXPECT_EQ(split_lines(csv).size(), 1 + 2 * recs.size());
  for (const auto& line : split_lines(csv)) EXPECT_EQ(split(line, ',').back(), line == split_lines(csv)[0] ? "wall_s" : "0");
  const auto back = parse_sweep_csv(csv);
  ASSERT_EQ(back.size(), recs.size());
  for (std::size_t i = 0; i < recs.size(); ++i) {
    EXPECT_EQ(back[i].metrics, recs[i].metrics);
    EXPECT_EQ(back[i].seed, recs[i].seed);
    EXPECT_EQ(back[i].learning_rate, recs[i].learning_rate);
  }
  EXPECT_EQ(sweep_csv(back), csv);
  const auto vanilla = run_vanilla_sweep(f.c1, f.c2, f.sets);
  const auto vb = parse_sweep_csv(sweep_csv(vanilla));
  ASSERT_EQ(vb.size(), 11u);
  EXPECT_EQ(*vb[7].alpha1, 0.7);
  EXPECT_THROW(parse_sweep_csv("bad header\n"), ValidationError);
}

TEST(SummaryCsv, Layout) {
  const auto csv = summary_csv(summarize({fake("s:1", 1, 0.1, "softmax", 0.25, 0.5)}));
  EXPECT_EQ(csv, "train_spec,A_mean,A_max,B_mean,B_max,sum_mean,sum_max,points\n"
                 "s:1,0.25,0.25,0.5,0.5,0.75,0.75,1\n");
}

}  // namespace
}  // namespace soupkit
