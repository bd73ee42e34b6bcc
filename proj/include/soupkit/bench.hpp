#pragma once

// Sweep protocol: vanilla ratio curve, Cartesian hyperparameter grids over
// learnable soups, Tab-style mean/max summaries, and best-setting selection.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "soupkit/data.hpp"
#include "soupkit/eval.hpp"
#include "soupkit/io.hpp"
#include "soupkit/soup.hpp"

namespace soupkit {

struct NamedMetrics {
  std::string eval_set;
  Metrics metrics;
  bool operator==(const NamedMetrics&) const = default;
};

struct SweepRecord {
  std::string train_spec;  // "reverse:50+modadd:50", or "vanilla@<alpha1>"
  std::size_t epochs = 0;
  double learning_rate = 0.0;
  std::string activation = "none";
  double lambda_l1 = 0.0;
  std::uint64_t seed = 0;
  std::vector<NamedMetrics> metrics;  // in eval-set order
  double wall_time_seconds = 0.0;
  bool failed = false;
  std::string error;
  std::optional<double> alpha1;      // vanilla points only
  std::optional<AlphaSet> alphas;    // learnable points only; not serialized

  [[nodiscard]] double exact_match_sum() const {
    double s = 0.0;
    for (const auto& m : metrics) s += m.metrics.exact_match;
    return s;
  }

  [[nodiscard]] const Metrics* find(const std::string& eval_set) const {
    for (const auto& m : metrics)
      if (m.eval_set == eval_set) return &m.metrics;
    return nullptr;
  }
};

inline std::vector<NamedMetrics> evaluate_all(const Checkpoint& ckpt, const std::vector<MetaSet>& eval_sets) {
  std::vector<NamedMetrics> out;
  for (const auto& m : eval_sets) out.push_back({m.name, evaluate(ckpt, m)});
  return out;
}

inline std::string vanilla_label(double alpha1) { return "vanilla@" + format_short(alpha1); }

/// alpha1 in {0, 0.1, ..., 0.9, 1}; the endpoints are the bases themselves.
inline std::vector<SweepRecord> run_vanilla_sweep(const Checkpoint& c1, const Checkpoint& c2,
                                                  const std::vector<MetaSet>& eval_sets) {
  check_compatible(c1, c2);
  std::vector<SweepRecord> out;
  for (int k = 0; k <= 10; ++k) {
    const double a = k / 10.0;
    const auto t0 = std::chrono::steady_clock::now();
    SweepRecord rec;
    rec.train_spec = vanilla_label(a);
    rec.alpha1 = a;
    if (k == 0) rec.metrics = evaluate_all(c2, eval_sets);
    else if (k == 10) rec.metrics = evaluate_all(c1, eval_sets);
    else rec.metrics = evaluate_all(vanilla_soup(c1, c2, a), eval_sets);
    rec.wall_time_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out.push_back(std::move(rec));
  }
  return out;
}

/// Per eval set, the alpha1 with the highest exact match (first on ties).
inline std::vector<std::pair<std::string, double>> best_vanilla_alpha(const std::vector<SweepRecord>& records) {
  std::vector<std::pair<std::string, double>> out;
  if (records.empty()) return out;
  for (const auto& nm : records.front().metrics) {
    double best_a = NAN, best_v = -1.0;
    for (const auto& r : records) {
      const Metrics* m = r.find(nm.eval_set);
      if (!r.alpha1 || !m) continue;
      if (m->exact_match > best_v) {
        best_v = m->exact_match;
        best_a = *r.alpha1;
      }
    }
    out.emplace_back(nm.eval_set, best_a);
  }
  return out;
}

struct GridSpec {
  std::vector<std::string> train_specs;  // MixSpec labels
  std::vector<std::size_t> epochs;
  std::vector<double> learning_rates;
  std::vector<ActivationKind> activations;
  std::vector<double> lambdas{0.0};
  std::size_t batch_size = 8;
  std::uint64_t seed = 0;

  [[nodiscard]] std::size_t size() const {
    return train_specs.size() * epochs.size() * learning_rates.size() * activations.size() * lambdas.size();
  }
};

/// Epochs 1..9 by six log-spaced learning rates, one activation.
inline GridSpec default_round_one_grid(const std::string& train_spec, std::uint64_t seed) {
  return {{train_spec}, {1, 2, 3, 4, 5, 6, 7, 8, 9}, {0.001, 0.003, 0.01, 0.03, 0.1, 0.3},
          {ActivationKind::softmax}, {0.0}, 8, seed};
}

struct GridPoint {
  std::string train_spec;
  std::size_t epochs;
  double learning_rate;
  ActivationKind activation;
  double lambda_l1;

  /// Canonical identity of the point; its training seed is derived from this.
  [[nodiscard]] std::string key() const {
    return train_spec + "|" + std::to_string(epochs) + "|" + format_full(learning_rate) + "|" +
           std::string(activation_name(activation)) + "|" + format_full(lambda_l1);
  }
};

/// Cartesian product in axis order: train spec, epochs, lr, activation, lambda.
inline std::vector<GridPoint> grid_points(const GridSpec& grid) {
  std::vector<GridPoint> pts;
  for (const auto& spec : grid.train_specs)
    for (auto e : grid.epochs)
      for (auto lr : grid.learning_rates)
        for (auto act : grid.activations)
          for (auto lam : grid.lambdas) pts.push_back({spec, e, lr, act, lam});
  return pts;
}

inline std::uint64_t point_seed(std::uint64_t global_seed, const GridPoint& p) {
  return hash_seed(global_seed, p.key());
}

/// One train_alpha + evaluation per grid point. A point whose training hits a
/// non-finite loss is recorded as failed; its neighbours are unaffected.
inline std::vector<SweepRecord> run_grid(const Checkpoint& c1, const Checkpoint& c2,
                                         const std::vector<MetaSet>& train_sets, const GridSpec& grid,
                                         const std::vector<MetaSet>& eval_sets, std::size_t jobs = 1) {
  check_compatible(c1, c2);
  if (grid.size() == 0) fail("grid: every axis needs at least one value");
  if (eval_sets.empty()) fail("grid: no eval sets");
  const auto points = grid_points(grid);

  std::map<std::string, Dataset> dev_sets;
  for (const auto& spec : grid.train_specs)
    dev_sets.emplace(spec, mix(train_sets, MixSpec::parse(spec, grid.seed)));

  std::vector<SweepRecord> records(points.size());
  auto run_point = [&](std::size_t i) {
    const auto& p = points[i];
    SweepRecord& rec = records[i];
    rec.train_spec = p.train_spec;
    rec.epochs = p.epochs;
    rec.learning_rate = p.learning_rate;
    rec.activation = std::string(activation_name(p.activation));
    rec.lambda_l1 = p.lambda_l1;
    rec.seed = point_seed(grid.seed, p);
    const auto t0 = std::chrono::steady_clock::now();
    SoupTrainConfig cfg{p.learning_rate, p.epochs, grid.batch_size, p.lambda_l1, p.activation, rec.seed};
    try {
      auto result = train_alpha(c1, c2, dev_sets.at(p.train_spec), cfg);
      rec.metrics = evaluate_all(apply_alpha(c1, c2, result.alphas), eval_sets);
      rec.alphas = std::move(result.alphas);
    } catch (const NumericError& e) {
      rec.failed = true;
      rec.error = e.what();
      rec.metrics.clear();
      for (const auto& m : eval_sets) rec.metrics.push_back({m.name, {NAN, NAN, NAN}});
    }
    rec.wall_time_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  };

  jobs = std::max<std::size_t>(1, std::min(jobs, points.size()));
  if (jobs == 1) {
    for (std::size_t i = 0; i < points.size(); ++i) run_point(i);
    return records;
  }
  std::atomic<std::size_t> next{0};
  std::mutex err_mu;
  std::exception_ptr first_error;
  std::vector<std::thread> workers;
  for (std::size_t w = 0; w < jobs; ++w)
    workers.emplace_back([&] {
      for (std::size_t i = next++; i < points.size(); i = next++) {
        try {
          run_point(i);
        } catch (...) {
          std::lock_guard lock(err_mu);
          if (!first_error) first_error = std::current_exception();
        }
      }
    });
  for (auto& t : workers) t.join();
  if (first_error) std::rethrow_exception(first_error);
  return records;
}

/// Third-round ratio sweep over two meta sets at a fixed total sample count.
inline GridSpec ratio_grid_spec(const std::string& first, const std::string& second, std::size_t total,
                                const SoupTrainConfig& best, std::uint64_t seed) {
  GridSpec g;
  for (const auto& spec : ratio_grid(first, second, total, seed)) g.train_specs.push_back(spec.label());
  g.epochs = {best.epochs};
  g.learning_rates = {best.learning_rate};
  g.activations = {best.activation};
  g.lambdas = {best.lambda_l1};
  g.batch_size = best.batch_size;
  g.seed = seed;
  return g;
}

struct SummaryRow {
  std::string train_spec;
  std::vector<std::string> eval_sets;
  std::vector<double> mean;
  std::vector<double> max;
  double sum_mean = 0.0;
  double sum_max = 0.0;
  std::size_t points = 0;
};

/// Mean and max exact match per (train spec, eval set) across all other axes.
/// Failed points are excluded.
inline std::vector<SummaryRow> summarize(const std::vector<SweepRecord>& records) {
  std::vector<SummaryRow> rows;
  for (const auto& r : records) {
    auto it = std::find_if(rows.begin(), rows.end(), [&](const SummaryRow& s) { return s.train_spec == r.train_spec; });
    if (it == rows.end()) {
      SummaryRow row;
      row.train_spec = r.train_spec;
      for (const auto& m : r.metrics) row.eval_sets.push_back(m.eval_set);
      row.mean.assign(row.eval_sets.size(), 0.0);
      row.max.assign(row.eval_sets.size(), -INFINITY);
      rows.push_back(std::move(row));
      it = rows.end() - 1;
    }
    if (r.failed) continue;
    ++it->points;
    for (std::size_t e = 0; e < it->eval_sets.size(); ++e) {
      const Metrics* m = r.find(it->eval_sets[e]);
      if (!m) fail("summarize: record for '", r.train_spec, "' lacks eval set '", it->eval_sets[e], "'");
      it->mean[e] += m->exact_match;
      it->max[e] = std::max(it->max[e], m->exact_match);
    }
  }
  for (auto& row : rows) {
    for (std::size_t e = 0; e < row.eval_sets.size(); ++e) {
      row.mean[e] = row.points ? row.mean[e] / static_cast<double>(row.points) : NAN;
      if (!row.points) row.max[e] = NAN;
      row.sum_mean += row.mean[e];
      row.sum_max += row.max[e];
    }
  }
  return rows;
}

struct Selection {
  SoupTrainConfig config;
  MixSpec mix;
  double score = 0.0;
  std::size_t record_index = 0;
};

inline int activation_preference(const std::string& name) {
  static const char* order[] = {"sigmoid", "clamp", "softmax", "linear"};
  for (int i = 0; i < 4; ++i)
    if (name == order[i]) return i;
  return 4;
}

/// Highest exact-match sum; ties go to lower lr, then fewer epochs, then
/// activation order sigmoid, clamp, softmax, linear.
inline Selection select_best(const std::vector<SweepRecord>& records, std::size_t batch_size = 8,
                             std::uint64_t mix_seed_value = 0) {
  std::optional<std::size_t> best;
  auto better = [&](const SweepRecord& a, const SweepRecord& b) {
    const double sa = a.exact_match_sum(), sb = b.exact_match_sum();
    if (std::abs(sa - sb) > 1e-12) return sa > sb;
    if (a.learning_rate != b.learning_rate) return a.learning_rate < b.learning_rate;
    if (a.epochs != b.epochs) return a.epochs < b.epochs;
    if (a.activation != b.activation) return activation_preference(a.activation) < activation_preference(b.activation);
    if (a.lambda_l1 != b.lambda_l1) return a.lambda_l1 < b.lambda_l1;
    return a.train_spec < b.train_spec;
  };
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (r.failed || r.alpha1 || r.activation == "none") continue;
    if (!best || better(r, records[*best])) best = i;
  }
  if (!best) fail("select_best: no successful learnable-soup records");
  const auto& r = records[*best];
  Selection sel;
  sel.config = {r.learning_rate, r.epochs, batch_size, r.lambda_l1, parse_activation(r.activation), r.seed};
  sel.mix = MixSpec::parse(r.train_spec, mix_seed_value);
  sel.score = r.exact_match_sum();
  sel.record_index = *best;
  return sel;
}

// Sweep CSV: one row per (point, eval set).

inline constexpr std::string_view kSweepCsvHeader =
    "train_spec,epochs,lr,activation,lambda,seed,eval_set,nll,ppl,exact_match,wall_s";

/// Wall time is written as 0 unless requested, so reruns are byte-identical.
inline std::string sweep_csv(const std::vector<SweepRecord>& records, bool include_wall_time = false) {
  std::string out(kSweepCsvHeader);
  out += "\n";
  for (const auto& r : records)
    for (const auto& m : r.metrics) {
      out += r.train_spec + "," + std::to_string(r.epochs) + "," + format_full(r.learning_rate) + "," +
             r.activation + "," + format_full(r.lambda_l1) + "," + std::to_string(r.seed) + "," + m.eval_set +
             "," + format_full(m.metrics.nll) + "," + format_full(m.metrics.ppl) + "," +
             format_full(m.metrics.exact_match) + "," + (include_wall_time ? format_full(r.wall_time_seconds) : "0") +
             "\n";
    }
  return out;
}

inline std::vector<SweepRecord> parse_sweep_csv(std::string_view text) {
  const auto lines = split_lines(text);
  if (lines.empty() || lines[0] != kSweepCsvHeader) fail("sweep CSV: missing or unexpected header");
  std::vector<SweepRecord> out;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto c = split(lines[i], ',');
    if (c.size() != 11) fail("sweep CSV line ", std::to_string(i + 1), ": expected 11 columns");
    SweepRecord r;
    r.train_spec = c[0];
    r.epochs = static_cast<std::size_t>(parse_int(c[1]));
    r.learning_rate = parse_double(c[2]);
    r.activation = c[3];
    r.lambda_l1 = parse_double(c[4]);
    r.seed = static_cast<std::uint64_t>(std::stoull(c[5]));
    r.wall_time_seconds = parse_double(c[10]);
    if (r.train_spec.rfind("vanilla@", 0) == 0) r.alpha1 = parse_double(std::string_view(r.train_spec).substr(8));
    Metrics m{parse_double(c[7]), parse_double(c[8]), parse_double(c[9])};
    const bool same = !out.empty() && out.back().train_spec == r.train_spec && out.back().epochs == r.epochs &&
                      out.back().learning_rate == r.learning_rate && out.back().activation == r.activation &&
                      out.back().lambda_l1 == r.lambda_l1 && out.back().seed == r.seed && !out.back().find(c[6]);
    if (!same) out.push_back(std::move(r));
    out.back().metrics.push_back({c[6], m});
    if (std::isnan(m.exact_match)) out.back().failed = true;
  }
  return out;
}

inline std::string summary_csv(const std::vector<SummaryRow>& rows) {
  if (rows.empty()) return "train_spec,sum_mean,sum_max,points\n";
  std::string out = "train_spec";
  for (const auto& e : rows.front().eval_sets) out += "," + e + "_mean," + e + "_max";
  out += ",sum_mean,sum_max,points\n";
  for (const auto& r : rows) {
    out += r.train_spec;
    for (std::size_t e = 0; e < r.eval_sets.size(); ++e)
      out += "," + format_full(r.mean[e]) + "," + format_full(r.max[e]);
    out += "," + format_full(r.sum_mean) + "," + format_full(r.sum_max) + "," + std::to_string(r.points) + "\n";
  }
  return out;
}

}  // namespace soupkit
