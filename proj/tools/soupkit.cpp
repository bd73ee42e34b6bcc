// soupkit: command-line front end for the desk-scale soup lab.
//
// Exit codes: 0 ok, 1 usage, 2 invalid input or data, 3 non-finite training.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "soupkit/bench.hpp"
#include "soupkit/checkpoint_io.hpp"
#include "soupkit/data.hpp"
#include "soupkit/eval.hpp"
#include "soupkit/finetune.hpp"
#include "soupkit/report.hpp"
#include "soupkit/soup.hpp"
#include "soupkit/sweep_config.hpp"

namespace fs = std::filesystem;
using namespace soupkit;

namespace {

/// A dataset argument is either a JSONL file or a meta-set prefix (train split).
Dataset load_training_data(const std::string& arg) {
  if (arg.size() > 6 && arg.substr(arg.size() - 6) == ".jsonl") return load_dataset(arg);
  return load_meta_set(arg).train;
}

std::string metrics_csv(const std::vector<NamedMetrics>& metrics) {
  std::string out = "eval_set,nll,ppl,exact_match\n";
  for (const auto& m : metrics)
    out += m.eval_set + "," + format_full(m.metrics.nll) + "," + format_full(m.metrics.ppl) + "," +
           format_full(m.metrics.exact_match) + "\n";
  return out;
}

void emit(const std::string& path, const std::string& contents) {
  if (path.empty() || path == "-") std::cout << contents;
  else write_file_atomic(path, contents);
}

std::vector<MetaSet> load_meta_sets(const std::vector<fs::path>& prefixes) {
  std::vector<MetaSet> sets;
  for (const auto& p : prefixes) {
    sets.push_back(load_meta_set(p));
    for (std::size_t i = 0; i + 1 < sets.size(); ++i)
      if (sets[i].name == sets.back().name) fail("meta set name '", sets.back().name, "' given twice");
  }
  return sets;
}

std::vector<MetaSet> select_eval_sets(const std::vector<MetaSet>& sets, const std::vector<std::string>& names) {
  if (names.empty()) return sets;
  std::vector<MetaSet> out;
  for (const auto& n : names) {
    auto it = std::find_if(sets.begin(), sets.end(), [&](const MetaSet& m) { return m.name == n; });
    if (it == sets.end()) fail("eval set '", n, "' is not among the loaded meta sets");
    out.push_back(*it);
  }
  return out;
}

std::vector<BaselineRow> baselines_from_vanilla(const std::vector<SweepRecord>& records) {
  std::vector<BaselineRow> rows;
  const SweepRecord *best = nullptr, *b1 = nullptr, *b2 = nullptr;
  for (const auto& r : records) {
    if (!r.alpha1) continue;
    if (*r.alpha1 == 1.0) b1 = &r;
    else if (*r.alpha1 == 0.0) b2 = &r;
    else if (!best || r.exact_match_sum() > best->exact_match_sum()) best = &r;
  }
  if (b1) rows.push_back({"base1", b1->metrics});
  if (b2) rows.push_back({"base2", b2->metrics});
  if (best) rows.push_back({"vanilla best (alpha1=" + format_short(*best->alpha1) + ")", best->metrics});
  return rows;
}

}  // namespace

int run(int argc, char** argv) {
  CLI::App app{"soupkit: vanilla, learnable and regularized model soups on a micro transformer"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  // init
  auto* init = app.add_subcommand("init", "Create a randomly initialized ancestor checkpoint");
  ModelConfig mc;
  std::int64_t init_seed = 0;
  std::string init_out;
  init->add_option("--seed", init_seed, "Initialization seed")->required();
  init->add_option("--out", init_out, "Output checkpoint")->required();
  init->add_option("--d-model", mc.d_model)->capture_default_str();
  init->add_option("--layers", mc.n_layers)->capture_default_str();
  init->add_option("--heads", mc.n_heads)->capture_default_str();
  init->add_option("--d-ff", mc.d_ff)->capture_default_str();
  init->add_option("--vocab", mc.vocab_size)->capture_default_str();
  init->add_option("--max-seq", mc.max_seq_len)->capture_default_str();

  // finetune
  auto* ft = app.add_subcommand("finetune", "Full-weight finetune a checkpoint on a dataset");
  FinetuneConfig fc;
  std::string ft_base, ft_data, ft_out, ft_losses;
  ft->add_option("--base", ft_base, "Starting checkpoint")->required();
  ft->add_option("--data", ft_data, "Meta-set prefix (train split) or .jsonl file")->required();
  ft->add_option("--out", ft_out, "Output checkpoint")->required();
  ft->add_option("--seed", fc.seed, "Batch-order seed")->required();
  ft->add_option("--steps", fc.steps)->capture_default_str();
  ft->add_option("--lr", fc.learning_rate)->capture_default_str();
  ft->add_option("--batch-size", fc.batch_size)->capture_default_str();
  ft->add_option("--tag", fc.tag, "Lineage tag")->capture_default_str();
  ft->add_option("--weight-decay", fc.weight_decay)->capture_default_str();
  ft->add_flag("--decay-to-start", fc.decay_to_start, "Decay toward the starting weights instead of zero");
  ft->add_option("--losses", ft_losses, "Optional per-step loss CSV");

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Generate synthetic meta sets or a mixed dev set");
  gen->require_subcommand(1);
  auto* gen_rev = gen->add_subcommand("reverse", "String reversal task");
  auto* gen_mod = gen->add_subcommand("modadd", "Modular addition task");
  auto* gen_mix = gen->add_subcommand("mix", "Mix train splits of several meta sets");
  std::uint64_t gen_seed = 0;
  std::size_t n_train = 1000, n_eval = 200, min_len = 3, max_len = 6, modulus = 97;
  std::string gen_out, mix_spec;
  std::vector<std::string> mix_sets;
  for (auto* sc : {gen_rev, gen_mod, gen_mix}) {
    sc->add_option("--seed", gen_seed)->required();
    sc->add_option("--out", gen_out, sc == gen_mix ? "Output .jsonl" : "Output prefix")->required();
  }
  for (auto* sc : {gen_rev, gen_mod}) {
    sc->add_option("--n-train", n_train)->capture_default_str();
    sc->add_option("--n-eval", n_eval)->capture_default_str();
  }
  gen_rev->add_option("--min-len", min_len)->capture_default_str();
  gen_rev->add_option("--max-len", max_len)->capture_default_str();
  gen_mod->add_option("--modulus", modulus)->capture_default_str();
  gen_mix->add_option("--sets", mix_sets, "Meta-set prefixes")->required();
  gen_mix->add_option("--spec", mix_spec, "e.g. reverse:50+modadd:50")->required();

  // soup-vanilla
  auto* sv = app.add_subcommand("soup-vanilla", "Interpolate two checkpoints with one global alpha");
  std::string sv_a, sv_b, sv_out;
  double sv_alpha = 0.5;
  sv->add_option("--a", sv_a, "Base 1")->required();
  sv->add_option("--b", sv_b, "Base 2")->required();
  sv->add_option("--alpha", sv_alpha, "Share of base 1")->required();
  sv->add_option("--out", sv_out)->required();

  // soup-learn
  auto* sl = app.add_subcommand("soup-learn", "Learn per-unit interpolation coefficients on a dev set");
  SoupTrainConfig sc_cfg;
  std::string sl_a, sl_b, sl_dev, sl_alpha_out, sl_ckpt_out, sl_history, sl_act = "softmax";
  sl->add_option("--a", sl_a)->required();
  sl->add_option("--b", sl_b)->required();
  sl->add_option("--dev", sl_dev, "Dev set (.jsonl or meta-set prefix)")->required();
  sl->add_option("--seed", sc_cfg.seed)->required();
  sl->add_option("--lr", sc_cfg.learning_rate)->capture_default_str();
  sl->add_option("--epochs", sc_cfg.epochs)->capture_default_str();
  sl->add_option("--batch-size", sc_cfg.batch_size)->capture_default_str();
  sl->add_option("--activation", sl_act)->check(CLI::IsMember({"sigmoid", "linear", "clamp", "softmax"}))->capture_default_str();
  sl->add_option("--lambda", sc_cfg.lambda_l1, "L1 strength on the raw parameters")->capture_default_str();
  sl->add_option("--out-alpha", sl_alpha_out, "Alpha CSV");
  sl->add_option("--out-ckpt", sl_ckpt_out, "Souped checkpoint");
  sl->add_option("--history", sl_history, "Per-step loss CSV");

  // eval
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on meta-set eval splits");
  std::string ev_ckpt, ev_out;
  std::vector<std::string> ev_sets;
  ev->add_option("--ckpt", ev_ckpt)->required();
  ev->add_option("--data", ev_sets, "Meta-set prefixes")->required();
  ev->add_option("--out", ev_out, "Metrics CSV (default stdout)");

  // sweep
  auto* sw = app.add_subcommand("sweep", "Run a vanilla, grid or ratio sweep from a config file");
  std::string sw_mode, sw_config, sw_out, sw_summary, sw_alpha_dir;
  std::size_t sw_jobs = 1;
  bool sw_wall = false;
  sw->add_option("mode", sw_mode, "vanilla | grid | ratio (must agree with the config)")
      ->check(CLI::IsMember({"vanilla", "grid", "ratio"}));
  sw->add_option("--config", sw_config)->required();
  sw->add_option("--out", sw_out, "Results CSV")->required();
  sw->add_option("--summary", sw_summary, "Summary CSV");
  sw->add_option("--alpha-dir", sw_alpha_dir, "Write each point's alpha CSV here");
  sw->add_option("--jobs", sw_jobs, "Parallel grid points")->check(CLI::PositiveNumber)->capture_default_str();
  sw->add_flag("--record-wall-time", sw_wall, "Write measured wall_s (breaks byte-identical reruns)");

  // alpha-dump
  auto* ad = app.add_subcommand("alpha-dump", "Print or normalize an alpha CSV, or write default alphas");
  std::string ad_alpha, ad_ckpt, ad_out, ad_act = "softmax";
  ad->add_option("--alpha", ad_alpha, "Alpha CSV to read");
  ad->add_option("--ckpt", ad_ckpt, "Checkpoint whose config defines default alphas");
  ad->add_option("--activation", ad_act, "Activation for default alphas")
      ->check(CLI::IsMember({"sigmoid", "linear", "clamp", "softmax"}));
  ad->add_option("--out", ad_out, "Write canonical alpha CSV here (default: table on stdout)");

  // report
  auto* rp = app.add_subcommand("report", "Render SVG figures and tables");
  rp->require_subcommand(1);
  auto* rp_strip = rp->add_subcommand("alpha-strip", "Per-layer alpha strip for one unit kind");
  auto* rp_heat = rp->add_subcommand("grid-heatmap", "Epoch x learning-rate heatmap");
  auto* rp_curve = rp->add_subcommand("vanilla-curve", "Vanilla soup curve with base lines");
  auto* rp_table = rp->add_subcommand("summary-table", "Markdown mean/max/sum table");
  std::vector<std::string> rp_alphas;
  std::string rp_kind, rp_results, rp_eval, rp_out, rp_baselines;
  rp_strip->add_option("--alpha", rp_alphas, "NAME=PATH, repeatable")->required();
  rp_strip->add_option("--kind", rp_kind, "Unit kind, e.g. attn_k")->required();
  for (auto* sc : {rp_heat, rp_curve, rp_table}) sc->add_option("--results", rp_results, "Sweep CSV")->required();
  for (auto* sc : {rp_heat, rp_curve}) sc->add_option("--eval-set", rp_eval)->required();
  rp_table->add_option("--baselines", rp_baselines, "Vanilla sweep CSV for baseline rows");
  for (auto* sc : {rp_strip, rp_heat, rp_curve, rp_table}) sc->add_option("--out", rp_out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  if (*init) {
    save_checkpoint(init_ancestor(mc, init_seed), init_out);
  } else if (*ft) {
    auto result = finetune(load_checkpoint(ft_base), load_training_data(ft_data), fc);
    save_checkpoint(result.checkpoint, ft_out);
    if (!ft_losses.empty()) {
      std::string csv = "step,loss\n";
      for (std::size_t i = 0; i < result.losses.size(); ++i)
        csv += std::to_string(i) + "," + format_full(result.losses[i]) + "\n";
      write_file_atomic(ft_losses, csv);
    }
  } else if (*gen) {
    if (*gen_rev) save_meta_set(gen_task_reverse(gen_seed, n_train, n_eval, {min_len, max_len}), gen_out);
    else if (*gen_mod) save_meta_set(gen_task_modadd(gen_seed, n_train, n_eval, modulus), gen_out);
    else {
      std::vector<fs::path> prefixes(mix_sets.begin(), mix_sets.end());
      save_dataset(mix(load_meta_sets(prefixes), MixSpec::parse(mix_spec, gen_seed)), gen_out);
    }
  } else if (*sv) {
    if (!(sv_alpha >= 0.0 && sv_alpha <= 1.0)) fail("--alpha must lie in [0, 1]");
    save_checkpoint(vanilla_soup(load_checkpoint(sv_a), load_checkpoint(sv_b), sv_alpha), sv_out);
  } else if (*sl) {
    if (sl_alpha_out.empty() && sl_ckpt_out.empty()) fail("soup-learn: give --out-alpha and/or --out-ckpt");
    sc_cfg.activation = parse_activation(sl_act);
    const auto c1 = load_checkpoint(sl_a), c2 = load_checkpoint(sl_b);
    const auto result = train_alpha(c1, c2, load_training_data(sl_dev), sc_cfg);
    if (!sl_alpha_out.empty()) dump_alpha(result.alphas, sl_alpha_out);
    if (!sl_ckpt_out.empty()) save_checkpoint(apply_alpha(c1, c2, result.alphas), sl_ckpt_out);
    if (!sl_history.empty()) {
      std::string csv = "step,data_loss,l1_penalty,mean_alpha1\n";
      for (const auto& h : result.history)
        csv += std::to_string(h.step) + "," + format_full(h.data_loss) + "," + format_full(h.l1_penalty) + "," +
               format_full(h.mean_alpha1) + "\n";
      write_file_atomic(sl_history, csv);
    }
  } else if (*ev) {
    const auto ckpt = load_checkpoint(ev_ckpt);
    std::vector<fs::path> prefixes(ev_sets.begin(), ev_sets.end());
    emit(ev_out, metrics_csv(evaluate_all(ckpt, load_meta_sets(prefixes))));
  } else if (*sw) {
    const auto cfg = load_sweep_config(sw_config);
    static const char* names[] = {"vanilla", "grid", "ratio"};
    if (!sw_mode.empty() && sw_mode != names[static_cast<int>(cfg.mode)])
      fail("sweep mode '", sw_mode, "' disagrees with config mode '", names[static_cast<int>(cfg.mode)], "'");
    const auto c1 = load_checkpoint(cfg.base_a), c2 = load_checkpoint(cfg.base_b);
    const auto sets = load_meta_sets(cfg.meta_sets);
    const auto eval_sets = select_eval_sets(sets, cfg.eval_sets);
    std::vector<SweepRecord> records;
    if (cfg.mode == SweepMode::vanilla) {
      records = run_vanilla_sweep(c1, c2, eval_sets);
      for (const auto& [set, a] : best_vanilla_alpha(records))
        std::cout << "best alpha1 on " << set << ": " << format_short(a) << "\n";
    } else {
      records = run_grid(c1, c2, sets, cfg.grid, eval_sets, sw_jobs);
      std::size_t failed = 0;
      for (const auto& r : records) failed += r.failed;
      if (failed) std::cerr << failed << " of " << records.size() << " grid points failed\n";
      if (failed < records.size()) {
        const auto best = select_best(records, cfg.grid.batch_size, cfg.grid.seed);
        std::cout << "best: " << best.mix.label() << " epochs=" << best.config.epochs
                  << " lr=" << format_short(best.config.learning_rate)
                  << " activation=" << activation_name(best.config.activation)
                  << " lambda=" << format_short(best.config.lambda_l1) << " sum=" << format_short(best.score) << "\n";
      }
      if (!sw_alpha_dir.empty()) {
        fs::create_directories(sw_alpha_dir);
        for (std::size_t i = 0; i < records.size(); ++i)
          if (records[i].alphas) {
            char name[32];
            std::snprintf(name, sizeof name, "point_%04zu.csv", i);
            dump_alpha(*records[i].alphas, fs::path(sw_alpha_dir) / name);
          }
      }
    }
    write_file_atomic(sw_out, sweep_csv(records, sw_wall));
    if (!sw_summary.empty()) write_file_atomic(sw_summary, summary_csv(summarize(records)));
  } else if (*ad) {
    AlphaSet alphas;
    if (!ad_alpha.empty() == !ad_ckpt.empty()) fail("alpha-dump: give exactly one of --alpha or --ckpt");
    if (!ad_alpha.empty()) alphas = parse_alpha_csv(read_file(ad_alpha));
    else alphas = default_alpha_set(load_checkpoint(ad_ckpt).config, parse_activation(ad_act));
    if (!ad_out.empty()) {
      dump_alpha(alphas, ad_out);
    } else {
      std::string table = "unit,alpha1,alpha2,dominant\n";
      std::vector<SoupUnitId> units;
      for (const auto& [u, r] : alphas.raw) units.push_back(u);
      std::sort(units.begin(), units.end(),
                [](const auto& a, const auto& b) { return canonical_rank(a) < canonical_rank(b); });
      for (const auto& u : units) {
        const auto a = activate(alphas.raw.at(u), alphas.activation);
        table += u.label() + "," + format_short(a.alpha1) + "," + format_short(a.alpha2) + "," +
                 (base1_dominates(a.alpha1) ? "base1" : "base2") + "\n";
      }
      std::cout << table;
    }
  } else if (*rp) {
    if (*rp_strip) {
      std::map<std::string, AlphaSet> runs;
      for (const auto& spec : rp_alphas) {
        const auto eq = spec.find('=');
        if (eq == std::string::npos || eq == 0) fail("--alpha expects NAME=PATH, got '", spec, "'");
        if (!runs.emplace(spec.substr(0, eq), parse_alpha_csv(read_file(spec.substr(eq + 1)))).second)
          fail("run name '", spec.substr(0, eq), "' given twice");
      }
      write_file_atomic(rp_out, alpha_strip_svg(runs, parse_kind(rp_kind)));
    } else {
      const auto records = parse_sweep_csv(read_file(rp_results));
      if (*rp_heat) write_file_atomic(rp_out, grid_heatmap_svg(records, rp_eval));
      else if (*rp_curve) write_file_atomic(rp_out, vanilla_curve_svg(records, rp_eval));
      else {
        std::vector<SweepRecord> grid_only;
        for (const auto& r : records)
          if (!r.alpha1) grid_only.push_back(r);
        std::vector<BaselineRow> baselines;
        if (!rp_baselines.empty()) baselines = baselines_from_vanilla(parse_sweep_csv(read_file(rp_baselines)));
        write_file_atomic(rp_out, summary_table(summarize(grid_only), baselines));
      }
    }
  }
  return 0;
}

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
