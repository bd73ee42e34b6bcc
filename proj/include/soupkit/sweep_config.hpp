#pragma once

// Declarative sweep description in a small TOML subset: top-level
// `key = value` pairs, '#' comments, strings, integers, floats, booleans and
// flat arrays (which may span lines). Tables and inline tables are rejected.
//
//   mode = "grid"                      # vanilla | grid | ratio
//   base_a = "base1.ckpt"
//   base_b = "base2.ckpt"
//   meta_sets = ["data/reverse", "data/modadd"]   # <prefix>.{train,eval}.jsonl
//   eval_sets = ["reverse", "modadd"]  # optional, default: every meta set
//   train_specs = ["reverse:50+modadd:50"]
//   epochs = [1, 3, 5]
//   learning_rates = [0.001, 0.01, 0.1]
//   activations = ["softmax", "sigmoid"]
//   lambdas = [0.0]                    # optional
//   batch_size = 8                     # optional
//   seed = 1
//   ratio_sets = ["reverse", "modadd"] # ratio mode only
//   ratio_total = 100                  # ratio mode only
//
// Relative paths resolve against the config file's directory.

#include <cctype>
#include <cstring>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "soupkit/bench.hpp"
#include "soupkit/error.hpp"
#include "soupkit/io.hpp"

namespace soupkit {

struct ConfigValue {
  enum class Type { string, integer, real, boolean, array } type = Type::string;
  std::string str;
  long long integer = 0;
  double real = 0.0;
  bool boolean = false;
  std::vector<ConfigValue> items;
};

namespace detail {

class ConfigParser {
 public:
  ConfigParser(std::string_view text, std::string source) : text_(text), source_(std::move(source)) {}

  std::map<std::string, ConfigValue> parse() {
    std::map<std::string, ConfigValue> out;
    while (true) {
      skip_blank_lines();
      if (pos_ >= text_.size()) break;
      if (peek() == '[') error("tables are not supported");
      const std::string key = parse_key();
      skip_inline_space();
      if (peek() != '=') error("expected '=' after key '" + key + "'");
      ++pos_;
      skip_inline_space();
      ConfigValue v = parse_value();
      skip_inline_space();
      skip_comment();
      if (pos_ < text_.size() && peek() != '\n') error("unexpected text after value of '" + key + "'");
      if (!out.emplace(key, std::move(v)).second) error("duplicate key '" + key + "'");
    }
    return out;
  }

 private:
  [[noreturn]] void error(const std::string& msg) const {
    std::size_t line = 1;
    for (std::size_t i = 0; i < pos_ && i < text_.size(); ++i) line += text_[i] == '\n';
    fail(source_, ":", std::to_string(line), ": ", msg);
  }

  [[nodiscard]] char peek() const { return pos_ < text_.size() ? text_[pos_] : '\0'; }

  void skip_inline_space() {
    while (pos_ < text_.size() && (text_[pos_] == ' ' || text_[pos_] == '\t' || text_[pos_] == '\r')) ++pos_;
  }

  void skip_comment() {
    if (peek() == '#')
      while (pos_ < text_.size() && text_[pos_] != '\n') ++pos_;
  }

  void skip_blank_lines() {
    while (pos_ < text_.size()) {
      skip_inline_space();
      skip_comment();
      if (peek() != '\n') return;
      ++pos_;
    }
  }

  std::string parse_key() {
    const std::size_t start = pos_;
    while (pos_ < text_.size() && (std::isalnum(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '_' ||
                                   text_[pos_] == '-'))
      ++pos_;
    if (pos_ == start) error("expected a key");
    return std::string(text_.substr(start, pos_ - start));
  }

  ConfigValue parse_value() {
    const char c = peek();
    if (c == '"') return parse_string();
    if (c == '[') return parse_array();
    if (c == '{') error("inline tables are not supported");
    const std::size_t start = pos_;
    while (pos_ < text_.size() && !std::strchr(" \t\r\n,]#", text_[pos_])) ++pos_;
    const std::string word(text_.substr(start, pos_ - start));
    if (word.empty()) error("expected a value");
    ConfigValue v;
    if (word == "true" || word == "false") {
      v.type = ConfigValue::Type::boolean;
      v.boolean = word == "true";
      return v;
    }
    const bool is_real = word.find_first_of(".eE") != std::string::npos || word == "inf" || word == "nan";
    try {
      if (is_real) {
        v.type = ConfigValue::Type::real;
        v.real = parse_double(word);
      } else {
        v.type = ConfigValue::Type::integer;
        v.integer = parse_int(word);
      }
    } catch (const ValidationError&) {
      error("bad value '" + word + "'");
    }
    return v;
  }

  ConfigValue parse_string() {
    ++pos_;
    ConfigValue v;
    while (true) {
      if (pos_ >= text_.size() || peek() == '\n') error("unterminated string");
      char c = text_[pos_++];
      if (c == '"') break;
      if (c == '\\') {
        if (pos_ >= text_.size()) error("unterminated string");
        c = text_[pos_++];
        switch (c) {
          case '"': case '\\': v.str += c; break;
          case 'n': v.str += '\n'; break;
          case 't': v.str += '\t'; break;
          default: error(std::string("unsupported escape \\") + c);
        }
        continue;
      }
      v.str += c;
    }
    return v;
  }

  ConfigValue parse_array() {
    ++pos_;
    ConfigValue v;
    v.type = ConfigValue::Type::array;
    while (true) {
      skip_blank_lines();
      if (peek() == ']') {
        ++pos_;
        return v;
      }
      if (pos_ >= text_.size()) error("unterminated array");
      ConfigValue item = parse_value();
      if (item.type == ConfigValue::Type::array) error("nested arrays are not supported");
      v.items.push_back(std::move(item));
      skip_blank_lines();
      if (pos_ >= text_.size()) error("unterminated array");
      if (peek() == ',') ++pos_;
      else if (peek() != ']') error("expected ',' or ']' in array");
    }
  }

  std::string_view text_;
  std::string source_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::map<std::string, ConfigValue> parse_config_text(std::string_view text, const std::string& source = "config") {
  return detail::ConfigParser(text, source).parse();
}

enum class SweepMode { vanilla, grid, ratio };

struct SweepConfig {
  SweepMode mode = SweepMode::grid;
  std::filesystem::path base_a, base_b;
  std::vector<std::filesystem::path> meta_sets;
  std::vector<std::string> eval_sets;  // empty means every meta set
  GridSpec grid;
  std::vector<std::string> ratio_sets;
  std::size_t ratio_total = 100;
};

namespace detail {

struct ConfigReader {
  const std::map<std::string, ConfigValue>& values;
  const std::string& source;

  [[noreturn]] void bad(const std::string& key, const char* what) const {
    fail(source, ": key '", key, "' must be ", what);
  }
  [[nodiscard]] const ConfigValue* get(const std::string& key) const {
    auto it = values.find(key);
    return it == values.end() ? nullptr : &it->second;
  }
  [[nodiscard]] const ConfigValue& need(const std::string& key) const {
    const auto* v = get(key);
    if (!v) fail(source, ": missing required key '", key, "'");
    return *v;
  }
  [[nodiscard]] std::string string(const ConfigValue& v, const std::string& key) const {
    if (v.type != ConfigValue::Type::string) bad(key, "a string");
    return v.str;
  }
  [[nodiscard]] long long integer(const ConfigValue& v, const std::string& key) const {
    if (v.type != ConfigValue::Type::integer) bad(key, "an integer");
    return v.integer;
  }
  [[nodiscard]] double real(const ConfigValue& v, const std::string& key) const {
    if (v.type == ConfigValue::Type::integer) return static_cast<double>(v.integer);
    if (v.type != ConfigValue::Type::real) bad(key, "a number");
    return v.real;
  }
  [[nodiscard]] const std::vector<ConfigValue>& array(const std::string& key) const {
    const auto& v = need(key);
    if (v.type != ConfigValue::Type::array || v.items.empty()) bad(key, "a non-empty array");
    return v.items;
  }
  [[nodiscard]] std::vector<std::string> strings(const std::string& key) const {
    std::vector<std::string> out;
    for (const auto& i : array(key)) out.push_back(string(i, key));
    return out;
  }
};

}  // namespace detail

inline SweepConfig sweep_config_from_values(const std::map<std::string, ConfigValue>& values,
                                            const std::filesystem::path& base_dir = {},
                                            const std::string& source = "config") {
  static const std::set<std::string> known = {"mode",      "base_a",         "base_b",      "meta_sets",
                                              "eval_sets", "train_specs",    "epochs",      "learning_rates",
                                              "activations", "lambdas",      "batch_size",  "seed",
                                              "ratio_sets", "ratio_total"};
  for (const auto& [k, v] : values)
    if (!known.count(k)) fail(source, ": unknown key '", k, "'");

  const detail::ConfigReader r{values, source};
  auto path = [&](const std::string& p) {
    std::filesystem::path fp(p);
    return fp.is_relative() && !base_dir.empty() ? base_dir / fp : fp;
  };

  SweepConfig c;
  const std::string mode = r.string(r.need("mode"), "mode");
  if (mode == "vanilla") c.mode = SweepMode::vanilla;
  else if (mode == "grid") c.mode = SweepMode::grid;
  else if (mode == "ratio") c.mode = SweepMode::ratio;
  else fail(source, ": mode must be vanilla, grid or ratio (got '", mode, "')");

  c.base_a = path(r.string(r.need("base_a"), "base_a"));
  c.base_b = path(r.string(r.need("base_b"), "base_b"));
  for (const auto& p : r.strings("meta_sets")) c.meta_sets.push_back(path(p));
  if (r.get("eval_sets")) c.eval_sets = r.strings("eval_sets");
  const long long seed = r.integer(r.need("seed"), "seed");
  if (seed < 0) fail(source, ": seed must be non-negative");
  c.grid.seed = static_cast<std::uint64_t>(seed);
  if (c.mode == SweepMode::vanilla) return c;

  if (c.mode == SweepMode::grid) c.grid.train_specs = r.strings("train_specs");
  else if (r.get("train_specs")) fail(source, ": ratio mode derives train_specs from ratio_sets");
  for (const auto& v : r.array("epochs")) {
    const long long e = r.integer(v, "epochs");
    if (e < 1) fail(source, ": epochs must be >= 1");
    c.grid.epochs.push_back(static_cast<std::size_t>(e));
  }
  for (const auto& v : r.array("learning_rates")) c.grid.learning_rates.push_back(r.real(v, "learning_rates"));
  for (const auto& a : r.strings("activations")) c.grid.activations.push_back(parse_activation(a));
  if (r.get("lambdas")) {
    c.grid.lambdas.clear();
    for (const auto& v : r.array("lambdas")) c.grid.lambdas.push_back(r.real(v, "lambdas"));
  }
  if (const auto* b = r.get("batch_size")) {
    const long long bs = r.integer(*b, "batch_size");
    if (bs < 1) fail(source, ": batch_size must be >= 1");
    c.grid.batch_size = static_cast<std::size_t>(bs);
  }
  if (c.mode == SweepMode::ratio) {
    c.ratio_sets = r.strings("ratio_sets");
    if (c.ratio_sets.size() != 2) fail(source, ": ratio_sets must name exactly two meta sets");
    const long long total = r.integer(r.need("ratio_total"), "ratio_total");
    if (total < 1) fail(source, ": ratio_total must be positive");
    c.ratio_total = static_cast<std::size_t>(total);
    for (const auto& spec : ratio_grid(c.ratio_sets[0], c.ratio_sets[1], c.ratio_total, c.grid.seed))
      c.grid.train_specs.push_back(spec.label());
  }
  return c;
}

inline SweepConfig parse_sweep_config(std::string_view text, const std::filesystem::path& base_dir = {},
                                      const std::string& source = "config") {
  return sweep_config_from_values(parse_config_text(text, source), base_dir, source);
}

inline SweepConfig load_sweep_config(const std::filesystem::path& path) {
  return parse_sweep_config(read_file(path), path.parent_path(), path.string());
}

}  // namespace soupkit
