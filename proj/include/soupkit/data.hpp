#pragma once

// Character tokenizer, synthetic meta-set generators, and the sample mixer.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "soupkit/error.hpp"
#include "soupkit/io.hpp"
#include "soupkit/rng.hpp"
#include "soupkit/transformer.hpp"

namespace soupkit {

// 64-slot token table: three specials, 43 characters, the rest reserved.
inline constexpr int kPad = 0;
inline constexpr int kBos = 1;
inline constexpr int kEos = 2;
inline constexpr std::size_t kTokenTableSize = 64;
inline constexpr std::string_view kAlphabet = "0123456789abcdefghijklmnopqrstuvwxyz+=|>#. ";
inline constexpr int kFirstChar = 3;

inline int char_token(char c) {
  const auto pos = kAlphabet.find(c);
  if (pos == std::string_view::npos) fail("unsupported character '", std::string(1, c), "'");
  return kFirstChar + static_cast<int>(pos);
}

/// Character ids only, no BOS/EOS.
inline std::vector<int> encode_chars(std::string_view text) {
  std::vector<int> out;
  out.reserve(text.size());
  for (char c : text) out.push_back(char_token(c));
  return out;
}

/// BOS + characters + EOS.
inline std::vector<int> encode(std::string_view text) {
  std::vector<int> out{kBos};
  for (int id : encode_chars(text)) out.push_back(id);
  out.push_back(kEos);
  return out;
}

/// BOS + characters, the form fed to the model before completion.
inline std::vector<int> encode_prompt(std::string_view text) {
  std::vector<int> out{kBos};
  for (int id : encode_chars(text)) out.push_back(id);
  return out;
}

/// Drops BOS, EOS and PAD; reserved ids are an error.
inline std::string decode(std::span<const int> tokens) {
  std::string out;
  for (int id : tokens) {
    if (id == kPad || id == kBos || id == kEos) continue;
    const int idx = id - kFirstChar;
    if (idx < 0 || static_cast<std::size_t>(idx) >= kAlphabet.size())
      fail("token id ", std::to_string(id), " has no character");
    out.push_back(kAlphabet[static_cast<std::size_t>(idx)]);
  }
  return out;
}

inline bool is_terminator(int id) { return id == kEos || id == char_token('#'); }

struct Sample {
  std::string prompt;
  std::string full;

  [[nodiscard]] std::vector<int> tokens() const { return encode(full); }
  [[nodiscard]] std::vector<int> prompt_tokens() const { return encode_prompt(prompt); }
  /// Reference completion: text after the prompt, up to the first '#'.
  [[nodiscard]] std::string answer() const {
    std::string rest = full.substr(prompt.size());
    if (auto pos = rest.find('#'); pos != std::string::npos) rest.resize(pos);
    return rest;
  }

  bool operator==(const Sample&) const = default;
  auto operator<=>(const Sample&) const = default;
};

inline void check_sample(const Sample& s) {
  if (s.full.compare(0, s.prompt.size(), s.prompt) != 0)
    fail("sample '", s.full, "' does not start with its prompt '", s.prompt, "'");
  encode(s.full);
}

struct MetaSet {
  std::string name;
  std::vector<Sample> train;
  std::vector<Sample> eval;
};

/// Ordered list of samples fed to training or evaluation.
using Dataset = std::vector<Sample>;

struct LenRange {
  std::size_t min = 3;
  std::size_t max = 6;
};

namespace detail {

inline void split_into(MetaSet& set, std::vector<Sample> samples, std::size_t n_train) {
  set.train.assign(samples.begin(), samples.begin() + static_cast<long>(n_train));
  set.eval.assign(samples.begin() + static_cast<long>(n_train), samples.end());
}

}  // namespace detail

/// Domain A: "<s>|<reverse(s)>" over lowercase letters.
inline MetaSet gen_task_reverse(std::uint64_t seed, std::size_t n_train, std::size_t n_eval,
                                LenRange lens, std::size_t max_seq_len = 64) {
  if (lens.min < 2 || lens.max < lens.min || lens.max + 3 > max_seq_len / 2)
    fail("reverse task: length range [", std::to_string(lens.min), ", ", std::to_string(lens.max),
         "] must lie within [2, ", std::to_string(max_seq_len / 2 - 3), "]");
  double capacity = 0.0;
  for (std::size_t L = lens.min; L <= lens.max; ++L) capacity += std::pow(26.0, static_cast<double>(L));
  const std::size_t total = n_train + n_eval;
  if (static_cast<double>(total) > capacity)
    fail("reverse task: ", std::to_string(total), " samples exceed the ",
         std::to_string(static_cast<long long>(capacity)), " distinct strings available");

  Rng rng(seed);
  std::vector<std::string> words;
  if (2.0 * static_cast<double>(total) > capacity) {
    // Dense request: enumerate everything, then shuffle.
    for (std::size_t L = lens.min; L <= lens.max; ++L) {
      std::string w(L, 'a');
      while (true) {
        words.push_back(w);
        std::size_t i = L;
        while (i > 0 && w[i - 1] == 'z') w[--i] = 'a';
        if (i == 0) break;
        ++w[i - 1];
      }
    }
    rng.shuffle(words);
    words.resize(total);
  } else {
    std::set<std::string> seen;
    const std::size_t span = lens.max - lens.min + 1;
    while (words.size() < total) {
      std::string w(lens.min + static_cast<std::size_t>(rng.below(span)), 'a');
      for (char& c : w) c = static_cast<char>('a' + rng.below(26));
      if (seen.insert(w).second) words.push_back(std::move(w));
    }
  }
  std::vector<Sample> samples;
  samples.reserve(total);
  for (const auto& w : words) {
    std::string rev(w.rbegin(), w.rend());
    samples.push_back({w + "|", w + "|" + rev});
  }
  MetaSet set{"reverse", {}, {}};
  detail::split_into(set, std::move(samples), n_train);
  return set;
}

/// Domain B: "a+b=c#" with c = (a + b) mod modulus.
inline MetaSet gen_task_modadd(std::uint64_t seed, std::size_t n_train, std::size_t n_eval,
                               std::size_t modulus) {
  if (modulus < 2 || modulus > 97) fail("modadd task: modulus must be in [2, 97]");
  const std::size_t total = n_train + n_eval;
  if (total > modulus * modulus)
    fail("modadd task: ", std::to_string(total), " samples exceed the ",
         std::to_string(modulus * modulus), " distinct pairs available");
  std::vector<Sample> samples;
  samples.reserve(modulus * modulus);
  for (std::size_t a = 0; a < modulus; ++a)
    for (std::size_t b = 0; b < modulus; ++b) {
      std::string prompt = std::to_string(a) + "+" + std::to_string(b) + "=";
      samples.push_back({prompt, prompt + std::to_string((a + b) % modulus) + "#"});
    }
  Rng rng(seed);
  rng.shuffle(samples);
  samples.resize(total);
  MetaSet set{"modadd", {}, {}};
  detail::split_into(set, std::move(samples), n_train);
  return set;
}

struct MixComponent {
  std::string set_name;
  std::size_t count = 0;
};

struct MixSpec {
  std::vector<MixComponent> components;
  std::uint64_t seed = 0;

  /// "A:50+B:50"
  [[nodiscard]] std::string label() const {
    std::string s;
    for (const auto& c : components) {
      if (!s.empty()) s += "+";
      s += c.set_name + ":" + std::to_string(c.count);
    }
    return s;
  }

  static MixSpec parse(std::string_view label, std::uint64_t seed) {
    MixSpec spec;
    spec.seed = seed;
    for (const auto& part : split(label, '+')) {
      const auto colon = part.rfind(':');
      if (colon == std::string::npos || colon == 0)
        fail("train spec component '", part, "' must look like NAME:COUNT");
      const auto count = parse_int(std::string_view(part).substr(colon + 1));
      if (count < 0) fail("train spec component '", part, "' has a negative count");
      spec.components.push_back({part.substr(0, colon), static_cast<std::size_t>(count)});
    }
    return spec;
  }
};

/// Draws train samples without replacement per component, then interleaves.
inline Dataset mix(const std::vector<MetaSet>& sets, const MixSpec& spec) {
  std::size_t total = 0;
  Dataset out;
  for (std::size_t ci = 0; ci < spec.components.size(); ++ci) {
    const auto& comp = spec.components[ci];
    auto it = std::find_if(sets.begin(), sets.end(),
                           [&](const MetaSet& m) { return m.name == comp.set_name; });
    if (it == sets.end()) fail("mix: unknown meta set '", comp.set_name, "'");
    if (comp.count > it->train.size())
      fail("mix: requested ", std::to_string(comp.count), " samples from '", comp.set_name,
           "' but only ", std::to_string(it->train.size()), " are available");
    std::vector<std::size_t> idx(it->train.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    Rng rng(mix_seed(spec.seed, ci));
    rng.shuffle(idx);
    for (std::size_t i = 0; i < comp.count; ++i) out.push_back(it->train[idx[i]]);
    total += comp.count;
  }
  if (total == 0) fail("mix: total sample count must be positive");
  Rng rng(spec.seed);
  rng.shuffle(out);
  return out;
}

/// Two-component ratio grid at a fixed total: first share 5%, 15%, ..., 95%.
inline std::vector<MixSpec> ratio_grid(const std::string& first, const std::string& second,
                                       std::size_t total, std::uint64_t seed) {
  std::vector<MixSpec> specs;
  for (std::size_t pct = 5; pct <= 95; pct += 10) {
    const std::size_t a = total * pct / 100;
    specs.push_back({{{first, a}, {second, total - a}}, seed});
  }
  return specs;
}

/// Next-token batch: inputs = seq[:-1], targets = seq[1:], both padded with kPad.
struct Batch {
  TokenMatrix inputs;
  TokenMatrix targets;
};

inline Batch make_batch(std::span<const Sample* const> rows) {
  std::vector<std::vector<int>> seqs;
  std::size_t width = 1;
  for (const Sample* s : rows) {
    seqs.push_back(s->tokens());
    width = std::max(width, seqs.back().size() - 1);
  }
  Batch b{TokenMatrix(rows.size(), width, kPad), TokenMatrix(rows.size(), width, kPad)};
  for (std::size_t r = 0; r < seqs.size(); ++r)
    for (std::size_t t = 0; t + 1 < seqs[r].size(); ++t) {
      b.inputs(r, t) = seqs[r][t];
      b.targets(r, t) = seqs[r][t + 1];
    }
  return b;
}

/// Splits `order` (indices into data) into consecutive padded batches.
inline std::vector<Batch> make_batches(const Dataset& data, const std::vector<std::size_t>& order,
                                       std::size_t batch_size) {
  if (batch_size == 0) fail("batch size must be positive");
  std::vector<Batch> out;
  for (std::size_t i = 0; i < order.size(); i += batch_size) {
    std::vector<const Sample*> rows;
    for (std::size_t j = i; j < std::min(order.size(), i + batch_size); ++j)
      rows.push_back(&data[order[j]]);
    out.push_back(make_batch(rows));
  }
  return out;
}

inline void check_fits(const Dataset& data, const ModelConfig& cfg) {
  for (const auto& s : data) {
    const auto toks = s.tokens();
    if (toks.size() - 1 > cfg.max_seq_len)
      fail("sample '", s.full, "' is longer than max_seq_len");
    for (int id : toks)
      if (static_cast<std::size_t>(id) >= cfg.vocab_size)
        fail("sample '", s.full, "' uses token ids beyond vocab_size");
  }
}

// JSON-lines, one {"prompt", "full"} object per line.

inline std::string to_jsonl(const Dataset& data) {
  std::string out;
  for (const auto& s : data) {
    nlohmann::ordered_json j{{"prompt", s.prompt}, {"full", s.full}};
    out += j.dump() + "\n";
  }
  return out;
}

inline Dataset from_jsonl(std::string_view text, const std::string& source) {
  Dataset out;
  std::size_t line_no = 0;
  for (const auto& line : split_lines(text)) {
    ++line_no;
    try {
      const auto j = nlohmann::json::parse(line);
      Sample s{j.at("prompt").get<std::string>(), j.at("full").get<std::string>()};
      check_sample(s);
      out.push_back(std::move(s));
    } catch (const nlohmann::json::exception& e) {
      fail(source, ":", std::to_string(line_no), ": ", e.what());
    }
  }
  return out;
}

inline void save_dataset(const Dataset& data, const std::filesystem::path& path) {
  write_file_atomic(path, to_jsonl(data));
}

inline Dataset load_dataset(const std::filesystem::path& path) {
  return from_jsonl(read_file(path), path.string());
}

/// Writes `<prefix>.train.jsonl` and `<prefix>.eval.jsonl`.
inline void save_meta_set(const MetaSet& set, const std::filesystem::path& prefix) {
  save_dataset(set.train, prefix.string() + ".train.jsonl");
  save_dataset(set.eval, prefix.string() + ".eval.jsonl");
}

/// Loads a meta set named after the last component of `prefix`.
inline MetaSet load_meta_set(const std::filesystem::path& prefix) {
  MetaSet set;
  set.name = prefix.filename().string();
  set.train = load_dataset(prefix.string() + ".train.jsonl");
  set.eval = load_dataset(prefix.string() + ".eval.jsonl");
  std::set<std::string> train_full;
  for (const auto& s : set.train) train_full.insert(s.full);
  for (const auto& s : set.eval)
    if (train_full.count(s.full)) fail("meta set '", set.name, "': '", s.full, "' is in both splits");
  return set;
}

}  // namespace soupkit
