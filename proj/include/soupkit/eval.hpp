#pragma once

// Eval-split metrics: token NLL, perplexity, and greedy exact match.

#include <cmath>
#include <string>
#include <vector>

#include "soupkit/data.hpp"
#include "soupkit/error.hpp"
#include "soupkit/model.hpp"
#include "soupkit/transformer.hpp"

namespace soupkit {

inline constexpr std::size_t kMaxNewTokens = 32;

struct Metrics {
  double nll = 0.0;
  double ppl = 1.0;
  double exact_match = 0.0;

  bool operator==(const Metrics&) const = default;
};

/// Lowest index among equal maxima.
inline int argmax(const double* row, std::size_t n) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < n; ++i)
    if (row[i] > row[best]) best = i;
  return static_cast<int>(best);
}

/// Greedy decoding from `prompt`; returns generated ids before the terminator.
inline std::vector<int> greedy_complete(const Checkpoint& ckpt, const std::vector<int>& prompt,
                                        std::size_t max_new = kMaxNewTokens) {
  const auto& cfg = ckpt.config;
  const auto net = detail::bind<const double*>(ckpt.tensors, cfg);
  std::vector<int> seq = prompt;
  std::vector<int> out;
  detail::RowCache cache;
  std::vector<double> logits;
  while (out.size() < max_new && seq.size() <= cfg.max_seq_len) {
    TokenMatrix probe(1, seq.size());
    probe.ids = seq;
    detail::check_tokens(cfg, probe);
    logits.assign(seq.size() * cfg.vocab_size, 0.0);
    detail::forward_row(net, cfg, seq, cache, logits.data());
    const int next = argmax(logits.data() + (seq.size() - 1) * cfg.vocab_size, cfg.vocab_size);
    if (is_terminator(next)) break;
    out.push_back(next);
    seq.push_back(next);
  }
  return out;
}

/// Metrics over `samples`. Exact match is computed from one teacher-forced pass:
/// greedy decoding reproduces the reference iff the argmax at every answer
/// position is the reference token and the argmax after it is a terminator.
inline Metrics evaluate(const Checkpoint& ckpt, const Dataset& samples) {
  if (samples.empty()) fail("evaluate: empty eval set");
  const auto& cfg = ckpt.config;
  check_fits(samples, cfg);
  const auto net = detail::bind<const double*>(ckpt.tensors, cfg);
  const std::size_t V = cfg.vocab_size;

  detail::RowCache cache;
  std::vector<double> logits;
  double total = 0.0;
  std::size_t count = 0, hits = 0;
  for (const auto& s : samples) {
    const auto toks = s.tokens();
    const std::vector<int> inputs(toks.begin(), toks.end() - 1);
    logits.assign(inputs.size() * V, 0.0);
    detail::forward_row(net, cfg, inputs, cache, logits.data());
    for (std::size_t t = 0; t < inputs.size(); ++t) {
      total += detail::row_cross_entropy(logits.data() + t * V, V, toks[t + 1], nullptr);
      ++count;
    }
    const std::size_t p = s.prompt_tokens().size();
    const auto answer = encode_chars(s.answer());
    bool match = answer.size() < kMaxNewTokens;
    for (std::size_t k = 0; match && k <= answer.size(); ++k) {
      const int pred = argmax(logits.data() + (p - 1 + k) * V, V);
      match = k < answer.size() ? pred == answer[k] : is_terminator(pred);
    }
    hits += match ? 1 : 0;
  }
  Metrics m;
  m.nll = total / static_cast<double>(count);
  m.ppl = std::exp(m.nll);
  m.exact_match = static_cast<double>(hits) / static_cast<double>(samples.size());
  return m;
}

inline Metrics evaluate(const Checkpoint& ckpt, const MetaSet& meta) { return evaluate(ckpt, meta.eval); }

}  // namespace soupkit
