#pragma once

// Model configuration, soup-unit taxonomy, and checkpoint container.

#include <compare>
#include <cstring>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "soupkit/error.hpp"
#include "soupkit/rng.hpp"
#include "soupkit/tensor.hpp"

namespace soupkit {

struct ModelConfig {
  std::size_t d_model = 64;
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t d_ff = 128;
  std::size_t vocab_size = 64;
  std::size_t max_seq_len = 64;
  double rms_eps = 1e-6;

  [[nodiscard]] std::size_t head_dim() const { return d_model / n_heads; }
  /// Token rows followed by one position row per sequence slot.
  [[nodiscard]] std::size_t embed_rows() const { return vocab_size + max_seq_len; }

  void validate() const {
    if (d_model == 0 || n_layers == 0 || n_heads == 0 || d_ff == 0 || vocab_size == 0)
      fail("model config: all dimensions must be >= 1");
    if (d_model % n_heads != 0) fail("model config: d_model must be divisible by n_heads");
    if (max_seq_len < 2) fail("model config: max_seq_len must be >= 2");
    if (!(rms_eps > 0.0)) fail("model config: rms_eps must be positive");
  }

  bool operator==(const ModelConfig&) const = default;
};

inline nlohmann::ordered_json to_json(const ModelConfig& c) {
  return {{"d_model", c.d_model},       {"n_layers", c.n_layers},
          {"n_heads", c.n_heads},       {"d_ff", c.d_ff},
          {"vocab_size", c.vocab_size}, {"max_seq_len", c.max_seq_len},
          {"rms_eps", c.rms_eps}};
}

inline ModelConfig config_from_json(const nlohmann::ordered_json& j) {
  ModelConfig c;
  try {
    c.d_model = j.at("d_model").get<std::size_t>();
    c.n_layers = j.at("n_layers").get<std::size_t>();
    c.n_heads = j.at("n_heads").get<std::size_t>();
    c.d_ff = j.at("d_ff").get<std::size_t>();
    c.vocab_size = j.at("vocab_size").get<std::size_t>();
    c.max_seq_len = j.at("max_seq_len").get<std::size_t>();
    c.rms_eps = j.at("rms_eps").get<double>();
  } catch (const nlohmann::json::exception& e) {
    fail("model config: ", e.what());
  }
  c.validate();
  return c;
}

enum class UnitKind {
  embed,
  attn_q,
  attn_k,
  attn_v,
  attn_o,
  mlp_gate,
  mlp_up,
  mlp_down,
  input_norm,
  post_attn_norm,
  final_norm,
  lm_head,
};

inline constexpr UnitKind kAllUnitKinds[] = {
    UnitKind::embed,   UnitKind::attn_q,     UnitKind::attn_k,         UnitKind::attn_v,
    UnitKind::attn_o,  UnitKind::mlp_gate,   UnitKind::mlp_up,         UnitKind::mlp_down,
    UnitKind::input_norm, UnitKind::post_attn_norm, UnitKind::final_norm, UnitKind::lm_head};

inline std::string_view kind_name(UnitKind k) {
  switch (k) {
    case UnitKind::embed: return "embed";
    case UnitKind::attn_q: return "attn_q";
    case UnitKind::attn_k: return "attn_k";
    case UnitKind::attn_v: return "attn_v";
    case UnitKind::attn_o: return "attn_o";
    case UnitKind::mlp_gate: return "mlp_gate";
    case UnitKind::mlp_up: return "mlp_up";
    case UnitKind::mlp_down: return "mlp_down";
    case UnitKind::input_norm: return "input_norm";
    case UnitKind::post_attn_norm: return "post_attn_norm";
    case UnitKind::final_norm: return "final_norm";
    case UnitKind::lm_head: return "lm_head";
  }
  return "?";
}

inline UnitKind parse_kind(std::string_view name) {
  for (UnitKind k : kAllUnitKinds)
    if (kind_name(k) == name) return k;
  fail("unknown unit kind '", std::string(name), "'");
}

inline bool is_per_layer(UnitKind k) {
  return k != UnitKind::embed && k != UnitKind::final_norm && k != UnitKind::lm_head;
}

/// Address of one mergeable mapping. Global kinds carry no layer.
struct SoupUnitId {
  UnitKind kind = UnitKind::embed;
  std::optional<std::size_t> layer;

  [[nodiscard]] std::string tensor_name() const {
    const std::string l = layer ? std::to_string(*layer) : std::string();
    switch (kind) {
      case UnitKind::embed: return "embed.weight";
      case UnitKind::final_norm: return "final_norm.weight";
      case UnitKind::lm_head: return "lm_head.weight";
      case UnitKind::input_norm: return "layers." + l + ".input_norm.weight";
      case UnitKind::post_attn_norm: return "layers." + l + ".post_attn_norm.weight";
      case UnitKind::attn_q: return "layers." + l + ".attn.q.weight";
      case UnitKind::attn_k: return "layers." + l + ".attn.k.weight";
      case UnitKind::attn_v: return "layers." + l + ".attn.v.weight";
      case UnitKind::attn_o: return "layers." + l + ".attn.o.weight";
      case UnitKind::mlp_gate: return "layers." + l + ".mlp.gate.weight";
      case UnitKind::mlp_up: return "layers." + l + ".mlp.up.weight";
      case UnitKind::mlp_down: return "layers." + l + ".mlp.down.weight";
    }
    return {};
  }

  [[nodiscard]] std::string label() const {
    std::string s(kind_name(kind));
    if (layer) s += "@" + std::to_string(*layer);
    return s;
  }

  friend bool operator==(const SoupUnitId&, const SoupUnitId&) = default;
  friend auto operator<=>(const SoupUnitId& a, const SoupUnitId& b) {
    if (auto c = a.kind <=> b.kind; c != 0) return c;
    const long la = a.layer ? static_cast<long>(*a.layer) : -1;
    const long lb = b.layer ? static_cast<long>(*b.layer) : -1;
    return la <=> lb;
  }
};

inline SoupUnitId make_unit(UnitKind kind, std::optional<std::size_t> layer, const ModelConfig& cfg) {
  if (is_per_layer(kind) != layer.has_value())
    fail("unit ", std::string(kind_name(kind)), ": layer index required iff the kind is per-layer");
  if (layer && *layer >= cfg.n_layers)
    fail("unit ", std::string(kind_name(kind)), ": layer ", std::to_string(*layer), " out of range");
  return {kind, layer};
}

/// Canonical order: embed, per layer (input_norm, q, k, v, o, post_attn_norm,
/// gate, up, down), final_norm, lm_head.
inline std::vector<SoupUnitId> enumerate_units(const ModelConfig& cfg) {
  static constexpr UnitKind per_layer[] = {
      UnitKind::input_norm, UnitKind::attn_q,   UnitKind::attn_k, UnitKind::attn_v,  UnitKind::attn_o,
      UnitKind::post_attn_norm, UnitKind::mlp_gate, UnitKind::mlp_up, UnitKind::mlp_down};
  std::vector<SoupUnitId> units;
  units.reserve(9 * cfg.n_layers + 3);
  units.push_back({UnitKind::embed, std::nullopt});
  for (std::size_t l = 0; l < cfg.n_layers; ++l)
    for (UnitKind k : per_layer) units.push_back({k, l});
  units.push_back({UnitKind::final_norm, std::nullopt});
  units.push_back({UnitKind::lm_head, std::nullopt});
  return units;
}

/// Position of a unit in enumerate_units order, for any layer count.
inline std::size_t canonical_rank(const SoupUnitId& u) {
  static constexpr std::size_t kGlobalTail = std::size_t{1} << 40;
  switch (u.kind) {
    case UnitKind::embed: return 0;
    case UnitKind::final_norm: return kGlobalTail;
    case UnitKind::lm_head: return kGlobalTail + 1;
    default: break;
  }
  std::size_t pos = 0;
  switch (u.kind) {
    case UnitKind::input_norm: pos = 0; break;
    case UnitKind::attn_q: pos = 1; break;
    case UnitKind::attn_k: pos = 2; break;
    case UnitKind::attn_v: pos = 3; break;
    case UnitKind::attn_o: pos = 4; break;
    case UnitKind::post_attn_norm: pos = 5; break;
    case UnitKind::mlp_gate: pos = 6; break;
    case UnitKind::mlp_up: pos = 7; break;
    default: pos = 8; break;
  }
  return 1 + 9 * u.layer.value_or(0) + pos;
}

inline Shape unit_shape(const ModelConfig& cfg, UnitKind kind) {
  const std::size_t d = cfg.d_model;
  switch (kind) {
    case UnitKind::embed: return {cfg.embed_rows(), d};
    case UnitKind::attn_q:
    case UnitKind::attn_k:
    case UnitKind::attn_v:
    case UnitKind::attn_o: return {d, d};
    case UnitKind::mlp_gate:
    case UnitKind::mlp_up: return {cfg.d_ff, d};
    case UnitKind::mlp_down: return {d, cfg.d_ff};
    case UnitKind::input_norm:
    case UnitKind::post_attn_norm:
    case UnitKind::final_norm: return {d};
    case UnitKind::lm_head: return {cfg.vocab_size, d};
  }
  return {};
}

inline bool is_norm(UnitKind k) {
  return k == UnitKind::input_norm || k == UnitKind::post_attn_norm || k == UnitKind::final_norm;
}

using TensorMap = std::map<std::string, Tensor>;

struct Checkpoint {
  ModelConfig config;
  TensorMap tensors;
  std::vector<std::string> lineage;
  std::int64_t seed = 0;

  [[nodiscard]] const Tensor& at(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) fail("checkpoint has no tensor '", name, "'");
    return it->second;
  }
  [[nodiscard]] const Tensor& at(const SoupUnitId& unit) const { return at(unit.tensor_name()); }

  /// Tensor names and shapes must be exactly those implied by the config.
  void validate() const {
    config.validate();
    if (lineage.empty()) fail("checkpoint lineage must not be empty");
    const auto units = enumerate_units(config);
    if (tensors.size() != units.size())
      fail("checkpoint has ", std::to_string(tensors.size()), " tensors, config implies ",
           std::to_string(units.size()));
    for (const auto& u : units) {
      const auto& t = at(u);
      const Shape want = unit_shape(config, u.kind);
      if (t.shape != want)
        fail("tensor '", u.tensor_name(), "': shape ", shape_string(t.shape), ", expected ",
             shape_string(want));
      if (t.data.size() != element_count(t.shape))
        fail("tensor '", u.tensor_name(), "': data length does not match shape");
      if (!t.all_finite()) fail("tensor '", u.tensor_name(), "': non-finite value");
    }
  }

  bool operator==(const Checkpoint&) const = default;
};

/// Shared ancestor: N(0, 0.02) weights, unit norm weights.
inline Checkpoint init_ancestor(const ModelConfig& config, std::int64_t seed) {
  config.validate();
  Checkpoint ckpt;
  ckpt.config = config;
  ckpt.seed = seed;
  ckpt.lineage = {"ancestor@seed=" + std::to_string(seed)};
  Rng rng(static_cast<std::uint64_t>(seed));
  for (const auto& u : enumerate_units(config)) {
    Tensor t(unit_shape(config, u.kind), 1.0);
    if (!is_norm(u.kind))
      for (double& v : t.data) v = 0.02 * rng.normal();
    ckpt.tensors.emplace(u.tensor_name(), std::move(t));
  }
  return ckpt;
}

/// Order-independent fingerprint of all tensor bytes, used to check frozen inputs.
inline std::uint64_t checksum(const Checkpoint& ckpt) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& [name, t] : ckpt.tensors) {
    h = hash_seed(h, name);
    for (double v : t.data) {
      std::uint64_t bits;
      static_assert(sizeof bits == sizeof v);
      std::memcpy(&bits, &v, sizeof v);
      h = mix_seed(h, bits);
    }
  }
  return h;
}

}  // namespace soupkit
