/*
 * Copyright 2026 The pairrel Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "autograd.hpp"
#include "errors.hpp"
#include "nn.hpp"
#include "rng.hpp"
#include "serialization.hpp"
#include "tensor.hpp"

namespace pairrel {

inline constexpr std::size_t kVocabSize = 128;

enum class StreamKind { mock, precomputed };
enum class Role { anchor, adapter };

inline const char* to_string(StreamKind k) { return k == StreamKind::mock ? "mock" : "precomputed"; }
inline const char* to_string(Role r) { return r == Role::anchor ? "r" : "t"; }

struct StreamConfig {
  StreamKind kind = StreamKind::mock;
  std::size_t width = 48;
  std::size_t max_len = 32;
  std::uint64_t seed = 1;

  bool operator==(const StreamConfig&) const = default;
};

/// One encoder stream E^(m) with its projection. Parameters live in a
/// ParameterStore under `prefix()`.
struct EncoderStream {
  std::size_t id = 0;
  StreamConfig config;
  bool frozen = false;
  Role role = Role::anchor;

  std::string prefix() const { return "stream" + std::to_string(id) + "."; }
};

struct TokenizedInput {
  std::vector<std::int32_t> ids;
  Mask mask;
};

/// Byte-level tokenization: id = byte value, 0 is padding. Truncates or pads
/// to exactly `max_len` positions.
inline TokenizedInput tokenize(std::string_view raw, std::size_t max_len) {
  if (raw.empty()) throw InvalidInput("tokenize: empty molecular string");
  if (max_len == 0) throw InvalidArgument("tokenize: max_len must be positive");
  TokenizedInput out{std::vector<std::int32_t>(max_len, 0), Mask(max_len, 0)};
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const auto c = static_cast<unsigned char>(raw[i]);
    if (c < 0x20 || c >= 0x7F) {
      throw InvalidInput("tokenize: non-printable byte " + std::to_string(c) + " at offset " + std::to_string(i));
    }
    if (i < max_len) {
      out.ids[i] = c;
      out.mask[i] = 1;
    }
  }
  return out;
}

/// Stored per-drug token matrices standing in for pretrained encoder outputs.
///
/// File layout: the line "GENREL-EMB v1", one JSON object per entry
/// {"drug_id", "stream_id", "T", "d_m", "valid", "offset"}, an empty line, then
/// the blob of little-endian float64 values, row-major per entry. "offset" is
/// in bytes from the start of the blob; "valid" is the number of leading
/// unmasked rows.
class EmbeddingStore {
 public:
  static constexpr std::string_view kMagic = "GENREL-EMB v1";

  struct Entry {
    Tensor tokens;
    std::size_t valid = 0;
  };

  void put(const std::string& drug_id, std::size_t stream_id, Tensor tokens, std::size_t valid) {
    if (valid == 0 || valid > tokens.rows()) {
      throw InvalidArgument("embedding store: valid row count out of range for '" + drug_id + "'");
    }
    entries_[{drug_id, stream_id}] = Entry{std::move(tokens), valid};
  }

  bool contains(const std::string& drug_id, std::size_t stream_id) const {
    return entries_.count({drug_id, stream_id}) != 0;
  }

  const Entry& get(const std::string& drug_id, std::size_t stream_id) const {
    auto it = entries_.find({drug_id, stream_id});
    if (it == entries_.end()) {
      throw MissingEntity("embedding store: no entry for drug '" + drug_id + "' in stream " +
                          std::to_string(stream_id));
    }
    return it->second;
  }

  std::size_t size() const noexcept { return entries_.size(); }

  std::string serialize() const {
    std::string index;
    std::string blob;
    index.append(kMagic).push_back('\n');
    for (const auto& [key, e] : entries_) {
      nlohmann::ordered_json j;
      j["drug_id"] = key.first;
      j["stream_id"] = key.second;
      j["T"] = e.tokens.rows();
      j["d_m"] = e.tokens.cols();
      j["valid"] = e.valid;
      j["offset"] = blob.size();
      index += j.dump();
      index.push_back('\n');
      append_f64_le(blob, e.tokens.values());
    }
    index.push_back('\n');
    return index + blob;
  }

  static EmbeddingStore deserialize(std::string_view bytes) {
    EmbeddingStore store;
    std::size_t pos = 0;
    auto next_line = [&]() -> std::string_view {
      const auto nl = bytes.find('\n', pos);
      if (nl == std::string_view::npos) throw ParseError("embedding store: unterminated index");
      auto line = bytes.substr(pos, nl - pos);
      pos = nl + 1;
      return line;
    };
    if (next_line() != kMagic) throw ParseError("embedding store: bad header, expected GENREL-EMB v1");
    struct Pending {
      std::string drug;
      std::size_t stream, rows, cols, valid, offset;
    };
    std::vector<Pending> pending;
    for (std::size_t line_no = 2;; ++line_no) {
      const auto line = next_line();
      if (line.empty()) break;
      try {
        const auto j = nlohmann::json::parse(line);
        pending.push_back({j.at("drug_id").get<std::string>(), j.at("stream_id").get<std::size_t>(),
                           j.at("T").get<std::size_t>(), j.at("d_m").get<std::size_t>(),
                           j.at("valid").get<std::size_t>(), j.at("offset").get<std::size_t>()});
      } catch (const nlohmann::json::exception& e) {
        throw ParseError("embedding store: index line " + std::to_string(line_no) + ": " + e.what());
      }
    }
    const auto blob = bytes.substr(pos);
    for (const auto& p : pending) {
      auto values = read_f64_le(blob, p.offset, p.rows * p.cols);
      store.put(p.drug, p.stream, Tensor(p.rows, p.cols, std::move(values)), p.valid);
    }
    return store;
  }

  void save(const std::string& path) const { write_file(path, serialize()); }
  static EmbeddingStore load(const std::string& path) { return deserialize(read_file(path)); }

 private:
  std::map<std::pair<std::string, std::size_t>, Entry> entries_;
};

/// x_a^(m): one drug's raw input plus per-stream token ids and masks.
struct MolecularInput {
  std::string drug_id;
  std::string raw;
  std::vector<std::vector<std::int32_t>> ids;
  std::vector<Mask> masks;
};

inline MolecularInput make_input(const std::string& drug_id, const std::string& raw,
                                 std::span<const EncoderStream> streams, const EmbeddingStore* store) {
  MolecularInput in{drug_id, raw, {}, {}};
  for (const auto& s : streams) {
    if (s.config.kind == StreamKind::mock) {
      auto tok = tokenize(raw, s.config.max_len);
      in.ids.push_back(std::move(tok.ids));
      in.masks.push_back(std::move(tok.mask));
    } else {
      if (store == nullptr) throw MissingEntity("stream " + std::to_string(s.id) + " needs an embedding store");
      const auto& e = store->get(drug_id, s.id);
      Mask m(e.tokens.rows(), 0);
      std::fill(m.begin(), m.begin() + static_cast<std::ptrdiff_t>(e.valid), 1);
      in.ids.emplace_back();
      in.masks.push_back(std::move(m));
    }
  }
  return in;
}

inline double sinusoidal_position(std::size_t pos, std::size_t dim, std::size_t width) {
  const double exponent = static_cast<double>(dim - dim % 2) / static_cast<double>(width);
  const double angle = static_cast<double>(pos) / std::pow(10000.0, exponent);
  return dim % 2 == 0 ? std::sin(angle) : std::cos(angle);
}

/// Hash-seeded table entry in [-1, 1) for (seed, stream, token, dim).
inline double mock_table_value(std::uint64_t seed, std::size_t stream_id, std::size_t token, std::size_t dim) {
  std::uint64_t h = hash_combine(seed, stream_id);
  h = hash_combine(h, token);
  h = hash_combine(h, dim);
  return 2.0 * bits_to_unit(h) - 1.0;
}

/// Declares phi_m (mock streams only) and theta_m for one stream.
inline void declare_stream(ParameterStore& ps, const EncoderStream& s, std::size_t d, std::uint64_t model_seed) {
  const auto& c = s.config;
  if (c.width == 0 || c.max_len == 0) throw ConfigError("stream " + std::to_string(s.id) + ": zero width or length");
  const std::string p = s.prefix();
  if (c.kind == StreamKind::mock) {
    Tensor table(kVocabSize, c.width);
    for (std::size_t t = 0; t < kVocabSize; ++t)
      for (std::size_t j = 0; j < c.width; ++j) table(t, j) = mock_table_value(c.seed, s.id, t, j);
    ps.add(p + "embed", std::move(table), !s.frozen);
  }
  declare_linear(ps, p + "proj.", c.width, d, model_seed);
  declare_layer_norm(ps, p + "proj.norm.", d);
  ps.set_trainable(p, !s.frozen);
}

/// H_a^(m): T x d_m token matrix with zero rows at padding.
inline Var encode(const Scope& sc, const MolecularInput& in, const EncoderStream& s, const EmbeddingStore* store) {
  const auto m = s.id;
  if (m >= in.masks.size()) throw MissingEntity("drug '" + in.drug_id + "' has no input for stream " + std::to_string(m));
  const Mask& mask = in.masks[m];
  if (s.config.kind == StreamKind::precomputed) {
    if (store == nullptr) throw MissingEntity("stream " + std::to_string(m) + " needs an embedding store");
    const auto& e = store->get(in.drug_id, m);
    if (e.tokens.cols() != s.config.width) {
      throw ConfigError("stored embedding for '" + in.drug_id + "' has width " + std::to_string(e.tokens.cols()) +
                        ", stream expects " + std::to_string(s.config.width));
    }
    return ops::mask_rows(sc.graph->constant(e.tokens), mask);
  }
  const auto& ids = in.ids[m];
  if (ids.size() != mask.size()) throw InvalidArgument("encode: ids and mask lengths differ");
  Tensor pe(ids.size(), s.config.width);
  for (std::size_t t = 0; t < ids.size(); ++t)
    for (std::size_t j = 0; j < s.config.width; ++j) pe(t, j) = sinusoidal_position(t, j, s.config.width);
  Var tokens = ops::embedding(sc.param("embed"), ids);
  return ops::mask_rows(ops::add(tokens, sc.graph->constant(std::move(pe))), mask);
}

/// H-bar_a^(m): per-token affine map d_m -> d, LayerNorm, then re-masked.
/// A frozen stream's output is detached so no gradient reaches it.
inline Var project(const Scope& sc, Var h, const Mask& mask, const EncoderStream& s, double norm_eps) {
  if (h.cols() != s.config.width) {
    throw ConfigError("project: input width " + std::to_string(h.cols()) + ", stream " + std::to_string(s.id) +
                      " expects " + std::to_string(s.config.width));
  }
  Var y = ops::mask_rows(layer_norm(sc.sub("proj").sub("norm"), linear(sc.sub("proj"), h), norm_eps), mask);
  return s.frozen ? ops::detach(y) : y;
}

/// Projected token matrix of one drug under the given parameters, as a value.
inline Tensor projected_tokens(const ParameterStore& ps, const EncoderStream& s, const MolecularInput& in,
                               const EmbeddingStore* store, double norm_eps) {
  Graph g(Graph::Options{.grad_enabled = false});
  const Scope sc{&g, &ps, s.prefix()};
  return project(sc, encode(sc, in, s, store), in.masks.at(s.id), s, norm_eps).value();
}

/// Delta_m: sup over the vocabulary of || H-bar_d(current) - H-bar_d(reference) ||_F.
inline double representation_drift(const EncoderStream& s, const ParameterStore& current,
                                   const ParameterStore& reference, std::span<const MolecularInput> vocabulary,
                                   const EmbeddingStore* store, double norm_eps) {
  double worst = 0.0;
  for (const auto& drug : vocabulary) {
    const Tensor a = projected_tokens(current, s, drug, store, norm_eps);
    const Tensor b = projected_tokens(reference, s, drug, store, norm_eps);
    worst = std::max(worst, frobenius_distance(a, b));
  }
  return worst;
}

}  // namespace pairrel
