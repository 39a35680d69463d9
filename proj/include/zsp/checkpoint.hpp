#pragma once

// Checkpoint file layout:
//
//   8 bytes   magic "ZSPCKPT\0"
//   u32 LE    format version
//   u64 LE    manifest length in bytes
//   manifest  UTF-8 "key = value" lines: model config, optional vocabulary
//             ("vocab = <token>" lines in id order), the tensor directory
//             ("tensor = <name> <d0>x<d1>.. <byte offset>") and a payload
//             checksum
//   payload   little-endian float32 values of every tensor in directory order
//
// Parameters are float64 in memory and narrowed to float32 on save, so a
// save/load cycle is the identity from the second cycle onwards.

#include <bit>
#include <cstring>
#include <fstream>
#include <optional>
#include <sstream>

#include "zsp/model.hpp"

namespace zsp {

struct CheckpointError : Error { using Error::Error; };
struct CheckpointVersionError : CheckpointError { using CheckpointError::CheckpointError; };
struct CheckpointIntegrityError : CheckpointError { using CheckpointError::CheckpointError; };
struct CheckpointShapeError : CheckpointError { using CheckpointError::CheckpointError; };

inline constexpr char kCheckpointMagic[8] = {'Z', 'S', 'P', 'C', 'K', 'P', 'T', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void put_le(std::string& out, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint64_t get_le(const unsigned char* p, int bytes) {
  std::uint64_t v = 0;
  for (int i = bytes - 1; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

inline std::string config_lines(const ModelConfig& c) {
  std::ostringstream os;
  os << "n_layers = " << c.n_layers << "\nd_model = " << c.d_model << "\nn_heads = " << c.n_heads
     << "\nd_ff = " << c.d_ff << "\nd_lang = " << c.d_lang << "\nmax_len = " << c.max_len
     << "\nvocab_size = " << c.vocab_size << "\nn_languages = " << c.n_languages
     << "\ninput_lang_tags = " << (c.input_lang_tags ? "true" : "false") << "\ninit_std = " << format_real(c.init_std)
     << "\nln_eps = " << format_real(c.ln_eps) << "\n";
  return os.str();
}

}  // namespace detail

/// Applies a model-config key; returns false for keys it does not know.
inline bool apply_model_key(ModelConfig& c, const std::string& key, const std::string& value) {
  auto sz = [&] {
    const long long v = parse_int(key, value);
    if (v < 0) throw ParseError("'" + key + "' must be non-negative");
    return static_cast<std::size_t>(v);
  };
  if (key == "n_layers") c.n_layers = sz();
  else if (key == "d_model") c.d_model = sz();
  else if (key == "n_heads") c.n_heads = sz();
  else if (key == "d_ff") c.d_ff = sz();
  else if (key == "d_lang") c.d_lang = sz();
  else if (key == "max_len") c.max_len = sz();
  else if (key == "vocab_size") c.vocab_size = sz();
  else if (key == "n_languages") c.n_languages = sz();
  else if (key == "input_lang_tags") c.input_lang_tags = parse_bool(key, value);
  else if (key == "init_std") c.init_std = parse_real(key, value);
  else if (key == "ln_eps") c.ln_eps = parse_real(key, value);
  else return false;
  return true;
}

/// Rounds every parameter to float32 precision, the value a save/load
/// cycle would produce.
inline void narrow_to_float32(TransformerLM& m) {
  for (auto& e : m.params().entries())
    for (double& v : e.tensor.mutable_values()) v = static_cast<double>(static_cast<float>(v));
}

inline std::string serialize_checkpoint(const TransformerLM& m, const Vocabulary* vocab = nullptr) {
  std::string payload;
  std::ostringstream dir;
  for (const auto& e : m.params().entries()) {
    dir << "tensor = " << e.name << ' ';
    for (std::size_t i = 0; i < e.tensor.rank(); ++i) dir << (i ? "x" : "") << e.tensor.dim(i);
    dir << ' ' << payload.size() << '\n';
    for (double v : e.tensor.values()) detail::put_le(payload, std::bit_cast<std::uint32_t>(static_cast<float>(v)), 4);
  }
  std::string manifest = "format = zsp-checkpoint\n" + detail::config_lines(m.config());
  if (vocab) {
    if (vocab->size() != m.config().vocab_size) throw ContractError("checkpoint: vocabulary size does not match model");
    for (std::size_t i = 0; i < vocab->size(); ++i) manifest += "vocab = " + vocab->token(static_cast<TokenId>(i)) + "\n";
  }
  manifest += dir.str();
  manifest += "payload_bytes = " + std::to_string(payload.size()) + "\n";
  manifest += "payload_fnv = " + hex64(fnv1a(payload.data(), payload.size())) + "\n";

  std::string out(kCheckpointMagic, sizeof kCheckpointMagic);
  detail::put_le(out, kCheckpointVersion, 4);
  detail::put_le(out, manifest.size(), 8);
  out += manifest;
  out += payload;
  return out;
}

inline void save_checkpoint(const TransformerLM& m, const std::string& path, const Vocabulary* vocab = nullptr) {
  const std::string bytes = serialize_checkpoint(m, vocab);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path);
}

struct LoadedCheckpoint {
  TransformerLM model;
  std::optional<Vocabulary> vocab;
};

inline LoadedCheckpoint deserialize_checkpoint(const std::string& bytes, const std::string& origin = "<checkpoint>") {
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::size_t header = sizeof kCheckpointMagic + 4 + 8;
  if (bytes.size() < header || std::memcmp(bytes.data(), kCheckpointMagic, sizeof kCheckpointMagic) != 0)
    throw CheckpointIntegrityError(origin + ": not a checkpoint (bad magic or truncated header)");
  const auto version = static_cast<std::uint32_t>(detail::get_le(p + 8, 4));
  if (version != kCheckpointVersion)
    throw CheckpointVersionError(origin + ": format version " + std::to_string(version) + ", expected " +
                                 std::to_string(kCheckpointVersion));
  const std::uint64_t mlen = detail::get_le(p + 12, 8);
  if (mlen > bytes.size() - header) throw CheckpointIntegrityError(origin + ": truncated manifest");
  const std::string manifest = bytes.substr(header, mlen);
  if (!valid_utf8(manifest)) throw CheckpointIntegrityError(origin + ": manifest is not valid UTF-8");
  const std::size_t payload_start = header + mlen;

  ModelConfig cfg;
  std::vector<std::string> vocab_tokens;
  struct DirEntry {
    std::string name;
    Shape shape;
    std::size_t offset;
  };
  std::vector<DirEntry> dir;
  std::optional<std::size_t> payload_bytes;
  std::string payload_fnv;
  std::istringstream ms(manifest);
  std::string line;
  while (std::getline(ms, line)) {
    if (line.empty()) continue;
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) throw CheckpointIntegrityError(origin + ": malformed manifest line '" + line + "'");
    const std::string key = line.substr(0, eq), value = line.substr(eq + 3);
    try {
      if (key == "format") {
        if (value != "zsp-checkpoint") throw CheckpointIntegrityError(origin + ": unknown format '" + value + "'");
      } else if (key == "vocab") {
        vocab_tokens.push_back(value);
      } else if (key == "tensor") {
        auto parts = split_ws(value);
        if (parts.size() != 3) throw CheckpointIntegrityError(origin + ": malformed tensor entry '" + value + "'");
        DirEntry d{parts[0], {}, static_cast<std::size_t>(parse_int("offset", parts[2]))};
        for (auto& s : split(parts[1], 'x')) d.shape.push_back(static_cast<std::size_t>(parse_int("dim", s)));
        dir.push_back(std::move(d));
      } else if (key == "payload_bytes") {
        payload_bytes = static_cast<std::size_t>(parse_int(key, value));
      } else if (key == "payload_fnv") {
        payload_fnv = value;
      } else if (!apply_model_key(cfg, key, value)) {
        throw CheckpointIntegrityError(origin + ": unknown manifest key '" + key + "'");
      }
    } catch (const ParseError& e) {
      throw CheckpointIntegrityError(origin + ": " + e.what());
    }
  }
  if (!payload_bytes || payload_fnv.empty()) throw CheckpointIntegrityError(origin + ": manifest lacks payload record");
  if (bytes.size() - payload_start != *payload_bytes)
    throw CheckpointIntegrityError(origin + ": payload is " + std::to_string(bytes.size() - payload_start) +
                                   " bytes, manifest declares " + std::to_string(*payload_bytes));
  if (hex64(fnv1a(bytes.data() + payload_start, *payload_bytes)) != payload_fnv)
    throw CheckpointIntegrityError(origin + ": payload checksum mismatch");

  LoadedCheckpoint out;
  try {
    out.model = TransformerLM(cfg, 0);
  } catch (const ContractError& e) {
    throw CheckpointShapeError(origin + ": invalid model config: " + e.what());
  }
  auto& entries = out.model.params().entries();
  if (dir.size() != entries.size())
    throw CheckpointShapeError(origin + ": directory lists " + std::to_string(dir.size()) + " tensors, config needs " +
                               std::to_string(entries.size()));
  for (std::size_t i = 0; i < dir.size(); ++i) {
    auto& e = entries[i];
    if (dir[i].name != e.name || dir[i].shape != e.tensor.shape())
      throw CheckpointShapeError(origin + ": tensor '" + dir[i].name + "' " + shape_str(dir[i].shape) +
                                 " does not match config-derived '" + e.name + "' " + shape_str(e.tensor.shape()));
    const std::size_t nbytes = e.tensor.size() * 4;
    if (dir[i].offset + nbytes > *payload_bytes)
      throw CheckpointIntegrityError(origin + ": tensor '" + e.name + "' runs past the payload");
    auto vals = e.tensor.mutable_values();
    const unsigned char* src = p + payload_start + dir[i].offset;
    for (std::size_t j = 0; j < vals.size(); ++j)
      vals[j] = static_cast<double>(std::bit_cast<float>(static_cast<std::uint32_t>(detail::get_le(src + 4 * j, 4))));
  }
  if (!vocab_tokens.empty()) {
    std::string text;
    for (const auto& t : vocab_tokens) text += t + "\n";
    std::istringstream vs(text);
    try {
      out.vocab = Vocabulary::read(vs, origin);
    } catch (const ParseError& e) {
      throw CheckpointIntegrityError(e.what());
    }
    if (out.vocab->size() != cfg.vocab_size || out.vocab->num_languages() != cfg.n_languages)
      throw CheckpointShapeError(origin + ": embedded vocabulary does not match the model config");
  }
  return out;
}

inline LoadedCheckpoint load_checkpoint_bundle(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_checkpoint(ss.str(), path);
}

inline TransformerLM load_checkpoint(const std::string& path) { return std::move(load_checkpoint_bundle(path).model); }

}  // namespace zsp
