#pragma once

// Training-sequence assembly, DAE source corruption and corpus file I/O.

#include <fstream>
#include <optional>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "zsp/vocab.hpp"

namespace zsp {

struct ParallelPair {
  std::string src_lang, tgt_lang;
  std::vector<std::string> src_tokens, tgt_tokens;

  void validate() const {
    if (src_lang == tgt_lang)
      throw ContractError("parallel pair with identical languages '" + src_lang + "'");
    if (src_tokens.empty() || tgt_tokens.empty()) throw ContractError("parallel pair with an empty side");
  }
};

struct MonolingualSentence {
  std::string lang;
  std::vector<std::string> tokens;
};

/// One model input. Position i is predicted from positions < i; its
/// target is targets[i] and it is counted iff loss_mask[i] == 1.
/// `targets` equals `ids` except where DAE noise replaced the visible source
/// and the clean source is the reconstruction target.
struct TrainingSequence {
  std::vector<TokenId> ids;
  std::vector<TokenId> targets;
  std::vector<std::size_t> lang_per_position;  // vocabulary language index
  std::vector<std::uint8_t> loss_mask;
  std::optional<std::size_t> delim_index;

  std::size_t size() const { return ids.size(); }
  std::size_t counted() const {
    std::size_t n = 0;
    for (auto m : loss_mask) n += m;
    return n;
  }
};

struct NoiseConfig {
  double rate = 0.01;
  bool enable_delete = true;
  bool enable_insert = false;
  bool enable_reorder = true;
  std::size_t max_swap_distance = 5;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(rate >= 0.0 && rate <= 1.0)) throw ContractError("noise rate must lie in [0,1]");
    if (max_swap_distance < 1) throw ContractError("max_swap_distance must be >= 1");
  }
};

/// What a corruption pass did; used by statistics tests and diagnostics.
struct NoiseEvents {
  std::size_t positions_seen = 0;  // tokens (delete/reorder) or gaps (insert) considered
  std::size_t deleted = 0;
  std::size_t inserted = 0;
  std::vector<std::pair<std::size_t, std::size_t>> swaps;
};

inline void check_rate(double rate) {
  if (!(rate >= 0.0 && rate <= 1.0)) throw ContractError("corruption rate must lie in [0,1]");
}

/// Drops each token independently with probability `rate`; one uniformly
/// chosen token survives if every token was drawn for deletion.
inline std::vector<TokenId> corrupt_delete(const std::vector<TokenId>& tokens, double rate, Rng& rng,
                                           NoiseEvents* events = nullptr) {
  check_rate(rate);
  std::vector<TokenId> out;
  std::vector<bool> drop(tokens.size());
  std::size_t dropped = 0;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    drop[i] = rng.bernoulli(rate);
    dropped += drop[i];
  }
  if (!tokens.empty() && dropped == tokens.size()) {
    drop[rng.below(tokens.size())] = false;
    --dropped;
  }
  for (std::size_t i = 0; i < tokens.size(); ++i)
    if (!drop[i]) out.push_back(tokens[i]);
  if (events) {
    events->positions_seen += tokens.size();
    events->deleted += dropped;
  }
  return out;
}

/// At each of the n+1 gaps inserts, with probability `rate`, one token drawn
/// uniformly from the content (non-control) vocabulary.
inline std::vector<TokenId> corrupt_insert(const std::vector<TokenId>& tokens, double rate, const Vocabulary& v,
                                           Rng& rng, NoiseEvents* events = nullptr) {
  check_rate(rate);
  if (v.content_size() == 0) throw ContractError("corrupt_insert: vocabulary has no content tokens");
  std::vector<TokenId> out;
  out.reserve(tokens.size() + 2);
  std::size_t inserted = 0;
  auto gap = [&] {
    if (rng.bernoulli(rate)) {
      out.push_back(v.first_content_id() + static_cast<TokenId>(rng.below(v.content_size())));
      ++inserted;
    }
  };
  for (TokenId t : tokens) {
    gap();
    out.push_back(t);
  }
  gap();
  if (events) {
    events->positions_seen += tokens.size() + 1;
    events->inserted += inserted;
  }
  return out;
}

/// Each position selected with probability `rate` swaps with a partner drawn
/// uniformly from the other positions within `max_dist`.
inline std::vector<TokenId> corrupt_reorder(const std::vector<TokenId>& tokens, double rate, std::size_t max_dist,
                                            Rng& rng, NoiseEvents* events = nullptr) {
  check_rate(rate);
  if (max_dist < 1) throw ContractError("corrupt_reorder: max_dist must be >= 1");
  std::vector<TokenId> out = tokens;
  const std::size_t n = out.size();
  for (std::size_t i = 0; i < n; ++i) {
    if (!rng.bernoulli(rate)) continue;
    const std::size_t lo = i >= max_dist ? i - max_dist : 0;
    const std::size_t hi = std::min(n - 1, i + max_dist);
    const std::size_t span = hi - lo;  // candidates excluding i
    if (span == 0) continue;
    std::size_t j = lo + rng.below(span);
    if (j >= i) ++j;
    std::swap(out[i], out[j]);
    if (events) events->swaps.emplace_back(i, j);
  }
  if (events) events->positions_seen += n;
  return out;
}

/// Applies the enabled corruptions in the order delete, insert, reorder.
inline std::vector<TokenId> corrupt_source(const std::vector<TokenId>& tokens, const NoiseConfig& noise,
                                           const Vocabulary& v, Rng& rng, NoiseEvents* events = nullptr) {
  noise.validate();
  std::vector<TokenId> out = tokens;
  if (noise.enable_delete) out = corrupt_delete(out, noise.rate, rng, events);
  if (noise.enable_insert) out = corrupt_insert(out, noise.rate, v, rng, events);
  if (noise.enable_reorder) out = corrupt_reorder(out, noise.rate, noise.max_swap_distance, rng, events);
  return out;
}

/// [bos, <lang>, tokens..., eos]; every position after bos is counted.
inline TrainingSequence assemble_monolingual(const std::vector<TokenId>& tokens, std::string_view lang,
                                             const Vocabulary& v) {
  if (tokens.empty()) throw ContractError("assemble_monolingual: empty sentence");
  const std::size_t li = v.lang_index(lang);
  const auto& sp = v.special();
  TrainingSequence s;
  s.ids.reserve(tokens.size() + 3);
  s.ids.push_back(sp.bos);
  s.ids.push_back(v.lang_tag_at(li));
  s.ids.insert(s.ids.end(), tokens.begin(), tokens.end());
  s.ids.push_back(sp.eos);
  s.targets = s.ids;
  s.lang_per_position.assign(s.ids.size(), li);
  s.loss_mask.assign(s.ids.size(), 1);
  s.loss_mask[0] = 0;
  return s;
}

inline TrainingSequence assemble_monolingual(const std::vector<std::string>& tokens, std::string_view lang,
                                             const Vocabulary& v) {
  std::vector<TokenId> ids;
  for (const auto& t : tokens) ids.push_back(v.id(t));
  return assemble_monolingual(ids, lang, v);
}

/// [bos, <src>, X~..., delim, <tgt>, Y..., eos]. X~ is the corrupted source
/// when `noise` is given; Y is never corrupted. Source positions are scored
/// against clean X when X~ has the same length as X and are masked out
/// otherwise. The delimiter is not scored.
inline TrainingSequence assemble_bilingual(const ParallelPair& pair, const std::optional<NoiseConfig>& noise,
                                           const Vocabulary& v, Rng& rng) {
  pair.validate();
  const std::size_t src = v.lang_index(pair.src_lang);
  const std::size_t tgt = v.lang_index(pair.tgt_lang);
  const auto& sp = v.special();
  std::vector<TokenId> x, y;
  for (const auto& t : pair.src_tokens) x.push_back(v.id(t));
  for (const auto& t : pair.tgt_tokens) y.push_back(v.id(t));
  std::vector<TokenId> noisy = noise ? corrupt_source(x, *noise, v, rng) : x;
  const bool aligned = noisy.size() == x.size();

  TrainingSequence s;
  s.ids.reserve(noisy.size() + y.size() + 5);
  s.ids.push_back(sp.bos);
  s.ids.push_back(v.lang_tag_at(src));
  s.ids.insert(s.ids.end(), noisy.begin(), noisy.end());
  s.delim_index = s.ids.size();
  s.ids.push_back(sp.delim);
  s.ids.push_back(v.lang_tag_at(tgt));
  s.ids.insert(s.ids.end(), y.begin(), y.end());
  s.ids.push_back(sp.eos);

  s.targets = s.ids;
  s.loss_mask.assign(s.ids.size(), 1);
  s.lang_per_position.assign(s.ids.size(), tgt);
  for (std::size_t i = 0; i <= *s.delim_index; ++i) s.lang_per_position[i] = src;
  s.loss_mask[0] = 0;
  s.loss_mask[*s.delim_index] = 0;
  for (std::size_t i = 0; i < noisy.size(); ++i) {
    if (aligned)
      s.targets[2 + i] = x[i];
    else
      s.loss_mask[2 + i] = 0;
  }
  return s;
}

// ---------------------------------------------------------------------------
// Files

/// Streams "src_lang \t tgt_lang \t src_text \t tgt_text" lines.
class ParallelTsvReader {
 public:
  /// With a non-empty `languages`, codes outside it are rejected.
  explicit ParallelTsvReader(const std::string& path, std::vector<std::string> languages = {})
      : path_(path), in_(path, std::ios::binary), allowed_(languages.begin(), languages.end()) {
    if (!in_) throw IoError("cannot open " + path);
  }

  bool next(ParallelPair& out) {
    std::string line;
    while (std::getline(in_, line)) {
      ++lineno_;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      if (!valid_utf8(line)) fail("invalid UTF-8");
      auto cols = split(line, '\t');
      if (cols.size() != 4) fail("expected 4 tab-separated columns, got " + std::to_string(cols.size()));
      out.src_lang = trim(cols[0]);
      out.tgt_lang = trim(cols[1]);
      for (const auto* code : {&out.src_lang, &out.tgt_lang})
        if (!allowed_.empty() && !allowed_.count(*code)) fail("unknown language code '" + *code + "'");
      out.src_tokens = split_ws(cols[2]);
      out.tgt_tokens = split_ws(cols[3]);
      try {
        out.validate();
      } catch (const ContractError& e) {
        fail(e.what());
      }
      return true;
    }
    return false;
  }

  std::size_t line_number() const { return lineno_; }

 private:
  [[noreturn]] void fail(const std::string& msg) const {
    throw ParseError(path_ + ":" + std::to_string(lineno_) + ": " + msg);
  }

  std::string path_;
  std::ifstream in_;
  std::unordered_set<std::string> allowed_;
  std::size_t lineno_ = 0;
};

inline std::vector<ParallelPair> load_parallel_tsv(const std::string& path,
                                                   const std::vector<std::string>& languages = {}) {
  ParallelTsvReader reader(path, languages);
  std::vector<ParallelPair> pairs;
  ParallelPair p;
  while (reader.next(p)) pairs.push_back(p);
  return pairs;
}

inline void write_parallel_tsv_line(std::ostream& os, const ParallelPair& p) {
  os << p.src_lang << '\t' << p.tgt_lang << '\t' << join(p.src_tokens) << '\t' << join(p.tgt_tokens) << '\n';
}

inline void write_parallel_tsv(const std::string& path, const std::vector<ParallelPair>& pairs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  for (const auto& p : pairs) write_parallel_tsv_line(out, p);
  if (!out) throw IoError("write failed for " + path);
}

/// One sentence per line; blank lines are skipped.
inline std::vector<MonolingualSentence> load_monolingual(const std::string& path, const std::string& lang) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::vector<MonolingualSentence> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!valid_utf8(line)) throw ParseError(path + ":" + std::to_string(lineno) + ": invalid UTF-8");
    auto toks = split_ws(line);
    if (!toks.empty()) out.push_back({lang, std::move(toks)});
  }
  return out;
}

}  // namespace zsp
