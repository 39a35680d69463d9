#pragma once

// Prompting and sampling: one-step paraphrasing (prompt with the output tag
// set to the input language) and the two-hop round-trip pivot baseline.

#include <chrono>

#include "zsp/model.hpp"

namespace zsp {

enum class Strategy { greedy, top_k };

struct SamplerConfig {
  Strategy strategy = Strategy::top_k;
  std::size_t k = 3;
  double temperature = 1.0;
  std::size_t max_new_tokens = 64;
  std::uint64_t seed = 0;

  void validate() const {
    if (k < 1) throw ContractError("sampler: k must be >= 1");
    if (!(temperature > 0.0) || !std::isfinite(temperature)) throw ContractError("sampler: temperature must be > 0");
  }
};

enum class Termination { eos, length_cap };

struct GenerationResult {
  std::vector<TokenId> tokens;  // content tokens only
  Termination terminated_by = Termination::length_cap;
  std::vector<double> logprobs;  // chosen-token log-probabilities, eos included
};

/// [bos, <src>, tokens..., delim, <tgt>]
inline std::vector<TokenId> build_prompt(const std::vector<TokenId>& tokens, std::string_view src_lang,
                                         std::string_view tgt_lang, const Vocabulary& v) {
  if (tokens.empty()) throw ContractError("build_prompt: empty input");
  const auto& sp = v.special();
  std::vector<TokenId> p;
  p.reserve(tokens.size() + 4);
  p.push_back(sp.bos);
  p.push_back(v.lang_tag(src_lang));
  p.insert(p.end(), tokens.begin(), tokens.end());
  p.push_back(sp.delim);
  p.push_back(v.lang_tag(tgt_lang));
  return p;
}

inline std::vector<TokenId> build_prompt(std::string_view text, std::string_view src_lang, std::string_view tgt_lang,
                                         const Vocabulary& v) {
  return build_prompt(encode(v, text), src_lang, tgt_lang, v);
}

/// Language index of every position: the most recent language tag at or
/// before it (positions before the first tag take the first tag's language).
inline std::vector<std::size_t> prompt_languages(std::span<const TokenId> ids, const Vocabulary& v) {
  std::vector<std::size_t> out(ids.size(), 0);
  std::optional<std::size_t> cur;
  auto tag_lang = [&](TokenId id) -> std::optional<std::size_t> {
    for (std::size_t l = 0; l < v.num_languages(); ++l)
      if (v.lang_tag_at(l) == id) return l;
    return std::nullopt;
  };
  std::size_t first_tagged = ids.size();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (auto l = tag_lang(ids[i])) {
      cur = l;
      if (first_tagged == ids.size()) first_tagged = i;
    }
    if (cur) out[i] = *cur;
  }
  if (!cur) throw ContractError("prompt carries no language tag");
  for (std::size_t i = 0; i < first_tagged; ++i) out[i] = out[first_tagged];
  return out;
}

/// Picks the next token. Logits are divided by the temperature; top-k keeps
/// the k largest (ties to the lower id) and samples from their renormalized
/// softmax; greedy takes the argmax. Tokens with `banned[id]` set are never
/// chosen.
inline TokenId sample_next(std::span<const double> logits, const SamplerConfig& cfg, Rng& rng,
                           const std::vector<bool>* banned = nullptr) {
  cfg.validate();
  std::vector<TokenId> cand;
  cand.reserve(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (!std::isfinite(logits[i])) throw ContractError("sample_next: non-finite logit at id " + std::to_string(i));
    if (!banned || !(*banned)[i]) cand.push_back(static_cast<TokenId>(i));
  }
  if (cand.empty()) throw ContractError("sample_next: every token is banned");
  auto better = [&](TokenId a, TokenId b) {
    return logits[a] != logits[b] ? logits[a] > logits[b] : a < b;
  };
  if (cfg.strategy == Strategy::greedy) return *std::min_element(cand.begin(), cand.end(), better);
  const std::size_t k = std::min(cfg.k, cand.size());
  std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end(), better);
  std::vector<double> p(k);
  const double top = logits[cand[0]] / cfg.temperature;
  double z = 0.0;
  for (std::size_t i = 0; i < k; ++i) z += p[i] = std::exp(logits[cand[i]] / cfg.temperature - top);
  double u = rng.uniform() * z;
  for (std::size_t i = 0; i < k; ++i) {
    if (u < p[i]) return cand[i];
    u -= p[i];
  }
  return cand[k - 1];
}

/// Control tokens other than eos may not be generated.
inline std::vector<bool> generation_ban_list(const Vocabulary& v) {
  std::vector<bool> banned(v.size(), false);
  for (TokenId i = 0; i < v.first_content_id(); ++i) banned[static_cast<std::size_t>(i)] = true;
  banned[static_cast<std::size_t>(v.special().eos)] = false;
  return banned;
}

inline double log_softmax_at(std::span<const double> logits, TokenId id) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double x : logits) z += std::exp(x - mx);
  return logits[static_cast<std::size_t>(id)] - mx - std::log(z);
}

/// Auto-regressive continuation of `prompt` under the tgt_lang output
/// embedding, using the incremental decoder. Stops at eos, after
/// cfg.max_new_tokens tokens, or when the context reaches max_len.
/// `step_logits`, when given, receives the logits used at every step.
inline GenerationResult generate(const TransformerLM& m, const Vocabulary& v, const std::vector<TokenId>& prompt,
                                 std::string_view tgt_lang, const SamplerConfig& cfg,
                                 std::vector<std::vector<double>>* step_logits = nullptr) {
  cfg.validate();
  if (prompt.empty()) throw ContractError("generate: empty prompt");
  const std::size_t max_len = m.config().max_len;
  if (prompt.size() > max_len)
    throw LengthError("prompt of " + std::to_string(prompt.size()) + " tokens exceeds max_len " +
                      std::to_string(max_len));
  const std::size_t tgt = v.lang_index(tgt_lang);
  if (!v.is_control(prompt.back()) || prompt.back() < v.lang_tag_at(0) ||
      prompt.back() > v.lang_tag_at(v.num_languages() - 1))
    throw ContractError("generate: prompt must end with a language tag");
  const auto langs = prompt_languages(prompt, v);
  const auto banned = generation_ban_list(v);

  GenerationResult res;
  if (cfg.max_new_tokens == 0) return res;
  NoGradGuard no_grad;
  IncrementalDecoder dec(m);
  std::vector<double> logits;
  for (std::size_t i = 0; i < prompt.size(); ++i)
    logits = dec.step(prompt[i], i + 1 < prompt.size() ? langs[i + 1] : tgt);
  Rng rng(cfg.seed);
  while (true) {
    if (step_logits) step_logits->push_back(logits);
    const TokenId next = sample_next(logits, cfg, rng, &banned);
    res.logprobs.push_back(log_softmax_at(logits, next));
    if (next == v.special().eos) {
      res.terminated_by = Termination::eos;
      break;
    }
    res.tokens.push_back(next);
    if (res.tokens.size() >= cfg.max_new_tokens || dec.position() >= max_len) break;
    logits = dec.step(next, tgt);
  }
  return res;
}

/// Output-length cap for an input of n tokens: 2n + 8, or cfg's cap if lower.
inline SamplerConfig capped(SamplerConfig cfg, std::size_t n_input) {
  cfg.max_new_tokens = std::min(cfg.max_new_tokens, 2 * n_input + 8);
  return cfg;
}

inline std::string translate(const TransformerLM& m, const Vocabulary& v, std::string_view sentence,
                             std::string_view src_lang, std::string_view tgt_lang, const SamplerConfig& cfg) {
  const auto ids = encode(v, sentence);
  const auto res = generate(m, v, build_prompt(ids, src_lang, tgt_lang, v), tgt_lang, capped(cfg, ids.size()));
  return decode(v, res.tokens);
}

/// n_samples generations with the output tag equal to the input language.
/// Sample i uses seed derive_seed(cfg.seed, i).
inline std::vector<std::string> paraphrase(const TransformerLM& m, const Vocabulary& v, std::string_view sentence,
                                           std::string_view lang, const SamplerConfig& cfg, std::size_t n_samples) {
  if (n_samples < 1) throw ContractError("paraphrase: n_samples must be >= 1");
  const auto ids = encode(v, sentence);
  const auto prompt = build_prompt(ids, lang, lang, v);
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n_samples; ++i) {
    SamplerConfig c = capped(cfg, ids.size());
    c.seed = derive_seed(cfg.seed, i);
    out.push_back(decode(v, generate(m, v, prompt, lang, c).tokens));
  }
  return out;
}

/// lang -> pivot_lang -> lang with the same sampler settings on both hops.
/// An empty intermediate translation yields an empty result.
inline std::string round_trip_pivot(const TransformerLM& m, const Vocabulary& v, std::string_view sentence,
                                    std::string_view lang, std::string_view pivot_lang, const SamplerConfig& cfg) {
  if (lang == pivot_lang) throw ContractError("round_trip_pivot: pivot language equals input language");
  const std::string mid = translate(m, v, sentence, lang, pivot_lang, cfg);
  if (split_ws(mid).empty()) return {};
  return translate(m, v, mid, pivot_lang, lang, cfg);
}

/// n_samples pivot paraphrases; sample i uses seed derive_seed(cfg.seed, i).
inline std::vector<std::string> pivot_samples(const TransformerLM& m, const Vocabulary& v, std::string_view sentence,
                                              std::string_view lang, std::string_view pivot_lang,
                                              const SamplerConfig& cfg, std::size_t n_samples) {
  if (n_samples < 1) throw ContractError("pivot: n_samples must be >= 1");
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n_samples; ++i) {
    SamplerConfig c = cfg;
    c.seed = derive_seed(cfg.seed, i);
    out.push_back(round_trip_pivot(m, v, sentence, lang, pivot_lang, c));
  }
  return out;
}

}  // namespace zsp
