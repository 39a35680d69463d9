#pragma once

// Temperature sweep comparing one-step paraphrasing ("direct") with the
// round-trip pivot baseline ("pivot") on the same inputs and seeds.

#include "zsp/decode.hpp"
#include "zsp/metrics.hpp"

namespace zsp {

struct SweepItem {
  Sentence tokens;
  std::string lang;
  std::string pivot_lang;  // only used by the pivot system
};

struct SweepOptions {
  std::vector<double> temperatures = {0.5, 0.8, 1.0, 1.2, 1.5};
  Strategy strategy = Strategy::top_k;
  std::size_t k = 3;
  std::size_t n_samples = 3;
  std::size_t max_new_tokens = 64;
  std::uint64_t seed = 0;
  bool pivot = true;
};

struct EvalContext {
  const EmbeddingTable* embeddings = nullptr;
  const NGramLM* lm = nullptr;
  const SyntheticWorld* world = nullptr;  // enables semantic preservation
};

struct SystemOutputs {
  std::vector<std::vector<Sentence>> outputs;  // [item][sample]
  double seconds = 0.0;
};

/// Generates n_samples outputs per item. Item i uses seed
/// derive_seed(cfg.seed, i) as its base.
inline SystemOutputs run_system(const TransformerLM& m, const Vocabulary& v, const std::vector<SweepItem>& items,
                                const std::string& system, const SamplerConfig& cfg, std::size_t n_samples) {
  SystemOutputs out;
  const auto t0 = std::chrono::steady_clock::now();
  for (std::size_t i = 0; i < items.size(); ++i) {
    SamplerConfig c = cfg;
    c.seed = derive_seed(cfg.seed, i);
    const std::string text = join(items[i].tokens);
    std::vector<std::string> texts;
    if (system == "direct")
      texts = paraphrase(m, v, text, items[i].lang, c, n_samples);
    else if (system == "pivot")
      texts = pivot_samples(m, v, text, items[i].lang, items[i].pivot_lang, c, n_samples);
    else
      throw ContractError("unknown system '" + system + "'");
    std::vector<Sentence> row;
    for (const auto& t : texts) row.push_back(split_ws(t));
    out.outputs.push_back(std::move(row));
  }
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

/// Relevance is the mean input/output extrema cosine (an output with no
/// known token scores 0). Distinct-2 and inverse Self-BLEU are computed
/// among the samples of each input and averaged over inputs; with a single
/// sample per input, inverse Self-BLEU is taken over all outputs instead.
inline MetricReport score_outputs(const std::string& system, const SamplerConfig& cfg,
                                  const std::vector<SweepItem>& items, const SystemOutputs& outs,
                                  std::size_t n_samples, const EvalContext& ctx) {
  if (!ctx.embeddings || !ctx.lm) throw ContractError("score_outputs: embeddings and fluency LM are required");
  if (outs.outputs.size() != items.size()) throw ContractError("score_outputs: outputs not parallel to items");
  MetricReport r;
  r.system = system;
  r.strategy = cfg.strategy == Strategy::greedy ? "greedy" : "top_k";
  r.k = cfg.k;
  r.temperature = cfg.temperature;
  r.n_samples = n_samples;
  r.seconds = outs.seconds;

  double rel = 0.0;
  std::size_t rel_n = 0;
  double d2 = 0.0;
  std::size_t d2_n = 0;
  double isb = 0.0;
  std::size_t isb_n = 0;
  std::vector<Sentence> all, nonempty;
  std::size_t sp_hit = 0, sp_total = 0;
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto src = vector_extrema(items[i].tokens, *ctx.embeddings);
    std::vector<Sentence> kept;
    for (const auto& o : outs.outputs[i]) {
      all.push_back(o);
      if (!o.empty()) {
        kept.push_back(o);
        nonempty.push_back(o);
      }
      if (src) {
        const auto dst = vector_extrema(o, *ctx.embeddings);
        rel += dst ? cosine(*src, *dst) : 0.0;
        ++rel_n;
      }
    }
    std::size_t bigrams = 0;
    for (const auto& o : outs.outputs[i]) bigrams += o.size() > 1 ? o.size() - 1 : 0;
    if (bigrams > 0) {
      d2 += distinct_n(outs.outputs[i], 2);
      ++d2_n;
    }
    if (n_samples > 1 && kept.size() >= 2) {
      isb += inverse_self_bleu(kept);
      ++isb_n;
    }
    if (ctx.world) {
      const auto want = deparse_to_concepts(items[i].tokens, items[i].lang, *ctx.world);
      for (const auto& o : outs.outputs[i]) {
        ++sp_total;
        const auto got = deparse_to_concepts(o, items[i].lang, *ctx.world);
        sp_hit += want && got && *got == *want;
      }
    }
  }
  if (n_samples <= 1 && nonempty.size() >= 2) {
    isb = inverse_self_bleu(nonempty);
    isb_n = 1;
  }
  r.relevance = rel_n ? rel / static_cast<double>(rel_n) : 0.0;
  r.distinct2 = d2_n ? d2 / static_cast<double>(d2_n) : 0.0;
  r.inverse_self_bleu = isb_n ? isb / static_cast<double>(isb_n) : 0.0;
  r.fluency_logprob = all.empty() ? 0.0 : fluency_logprob(*ctx.lm, all);
  if (ctx.world && sp_total) r.semantic_preservation = static_cast<double>(sp_hit) / static_cast<double>(sp_total);
  return r;
}

/// One report per (system, temperature), direct first at each temperature.
inline std::vector<MetricReport> run_sweep(const TransformerLM& m, const Vocabulary& v,
                                           const std::vector<SweepItem>& items, const SweepOptions& opt,
                                           const EvalContext& ctx) {
  if (items.empty()) throw ContractError("sweep: no input sentences");
  if (opt.n_samples < 1) throw ContractError("sweep: n_samples must be >= 1");
  std::vector<MetricReport> out;
  for (double temp : opt.temperatures) {
    SamplerConfig cfg;
    cfg.strategy = opt.strategy;
    cfg.k = opt.k;
    cfg.temperature = temp;
    cfg.max_new_tokens = opt.max_new_tokens;
    cfg.seed = opt.seed;
    std::vector<std::string> systems = {"direct"};
    if (opt.pivot) systems.push_back("pivot");
    for (const auto& sys : systems) {
      const auto outs = run_system(m, v, items, sys, cfg, opt.n_samples);
      out.push_back(score_outputs(sys, cfg, items, outs, opt.n_samples, ctx));
    }
  }
  return out;
}

}  // namespace zsp
