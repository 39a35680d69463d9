#pragma once

// Automatic evaluation: relevance (vector-extrema cosine), diversity
// (Distinct-N, inverse Self-BLEU), fluency (add-k n-gram LM log-probability)
// and the exact semantic-preservation score for synthetic languages.

#include <map>
#include <sstream>

#include "zsp/synthetic.hpp"

namespace zsp {

using Sentence = std::vector<std::string>;

namespace detail {

using NGram = std::vector<std::string>;

inline std::map<NGram, std::size_t> ngram_counts(const Sentence& s, std::size_t n) {
  std::map<NGram, std::size_t> out;
  for (std::size_t i = 0; i + n <= s.size(); ++i) ++out[NGram(s.begin() + static_cast<std::ptrdiff_t>(i),
                                                               s.begin() + static_cast<std::ptrdiff_t>(i + n))];
  return out;
}

}  // namespace detail

/// Distinct n-grams pooled over all sentences divided by the total n-gram count.
inline double distinct_n(const std::vector<Sentence>& sentences, std::size_t n) {
  if (n < 1) throw ContractError("distinct_n: n must be >= 1");
  std::map<detail::NGram, std::size_t> pooled;
  std::size_t total = 0;
  for (const auto& s : sentences)
    for (const auto& [g, c] : detail::ngram_counts(s, n)) {
      pooled[g] += c;
      total += c;
    }
  if (total == 0) throw ContractError("distinct_n: no " + std::to_string(n) + "-grams available");
  return static_cast<double>(pooled.size()) / static_cast<double>(total);
}

/// Sentence BLEU: geometric mean of clipped n-gram precisions for orders
/// 1..max_order times the brevity penalty. An order n >= 2 with no matches
/// uses (matches + 1) / (total + 1), which also makes orders longer than
/// the candidate contribute 1.
inline double bleu(const Sentence& candidate, const std::vector<Sentence>& references, std::size_t max_order = 4) {
  if (candidate.empty()) throw ContractError("bleu: empty candidate");
  if (references.empty()) throw ContractError("bleu: no references");
  if (max_order < 1) throw ContractError("bleu: max_order must be >= 1");
  double log_sum = 0.0;
  for (std::size_t n = 1; n <= max_order; ++n) {
    const auto cand = detail::ngram_counts(candidate, n);
    std::map<detail::NGram, std::size_t> max_ref;
    for (const auto& r : references)
      for (const auto& [g, c] : detail::ngram_counts(r, n)) max_ref[g] = std::max(max_ref[g], c);
    std::size_t matches = 0, total = 0;
    for (const auto& [g, c] : cand) {
      total += c;
      auto it = max_ref.find(g);
      if (it != max_ref.end()) matches += std::min(c, it->second);
    }
    double p;
    if (matches > 0)
      p = static_cast<double>(matches) / static_cast<double>(total);
    else if (n == 1)
      return 0.0;
    else
      p = 1.0 / static_cast<double>(total + 1);
    log_sum += std::log(p);
  }
  // Closest reference length, ties to the shorter one.
  const std::size_t c = candidate.size();
  std::size_t r = references.front().size();
  for (const auto& ref : references) {
    const auto d = [&](std::size_t len) { return len > c ? len - c : c - len; };
    if (d(ref.size()) < d(r) || (d(ref.size()) == d(r) && ref.size() < r)) r = ref.size();
  }
  const double log_bp = c > r ? 0.0 : 1.0 - static_cast<double>(r) / static_cast<double>(c);
  return std::exp(log_sum / static_cast<double>(max_order) + log_bp);
}

/// 1 - mean_i bleu(sentence_i, all other sentences).
inline double inverse_self_bleu(const std::vector<Sentence>& sentences, std::size_t max_order = 4) {
  if (sentences.size() < 2) throw ContractError("inverse_self_bleu: needs at least 2 sentences");
  double total = 0.0;
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    std::vector<Sentence> refs;
    for (std::size_t j = 0; j < sentences.size(); ++j)
      if (j != i) refs.push_back(sentences[j]);
    total += bleu(sentences[i], refs, max_order);
  }
  return 1.0 - total / static_cast<double>(sentences.size());
}

// ---------------------------------------------------------------------------
// Relevance

class EmbeddingTable {
 public:
  explicit EmbeddingTable(std::size_t dim = 0) : dim_(dim) {}

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return vectors_.size(); }

  void add(const std::string& token, std::vector<double> vec) {
    if (vec.size() != dim_)
      throw DimensionError("embedding for '" + token + "' has " + std::to_string(vec.size()) +
                           " values, table dim is " + std::to_string(dim_));
    vectors_[token] = std::move(vec);
  }

  const std::vector<double>* find(const std::string& token) const {
    auto it = vectors_.find(token);
    return it == vectors_.end() ? nullptr : &it->second;
  }

  /// Text layout: token followed by dim numbers per line. The dimension is
  /// taken from the first line.
  static EmbeddingTable read(std::istream& in, const std::string& origin = "<embeddings>") {
    EmbeddingTable t;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      auto parts = split_ws(line);
      if (parts.empty()) continue;
      const std::string where = origin + ":" + std::to_string(lineno);
      if (parts.size() < 2) throw ParseError(where + ": expected a token and at least one value");
      if (t.dim_ == 0) t.dim_ = parts.size() - 1;
      if (parts.size() - 1 != t.dim_)
        throw ParseError(where + ": expected " + std::to_string(t.dim_) + " values, got " +
                         std::to_string(parts.size() - 1));
      std::vector<double> vec;
      for (std::size_t i = 1; i < parts.size(); ++i) vec.push_back(parse_real(where, parts[i]));
      t.vectors_[parts[0]] = std::move(vec);
    }
    return t;
  }

  static EmbeddingTable load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    return read(in, path);
  }

  void write(std::ostream& os) const {
    std::vector<std::string> keys;
    for (const auto& [k, v] : vectors_) keys.push_back(k);
    std::sort(keys.begin(), keys.end());
    for (const auto& k : keys) {
      os << k;
      for (double x : vectors_.at(k)) os << ' ' << format_real(x);
      os << '\n';
    }
  }

  /// Concept-aligned vectors: every surface form of a concept (all
  /// languages, all synonyms) shares one standard-normal concept vector,
  /// plus independent N(0, noise^2) per-token jitter.
  static EmbeddingTable from_world(const SyntheticWorld& world, std::size_t dim, double noise, std::uint64_t seed) {
    EmbeddingTable t(dim);
    Rng rng(seed);
    const auto& spec = world.spec();
    std::vector<std::vector<double>> concept_vec(spec.n_concepts, std::vector<double>(dim));
    for (auto& v : concept_vec)
      for (double& x : v) x = rng.normal();
    for (std::size_t l = 0; l < spec.languages.size(); ++l)
      for (std::size_t c = 0; c < spec.n_concepts; ++c)
        for (std::size_t s = 0; s < spec.synonyms_per_concept; ++s) {
          std::vector<double> v = concept_vec[c];
          for (double& x : v) x += rng.normal(0.0, noise);
          t.add(world.surface(l, c, s), std::move(v));
        }
    return t;
  }

 private:
  std::size_t dim_;
  std::unordered_map<std::string, std::vector<double>> vectors_;
};

/// Per-dimension value of largest magnitude over the in-table tokens
/// (sign kept); out-of-table tokens are skipped. Empty when none is known.
inline std::optional<std::vector<double>> vector_extrema(const Sentence& s, const EmbeddingTable& emb) {
  std::vector<double> out(emb.dim(), 0.0);
  bool any = false;
  for (const auto& tok : s) {
    const auto* v = emb.find(tok);
    if (!v) continue;
    any = true;
    for (std::size_t d = 0; d < out.size(); ++d)
      if (std::abs((*v)[d]) > std::abs(out[d])) out[d] = (*v)[d];
  }
  if (!any) return std::nullopt;
  return out;
}

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

inline double vector_extrema_relevance(const Sentence& a, const Sentence& b, const EmbeddingTable& emb) {
  auto va = vector_extrema(a, emb);
  auto vb = vector_extrema(b, emb);
  if (!va || !vb) throw ContractError("vector_extrema_relevance: a sentence has no in-table tokens");
  return cosine(*va, *vb);
}

// ---------------------------------------------------------------------------
// Fluency

/// Add-k smoothed n-gram LM. Sentences are left-padded with order-1 <bos>
/// symbols and end with an <eos> event. The event vocabulary is the set of
/// training tokens plus <eos> and <unk>; unseen tokens are scored as <unk>.
class NGramLM {
 public:
  static constexpr const char* kBos = "<bos>";
  static constexpr const char* kEos = "<eos>";
  static constexpr const char* kUnk = "<unk>";

  NGramLM() = default;

  NGramLM(const std::vector<Sentence>& corpus, std::size_t order, double add_k) : order_(order), k_(add_k) {
    if (order < 1) throw ContractError("train_ngram_lm: order must be >= 1");
    if (!(add_k >= 0.0)) throw ContractError("train_ngram_lm: add_k must be non-negative");
    if (corpus.empty()) throw ContractError("train_ngram_lm: empty corpus");
    for (const auto& s : corpus)
      for (const auto& t : s) events_.insert(t);
    events_.insert(kEos);
    events_.insert(kUnk);
    for (const auto& s : corpus) {
      const auto seq = padded(s);
      for (std::size_t i = order_ - 1; i < seq.size(); ++i) {
        Sentence ctx(seq.begin() + static_cast<std::ptrdiff_t>(i + 1 - order_),
                     seq.begin() + static_cast<std::ptrdiff_t>(i));
        ++counts_[ctx][seq[i]];
        ++context_totals_[ctx];
      }
    }
  }

  std::size_t order() const { return order_; }
  double add_k() const { return k_; }
  std::size_t event_vocab_size() const { return events_.size(); }
  const std::set<std::string>& events() const { return events_; }

  /// P(token | context); only the last order-1 context tokens matter and
  /// missing history is <bos>.
  double prob(const std::string& token, const Sentence& context) const {
    const std::string ev = events_.count(token) ? token : kUnk;
    Sentence ctx;
    for (std::size_t i = 0; i + 1 < order_; ++i) {
      const std::size_t back = order_ - 1 - i;  // distance from the end
      ctx.push_back(back <= context.size() ? norm(context[context.size() - back]) : kBos);
    }
    double c = 0.0, total = 0.0;
    if (auto it = counts_.find(ctx); it != counts_.end()) {
      if (auto jt = it->second.find(ev); jt != it->second.end()) c = static_cast<double>(jt->second);
      total = static_cast<double>(context_totals_.at(ctx));
    }
    const double denom = total + k_ * static_cast<double>(events_.size());
    if (denom == 0.0) return 1.0 / static_cast<double>(events_.size());
    return (c + k_) / denom;
  }

  /// Sum of natural-log probabilities of the tokens and the final <eos>,
  /// with the number of events scored.
  std::pair<double, std::size_t> sentence_logprob(const Sentence& s) const {
    double lp = 0.0;
    Sentence history;
    for (const auto& t : s) {
      lp += std::log(prob(t, history));
      history.push_back(t);
    }
    lp += std::log(prob(kEos, history));
    return {lp, s.size() + 1};
  }

 private:
  std::string norm(const std::string& t) const { return events_.count(t) || t == kBos ? t : kUnk; }

  Sentence padded(const Sentence& s) const {
    Sentence seq(order_ - 1, kBos);
    seq.insert(seq.end(), s.begin(), s.end());
    seq.push_back(kEos);
    return seq;
  }

  std::size_t order_ = 1;
  double k_ = 0.0;
  std::set<std::string> events_;
  std::map<Sentence, std::map<std::string, std::size_t>> counts_;
  std::map<Sentence, std::size_t> context_totals_;
};

inline NGramLM train_ngram_lm(const std::vector<Sentence>& corpus, std::size_t order, double add_k) {
  return NGramLM(corpus, order, add_k);
}

/// Mean per-event log-probability over all sentences (eos included). Sums
/// are combined in sorted order, so the value does not depend on sentence
/// order.
inline double fluency_logprob(const NGramLM& lm, const std::vector<Sentence>& sentences) {
  if (sentences.empty()) throw ContractError("fluency_logprob: no sentences");
  std::vector<std::pair<double, std::size_t>> parts;
  for (const auto& s : sentences) parts.push_back(lm.sentence_logprob(s));
  std::sort(parts.begin(), parts.end());
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& [lp, c] : parts) {
    sum += lp;
    n += c;
  }
  return sum / static_cast<double>(n);
}

// ---------------------------------------------------------------------------
// Semantic preservation

/// Fraction of outputs whose concept sequence equals their input's.
/// outputs[i] holds the generations for inputs[i]; a deparse failure counts
/// as not preserving.
inline double semantic_preservation(const std::vector<Sentence>& inputs, const std::vector<std::vector<Sentence>>& outputs,
                                    std::string_view lang, const SyntheticWorld& world) {
  if (inputs.size() != outputs.size()) throw ContractError("semantic_preservation: outputs not parallel to inputs");
  std::size_t hit = 0, total = 0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const auto want = deparse_to_concepts(inputs[i], lang, world);
    for (const auto& o : outputs[i]) {
      ++total;
      if (!want) continue;
      const auto got = deparse_to_concepts(o, lang, world);
      hit += got && *got == *want;
    }
  }
  if (total == 0) throw ContractError("semantic_preservation: no outputs");
  return static_cast<double>(hit) / static_cast<double>(total);
}

/// Fraction of output tokens inside `lang`'s lexicon.
inline double language_purity(const std::vector<Sentence>& outputs, std::string_view lang, const SyntheticWorld& world) {
  const std::size_t l = world.lang_index(lang);
  std::size_t in = 0, total = 0;
  for (const auto& s : outputs)
    for (const auto& t : s) {
      ++total;
      in += world.in_lexicon(t, l);
    }
  return total == 0 ? 0.0 : static_cast<double>(in) / static_cast<double>(total);
}

// ---------------------------------------------------------------------------
// Reports

struct MetricReport {
  std::string system;
  std::string strategy = "top_k";
  std::size_t k = 3;
  double temperature = 1.0;
  std::size_t n_samples = 1;
  double relevance = 0.0;
  double distinct2 = 0.0;
  double inverse_self_bleu = 0.0;
  double fluency_logprob = 0.0;
  std::optional<double> semantic_preservation;
  double seconds = 0.0;  // generation wall-clock; not part of the record

  static std::string tsv_header() {
    return "system\ttemperature\trelevance\tdistinct2\tinverse_self_bleu\tfluency_logprob\tsemantic_preservation";
  }

  std::string tsv_row() const {
    std::ostringstream os;
    os << system << '\t' << format_real(temperature) << '\t' << format_real(relevance) << '\t'
       << format_real(distinct2) << '\t' << format_real(inverse_self_bleu) << '\t' << format_real(fluency_logprob)
       << '\t' << (semantic_preservation ? format_real(*semantic_preservation) : "NA");
    return os.str();
  }

  std::string key_values() const {
    std::ostringstream os;
    os << "system = " << system << "\nstrategy = " << strategy << "\nk = " << k
       << "\ntemperature = " << format_real(temperature) << "\nn_samples = " << n_samples
       << "\nrelevance = " << format_real(relevance) << "\ndistinct2 = " << format_real(distinct2)
       << "\ninverse_self_bleu = " << format_real(inverse_self_bleu)
       << "\nfluency_logprob = " << format_real(fluency_logprob) << "\nsemantic_preservation = "
       << (semantic_preservation ? format_real(*semantic_preservation) : "NA") << "\n";
    return os.str();
  }
};

}  // namespace zsp
