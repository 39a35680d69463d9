#pragma once

// Constructed languages with an exact semantic oracle.
//
// A sentence is a sequence of concept ids. Every language has its own
// disjoint lexicon with `synonyms_per_concept` surface forms per concept.
// Languages at odd positions of `languages` additionally swap every
// `reorder_period`-th adjacent concept pair (pairs (0,1), (2,3), ... with
// pair index p swapped when p % reorder_period == 0), so translating between
// an even and an odd language is not monotone. Concept sequences follow a
// seeded first-order Markov chain, which gives the corpora a learnable
// "grammar" for fluency measurements.

#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "zsp/corpus.hpp"

namespace zsp {

struct SyntheticLangSpec {
  std::size_t n_concepts = 24;
  std::size_t synonyms_per_concept = 2;
  std::vector<std::string> languages = {"en", "es", "ru", "zh"};
  std::size_t reorder_period = 1;
  std::uint64_t seed = 0;

  void validate() const {
    if (n_concepts < 2) throw ContractError("synthetic spec: n_concepts must be >= 2");
    if (synonyms_per_concept < 2) throw ContractError("synthetic spec: synonyms_per_concept must be >= 2");
    if (languages.empty()) throw ContractError("synthetic spec: no languages");
    std::set<std::string> seen(languages.begin(), languages.end());
    if (seen.size() != languages.size()) throw ContractError("synthetic spec: duplicate language codes");
  }

  static SyntheticLangSpec from_key_values(const KeyValues& kv) {
    SyntheticLangSpec s;
    for (const auto& [key, value] : kv) {
      if (key == "n_concepts")
        s.n_concepts = static_cast<std::size_t>(parse_int(key, value));
      else if (key == "synonyms_per_concept")
        s.synonyms_per_concept = static_cast<std::size_t>(parse_int(key, value));
      else if (key == "languages") {
        s.languages.clear();
        for (auto& part : split(value, ','))
          if (auto t = trim(part); !t.empty()) s.languages.push_back(t);
      } else if (key == "reorder_period")
        s.reorder_period = static_cast<std::size_t>(parse_int(key, value));
      else if (key == "seed")
        s.seed = static_cast<std::uint64_t>(parse_int(key, value));
      else
        throw ParseError("synthetic spec: unknown key '" + key + "'");
    }
    s.validate();
    return s;
  }

  static SyntheticLangSpec load(const std::string& path) { return from_key_values(load_key_values(path)); }

  std::string to_text() const {
    return "n_concepts = " + std::to_string(n_concepts) +
           "\nsynonyms_per_concept = " + std::to_string(synonyms_per_concept) +
           "\nlanguages = " + join(languages, ",") + "\nreorder_period = " + std::to_string(reorder_period) +
           "\nseed = " + std::to_string(seed) + "\n";
  }
};

using ConceptSeq = std::vector<std::size_t>;

class SyntheticWorld {
 public:
  explicit SyntheticWorld(SyntheticLangSpec spec) : spec_(std::move(spec)) {
    spec_.validate();
    Rng rng(derive_seed(spec_.seed, 0x1e7));
    static const std::string consonants = "ptkbdgmnslrvzfh";
    static const std::string vowels = "aeiou";
    std::set<std::string> used;
    const std::size_t L = spec_.languages.size();
    lexicon_.assign(L, std::vector<std::vector<std::string>>(spec_.n_concepts));
    for (std::size_t l = 0; l < L; ++l)
      for (std::size_t c = 0; c < spec_.n_concepts; ++c)
        for (std::size_t s = 0; s < spec_.synonyms_per_concept; ++s) {
          std::string w;
          do {
            w.clear();
            const std::size_t syl = 2 + rng.below(2);
            for (std::size_t k = 0; k < syl; ++k) {
              w += consonants[rng.below(consonants.size())];
              w += vowels[rng.below(vowels.size())];
            }
          } while (!used.insert(w).second);
          index_[w] = {l, c};
          lexicon_[l][c].push_back(std::move(w));
        }
    Rng grammar(derive_seed(spec_.seed, 0x9a));
    successors_.resize(spec_.n_concepts);
    const std::size_t fan = std::min<std::size_t>(3, spec_.n_concepts - 1);
    for (std::size_t c = 0; c < spec_.n_concepts; ++c) {
      while (successors_[c].size() < fan) {
        const std::size_t n = grammar.below(spec_.n_concepts);
        if (n != c && std::find(successors_[c].begin(), successors_[c].end(), n) == successors_[c].end())
          successors_[c].push_back(n);
      }
    }
  }

  const SyntheticLangSpec& spec() const { return spec_; }
  std::size_t num_languages() const { return spec_.languages.size(); }

  std::size_t lang_index(std::string_view code) const {
    for (std::size_t i = 0; i < spec_.languages.size(); ++i)
      if (spec_.languages[i] == code) return i;
    throw ContractError("synthetic world: unknown language '" + std::string(code) + "'");
  }

  bool reorders(std::size_t lang) const { return spec_.reorder_period > 0 && lang % 2 == 1; }

  const std::string& surface(std::size_t lang, std::size_t concept_id, std::size_t synonym) const {
    return lexicon_.at(lang).at(concept_id).at(synonym);
  }

  /// (language index, concept) of a surface token.
  std::optional<std::pair<std::size_t, std::size_t>> lookup(const std::string& token) const {
    auto it = index_.find(token);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  bool in_lexicon(const std::string& token, std::size_t lang) const {
    auto hit = lookup(token);
    return hit && hit->first == lang;
  }

  /// Every surface token of every language, grouped by language.
  std::vector<std::string> all_tokens() const {
    std::vector<std::string> out;
    for (const auto& lang : lexicon_)
      for (const auto& forms : lang)
        out.insert(out.end(), forms.begin(), forms.end());
    return out;
  }

  ConceptSeq sample_concepts(Rng& rng, std::size_t min_len, std::size_t max_len) const {
    if (min_len < 1 || min_len > max_len) throw ContractError("synthetic: invalid length range");
    const std::size_t n = static_cast<std::size_t>(rng.between(static_cast<long long>(min_len),
                                                               static_cast<long long>(max_len)));
    ConceptSeq c;
    c.push_back(rng.below(spec_.n_concepts));
    while (c.size() < n) {
      const auto& succ = successors_[c.back()];
      if (rng.bernoulli(0.75))
        c.push_back(succ[rng.below(succ.size())]);
      else
        c.push_back(rng.below(spec_.n_concepts));
    }
    return c;
  }

  /// Surface order of a concept sequence in `lang` (an involution).
  ConceptSeq apply_order(ConceptSeq c, std::size_t lang) const {
    if (!reorders(lang)) return c;
    for (std::size_t p = 0; 2 * p + 1 < c.size(); ++p)
      if (p % spec_.reorder_period == 0) std::swap(c[2 * p], c[2 * p + 1]);
    return c;
  }

  std::vector<std::string> render(const ConceptSeq& concepts, std::size_t lang, Rng& rng) const {
    std::vector<std::string> out;
    for (std::size_t c : apply_order(concepts, lang))
      out.push_back(surface(lang, c, rng.below(spec_.synonyms_per_concept)));
    return out;
  }

  std::vector<std::string> render(const ConceptSeq& concepts, std::string_view lang, Rng& rng) const {
    return render(concepts, lang_index(lang), rng);
  }

  /// Inverse of render at the concept level; nullopt if any token lies
  /// outside the language's lexicon.
  std::optional<ConceptSeq> deparse(const std::vector<std::string>& tokens, std::size_t lang) const {
    ConceptSeq c;
    for (const auto& t : tokens) {
      auto hit = lookup(t);
      if (!hit || hit->first != lang) return std::nullopt;
      c.push_back(hit->second);
    }
    return apply_order(std::move(c), lang);
  }

 private:
  SyntheticLangSpec spec_;
  std::vector<std::vector<std::vector<std::string>>> lexicon_;  // [lang][concept][synonym]
  std::unordered_map<std::string, std::pair<std::size_t, std::size_t>> index_;
  std::vector<std::vector<std::size_t>> successors_;
};

inline std::optional<ConceptSeq> deparse_to_concepts(const std::vector<std::string>& tokens, std::string_view lang,
                                                     const SyntheticWorld& world) {
  return world.deparse(tokens, world.lang_index(lang));
}

using DirectionList = std::vector<std::pair<std::string, std::string>>;

/// Every ordered pair of distinct languages.
inline DirectionList all_cross_directions(const std::vector<std::string>& languages) {
  DirectionList out;
  for (const auto& a : languages)
    for (const auto& b : languages)
      if (a != b) out.emplace_back(a, b);
  return out;
}

/// Pairs cycle through `whitelist`; each renders one sampled concept sequence
/// independently on both sides.
inline std::vector<ParallelPair> gen_synthetic_corpus(const SyntheticWorld& world, std::size_t n_pairs,
                                                      std::pair<std::size_t, std::size_t> length_range,
                                                      const DirectionList& whitelist, std::uint64_t sample_seed) {
  if (whitelist.empty()) throw ContractError("gen_synthetic_corpus: empty direction whitelist");
  std::vector<std::pair<std::size_t, std::size_t>> dirs;
  for (const auto& [s, t] : whitelist) {
    if (s == t) throw ContractError("gen_synthetic_corpus: same-language direction " + s + "->" + t);
    dirs.emplace_back(world.lang_index(s), world.lang_index(t));
  }
  std::vector<ParallelPair> out;
  out.reserve(n_pairs);
  for (std::size_t i = 0; i < n_pairs; ++i) {
    Rng rng(derive_seed(sample_seed, i));
    const auto [s, t] = dirs[i % dirs.size()];
    const ConceptSeq c = world.sample_concepts(rng, length_range.first, length_range.second);
    ParallelPair p;
    p.src_lang = world.spec().languages[s];
    p.tgt_lang = world.spec().languages[t];
    p.src_tokens = world.render(c, s, rng);
    p.tgt_tokens = world.render(c, t, rng);
    out.push_back(std::move(p));
  }
  return out;
}

inline std::vector<MonolingualSentence> gen_synthetic_monolingual(const SyntheticWorld& world, std::size_t n,
                                                                  std::pair<std::size_t, std::size_t> length_range,
                                                                  const std::vector<std::string>& languages,
                                                                  std::uint64_t sample_seed) {
  if (languages.empty()) throw ContractError("gen_synthetic_monolingual: no languages");
  std::vector<MonolingualSentence> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(derive_seed(sample_seed, i));
    const std::size_t l = world.lang_index(languages[i % languages.size()]);
    const ConceptSeq c = world.sample_concepts(rng, length_range.first, length_range.second);
    out.push_back({world.spec().languages[l], world.render(c, l, rng)});
  }
  return out;
}

}  // namespace zsp
