#pragma once

// Word-level vocabulary with reserved special and language-tag ids.
//
// Id layout: <pad> <unk> <bos> <eos> <delim>, then one <code> tag per
// language in registration order, then content tokens by descending
// frequency (ties broken lexicographically). The vocabulary file stores one
// token per line, line number = id, in exactly this order.

#include <algorithm>
#include <array>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "zsp/tensor.hpp"

namespace zsp {

struct SpecialIds {
  TokenId pad = 0;
  TokenId unk = 1;
  TokenId bos = 2;
  TokenId eos = 3;
  TokenId delim = 4;
};

inline constexpr std::array<std::string_view, 5> kSpecialTokens = {"<pad>", "<unk>", "<bos>", "<eos>",
                                                                   "<delim>"};

inline std::string lang_tag_token(std::string_view code) { return "<" + std::string(code) + ">"; }

/// Tokens of the form <...> are reserved for control symbols.
inline bool looks_reserved(std::string_view tok) {
  return tok.size() >= 2 && tok.front() == '<' && tok.back() == '>';
}

class Vocabulary {
 public:
  Vocabulary() = default;

  /// Assembles a vocabulary from language codes and ordered content tokens.
  Vocabulary(const std::vector<std::string>& languages, const std::vector<std::string>& content) {
    if (languages.empty()) throw ContractError("vocabulary needs at least one language");
    for (auto s : kSpecialTokens) push(std::string(s));
    for (const auto& code : languages) {
      if (code.empty() || code.find_first_of(" \t\r\n<>") != std::string::npos)
        throw ContractError("invalid language code '" + code + "'");
      if (lang_index_.count(code)) throw ContractError("duplicate language code '" + code + "'");
      lang_index_[code] = languages_.size();
      languages_.push_back(code);
      lang_tags_.push_back(push(lang_tag_token(code)));
    }
    first_content_ = static_cast<TokenId>(id_to_token_.size());
    for (const auto& tok : content) {
      if (looks_reserved(tok)) throw ContractError("content token '" + tok + "' uses reserved <...> form");
      if (token_to_id_.count(tok)) throw ContractError("duplicate token '" + tok + "'");
      push(tok);
    }
  }

  std::size_t size() const { return id_to_token_.size(); }
  const SpecialIds& special() const { return special_; }
  const std::vector<std::string>& languages() const { return languages_; }
  std::size_t num_languages() const { return languages_.size(); }
  TokenId first_content_id() const { return first_content_; }
  std::size_t content_size() const { return size() - static_cast<std::size_t>(first_content_); }

  bool has_language(std::string_view code) const { return lang_index_.count(std::string(code)) > 0; }

  std::size_t lang_index(std::string_view code) const {
    auto it = lang_index_.find(std::string(code));
    if (it == lang_index_.end()) throw ContractError("unknown language '" + std::string(code) + "'");
    return it->second;
  }

  TokenId lang_tag(std::string_view code) const { return lang_tags_[lang_index(code)]; }
  TokenId lang_tag_at(std::size_t index) const { return lang_tags_.at(index); }

  std::optional<TokenId> find(std::string_view tok) const {
    auto it = token_to_id_.find(std::string(tok));
    if (it == token_to_id_.end()) return std::nullopt;
    return it->second;
  }

  /// Id of `tok`, or <unk> when absent.
  TokenId id(std::string_view tok) const { return find(tok).value_or(special_.unk); }

  const std::string& token(TokenId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= id_to_token_.size())
      throw IndexError("token id " + std::to_string(id) + " outside vocabulary of " +
                       std::to_string(id_to_token_.size()));
    return id_to_token_[static_cast<std::size_t>(id)];
  }

  /// Specials and language tags.
  bool is_control(TokenId id) const { return id >= 0 && id < first_content_; }

  std::vector<std::string> content_tokens() const {
    return {id_to_token_.begin() + first_content_, id_to_token_.end()};
  }

  void write(std::ostream& os) const {
    for (const auto& t : id_to_token_) os << t << '\n';
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    write(out);
    if (!out) throw IoError("write failed for " + path);
  }

  /// Parses the one-token-per-line layout. Language tags are the <...> lines
  /// directly after the fixed specials.
  static Vocabulary read(std::istream& in, const std::string& origin = "<vocab>") {
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (!valid_utf8(line)) throw ParseError(origin + ":" + std::to_string(lines.size() + 1) + ": invalid UTF-8");
      lines.push_back(line);
    }
    if (lines.size() < kSpecialTokens.size())
      throw ParseError(origin + ": truncated vocabulary (missing special tokens)");
    for (std::size_t i = 0; i < kSpecialTokens.size(); ++i)
      if (lines[i] != kSpecialTokens[i])
        throw ParseError(origin + ":" + std::to_string(i + 1) + ": expected " + std::string(kSpecialTokens[i]));
    std::vector<std::string> langs, content;
    std::size_t i = kSpecialTokens.size();
    for (; i < lines.size() && looks_reserved(lines[i]); ++i)
      langs.push_back(lines[i].substr(1, lines[i].size() - 2));
    for (; i < lines.size(); ++i) {
      if (lines[i].empty() || lines[i].find_first_of(" \t") != std::string::npos)
        throw ParseError(origin + ":" + std::to_string(i + 1) + ": malformed token");
      content.push_back(lines[i]);
    }
    try {
      return Vocabulary(langs, content);
    } catch (const ContractError& e) {
      throw ParseError(origin + ": " + e.what());
    }
  }

  static Vocabulary load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    return read(in, path);
  }

  bool operator==(const Vocabulary& o) const {
    return id_to_token_ == o.id_to_token_ && languages_ == o.languages_;
  }

 private:
  TokenId push(std::string tok) {
    const auto id = static_cast<TokenId>(id_to_token_.size());
    token_to_id_[tok] = id;
    id_to_token_.push_back(std::move(tok));
    return id;
  }

  SpecialIds special_;
  std::unordered_map<std::string, TokenId> token_to_id_;
  std::vector<std::string> id_to_token_;
  std::vector<std::string> languages_;
  std::unordered_map<std::string, std::size_t> lang_index_;
  std::vector<TokenId> lang_tags_;
  TokenId first_content_ = 0;
};

/// Streaming token counter behind build_vocab.
class VocabBuilder {
 public:
  void add_line(std::string_view text) {
    for (auto& tok : split_ws(text))
      if (!looks_reserved(tok)) ++counts_[tok];
    ++lines_;
  }

  std::size_t lines() const { return lines_; }

  Vocabulary finish(const std::vector<std::string>& languages, std::size_t min_count) const {
    if (lines_ == 0) throw ContractError("build_vocab: empty corpus");
    if (min_count < 1) throw ContractError("build_vocab: min_count must be >= 1");
    std::vector<std::pair<std::string, std::size_t>> kept;
    for (const auto& [tok, n] : counts_)
      if (n >= min_count) kept.emplace_back(tok, n);
    std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
      return a.second != b.second ? a.second > b.second : a.first < b.first;
    });
    std::vector<std::string> content;
    content.reserve(kept.size());
    for (auto& [tok, n] : kept) content.push_back(tok);
    return Vocabulary(languages, content);
  }

 private:
  std::unordered_map<std::string, std::size_t> counts_;
  std::size_t lines_ = 0;
};

inline Vocabulary build_vocab(const std::vector<std::string>& corpus_lines,
                              const std::vector<std::string>& languages, std::size_t min_count) {
  VocabBuilder b;
  for (const auto& line : corpus_lines) b.add_line(line);
  return b.finish(languages, min_count);
}

inline std::vector<TokenId> encode(const Vocabulary& v, std::string_view text) {
  std::vector<TokenId> ids;
  for (const auto& tok : split_ws(text)) ids.push_back(v.id(tok));
  return ids;
}

/// Space-joined tokens. With `strip_control`, specials and language tags
/// are omitted.
inline std::string decode(const Vocabulary& v, std::span<const TokenId> ids, bool strip_control = true) {
  std::string out;
  for (TokenId id : ids) {
    const std::string& tok = v.token(id);
    if (strip_control && v.is_control(id)) continue;
    if (!out.empty()) out += ' ';
    out += tok;
  }
  return out;
}

}  // namespace zsp
