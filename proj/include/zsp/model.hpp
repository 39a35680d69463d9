#pragma once

// Decoder-only Transformer language model with an output-side language
// embedding: logits_t = W_o^T [h_t ; a_(lang of token t+1)].
//
// Layers are pre-norm (x += Attn(LN(x)); x += FFN(LN(x))) with a final layer
// norm, learned absolute positions, GELU feed-forward, and untied input and
// output embeddings.

#include <span>
#include <string>
#include <vector>

#include "zsp/adam.hpp"
#include "zsp/corpus.hpp"
#include "zsp/ops.hpp"

namespace zsp {

struct ModelConfig {
  std::size_t n_layers = 4;
  std::size_t d_model = 128;
  std::size_t n_heads = 4;
  std::size_t d_ff = 512;
  std::size_t d_lang = 16;  // 0 disables the output-layer language embedding
  std::size_t max_len = 64;
  std::size_t vocab_size = 0;
  std::size_t n_languages = 0;
  bool input_lang_tags = true;  // false feeds <pad> in place of language tags
  double init_std = 0.02;
  double ln_eps = 1e-5;

  void validate() const {
    if (!n_layers || !d_model || !n_heads || !d_ff || !max_len || !vocab_size || !n_languages)
      throw ContractError("model config: sizes must be positive");
    if (d_model % n_heads != 0) throw ContractError("model config: d_model must be divisible by n_heads");
    if (!(init_std > 0) || !(ln_eps > 0)) throw ContractError("model config: init_std and ln_eps must be positive");
  }

  /// The 12-layer 768/3072/12-head reference size.
  static ModelConfig reference(std::size_t vocab_size, std::size_t n_languages) {
    ModelConfig c;
    c.n_layers = 12;
    c.d_model = 768;
    c.n_heads = 12;
    c.d_ff = 3072;
    c.d_lang = 16;
    c.max_len = 512;
    c.vocab_size = vocab_size;
    c.n_languages = n_languages;
    return c;
  }

  bool operator==(const ModelConfig&) const = default;
};

/// Padded batch in row-major [batch x seq_len] layout. `lang` holds the
/// language conditioning the prediction made at each position, i.e. the
/// language of the token that follows it.
struct Batch {
  std::size_t batch = 0, seq_len = 0;
  std::vector<TokenId> ids;
  std::vector<std::size_t> lang;
  std::vector<TokenId> targets;
  std::vector<std::uint8_t> mask;
};

/// Shifts each sequence into (input, next-token target) form and pads to
/// the longest input with <pad>, masked out.
inline Batch make_batch(std::span<const TrainingSequence* const> seqs, TokenId pad_id) {
  Batch b;
  b.batch = seqs.size();
  if (b.batch == 0) throw ContractError("make_batch: no sequences");
  for (const auto* s : seqs) {
    if (s->ids.size() < 2) throw ContractError("make_batch: sequence shorter than 2 tokens");
    if (s->targets.size() != s->ids.size() || s->loss_mask.size() != s->ids.size() ||
        s->lang_per_position.size() != s->ids.size())
      throw ContractError("make_batch: inconsistent training sequence");
    b.seq_len = std::max(b.seq_len, s->ids.size() - 1);
  }
  const std::size_t T = b.seq_len;
  b.ids.assign(b.batch * T, pad_id);
  b.lang.assign(b.batch * T, 0);
  b.targets.assign(b.batch * T, pad_id);
  b.mask.assign(b.batch * T, 0);
  for (std::size_t r = 0; r < b.batch; ++r) {
    const auto& s = *seqs[r];
    const std::size_t n = s.ids.size() - 1;
    for (std::size_t t = 0; t < n; ++t) {
      b.ids[r * T + t] = s.ids[t];
      b.lang[r * T + t] = s.lang_per_position[t + 1];
      b.targets[r * T + t] = s.targets[t + 1];
      b.mask[r * T + t] = s.loss_mask[t + 1];
    }
  }
  return b;
}

class TransformerLM {
 public:
  TransformerLM() = default;

  TransformerLM(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(seed);
    auto normal = [&](Shape shape) {
      std::vector<double> v(shape_numel(shape));
      for (double& x : v) x = rng.normal(0.0, cfg_.init_std);
      return Tensor(std::move(shape), std::move(v), true);
    };
    auto zeros = [](std::size_t n) { return Tensor::zeros({n}, true); };
    auto ones = [](std::size_t n) { return Tensor({n}, std::vector<double>(n, 1.0), true); };
    const std::size_t d = cfg_.d_model, f = cfg_.d_ff;
    params_.add("tok_emb", normal({cfg_.vocab_size, d}));
    params_.add("pos_emb", normal({cfg_.max_len, d}));
    if (cfg_.d_lang > 0) params_.add("lang_emb", normal({cfg_.n_languages, cfg_.d_lang}));
    for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
      const std::string p = "layer" + std::to_string(l) + ".";
      params_.add(p + "ln1.gain", ones(d), false);
      params_.add(p + "ln1.bias", zeros(d), false);
      for (const char* w : {"q", "k", "v", "o"}) {
        params_.add(p + "attn.w" + w, normal({d, d}));
        params_.add(p + "attn.b" + w, zeros(d), false);
      }
      params_.add(p + "ln2.gain", ones(d), false);
      params_.add(p + "ln2.bias", zeros(d), false);
      params_.add(p + "ffn.w1", normal({d, f}));
      params_.add(p + "ffn.b1", zeros(f), false);
      params_.add(p + "ffn.w2", normal({f, d}));
      params_.add(p + "ffn.b2", zeros(d), false);
    }
    params_.add("ln_f.gain", ones(d), false);
    params_.add("ln_f.bias", zeros(d), false);
    params_.add("out_proj", normal({d + cfg_.d_lang, cfg_.vocab_size}));
  }

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  const Tensor& param(const std::string& name) const { return params_.at(name); }

  /// Logits [batch x seq_len x vocab] for row-major ids/lang of length
  /// batch*seq_len. lang[t] conditions the prediction at position t.
  Tensor forward(std::span<const TokenId> ids, std::span<const std::size_t> lang, std::size_t batch,
                 std::size_t seq_len) const {
    const Tensor logits = forward_flat(ids, lang, batch, seq_len);
    return reshape(logits, {batch, seq_len, cfg_.vocab_size});
  }

  /// Same as forward() but shaped [batch*seq_len x vocab].
  Tensor forward_flat(std::span<const TokenId> ids, std::span<const std::size_t> lang, std::size_t batch,
                      std::size_t seq_len) const {
    if (seq_len > cfg_.max_len)
      throw LengthError("sequence length " + std::to_string(seq_len) + " exceeds max_len " +
                        std::to_string(cfg_.max_len));
    const std::size_t N = batch * seq_len;
    if (ids.size() != N || lang.size() != N)
      throw DimensionError("forward: expected " + std::to_string(N) + " ids and language ids");
    for (std::size_t l : lang)
      if (l >= cfg_.n_languages) throw IndexError("forward: language index " + std::to_string(l) + " out of range");

    std::vector<TokenId> input(ids.begin(), ids.end());
    if (!cfg_.input_lang_tags)
      for (TokenId& t : input)
        if (is_lang_tag(t)) t = SpecialIds{}.pad;
    std::vector<TokenId> positions(N);
    for (std::size_t r = 0; r < batch; ++r)
      for (std::size_t t = 0; t < seq_len; ++t) positions[r * seq_len + t] = static_cast<TokenId>(t);

    Tensor x = add(embedding(params_.at("tok_emb"), input), embedding(params_.at("pos_emb"), positions));
    for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
      const std::string p = "layer" + std::to_string(l) + ".";
      auto P = [&](const std::string& n) -> const Tensor& { return params_.at(p + n); };
      Tensor h = layer_norm(x, P("ln1.gain"), P("ln1.bias"), cfg_.ln_eps);
      Tensor q = add_bias(matmul(h, P("attn.wq")), P("attn.bq"));
      Tensor k = add_bias(matmul(h, P("attn.wk")), P("attn.bk"));
      Tensor v = add_bias(matmul(h, P("attn.wv")), P("attn.bv"));
      Tensor a = causal_attention(q, k, v, batch, seq_len, cfg_.n_heads);
      x = add(x, add_bias(matmul(a, P("attn.wo")), P("attn.bo")));
      h = layer_norm(x, P("ln2.gain"), P("ln2.bias"), cfg_.ln_eps);
      h = gelu(add_bias(matmul(h, P("ffn.w1")), P("ffn.b1")));
      x = add(x, add_bias(matmul(h, P("ffn.w2")), P("ffn.b2")));
    }
    Tensor h = layer_norm(x, params_.at("ln_f.gain"), params_.at("ln_f.bias"), cfg_.ln_eps);
    if (cfg_.d_lang > 0) {
      std::vector<TokenId> lang_ids(lang.begin(), lang.end());
      h = concat_cols(h, embedding(params_.at("lang_emb"), lang_ids));
    }
    return matmul(h, params_.at("out_proj"));
  }

  /// Summed masked NLL over a batch together with the counted-token total.
  struct NllSum {
    Tensor sum;
    std::size_t count = 0;
  };

  NllSum batch_nll(const Batch& b) const {
    Tensor logits = forward_flat(b.ids, b.lang, b.batch, b.seq_len);
    std::size_t count = 0;
    for (auto m : b.mask) count += m;
    return {cross_entropy(logits, b.targets, b.mask, false), count};
  }

  /// Mean masked NLL over a batch.
  Tensor batch_loss(const Batch& b) const {
    Tensor logits = forward_flat(b.ids, b.lang, b.batch, b.seq_len);
    return cross_entropy_loss(logits, b.targets, b.mask);
  }

 private:
  bool is_lang_tag(TokenId t) const {
    const TokenId first = static_cast<TokenId>(kSpecialTokens.size());
    return t >= first && t < first + static_cast<TokenId>(cfg_.n_languages);
  }

  ModelConfig cfg_;
  ParamStore params_;
};

/// Mean masked next-token NLL of one sequence.
inline Tensor sequence_loss(const TransformerLM& m, const TrainingSequence& seq) {
  const TrainingSequence* one[] = {&seq};
  return m.batch_loss(make_batch(one, SpecialIds{}.pad));
}

inline TransformerLM::NllSum sequence_nll(const TransformerLM& m, const TrainingSequence& seq) {
  const TrainingSequence* one[] = {&seq};
  return m.batch_nll(make_batch(one, SpecialIds{}.pad));
}

/// Single-sequence inference with a key/value cache. Each step() appends one
/// token and returns the next-token logits, matching forward() on the full
/// prefix.
class IncrementalDecoder {
 public:
  explicit IncrementalDecoder(const TransformerLM& m) : m_(m), cfg_(m.config()) {
    keys_.resize(cfg_.n_layers);
    values_.resize(cfg_.n_layers);
  }

  std::size_t position() const { return pos_; }

  std::vector<double> step(TokenId token, std::size_t lang) {
    if (pos_ >= cfg_.max_len)
      throw LengthError("decoding past max_len " + std::to_string(cfg_.max_len));
    if (token < 0 || static_cast<std::size_t>(token) >= cfg_.vocab_size)
      throw IndexError("decode: token id " + std::to_string(token) + " out of range");
    if (lang >= cfg_.n_languages) throw IndexError("decode: language index out of range");
    const std::size_t d = cfg_.d_model, H = cfg_.n_heads, dh = d / H;
    const TokenId first_tag = static_cast<TokenId>(kSpecialTokens.size());
    if (!cfg_.input_lang_tags && token >= first_tag && token < first_tag + static_cast<TokenId>(cfg_.n_languages))
      token = SpecialIds{}.pad;

    std::vector<double> x(d);
    const auto tok = m_.param("tok_emb").values();
    const auto pos = m_.param("pos_emb").values();
    for (std::size_t c = 0; c < d; ++c)
      x[c] = tok[static_cast<std::size_t>(token) * d + c] + pos[pos_ * d + c];

    std::vector<double> h(d), q(d), k(d), v(d), a(d), tmp(d), f(cfg_.d_ff);
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
      const std::string p = "layer" + std::to_string(l) + ".";
      auto P = [&](const std::string& n) { return m_.param(p + n).values(); };
      norm(x, P("ln1.gain"), P("ln1.bias"), h);
      affine(h, P("attn.wq"), P("attn.bq"), d, q);
      affine(h, P("attn.wk"), P("attn.bk"), d, k);
      affine(h, P("attn.wv"), P("attn.bv"), d, v);
      keys_[l].insert(keys_[l].end(), k.begin(), k.end());
      values_[l].insert(values_[l].end(), v.begin(), v.end());
      const std::size_t n = pos_ + 1;
      std::fill(a.begin(), a.end(), 0.0);
      std::vector<double> s(n);
      for (std::size_t hd = 0; hd < H; ++hd) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < n; ++j) {
          double dot = 0.0;
          for (std::size_t c = 0; c < dh; ++c) dot += q[hd * dh + c] * keys_[l][j * d + hd * dh + c];
          s[j] = dot * inv_sqrt;
          mx = std::max(mx, s[j]);
        }
        double z = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          s[j] = std::exp(s[j] - mx);
          z += s[j];
        }
        for (std::size_t j = 0; j < n; ++j) {
          const double pj = s[j] / z;
          for (std::size_t c = 0; c < dh; ++c) a[hd * dh + c] += pj * values_[l][j * d + hd * dh + c];
        }
      }
      affine(a, P("attn.wo"), P("attn.bo"), d, tmp);
      for (std::size_t c = 0; c < d; ++c) x[c] += tmp[c];
      norm(x, P("ln2.gain"), P("ln2.bias"), h);
      affine(h, P("ffn.w1"), P("ffn.b1"), cfg_.d_ff, f);
      for (double& e : f) e = detail::gelu(e);
      affine(f, P("ffn.w2"), P("ffn.b2"), d, tmp);
      for (std::size_t c = 0; c < d; ++c) x[c] += tmp[c];
    }
    norm(x, m_.param("ln_f.gain").values(), m_.param("ln_f.bias").values(), h);
    if (cfg_.d_lang > 0) {
      const auto A = m_.param("lang_emb").values();
      h.insert(h.end(), A.begin() + static_cast<std::ptrdiff_t>(lang * cfg_.d_lang),
               A.begin() + static_cast<std::ptrdiff_t>((lang + 1) * cfg_.d_lang));
    }
    std::vector<double> logits(cfg_.vocab_size);
    const auto W = m_.param("out_proj").values();
    detail::as_matrix(logits, 1, cfg_.vocab_size).noalias() =
        detail::ConstMap(h.data(), 1, static_cast<Eigen::Index>(h.size())) *
        detail::ConstMap(W.data(), static_cast<Eigen::Index>(h.size()), static_cast<Eigen::Index>(cfg_.vocab_size));
    ++pos_;
    return logits;
  }

 private:
  void norm(const std::vector<double>& x, std::span<const double> g, std::span<const double> b,
            std::vector<double>& out) const {
    const std::size_t d = x.size();
    double mean = 0.0;
    for (double e : x) mean += e;
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (double e : x) var += (e - mean) * (e - mean);
    var /= static_cast<double>(d);
    const double rstd = 1.0 / std::sqrt(var + cfg_.ln_eps);
    for (std::size_t c = 0; c < d; ++c) out[c] = g[c] * ((x[c] - mean) * rstd) + b[c];
  }

  static void affine(const std::vector<double>& in, std::span<const double> w, std::span<const double> bias,
                     std::size_t out_dim, std::vector<double>& out) {
    const auto rows = static_cast<Eigen::Index>(in.size());
    detail::MutMap(out.data(), 1, static_cast<Eigen::Index>(out_dim)).noalias() =
        detail::ConstMap(in.data(), 1, rows) * detail::ConstMap(w.data(), rows, static_cast<Eigen::Index>(out_dim));
    for (std::size_t c = 0; c < out_dim; ++c) out[c] += bias[c];
  }

  const TransformerLM& m_;
  ModelConfig cfg_;
  std::size_t pos_ = 0;
  std::vector<std::vector<double>> keys_, values_;
};

}  // namespace zsp
