#include "qrew/model.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "qrew/errors.hpp"
#include "qrew/fingerprint.hpp"

namespace qrew {

using ad::Tensor;
using ad::Matrix;

void ModelConfig::validate() const {
  if (vocab_size < tok::first_regular) {
    throw ConfigError("vocab_size must cover the special tokens");
  }
  if (d_model < 1 || n_heads < 1 || d_model % n_heads != 0) {
    throw ConfigError("d_model must be a positive multiple of n_heads");
  }
  if (adapter_bottleneck < 1) {
    throw ConfigError("adapter bottleneck must be >= 1");
  }
  if (n_enc_layers < 1 || n_dec_layers < 1 || ffn_dim < 1 || max_seq_len < 2) {
    throw ConfigError("invalid model dimensions");
  }
  if (dropout < 0.0 || dropout >= 1.0) {
    throw ConfigError("dropout must lie in [0, 1)");
  }
}

// --- Vocab -------------------------------------------------------------------

namespace {

std::vector<std::string> special_tokens() {
  return {"<pad>", "<bos>", "<eos>", "|||", "<unk>"};
}

}  // namespace

Vocab Vocab::from_tokens(std::vector<std::string> regular_tokens) {
  Vocab v;
  v.id_to_token_ = special_tokens();
  for (auto& t : regular_tokens) v.id_to_token_.push_back(std::move(t));
  for (std::size_t i = 0; i < v.id_to_token_.size(); ++i) {
    v.token_to_id_[v.id_to_token_[i]] = static_cast<int>(i);
  }
  return v;
}

Vocab Vocab::build(const std::vector<UtteranceRecord>& records, int cap) {
  if (cap < tok::first_regular + 1) {
    throw ConfigError("vocabulary cap too small: " + std::to_string(cap));
  }
  std::map<std::string, std::int64_t> counts;
  for (const auto& rec : records) {
    for (const auto& t : rec.question) ++counts[t];
    for (const auto& turn : rec.history) {
      for (const auto& t : turn) ++counts[t];
    }
    for (const auto& t : rec.rewrite) ++counts[t];
  }
  std::vector<std::pair<std::string, std::int64_t>> ranked(counts.begin(),
                                                           counts.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) {
                     return a.second > b.second ||
                            (a.second == b.second && a.first < b.first);
                   });
  std::vector<std::string> regular;
  const std::size_t budget = static_cast<std::size_t>(cap - tok::first_regular);
  for (const auto& [token, count] : ranked) {
    if (regular.size() >= budget) break;
    if (token == "|||") continue;  // already a special
    regular.push_back(token);
  }
  return from_tokens(std::move(regular));
}

int Vocab::id(const std::string& token) const {
  auto it = token_to_id_.find(token);
  return it == token_to_id_.end() ? tok::unk : it->second;
}

const std::string& Vocab::token(int id) const {
  if (id < 0 || id >= size()) {
    throw OOVTokenError("token id " + std::to_string(id) +
                        " outside vocabulary of " + std::to_string(size()));
  }
  return id_to_token_[id];
}

std::vector<std::string> Vocab::regular_tokens() const {
  return {id_to_token_.begin() + tok::first_regular, id_to_token_.end()};
}

std::vector<int> Vocab::ids(const TokenSeq& tokens) const {
  std::vector<int> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(id(t));
  return out;
}

TokenSeq Vocab::tokens_from_ids(const std::vector<int>& ids) const {
  TokenSeq out;
  for (int id : ids) {
    if (id >= tok::first_regular) out.push_back(token(id));
  }
  return out;
}

std::vector<int> assemble_input_ids(const Vocab& vocab,
                                    const UtteranceRecord& rec,
                                    int max_seq_len) {
  std::vector<int> ids = vocab.ids(rec.question);
  for (const auto& turn : rec.history) {
    ids.push_back(tok::sep);
    const auto turn_ids = vocab.ids(turn);
    ids.insert(ids.end(), turn_ids.begin(), turn_ids.end());
  }
  if (static_cast<int>(ids.size()) > max_seq_len) ids.resize(max_seq_len);
  return ids;
}

std::vector<int> target_ids(const Vocab& vocab, const TokenSeq& rewrite) {
  std::vector<int> ids = vocab.ids(rewrite);
  ids.push_back(tok::eos);
  return ids;
}

// --- parameter construction ---------------------------------------------------

namespace {

Tensor normal_leaf(ad::Index rows, ad::Index cols, std::mt19937_64& rng,
                   double std_dev) {
  std::normal_distribution<double> dist(0.0, std_dev);
  Matrix m(rows, cols);
  for (ad::Index r = 0; r < rows; ++r) {
    for (ad::Index c = 0; c < cols; ++c) m(r, c) = dist(rng);
  }
  return Tensor::leaf(std::move(m), false);
}

Tensor zeros_leaf(ad::Index rows, ad::Index cols) {
  return Tensor::zeros(rows, cols, false);
}

Tensor ones_leaf(ad::Index rows, ad::Index cols) {
  return Tensor::leaf(Matrix::Ones(rows, cols), false);
}

constexpr double kInitStd = 0.02;

BaseWeights::Attention make_attention(int d, std::mt19937_64& rng) {
  BaseWeights::Attention a;
  a.wq = normal_leaf(d, d, rng, kInitStd);
  a.bq = zeros_leaf(1, d);
  a.wk = normal_leaf(d, d, rng, kInitStd);
  a.bk = zeros_leaf(1, d);
  a.wv = normal_leaf(d, d, rng, kInitStd);
  a.bv = zeros_leaf(1, d);
  a.wo = normal_leaf(d, d, rng, kInitStd);
  a.bo = zeros_leaf(1, d);
  return a;
}

BaseWeights::Ffn make_ffn(int d, int ffn_dim, std::mt19937_64& rng) {
  BaseWeights::Ffn f;
  f.w1 = normal_leaf(d, ffn_dim, rng, kInitStd);
  f.b1 = zeros_leaf(1, ffn_dim);
  f.w2 = normal_leaf(ffn_dim, d, rng, kInitStd);
  f.b2 = zeros_leaf(1, d);
  return f;
}

void append_attention(std::vector<std::pair<std::string, Tensor>>& out,
                      const std::string& prefix,
                      const BaseWeights::Attention& a) {
  out.emplace_back(prefix + ".wq", a.wq);
  out.emplace_back(prefix + ".bq", a.bq);
  out.emplace_back(prefix + ".wk", a.wk);
  out.emplace_back(prefix + ".bk", a.bk);
  out.emplace_back(prefix + ".wv", a.wv);
  out.emplace_back(prefix + ".bv", a.bv);
  out.emplace_back(prefix + ".wo", a.wo);
  out.emplace_back(prefix + ".bo", a.bo);
}

void append_ffn(std::vector<std::pair<std::string, Tensor>>& out,
                const std::string& prefix, const BaseWeights::Ffn& f) {
  out.emplace_back(prefix + ".w1", f.w1);
  out.emplace_back(prefix + ".b1", f.b1);
  out.emplace_back(prefix + ".w2", f.w2);
  out.emplace_back(prefix + ".b2", f.b2);
}

std::string fingerprint_params(
    const std::vector<std::pair<std::string, Tensor>>& params) {
  Sha256 h;
  for (const auto& [name, p] : params) {
    h.update(name);
    const Matrix& v = p.value();
    for (ad::Index r = 0; r < v.rows(); ++r) {
      for (ad::Index c = 0; c < v.cols(); ++c) {
        const double x = v(r, c);
        h.update(&x, sizeof(double));
      }
    }
  }
  return h.hex_digest();
}

}  // namespace

BaseWeights::BaseWeights(const ModelConfig& config, std::uint64_t seed)
    : config_(config) {
  config.validate();
  std::mt19937_64 rng(seed);
  const int d = config.d_model;
  tok_emb = normal_leaf(config.vocab_size, d, rng, kInitStd);
  pos_emb = normal_leaf(config.max_seq_len, d, rng, kInitStd);
  for (int l = 0; l < config.n_enc_layers; ++l) {
    EncLayer layer;
    layer.ln1_g = ones_leaf(1, d);
    layer.ln1_b = zeros_leaf(1, d);
    layer.self_attn = make_attention(d, rng);
    layer.ln2_g = ones_leaf(1, d);
    layer.ln2_b = zeros_leaf(1, d);
    layer.ffn = make_ffn(d, config.ffn_dim, rng);
    enc_layers.push_back(std::move(layer));
  }
  for (int l = 0; l < config.n_dec_layers; ++l) {
    DecLayer layer;
    layer.ln1_g = ones_leaf(1, d);
    layer.ln1_b = zeros_leaf(1, d);
    layer.self_attn = make_attention(d, rng);
    layer.ln2_g = ones_leaf(1, d);
    layer.ln2_b = zeros_leaf(1, d);
    layer.cross_attn = make_attention(d, rng);
    layer.ln3_g = ones_leaf(1, d);
    layer.ln3_b = zeros_leaf(1, d);
    layer.ffn = make_ffn(d, config.ffn_dim, rng);
    dec_layers.push_back(std::move(layer));
  }
  enc_final_g = ones_leaf(1, d);
  enc_final_b = zeros_leaf(1, d);
  dec_final_g = ones_leaf(1, d);
  dec_final_b = zeros_leaf(1, d);
  out_proj = normal_leaf(d, config.vocab_size, rng, kInitStd);
  out_bias = zeros_leaf(1, config.vocab_size);
}

std::vector<std::pair<std::string, Tensor>> BaseWeights::named_params() const {
  std::vector<std::pair<std::string, Tensor>> out;
  out.emplace_back("tok_emb", tok_emb);
  out.emplace_back("pos_emb", pos_emb);
  for (std::size_t l = 0; l < enc_layers.size(); ++l) {
    const auto& layer = enc_layers[l];
    const std::string p = "enc" + std::to_string(l);
    out.emplace_back(p + ".ln1.g", layer.ln1_g);
    out.emplace_back(p + ".ln1.b", layer.ln1_b);
    append_attention(out, p + ".self", layer.self_attn);
    out.emplace_back(p + ".ln2.g", layer.ln2_g);
    out.emplace_back(p + ".ln2.b", layer.ln2_b);
    append_ffn(out, p + ".ffn", layer.ffn);
  }
  for (std::size_t l = 0; l < dec_layers.size(); ++l) {
    const auto& layer = dec_layers[l];
    const std::string p = "dec" + std::to_string(l);
    out.emplace_back(p + ".ln1.g", layer.ln1_g);
    out.emplace_back(p + ".ln1.b", layer.ln1_b);
    append_attention(out, p + ".self", layer.self_attn);
    out.emplace_back(p + ".ln2.g", layer.ln2_g);
    out.emplace_back(p + ".ln2.b", layer.ln2_b);
    append_attention(out, p + ".cross", layer.cross_attn);
    out.emplace_back(p + ".ln3.g", layer.ln3_g);
    out.emplace_back(p + ".ln3.b", layer.ln3_b);
    append_ffn(out, p + ".ffn", layer.ffn);
  }
  out.emplace_back("enc_final.g", enc_final_g);
  out.emplace_back("enc_final.b", enc_final_b);
  out.emplace_back("dec_final.g", dec_final_g);
  out.emplace_back("dec_final.b", dec_final_b);
  out.emplace_back("out_proj", out_proj);
  out.emplace_back("out_bias", out_bias);
  return out;
}

std::string BaseWeights::fingerprint() const {
  return fingerprint_params(named_params());
}

void BaseWeights::set_requires_grad(bool on) {
  for (auto& [name, p] : named_params()) {
    Tensor t = p;
    t.set_requires_grad(on);
  }
}

// --- adapters -----------------------------------------------------------------

ad::Tensor Adapter::forward(const Tensor& x) const {
  auto down = ad::tanh(ad::add_rowwise(ad::matmul(x, w_down), b_down));
  auto up = ad::add_rowwise(ad::matmul(down, w_up), b_up);
  return ad::add(up, x);
}

std::int64_t Adapter::param_count() const {
  return w_down.size() + b_down.size() + w_up.size() + b_up.size();
}

namespace {

Adapter make_adapter(int d, int b, std::mt19937_64& rng) {
  Adapter a;
  a.w_down = normal_leaf(d, b, rng, kInitStd);
  a.b_down = zeros_leaf(1, b);
  a.w_up = zeros_leaf(b, d);  // identity at initialization
  a.b_up = zeros_leaf(1, d);
  return a;
}

void append_adapter(std::vector<std::pair<std::string, Tensor>>& out,
                    const std::string& prefix, const Adapter& a) {
  out.emplace_back(prefix + ".w_down", a.w_down);
  out.emplace_back(prefix + ".b_down", a.b_down);
  out.emplace_back(prefix + ".w_up", a.w_up);
  out.emplace_back(prefix + ".b_up", a.b_up);
}

}  // namespace

AdapterSet::AdapterSet(const ModelConfig& config, std::string class_label,
                       std::uint64_t seed)
    : class_label_(std::move(class_label)) {
  config.validate();
  std::mt19937_64 rng(seed);
  const int d = config.d_model;
  const int b = config.adapter_bottleneck;
  for (int l = 0; l < config.n_enc_layers; ++l) {
    enc.push_back({make_adapter(d, b, rng), make_adapter(d, b, rng)});
  }
  for (int l = 0; l < config.n_dec_layers; ++l) {
    dec.push_back({make_adapter(d, b, rng), make_adapter(d, b, rng),
                   make_adapter(d, b, rng)});
  }
  const int expected = 2 * config.n_enc_layers + 3 * config.n_dec_layers;
  if (adapter_count() != expected) {
    throw ConfigError("adapter count " + std::to_string(adapter_count()) +
                      " does not match 2*N_enc + 3*N_dec = " +
                      std::to_string(expected));
  }
}

int AdapterSet::adapter_count() const {
  return static_cast<int>(2 * enc.size() + 3 * dec.size());
}

std::vector<std::pair<std::string, Tensor>> AdapterSet::named_params() const {
  std::vector<std::pair<std::string, Tensor>> out;
  for (std::size_t l = 0; l < enc.size(); ++l) {
    const std::string p = "enc" + std::to_string(l);
    append_adapter(out, p + ".post_self", enc[l].self_attn);
    append_adapter(out, p + ".post_ffn", enc[l].ffn);
  }
  for (std::size_t l = 0; l < dec.size(); ++l) {
    const std::string p = "dec" + std::to_string(l);
    append_adapter(out, p + ".post_self", dec[l].self_attn);
    append_adapter(out, p + ".post_cross", dec[l].cross_attn);
    append_adapter(out, p + ".post_ffn", dec[l].ffn);
  }
  return out;
}

std::string AdapterSet::fingerprint() const {
  return fingerprint_params(named_params());
}

void AdapterSet::set_requires_grad(bool on) {
  for (auto& [name, p] : named_params()) {
    Tensor t = p;
    t.set_requires_grad(on);
  }
}

// --- forward passes -----------------------------------------------------------

namespace {

Tensor layer_norm_rows(const Tensor& x, const Tensor& g, const Tensor& b) {
  return ad::layer_norm(x, g, b, 1e-5);
}

Tensor feed_forward(const Tensor& x, const BaseWeights::Ffn& f) {
  auto hidden = ad::tanh(ad::add_rowwise(ad::matmul(x, f.w1), f.b1));
  return ad::add_rowwise(ad::matmul(hidden, f.w2), f.b2);
}

// Multi-head scaled dot-product attention over per-head column slices.
// `blocked`, when present, marks (query, key) pairs that must not attend.
Tensor attention(const Tensor& x_q, const Tensor& x_kv,
                 const BaseWeights::Attention& p, int n_heads,
                 const ad::Mask* blocked) {
  const ad::Index d = x_q.cols();
  const ad::Index dk = d / n_heads;
  auto q = ad::add_rowwise(ad::matmul(x_q, p.wq), p.bq);
  auto k = ad::add_rowwise(ad::matmul(x_kv, p.wk), p.bk);
  auto v = ad::add_rowwise(ad::matmul(x_kv, p.wv), p.bv);
  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(dk));

  std::vector<Tensor> heads;
  heads.reserve(n_heads);
  for (int h = 0; h < n_heads; ++h) {
    auto qh = ad::slice_cols(q, h * dk, dk);
    auto kh = ad::slice_cols(k, h * dk, dk);
    auto vh = ad::slice_cols(v, h * dk, dk);
    auto scores = ad::scale(ad::matmul_nt(qh, kh), inv_sqrt_dk);
    if (blocked) scores = ad::masked_fill(scores, *blocked, -1e30);
    heads.push_back(ad::matmul(ad::softmax(scores, 1), vh));
  }
  auto merged = ad::concat_cols(heads);
  return ad::add_rowwise(ad::matmul(merged, p.wo), p.bo);
}

// true = blocked. Keys outside `valid` are blocked for every query.
ad::Mask key_mask(ad::Index len_q, const std::vector<bool>& valid) {
  ad::Mask m(len_q, static_cast<ad::Index>(valid.size()));
  for (ad::Index i = 0; i < m.rows(); ++i) {
    for (ad::Index j = 0; j < m.cols(); ++j) m(i, j) = !valid[j];
  }
  return m;
}

ad::Mask causal_mask(ad::Index len) {
  ad::Mask m(len, len);
  for (ad::Index i = 0; i < len; ++i) {
    for (ad::Index j = 0; j < len; ++j) m(i, j) = j > i;
  }
  return m;
}

void check_sequence(const ModelConfig& config, const std::vector<int>& ids) {
  if (ids.empty()) {
    throw EmptyTextError("model input is empty");
  }
  if (static_cast<int>(ids.size()) > config.max_seq_len) {
    throw SequenceTooLongError("sequence length " + std::to_string(ids.size()) +
                               " exceeds max_seq_len " +
                               std::to_string(config.max_seq_len));
  }
  for (int id : ids) {
    if (id < 0 || id >= config.vocab_size) {
      throw OOVTokenError("token id " + std::to_string(id) +
                          " outside vocabulary of " +
                          std::to_string(config.vocab_size));
    }
  }
}

std::vector<int> iota_ids(std::size_t n) {
  std::vector<int> ids(n);
  for (std::size_t i = 0; i < n; ++i) ids[i] = static_cast<int>(i);
  return ids;
}

}  // namespace

Tensor encode(const ModelView& m, const std::vector<int>& input_ids,
              const std::vector<bool>* valid) {
  const auto& config = m.base->config();
  check_sequence(config, input_ids);
  if (valid && valid->size() != input_ids.size()) {
    throw ShapeError("attention mask length " + std::to_string(valid->size()) +
                     " does not match input length " +
                     std::to_string(input_ids.size()));
  }
  const ad::Index len = static_cast<ad::Index>(input_ids.size());

  auto x = ad::add(ad::embedding_lookup(m.base->tok_emb, input_ids),
                   ad::embedding_lookup(m.base->pos_emb, iota_ids(input_ids.size())));

  std::optional<ad::Mask> pad_mask;
  if (valid) pad_mask = key_mask(len, *valid);

  for (std::size_t l = 0; l < m.base->enc_layers.size(); ++l) {
    const auto& layer = m.base->enc_layers[l];
    auto normed = layer_norm_rows(x, layer.ln1_g, layer.ln1_b);
    x = ad::add(x, attention(normed, normed, layer.self_attn, config.n_heads,
                             pad_mask ? &*pad_mask : nullptr));
    if (m.adapters) x = m.adapters->enc[l].self_attn.forward(x);

    auto normed2 = layer_norm_rows(x, layer.ln2_g, layer.ln2_b);
    x = ad::add(x, feed_forward(normed2, layer.ffn));
    if (m.adapters) x = m.adapters->enc[l].ffn.forward(x);
  }
  return layer_norm_rows(x, m.base->enc_final_g, m.base->enc_final_b);
}

Tensor decoder_logits(const ModelView& m, const Tensor& enc_states,
                      const std::vector<bool>* enc_valid,
                      const std::vector<int>& decoder_input_ids) {
  const auto& config = m.base->config();
  check_sequence(config, decoder_input_ids);
  if (decoder_input_ids.front() != tok::bos) {
    throw ConfigError("decoder input must begin with the start-of-sequence id");
  }
  const ad::Index len = static_cast<ad::Index>(decoder_input_ids.size());

  auto x = ad::add(
      ad::embedding_lookup(m.base->tok_emb, decoder_input_ids),
      ad::embedding_lookup(m.base->pos_emb, iota_ids(decoder_input_ids.size())));

  const ad::Mask causal = causal_mask(len);
  std::optional<ad::Mask> cross_blocked;
  if (enc_valid) {
    if (static_cast<ad::Index>(enc_valid->size()) != enc_states.rows()) {
      throw ShapeError("encoder mask length " + std::to_string(enc_valid->size()) +
                       " does not match encoder states " + enc_states.shape_str());
    }
    cross_blocked = key_mask(len, *enc_valid);
  }

  for (std::size_t l = 0; l < m.base->dec_layers.size(); ++l) {
    const auto& layer = m.base->dec_layers[l];
    auto normed = layer_norm_rows(x, layer.ln1_g, layer.ln1_b);
    x = ad::add(x, attention(normed, normed, layer.self_attn, config.n_heads,
                             &causal));
    if (m.adapters) x = m.adapters->dec[l].self_attn.forward(x);

    auto normed2 = layer_norm_rows(x, layer.ln2_g, layer.ln2_b);
    x = ad::add(x, attention(normed2, enc_states, layer.cross_attn,
                             config.n_heads,
                             cross_blocked ? &*cross_blocked : nullptr));
    if (m.adapters) x = m.adapters->dec[l].cross_attn.forward(x);

    auto normed3 = layer_norm_rows(x, layer.ln3_g, layer.ln3_b);
    x = ad::add(x, feed_forward(normed3, layer.ffn));
    if (m.adapters) x = m.adapters->dec[l].ffn.forward(x);
  }
  x = layer_norm_rows(x, m.base->dec_final_g, m.base->dec_final_b);
  return ad::add_rowwise(ad::matmul(x, m.base->out_proj), m.base->out_bias);
}

Tensor decode_step(const ModelView& m, const Tensor& enc_states,
                   const std::vector<bool>* enc_valid,
                   const std::vector<int>& prefix_ids) {
  auto logits = decoder_logits(m, enc_states, enc_valid, prefix_ids);
  return ad::slice_rows(logits, logits.rows() - 1, 1);
}

std::int64_t count_adapter_params(const ModelConfig& config) {
  const std::int64_t d = config.d_model;
  const std::int64_t b = config.adapter_bottleneck;
  const std::int64_t per_adapter = d * b + b + b * d + d;
  const std::int64_t count = 2 * config.n_enc_layers + 3 * config.n_dec_layers;
  return count * per_adapter;
}

double param_ratio(const ModelConfig& config, std::int64_t base_param_count) {
  if (base_param_count <= 0) {
    throw ConfigError("base parameter count must be positive");
  }
  return static_cast<double>(count_adapter_params(config)) /
         static_cast<double>(base_param_count);
}

std::int64_t count_params(const BaseWeights& base) {
  std::int64_t total = 0;
  for (const auto& [name, p] : base.named_params()) total += p.size();
  return total;
}

std::vector<Matrix> snapshot_values(
    const std::vector<std::pair<std::string, Tensor>>& params) {
  std::vector<Matrix> out;
  out.reserve(params.size());
  for (const auto& [name, p] : params) out.push_back(p.value());
  return out;
}

void restore_values(std::vector<std::pair<std::string, Tensor>>& params,
                    const std::vector<Matrix>& snapshot) {
  if (params.size() != snapshot.size()) {
    throw ConfigError("snapshot size mismatch");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    params[i].second.mutable_value() = snapshot[i];
  }
}

}  // namespace qrew
