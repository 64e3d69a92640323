#ifndef QREW_MODEL_HPP
#define QREW_MODEL_HPP

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "qrew/corpus.hpp"
#include "qrew/tensor.hpp"

namespace qrew {

// Special token ids; regular vocabulary starts right after.
namespace tok {
constexpr int pad = 0;
constexpr int bos = 1;
constexpr int eos = 2;
constexpr int sep = 3;  // the ||| separator between question and history
constexpr int unk = 4;
constexpr int first_regular = 5;
}  // namespace tok

struct ModelConfig {
  int vocab_size = 0;
  int d_model = 32;
  int n_heads = 2;
  int n_enc_layers = 2;
  int n_dec_layers = 2;
  int ffn_dim = 64;
  int adapter_bottleneck = 8;
  int max_seq_len = 64;
  double dropout = 0.0;

  void validate() const;
};

// Frequency-ranked vocabulary with a configurable cap; ties broken
// lexicographically so builds are deterministic.
class Vocab {
 public:
  Vocab() = default;
  static Vocab build(const std::vector<UtteranceRecord>& records, int cap);
  static Vocab from_tokens(std::vector<std::string> regular_tokens);

  int id(const std::string& token) const;  // tok::unk when absent
  const std::string& token(int id) const;
  int size() const { return static_cast<int>(id_to_token_.size()); }

  // Regular (non-special) tokens in id order, for serialization.
  std::vector<std::string> regular_tokens() const;

  std::vector<int> ids(const TokenSeq& tokens) const;
  // Drops special tokens; used to turn decoder output into text.
  TokenSeq tokens_from_ids(const std::vector<int>& ids) const;

 private:
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, int> token_to_id_;
};

// `question ||| history-1 ||| history-2 ...`, clipped to max_seq_len.
std::vector<int> assemble_input_ids(const Vocab& vocab,
                                    const UtteranceRecord& rec,
                                    int max_seq_len);
// rewrite tokens plus trailing eos (teacher-forcing targets).
std::vector<int> target_ids(const Vocab& vocab, const TokenSeq& rewrite);

// Shared encoder-decoder parameters (the frozen base in adapter mode).
class BaseWeights {
 public:
  BaseWeights() = default;
  BaseWeights(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }

  // Deterministic (name, tensor) list; order defines the fingerprint and
  // checkpoint layout.
  std::vector<std::pair<std::string, ad::Tensor>> named_params() const;

  // SHA-256 over all parameter bytes in named_params order.
  std::string fingerprint() const;

  void set_requires_grad(bool on);

  struct Attention {
    ad::Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  };
  struct Ffn {
    ad::Tensor w1, b1, w2, b2;
  };
  struct EncLayer {
    ad::Tensor ln1_g, ln1_b, ln2_g, ln2_b;
    Attention self_attn;
    Ffn ffn;
  };
  struct DecLayer {
    ad::Tensor ln1_g, ln1_b, ln2_g, ln2_b, ln3_g, ln3_b;
    Attention self_attn;
    Attention cross_attn;
    Ffn ffn;
  };

  ad::Tensor tok_emb, pos_emb;
  std::vector<EncLayer> enc_layers;
  std::vector<DecLayer> dec_layers;
  ad::Tensor enc_final_g, enc_final_b, dec_final_g, dec_final_b;
  ad::Tensor out_proj, out_bias;

 private:
  ModelConfig config_;
};

// One residual bottleneck module: x' = f2(tanh(f1(x))) + x.
struct Adapter {
  ad::Tensor w_down, b_down, w_up, b_up;

  ad::Tensor forward(const ad::Tensor& x) const;
  std::int64_t param_count() const;
};

// The 5N adapters of one private model: two per encoder layer
// (post-self-attention, post-FFN) and three per decoder layer
// (post-self-attention, post-cross-attention, post-FFN).
class AdapterSet {
 public:
  AdapterSet() = default;
  // Down-projections start at N(0, 0.02^2) from `seed`; up-projections at
  // zero, so a fresh adapter set is the identity on every input.
  AdapterSet(const ModelConfig& config, std::string class_label,
             std::uint64_t seed);

  const std::string& class_label() const { return class_label_; }
  void set_class_label(std::string label) { class_label_ = std::move(label); }

  int adapter_count() const;

  std::vector<std::pair<std::string, ad::Tensor>> named_params() const;
  std::string fingerprint() const;
  void set_requires_grad(bool on);

  struct EncSlots {
    Adapter self_attn, ffn;
  };
  struct DecSlots {
    Adapter self_attn, cross_attn, ffn;
  };
  std::vector<EncSlots> enc;
  std::vector<DecSlots> dec;

 private:
  std::string class_label_;
};

// Base plus optional adapters, as used for one forward pass.
struct ModelView {
  const BaseWeights* base = nullptr;
  const AdapterSet* adapters = nullptr;
};

// Full encoder stack; `valid`, when given, marks real (non-pad) positions
// that may be attended to. Throws OOVTokenError / SequenceTooLongError.
ad::Tensor encode(const ModelView& m, const std::vector<int>& input_ids,
                  const std::vector<bool>* valid = nullptr);

// Teacher-forcing decoder pass: logits for every position of
// `decoder_input_ids` (which must start with bos). Causal self-attention,
// cross-attention into `enc_states`.
ad::Tensor decoder_logits(const ModelView& m, const ad::Tensor& enc_states,
                          const std::vector<bool>* enc_valid,
                          const std::vector<int>& decoder_input_ids);

// Next-token logits after the given prefix; row vector [1, |V|].
ad::Tensor decode_step(const ModelView& m, const ad::Tensor& enc_states,
                       const std::vector<bool>* enc_valid,
                       const std::vector<int>& prefix_ids);

// Parameter accounting for the adapter stack:
// (2 N_enc + 3 N_dec) * (d b + b + b d + d).
std::int64_t count_adapter_params(const ModelConfig& config);
double param_ratio(const ModelConfig& config, std::int64_t base_param_count);
std::int64_t count_params(const BaseWeights& base);

// Deep copies of parameter values for best-epoch snapshots.
std::vector<ad::Matrix> snapshot_values(
    const std::vector<std::pair<std::string, ad::Tensor>>& params);
void restore_values(std::vector<std::pair<std::string, ad::Tensor>>& params,
                    const std::vector<ad::Matrix>& snapshot);

}  // namespace qrew

#endif  // QREW_MODEL_HPP
