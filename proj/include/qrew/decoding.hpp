#ifndef QREW_DECODING_HPP
#define QREW_DECODING_HPP

#include <functional>
#include <vector>

#include <Eigen/Dense>

#include "qrew/model.hpp"

namespace qrew {

// Next-token logits for the generated prefix (prefix always starts with
// bos). SAF fusion and hand-built test models plug in here alongside the
// transformer.
using StepFn = std::function<Eigen::VectorXd(const std::vector<int>& prefix)>;

struct DecodeResult {
  std::vector<int> ids;    // generated ids, trailing eos stripped
  double score = 0.0;      // log probability / generated length
  bool finished = false;   // ended on eos rather than the length budget
};

// Beam search over length-normalized log probability (normalization
// exponent 1.0; every generated token, including eos, contributes one
// log-probability term). Ties break toward smaller token ids, then
// lexicographically smaller sequences, so decoding is deterministic.
DecodeResult beam_decode(const StepFn& step, int beam_width, int max_len);

// Independent argmax loop (not beam_decode with width 1, so the
// equivalence of the two is a checkable contract).
DecodeResult greedy_decode(const StepFn& step, int max_len);

// Step function for a transformer model over fixed encoder states.
StepFn model_step_fn(const ModelView& m, const ad::Tensor& enc_states,
                     const std::vector<bool>* enc_valid = nullptr);

// Full pipeline for one record: encode, decode, map ids back to tokens.
TokenSeq decode_record(const ModelView& m, const Vocab& vocab,
                       const UtteranceRecord& rec, int beam_width,
                       int max_len);

}  // namespace qrew

#endif  // QREW_DECODING_HPP
