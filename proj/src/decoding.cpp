#include "qrew/decoding.hpp"

#include <algorithm>
#include <cmath>

#include "qrew/errors.hpp"

namespace qrew {

namespace {

Eigen::VectorXd log_softmax(const Eigen::VectorXd& logits) {
  const double mx = logits.maxCoeff();
  const double lse = mx + std::log((logits.array() - mx).exp().sum());
  return logits.array() - lse;
}

struct Beam {
  std::vector<int> prefix;  // starts with bos
  double logp = 0.0;
  bool finished = false;

  int generated() const { return static_cast<int>(prefix.size()) - 1; }
  double normalized() const {
    return logp / std::max(1, generated());
  }
};

bool beam_less(const Beam& a, const Beam& b) {
  if (a.normalized() != b.normalized()) return a.normalized() > b.normalized();
  return a.prefix < b.prefix;
}

DecodeResult to_result(const Beam& beam) {
  DecodeResult result;
  result.ids.assign(beam.prefix.begin() + 1, beam.prefix.end());
  result.finished = beam.finished;
  if (result.finished && !result.ids.empty() && result.ids.back() == tok::eos) {
    result.ids.pop_back();
  }
  result.score = beam.normalized();
  return result;
}

}  // namespace

DecodeResult beam_decode(const StepFn& step, int beam_width, int max_len) {
  if (beam_width < 1) throw ConfigError("beam width must be >= 1");
  if (max_len < 1) throw ConfigError("max decode length must be >= 1");

  std::vector<Beam> beams = {Beam{{tok::bos}, 0.0, false}};
  for (int t = 0; t < max_len; ++t) {
    bool any_open = false;
    std::vector<Beam> candidates;
    for (const auto& beam : beams) {
      if (beam.finished) {
        candidates.push_back(beam);
        continue;
      }
      any_open = true;
      const Eigen::VectorXd logp = log_softmax(step(beam.prefix));
      // Top beam_width continuations, ties toward the smaller id.
      std::vector<int> order(logp.size());
      for (int k = 0; k < logp.size(); ++k) order[k] = k;
      const int take = std::min<int>(beam_width, static_cast<int>(logp.size()));
      std::partial_sort(order.begin(), order.begin() + take, order.end(),
                        [&](int a, int b) {
                          return logp(a) > logp(b) || (logp(a) == logp(b) && a < b);
                        });
      for (int k = 0; k < take; ++k) {
        Beam next = beam;
        next.prefix.push_back(order[k]);
        next.logp += logp(order[k]);
        next.finished = (order[k] == tok::eos);
        candidates.push_back(std::move(next));
      }
    }
    if (!any_open) break;
    std::sort(candidates.begin(), candidates.end(), beam_less);
    if (static_cast<int>(candidates.size()) > beam_width) {
      candidates.resize(beam_width);
    }
    beams = std::move(candidates);
  }
  std::sort(beams.begin(), beams.end(), beam_less);
  return to_result(beams.front());
}

DecodeResult greedy_decode(const StepFn& step, int max_len) {
  if (max_len < 1) throw ConfigError("max decode length must be >= 1");
  Beam beam{{tok::bos}, 0.0, false};
  for (int t = 0; t < max_len && !beam.finished; ++t) {
    const Eigen::VectorXd logp = log_softmax(step(beam.prefix));
    int best = 0;
    for (int k = 1; k < logp.size(); ++k) {
      if (logp(k) > logp(best)) best = k;
    }
    beam.prefix.push_back(best);
    beam.logp += logp(best);
    beam.finished = (best == tok::eos);
  }
  return to_result(beam);
}

StepFn model_step_fn(const ModelView& m, const ad::Tensor& enc_states,
                     const std::vector<bool>* enc_valid) {
  std::shared_ptr<std::vector<bool>> mask;
  if (enc_valid) mask = std::make_shared<std::vector<bool>>(*enc_valid);
  return [m, enc_states, mask](const std::vector<int>& prefix) {
    ad::NoGradGuard guard;
    auto logits = decode_step(m, enc_states, mask ? mask.get() : nullptr, prefix);
    return Eigen::VectorXd(logits.value().row(0).transpose());
  };
}

TokenSeq decode_record(const ModelView& m, const Vocab& vocab,
                       const UtteranceRecord& rec, int beam_width,
                       int max_len) {
  ad::NoGradGuard guard;
  const auto input = assemble_input_ids(vocab, rec, m.base->config().max_seq_len);
  auto enc_states = encode(m, input);
  auto result = beam_width == 1
                    ? greedy_decode(model_step_fn(m, enc_states), max_len)
                    : beam_decode(model_step_fn(m, enc_states), beam_width, max_len);
  return vocab.tokens_from_ids(result.ids);
}

}  // namespace qrew
