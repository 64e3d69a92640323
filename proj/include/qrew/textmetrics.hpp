#ifndef QREW_TEXTMETRICS_HPP
#define QREW_TEXTMETRICS_HPP

#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace qrew {

// Ordered list of lowercase tokens. Tokens never contain whitespace.
using TokenSeq = std::vector<std::string>;

struct BleuConfig {
  enum class Smoothing { none, exponential };

  int max_n = 4;
  Smoothing smoothing = Smoothing::exponential;
  bool brevity_penalty = true;
};

// Result of a sentence-level metric. `precisions` and `brevity_penalty`
// are filled for BLEU only; `precisions` holds the post-smoothing values,
// so value == brevity_penalty * geometric mean of precisions.
struct MetricScore {
  double value = 0.0;
  std::string metric_name;
  std::vector<double> precisions;
  double brevity_penalty = 1.0;
};

// Lowercases, splits on whitespace, and detaches a trailing run of
// . , ? ! ' " from each chunk into standalone tokens ("why?" -> why ?).
// Throws EmptyTextError when the input is empty after trimming.
TokenSeq tokenize(std::string_view text);

// Multiset of contiguous n-grams. Keys are tokens joined with '\x1f'.
// Empty when n exceeds the sequence length; InvalidOrderError when n < 1.
std::unordered_map<std::string, int> ngram_counts(const TokenSeq& seq, int n);

// Sentence BLEU with clipped modified precisions and brevity penalty
// BP = min(1, exp(1 - |ref|/|hyp|)). Only n-gram orders with at least one
// hypothesis n-gram participate (effective order), so identical sequences
// score exactly 1.0 at any length. With Smoothing::exponential the k-th
// zero-count order (in increasing n) scores 1/(2^k * denom_n); with
// Smoothing::none any zero precision collapses the score to 0.
MetricScore sentence_bleu(const TokenSeq& hyp, const TokenSeq& ref,
                          const BleuConfig& cfg = {});

// ROUGE-N F1: P = clipped matches/|hyp n-grams|, R = clipped/|ref n-grams|.
MetricScore rouge_n(const TokenSeq& hyp, const TokenSeq& ref, int n);

// ROUGE-L F1 over the longest common subsequence.
MetricScore rouge_l(const TokenSeq& hyp, const TokenSeq& ref);

// Length of the longest common subsequence (exposed for reuse and tests).
std::size_t lcs_length(const TokenSeq& a, const TokenSeq& b);

std::string join_tokens(const TokenSeq& tokens, std::string_view sep = " ");

}  // namespace qrew

#endif  // QREW_TEXTMETRICS_HPP
