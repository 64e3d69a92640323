#include "qrew/textmetrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <sstream>

#include "qrew/errors.hpp"

namespace qrew {

namespace {

constexpr char kNgramSep = '\x1f';

bool is_detachable_punct(char c) {
  return c == '.' || c == ',' || c == '?' || c == '!' || c == '\'' || c == '"';
}

void require_non_empty(const TokenSeq& seq, const char* side) {
  if (seq.empty()) {
    throw EmptyTextError(std::string(side) + " token sequence is empty");
  }
}

int clipped_matches(const std::unordered_map<std::string, int>& hyp_counts,
                    const std::unordered_map<std::string, int>& ref_counts) {
  int matches = 0;
  for (const auto& [gram, count] : hyp_counts) {
    auto it = ref_counts.find(gram);
    if (it != ref_counts.end()) {
      matches += std::min(count, it->second);
    }
  }
  return matches;
}

MetricScore f1_score(std::string name, double precision, double recall) {
  MetricScore score;
  score.metric_name = std::move(name);
  score.value = (precision + recall > 0.0)
                    ? 2.0 * precision * recall / (precision + recall)
                    : 0.0;
  return score;
}

}  // namespace

TokenSeq tokenize(std::string_view text) {
  TokenSeq tokens;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t start = i;
    while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    if (i == start) continue;
    std::string chunk(text.substr(start, i - start));
    for (char& c : chunk) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));

    // Peel the trailing punctuation run off the chunk, preserving order.
    std::size_t end = chunk.size();
    while (end > 0 && is_detachable_punct(chunk[end - 1])) --end;
    if (end > 0) tokens.push_back(chunk.substr(0, end));
    for (std::size_t p = end; p < chunk.size(); ++p) tokens.push_back(std::string(1, chunk[p]));
  }
  if (tokens.empty()) {
    throw EmptyTextError("input text is empty after trimming");
  }
  return tokens;
}

std::unordered_map<std::string, int> ngram_counts(const TokenSeq& seq, int n) {
  if (n < 1) {
    throw InvalidOrderError("n-gram order must be >= 1, got " + std::to_string(n));
  }
  std::unordered_map<std::string, int> counts;
  if (seq.size() < static_cast<std::size_t>(n)) return counts;
  for (std::size_t i = 0; i + n <= seq.size(); ++i) {
    std::string key = seq[i];
    for (int j = 1; j < n; ++j) {
      key += kNgramSep;
      key += seq[i + j];
    }
    ++counts[key];
  }
  return counts;
}

MetricScore sentence_bleu(const TokenSeq& hyp, const TokenSeq& ref,
                          const BleuConfig& cfg) {
  require_non_empty(hyp, "hypothesis");
  require_non_empty(ref, "reference");
  if (cfg.max_n < 1 || cfg.max_n > 8) {
    throw ConfigError("BLEU max_n must lie in [1, 8], got " + std::to_string(cfg.max_n));
  }

  MetricScore score;
  score.metric_name = "bleu";

  const int effective_n =
      std::min<int>(cfg.max_n, static_cast<int>(hyp.size()));
  int zero_streak = 0;
  bool annihilated = false;
  for (int n = 1; n <= effective_n; ++n) {
    const auto hyp_counts = ngram_counts(hyp, n);
    const auto ref_counts = ngram_counts(ref, n);
    const int denom = static_cast<int>(hyp.size()) - n + 1;
    const int matches = clipped_matches(hyp_counts, ref_counts);
    double p;
    if (matches > 0) {
      p = static_cast<double>(matches) / denom;
    } else if (cfg.smoothing == BleuConfig::Smoothing::exponential) {
      ++zero_streak;
      p = 1.0 / (std::pow(2.0, zero_streak) * denom);
    } else {
      p = 0.0;
      annihilated = true;
    }
    score.precisions.push_back(p);
  }

  if (cfg.brevity_penalty && hyp.size() < ref.size()) {
    score.brevity_penalty =
        std::exp(1.0 - static_cast<double>(ref.size()) / hyp.size());
  }

  if (annihilated) {
    score.value = 0.0;
    return score;
  }
  double log_sum = 0.0;
  for (double p : score.precisions) log_sum += std::log(p);
  score.value = score.brevity_penalty *
                std::exp(log_sum / static_cast<double>(score.precisions.size()));
  return score;
}

MetricScore rouge_n(const TokenSeq& hyp, const TokenSeq& ref, int n) {
  require_non_empty(hyp, "hypothesis");
  require_non_empty(ref, "reference");
  const auto hyp_counts = ngram_counts(hyp, n);
  const auto ref_counts = ngram_counts(ref, n);
  int hyp_total = 0;
  for (const auto& [gram, count] : hyp_counts) hyp_total += count;
  int ref_total = 0;
  for (const auto& [gram, count] : ref_counts) ref_total += count;
  const int matches = clipped_matches(hyp_counts, ref_counts);
  const double p = hyp_total > 0 ? static_cast<double>(matches) / hyp_total : 0.0;
  const double r = ref_total > 0 ? static_cast<double>(matches) / ref_total : 0.0;
  return f1_score("rouge" + std::to_string(n), p, r);
}

std::size_t lcs_length(const TokenSeq& a, const TokenSeq& b) {
  // Two rolling rows of the classic DP table.
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = (a[i - 1] == b[j - 1]) ? prev[j - 1] + 1
                                      : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

MetricScore rouge_l(const TokenSeq& hyp, const TokenSeq& ref) {
  require_non_empty(hyp, "hypothesis");
  require_non_empty(ref, "reference");
  const double lcs = static_cast<double>(lcs_length(hyp, ref));
  const double p = lcs / static_cast<double>(hyp.size());
  const double r = lcs / static_cast<double>(ref.size());
  return f1_score("rougeL", p, r);
}

std::string join_tokens(const TokenSeq& tokens, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i > 0) out += sep;
    out += tokens[i];
  }
  return out;
}

}  // namespace qrew
