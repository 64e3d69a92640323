#ifndef QREW_CORPUS_HPP
#define QREW_CORPUS_HPP

#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "qrew/textmetrics.hpp"

namespace qrew {

// One (question, history, rewrite) tuple; the corpus atom.
struct UtteranceRecord {
  TokenSeq question;
  std::vector<TokenSeq> history;  // alternating prior questions/answers
  TokenSeq rewrite;
  std::string dialogue_id;
  int turn_index = 0;
  std::optional<std::string> class_label;

  std::string record_id() const {
    return dialogue_id + "#" + std::to_string(turn_index);
  }
};

struct IntervalClass {
  std::string label;
  double lo = 0.0;
  double hi = 1.0;
  bool lo_closed = true;
  bool hi_closed = true;

  bool contains(double z) const {
    const bool above = lo_closed ? z >= lo : z > lo;
    const bool below = hi_closed ? z <= hi : z < hi;
    return above && below;
  }
};

// Ordered interval scheme over [0, 1]. validate() checks the intervals are
// disjoint and jointly cover the unit interval, honoring closure flags.
struct PartitionScheme {
  std::vector<IntervalClass> classes;

  void validate() const;
  const std::string& label_for(double z) const;

  // hard [0,0.2], medium (0.2,0.5], easy (0.5,1].
  static PartitionScheme table3();
  // Camera-ready closure variant: hard [0,0.2), medium [0.2,0.5), easy [0.5,1].
  static PartitionScheme table3_camera_ready();
  // k-1 equal-width bins plus the singleton {1}; k=11 gives
  // [0,0.1], (0.1,0.2], ..., (0.9,1), 1. k=1 degenerates to [0,1].
  static PartitionScheme equal_bins_plus_top(int k);
  static PartitionScheme by_name(const std::string& name);
};

// Class labels per record. `scheme` is absent for rank-based partitions
// (terciles), where no interval structure exists.
struct DifficultyPartition {
  std::optional<PartitionScheme> scheme;
  std::vector<std::string> labels;  // class order for reporting
  std::unordered_map<std::string, std::string> assignments;  // record_id -> label
};

struct RuleAnnotation {
  std::string record_id;
  std::vector<int> rules;  // multiset over rule ids 1..7
};

struct RuleFrequency {
  // class label -> rule id -> count / normalized share
  std::map<std::string, std::map<int, int>> counts;
  std::map<std::string, std::map<int, double>> distribution;
};

enum class TercileScorer { len_q, len_rewrite, len_ratio, rouge_l, bleu };

// Line-delimited JSON, one record per line; fields dialogue_id (string),
// turn (int), question (string), history (array of strings), rewrite
// (string), optional class (string). Malformed line -> ParseError with the
// line number; missing or mistyped field -> SchemaError.
std::vector<UtteranceRecord> load_corpus(const std::string& path);
void save_corpus(const std::vector<UtteranceRecord>& records,
                 const std::string& path);

std::vector<RuleAnnotation> load_annotations(const std::string& path);

// Single-pronoun substitution detection. If q carries exactly one token
// from the pronoun list and replacing it by one contiguous span of
// q_rewrite reproduces q_rewrite exactly (longest common prefix/suffix
// around the pronoun), returns q_rewrite; otherwise q unchanged.
TokenSeq pronoun_replace(const TokenSeq& q, const TokenSeq& q_rewrite);

// z = BLEU(q or pronoun_replace(q, q'), q') with the rewrite as reference.
double difficulty_score(const UtteranceRecord& rec, bool apply_pronoun_rule,
                        const BleuConfig& cfg = {});

DifficultyPartition partition(const std::vector<UtteranceRecord>& records,
                              const std::vector<double>& scores,
                              const PartitionScheme& scheme);

// Ranks ascending by the chosen score (ties by record order) and splits
// into three classes t1/t2/t3 whose sizes differ by at most one, remainder
// to the earlier classes.
DifficultyPartition tercile_partition(const std::vector<UtteranceRecord>& records,
                                      TercileScorer scorer,
                                      bool apply_pronoun_rule = true,
                                      const BleuConfig& cfg = {});

RuleFrequency rule_frequency(const std::vector<RuleAnnotation>& annotations,
                             const DifficultyPartition& partition);

// Maps the public CANARD release layout (one JSON array of objects with
// History / QuAC_dialog_id / Question / Question_no / Rewrite) onto the
// corpus JSONL format.
void convert_canard(const std::string& canard_json_path,
                    const std::string& out_jsonl_path);

}  // namespace qrew

#endif  // QREW_CORPUS_HPP
