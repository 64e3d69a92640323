#include "qrew/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "qrew/errors.hpp"

namespace qrew {

using json = nlohmann::json;

namespace {

const std::set<std::string> kPronouns = {
    "he",  "his",   "him",  "she",  "her", "hers", "they",
    "their", "them", "it",  "its",  "this", "that"};

std::string line_tag(std::size_t line_no) {
  return "line " + std::to_string(line_no) + ": ";
}

TokenSeq tokenize_field(const json& value, const char* field,
                        std::size_t line_no) {
  if (!value.is_string()) {
    throw SchemaError(line_tag(line_no) + "field '" + field +
                      "' must be a string");
  }
  try {
    return tokenize(value.get<std::string>());
  } catch (const EmptyTextError&) {
    throw SchemaError(line_tag(line_no) + "field '" + field + "' is empty");
  }
}

const json& require_field(const json& obj, const char* field,
                          std::size_t line_no) {
  auto it = obj.find(field);
  if (it == obj.end()) {
    throw SchemaError(line_tag(line_no) + "missing field '" + field + "'");
  }
  return *it;
}

}  // namespace

void PartitionScheme::validate() const {
  if (classes.empty()) {
    throw InvalidSchemeError("scheme has no classes");
  }
  auto sorted = classes;
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const IntervalClass& a, const IntervalClass& b) {
                     return a.lo < b.lo || (a.lo == b.lo && a.hi < b.hi);
                   });
  for (const auto& c : sorted) {
    if (c.lo > c.hi || (c.lo == c.hi && !(c.lo_closed && c.hi_closed))) {
      throw InvalidSchemeError("interval '" + c.label + "' is empty");
    }
  }
  if (!(sorted.front().lo == 0.0 && sorted.front().lo_closed)) {
    throw InvalidSchemeError("scheme does not cover 0");
  }
  if (!(sorted.back().hi == 1.0 && sorted.back().hi_closed)) {
    throw InvalidSchemeError("scheme does not cover 1");
  }
  for (std::size_t i = 1; i < sorted.size(); ++i) {
    const auto& prev = sorted[i - 1];
    const auto& cur = sorted[i];
    if (prev.hi != cur.lo) {
      throw InvalidSchemeError("gap or overlap between '" + prev.label +
                               "' and '" + cur.label + "'");
    }
    // Exactly one side owns the junction point.
    if (prev.hi_closed == cur.lo_closed) {
      throw InvalidSchemeError("boundary " + std::to_string(prev.hi) +
                               " is " + (prev.hi_closed ? "doubly" : "un") +
                               "covered between '" + prev.label + "' and '" +
                               cur.label + "'");
    }
  }
}

const std::string& PartitionScheme::label_for(double z) const {
  for (const auto& c : classes) {
    if (c.contains(z)) return c.label;
  }
  throw ScoreRangeError("score " + std::to_string(z) +
                        " not covered by the scheme");
}

PartitionScheme PartitionScheme::table3() {
  return PartitionScheme{{
      {"hard", 0.0, 0.2, true, true},
      {"medium", 0.2, 0.5, false, true},
      {"easy", 0.5, 1.0, false, true},
  }};
}

PartitionScheme PartitionScheme::table3_camera_ready() {
  return PartitionScheme{{
      {"hard", 0.0, 0.2, true, false},
      {"medium", 0.2, 0.5, true, false},
      {"easy", 0.5, 1.0, true, true},
  }};
}

PartitionScheme PartitionScheme::equal_bins_plus_top(int k) {
  if (k < 1) throw InvalidSchemeError("class count must be >= 1");
  PartitionScheme scheme;
  if (k == 1) {
    scheme.classes.push_back({"c0", 0.0, 1.0, true, true});
    return scheme;
  }
  const double width = 1.0 / (k - 1);
  for (int j = 0; j + 1 < k; ++j) {
    IntervalClass c;
    c.label = "c" + std::to_string(j);
    c.lo = j * width;
    c.hi = (j + 1 == k - 1) ? 1.0 : (j + 1) * width;
    c.lo_closed = (j == 0);
    c.hi_closed = (j + 1 < k - 1);
    scheme.classes.push_back(c);
  }
  scheme.classes.push_back({"c" + std::to_string(k - 1), 1.0, 1.0, true, true});
  return scheme;
}

PartitionScheme PartitionScheme::by_name(const std::string& name) {
  if (name == "table3") return table3();
  if (name == "table3-cr") return table3_camera_ready();
  if (name.rfind("bins", 0) == 0) {
    return equal_bins_plus_top(std::stoi(name.substr(4)));
  }
  throw ConfigError("unknown partition scheme '" + name + "'");
}

std::vector<UtteranceRecord> load_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in.good()) {
    throw IoError("cannot open corpus file: " + path);
  }
  std::vector<UtteranceRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(line_tag(line_no) + e.what());
    }
    if (!obj.is_object()) {
      throw ParseError(line_tag(line_no) + "record is not a JSON object");
    }
    UtteranceRecord rec;
    const json& did = require_field(obj, "dialogue_id", line_no);
    if (!did.is_string()) {
      throw SchemaError(line_tag(line_no) + "field 'dialogue_id' must be a string");
    }
    rec.dialogue_id = did.get<std::string>();
    const json& turn = require_field(obj, "turn", line_no);
    if (!turn.is_number_integer() || turn.get<int>() < 0) {
      throw SchemaError(line_tag(line_no) + "field 'turn' must be an integer >= 0");
    }
    rec.turn_index = turn.get<int>();
    rec.question = tokenize_field(require_field(obj, "question", line_no),
                                  "question", line_no);
    rec.rewrite = tokenize_field(require_field(obj, "rewrite", line_no),
                                 "rewrite", line_no);
    const json& hist = require_field(obj, "history", line_no);
    if (!hist.is_array()) {
      throw SchemaError(line_tag(line_no) + "field 'history' must be an array");
    }
    for (const auto& h : hist) {
      rec.history.push_back(tokenize_field(h, "history", line_no));
    }
    if (rec.turn_index > 0 && rec.history.empty()) {
      throw SchemaError(line_tag(line_no) +
                        "non-initial turn requires non-empty history");
    }
    if (auto it = obj.find("class"); it != obj.end() && !it->is_null()) {
      if (!it->is_string()) {
        throw SchemaError(line_tag(line_no) + "field 'class' must be a string");
      }
      rec.class_label = it->get<std::string>();
    }
    records.push_back(std::move(rec));
  }
  return records;
}

void save_corpus(const std::vector<UtteranceRecord>& records,
                 const std::string& path) {
  std::ofstream out(path);
  if (!out.good()) {
    throw IoError("cannot write corpus file: " + path);
  }
  for (const auto& rec : records) {
    json obj;
    obj["dialogue_id"] = rec.dialogue_id;
    obj["turn"] = rec.turn_index;
    obj["question"] = join_tokens(rec.question);
    json hist = json::array();
    for (const auto& h : rec.history) hist.push_back(join_tokens(h));
    obj["history"] = hist;
    obj["rewrite"] = join_tokens(rec.rewrite);
    if (rec.class_label) obj["class"] = *rec.class_label;
    out << obj.dump() << "\n";
  }
}

std::vector<RuleAnnotation> load_annotations(const std::string& path) {
  std::ifstream in(path);
  if (!in.good()) {
    throw IoError("cannot open annotation file: " + path);
  }
  std::vector<RuleAnnotation> annotations;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(line_tag(line_no) + e.what());
    }
    RuleAnnotation ann;
    const json& rid = require_field(obj, "record_id", line_no);
    if (!rid.is_string()) {
      throw SchemaError(line_tag(line_no) + "field 'record_id' must be a string");
    }
    ann.record_id = rid.get<std::string>();
    const json& rules = require_field(obj, "rules", line_no);
    if (!rules.is_array() || rules.empty()) {
      throw SchemaError(line_tag(line_no) + "field 'rules' must be a non-empty array");
    }
    for (const auto& r : rules) {
      if (!r.is_number_integer() || r.get<int>() < 1 || r.get<int>() > 7) {
        throw SchemaError(line_tag(line_no) + "rule ids must lie in 1..7");
      }
      ann.rules.push_back(r.get<int>());
    }
    annotations.push_back(std::move(ann));
  }
  return annotations;
}

TokenSeq pronoun_replace(const TokenSeq& q, const TokenSeq& q_rewrite) {
  // Exactly one pronoun occurrence in q, else no substitution.
  std::size_t pronoun_pos = q.size();
  int pronoun_count = 0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    if (kPronouns.count(q[i])) {
      ++pronoun_count;
      pronoun_pos = i;
    }
  }
  if (pronoun_count != 1) return q;

  // The rewrite must keep q's prefix before and suffix after the pronoun,
  // with a non-empty span in between.
  const std::size_t suffix_len = q.size() - pronoun_pos - 1;
  if (q_rewrite.size() < pronoun_pos + suffix_len + 1) return q;
  for (std::size_t i = 0; i < pronoun_pos; ++i) {
    if (q[i] != q_rewrite[i]) return q;
  }
  for (std::size_t i = 0; i < suffix_len; ++i) {
    if (q[q.size() - 1 - i] != q_rewrite[q_rewrite.size() - 1 - i]) return q;
  }
  return q_rewrite;
}

double difficulty_score(const UtteranceRecord& rec, bool apply_pronoun_rule,
                        const BleuConfig& cfg) {
  const TokenSeq& hyp =
      apply_pronoun_rule ? pronoun_replace(rec.question, rec.rewrite)
                         : rec.question;
  return sentence_bleu(hyp, rec.rewrite, cfg).value;
}

DifficultyPartition partition(const std::vector<UtteranceRecord>& records,
                              const std::vector<double>& scores,
                              const PartitionScheme& scheme) {
  if (records.size() != scores.size()) {
    throw ConfigError("one score per record required: " +
                      std::to_string(records.size()) + " records vs " +
                      std::to_string(scores.size()) + " scores");
  }
  scheme.validate();
  DifficultyPartition part;
  part.scheme = scheme;
  for (const auto& c : scheme.classes) part.labels.push_back(c.label);
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (scores[i] < 0.0 || scores[i] > 1.0 || std::isnan(scores[i])) {
      throw ScoreRangeError("score " + std::to_string(scores[i]) +
                            " for record " + records[i].record_id() +
                            " lies outside [0, 1]");
    }
    part.assignments[records[i].record_id()] = scheme.label_for(scores[i]);
  }
  return part;
}

DifficultyPartition tercile_partition(const std::vector<UtteranceRecord>& records,
                                      TercileScorer scorer,
                                      bool apply_pronoun_rule,
                                      const BleuConfig& cfg) {
  if (records.size() < 3) {
    throw TooFewRecordsError("tercile partition needs at least 3 records, got " +
                             std::to_string(records.size()));
  }
  std::vector<double> scores(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& rec = records[i];
    switch (scorer) {
      case TercileScorer::len_q:
        scores[i] = static_cast<double>(rec.question.size());
        break;
      case TercileScorer::len_rewrite:
        scores[i] = static_cast<double>(rec.rewrite.size());
        break;
      case TercileScorer::len_ratio:
        scores[i] = static_cast<double>(rec.question.size()) /
                    static_cast<double>(rec.rewrite.size());
        break;
      case TercileScorer::rouge_l:
        scores[i] = qrew::rouge_l(rec.question, rec.rewrite).value;
        break;
      case TercileScorer::bleu:
        scores[i] = difficulty_score(rec, apply_pronoun_rule, cfg);
        break;
    }
  }
  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  const std::size_t n = records.size();
  const std::size_t base = n / 3;
  const std::size_t rem = n % 3;
  DifficultyPartition part;
  part.labels = {"t1", "t2", "t3"};
  std::size_t cursor = 0;
  for (std::size_t c = 0; c < 3; ++c) {
    const std::size_t size = base + (c < rem ? 1 : 0);
    for (std::size_t k = 0; k < size; ++k, ++cursor) {
      part.assignments[records[order[cursor]].record_id()] = part.labels[c];
    }
  }
  return part;
}

RuleFrequency rule_frequency(const std::vector<RuleAnnotation>& annotations,
                             const DifficultyPartition& part) {
  RuleFrequency freq;
  for (const auto& label : part.labels) {
    freq.counts[label];
    freq.distribution[label];
  }
  for (const auto& ann : annotations) {
    auto it = part.assignments.find(ann.record_id);
    if (it == part.assignments.end()) {
      throw UnknownRecordError("annotation references unknown record '" +
                               ann.record_id + "'");
    }
    for (int rule : ann.rules) ++freq.counts[it->second][rule];
  }
  for (auto& [label, counts] : freq.counts) {
    int total = 0;
    for (const auto& [rule, count] : counts) total += count;
    for (const auto& [rule, count] : counts) {
      freq.distribution[label][rule] =
          total > 0 ? static_cast<double>(count) / total : 0.0;
    }
  }
  return freq;
}

void convert_canard(const std::string& canard_json_path,
                    const std::string& out_jsonl_path) {
  std::ifstream in(canard_json_path);
  if (!in.good()) {
    throw IoError("cannot open CANARD file: " + canard_json_path);
  }
  json doc;
  try {
    in >> doc;
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("CANARD file: ") + e.what());
  }
  if (!doc.is_array()) {
    throw SchemaError("CANARD release file must be a JSON array");
  }
  std::vector<UtteranceRecord> records;
  std::size_t idx = 0;
  for (const auto& item : doc) {
    ++idx;
    UtteranceRecord rec;
    rec.dialogue_id = require_field(item, "QuAC_dialog_id", idx).get<std::string>();
    const int qno = require_field(item, "Question_no", idx).get<int>();
    rec.turn_index = qno > 0 ? qno - 1 : 0;
    rec.question = tokenize_field(require_field(item, "Question", idx), "Question", idx);
    rec.rewrite = tokenize_field(require_field(item, "Rewrite", idx), "Rewrite", idx);
    for (const auto& h : require_field(item, "History", idx)) {
      rec.history.push_back(tokenize_field(h, "History", idx));
    }
    records.push_back(std::move(rec));
  }
  save_corpus(records, out_jsonl_path);
}

}  // namespace qrew
