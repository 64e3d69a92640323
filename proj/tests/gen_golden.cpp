// Emits the golden metric fixture from the brute-force oracle. The fixture
// is committed under tests/data/ and consumed by the unit and acceptance
// suites; regenerate with:  gen_golden > tests/data/golden_metrics.jsonl

#include <iostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "oracle_metrics.hpp"

using qrew::oracle::Tokens;
using json = nlohmann::json;

namespace {

void emit(const Tokens& hyp, const Tokens& ref, const std::string& metric) {
  double expected = 0.0;
  qrew::oracle::BleuOptions opt;
  if (metric == "bleu") {
    expected = qrew::oracle::bleu(hyp, ref, opt);
  } else if (metric == "bleu_nosmooth") {
    opt.exponential_smoothing = false;
    expected = qrew::oracle::bleu(hyp, ref, opt);
  } else if (metric == "bleu_max1_nosmooth") {
    opt.max_n = 1;
    opt.exponential_smoothing = false;
    expected = qrew::oracle::bleu(hyp, ref, opt);
  } else if (metric == "rouge1") {
    expected = qrew::oracle::rouge_n(hyp, ref, 1);
  } else if (metric == "rouge2") {
    expected = qrew::oracle::rouge_n(hyp, ref, 2);
  } else if (metric == "rougeL") {
    expected = qrew::oracle::rouge_l(hyp, ref);
  } else {
    std::cerr << "unknown metric " << metric << "\n";
    std::exit(1);
  }
  json line;
  line["hyp"] = hyp;
  line["ref"] = ref;
  line["metric"] = metric;
  line["expected"] = expected;
  std::cout << line.dump() << "\n";
}

}  // namespace

int main() {
  const Tokens t1q = {"did", "he", "win", "any", "awards", "?"};
  const Tokens t1r = {"did", "robert", "fripp", "win", "any", "awards", "?"};
  const Tokens t1q_nopunct = {"did", "he", "win", "any", "awards"};
  const Tokens t1r_nopunct = {"did", "robert", "fripp", "win", "any", "awards"};
  const Tokens why = {"why", "?"};
  const Tokens why_long = {"why", "did", "the", "band", "split", "?"};
  const Tokens abc = {"a", "b", "c"};
  const Tokens acd = {"a", "c", "d"};
  const Tokens rep = {"a", "a", "b", "a"};
  const Tokens rep_ref = {"a", "b"};
  const Tokens disj = {"x", "y", "z"};
  const Tokens longer = {"what", "happened", "to", "the", "band", "in", "1998", "?"};
  const Tokens shorter = {"what", "happened", "in", "1998", "?"};
  const Tokens single = {"what"};

  emit(t1r, t1r, "bleu");
  emit(t1q_nopunct, t1r_nopunct, "bleu");
  emit(t1q, t1r, "bleu");
  emit(t1q, t1r, "bleu_nosmooth");
  emit(why, why_long, "bleu");
  emit(why, why, "bleu");
  emit(abc, acd, "bleu");
  emit(rep, rep_ref, "bleu");
  emit(rep, rep_ref, "bleu_max1_nosmooth");
  emit(disj, abc, "bleu_nosmooth");
  emit(longer, shorter, "bleu");
  emit(shorter, longer, "bleu");
  emit(single, abc, "bleu");
  emit(abc, acd, "rouge1");
  emit(abc, acd, "rouge2");
  emit(abc, acd, "rougeL");
  emit(t1q, t1r, "rougeL");
  emit(rep, rep_ref, "rouge1");
  emit(longer, shorter, "rougeL");
  emit(disj, abc, "rougeL");
  return 0;
}
