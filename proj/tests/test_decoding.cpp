#include "qrew/decoding.hpp"

#include <cmath>
#include <map>
#include <random>

#include <doctest.h>

#include "qrew/errors.hpp"

using namespace qrew;

namespace {

// Table-driven step function over a small vocabulary. Unlisted prefixes
// fall back to uniform logits.
struct TableModel {
  int vocab = 5;
  std::map<std::vector<int>, Eigen::VectorXd> rows;

  StepFn step() const {
    return [this](const std::vector<int>& prefix) {
      auto it = rows.find(prefix);
      if (it != rows.end()) return it->second;
      return Eigen::VectorXd(Eigen::VectorXd::Zero(vocab));
    };
  }
};

Eigen::VectorXd logits_from_probs(std::initializer_list<double> probs) {
  Eigen::VectorXd out(static_cast<int>(probs.size()));
  int i = 0;
  for (double p : probs) out(i++) = std::log(p);
  return out;
}

// The fixture where greedy commits to token 3 but the best normalized
// sequence goes through token 4.
TableModel beam_fixture() {
  TableModel m;
  // vocab: 0=pad 1=bos 2=eos 3 4
  m.rows[{tok::bos}] = logits_from_probs({1e-9, 1e-9, 0.02, 0.55, 0.43});
  m.rows[{tok::bos, 3}] = logits_from_probs({1e-9, 1e-9, 0.10, 0.10, 0.80});
  m.rows[{tok::bos, 4}] = logits_from_probs({1e-9, 1e-9, 0.95, 0.03, 0.02});
  m.rows[{tok::bos, 3, 4}] = logits_from_probs({1e-9, 1e-9, 0.50, 0.20, 0.30});
  m.rows[{tok::bos, 3, 3}] = logits_from_probs({1e-9, 1e-9, 0.40, 0.30, 0.30});
  m.rows[{tok::bos, 4, 3}] = logits_from_probs({1e-9, 1e-9, 0.50, 0.25, 0.25});
  m.rows[{tok::bos, 4, 4}] = logits_from_probs({1e-9, 1e-9, 0.50, 0.25, 0.25});
  return m;
}

double sequence_logp(const TableModel& m, const std::vector<int>& ids) {
  std::vector<int> prefix = {tok::bos};
  double total = 0.0;
  auto step = m.step();
  for (int id : ids) {
    Eigen::VectorXd logits = step(prefix);
    const double mx = logits.maxCoeff();
    const double lse = mx + std::log((logits.array() - mx).exp().sum());
    total += logits(id) - lse;
    prefix.push_back(id);
  }
  return total;
}

// Exhaustive search over every sequence of generated length <= max_len:
// sequences ending in eos compete with unfinished length-max_len ones,
// both scored by logp / length. Mirrors the beam contract exactly.
struct Enumerated {
  std::vector<int> ids;  // includes the eos when finished
  double normalized;
  bool finished;
};

void enumerate_all(const TableModel& m, std::vector<int>& current, int max_len,
                   std::vector<Enumerated>& out) {
  if (!current.empty() && current.back() == tok::eos) {
    out.push_back({current, sequence_logp(m, current) /
                                static_cast<double>(current.size()),
                   true});
    return;
  }
  if (static_cast<int>(current.size()) == max_len) {
    out.push_back({current, sequence_logp(m, current) /
                                static_cast<double>(current.size()),
                   false});
    return;
  }
  for (int id = 0; id < m.vocab; ++id) {
    current.push_back(id);
    enumerate_all(m, current, max_len, out);
    current.pop_back();
  }
}

Enumerated exhaustive_best(const TableModel& m, int max_len) {
  std::vector<Enumerated> all;
  std::vector<int> current;
  enumerate_all(m, current, max_len, all);
  const Enumerated* best = &all.front();
  for (const auto& e : all) {
    if (e.normalized > best->normalized) best = &e;
  }
  return *best;
}

TableModel random_model(std::uint64_t seed, int vocab = 7) {
  TableModel m;
  m.vocab = vocab;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, 2.0);
  // Enough rows to cover all prefixes of length <= 3 over the vocab.
  std::vector<std::vector<int>> prefixes = {{tok::bos}};
  for (int round = 0; round < 2; ++round) {
    std::vector<std::vector<int>> next;
    for (const auto& p : prefixes) {
      for (int id = 0; id < vocab; ++id) {
        auto q = p;
        q.push_back(id);
        next.push_back(q);
      }
    }
    for (const auto& p : next) prefixes.push_back(p);
    if (round == 0) prefixes = next;
  }
  prefixes.push_back({tok::bos});
  for (const auto& p : prefixes) {
    Eigen::VectorXd row(vocab);
    for (int i = 0; i < vocab; ++i) row(i) = dist(rng);
    m.rows[p] = row;
  }
  return m;
}

}  // namespace

TEST_CASE("greedy follows the argmax path") {
  auto m = beam_fixture();
  auto result = greedy_decode(m.step(), 8);
  CHECK(result.ids == std::vector<int>{3, 4});
  CHECK(result.finished);
}

TEST_CASE("beam width 2 recovers the exhaustive-search optimum") {
  auto m = beam_fixture();
  auto beam = beam_decode(m.step(), 2, 3);
  auto best = exhaustive_best(m, 3);
  REQUIRE(best.finished);
  std::vector<int> best_stripped = best.ids;
  best_stripped.pop_back();  // drop eos for comparison
  CHECK(beam.ids == best_stripped);
  CHECK(beam.ids == std::vector<int>{4});
  CHECK(beam.score == doctest::Approx(best.normalized).epsilon(1e-12));

  auto greedy = greedy_decode(m.step(), 3);
  CHECK(greedy.ids != beam.ids);
  CHECK(beam.score > greedy.score);
}

TEST_CASE("beam width 1 equals greedy token-exactly") {
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    auto m = random_model(seed);
    auto g = greedy_decode(m.step(), 6);
    auto b = beam_decode(m.step(), 1, 6);
    CHECK(g.ids == b.ids);
    CHECK(g.score == doctest::Approx(b.score).epsilon(1e-12));
  }
}

TEST_CASE("max_len 1 yields exactly one token") {
  auto m = beam_fixture();
  auto g = greedy_decode(m.step(), 1);
  CHECK(g.ids.size() == 1);
  CHECK(g.ids[0] == 3);
  auto b = beam_decode(m.step(), 4, 1);
  CHECK(b.ids.size() == 1);
}

TEST_CASE("beam decode is deterministic") {
  auto m = random_model(123);
  auto a = beam_decode(m.step(), 4, 6);
  auto b = beam_decode(m.step(), 4, 6);
  CHECK(a.ids == b.ids);
  CHECK(a.score == b.score);
}

TEST_CASE("invalid decode settings are rejected") {
  auto m = beam_fixture();
  CHECK_THROWS_AS(beam_decode(m.step(), 0, 4), ConfigError);
  CHECK_THROWS_AS(greedy_decode(m.step(), 0), ConfigError);
}
