#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "ctgraph/error.hpp"
#include "ctgraph/metrics.hpp"
#include "oracles.hpp"

using namespace ctgraph;

namespace {

Tokens words(const std::string& s) { return tokenize(s); }

// LCS by enumerating every subsequence of the shorter side.
std::size_t brute_lcs(const Tokens& a, const Tokens& b) {
  const Tokens& s = a.size() <= b.size() ? a : b;
  const Tokens& t = a.size() <= b.size() ? b : a;
  std::size_t best = 0;
  for (std::uint32_t bits = 0; bits < (1u << s.size()); ++bits) {
    Tokens sub;
    for (std::size_t i = 0; i < s.size(); ++i)
      if (bits >> i & 1u) sub.push_back(s[i]);
    std::size_t k = 0;
    for (const auto& w : t)
      if (k < sub.size() && w == sub[k]) ++k;
    if (k == sub.size()) best = std::max(best, sub.size());
  }
  return best;
}

Tokens random_tokens(std::mt19937_64& rng, std::size_t lo, std::size_t hi, int vocab) {
  std::uniform_int_distribution<std::size_t> len(lo, hi);
  std::uniform_int_distribution<int> w(0, vocab - 1);
  Tokens t(len(rng));
  for (auto& x : t) x = "w" + std::to_string(w(rng));
  return t;
}

LabelMatrix random_labels(std::mt19937_64& rng, std::size_t n, std::size_t k) {
  LabelMatrix m(n, std::vector<int>(k));
  for (auto& r : m)
    for (auto& v : r) v = static_cast<int>(rng() % 2);
  return m;
}

}  // namespace

TEST_CASE("macro prf1 golden cases") {
  // Class 0 perfect; class 1 has one TP, one FP, one FN.
  const LabelMatrix pred{{1, 1}, {0, 1}, {1, 0}, {0, 0}};
  const LabelMatrix ref{{1, 1}, {0, 0}, {1, 1}, {0, 0}};
  const PRF1 m = macro_prf1(pred, ref);
  CHECK(m.class_f1 == std::vector<double>{1.0, 0.5});
  CHECK(m.precision == 0.75);
  CHECK(m.recall == 0.75);
  CHECK(m.f1 == 0.75);

  const PRF1 same = macro_prf1(ref, ref);
  CHECK(same.f1 == 1.0);
  CHECK(same.precision == 1.0);
  CHECK(same.recall == 1.0);

  const LabelMatrix zeros(4, std::vector<int>(2, 0));
  const PRF1 z = macro_prf1(zeros, ref);
  CHECK(z.recall == 0.0);
  CHECK(z.f1 == 0.0);
  CHECK(z.precision == 0.0);

  // A class never positive in the reference is flagged and scores 0.
  const PRF1 d = macro_prf1(ref, zeros);
  CHECK(d.degenerate == std::vector<std::size_t>{0, 1});

  CHECK_THROWS_AS(macro_prf1(pred, LabelMatrix(3, std::vector<int>(2))), DimensionError);
  CHECK_THROWS_AS(macro_prf1({{1, 0}}, {{1, 0, 1}}), DimensionError);
}

TEST_CASE("macro prf1 is invariant to sample and class permutation") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng() % 12, k = 1 + rng() % 6;
    const LabelMatrix p = random_labels(rng, n, k), r = random_labels(rng, n, k);
    std::vector<std::size_t> rows(n), cols(k);
    std::iota(rows.begin(), rows.end(), 0);
    std::iota(cols.begin(), cols.end(), 0);
    std::shuffle(rows.begin(), rows.end(), rng);
    std::shuffle(cols.begin(), cols.end(), rng);
    LabelMatrix pp(n, std::vector<int>(k)), rp(n, std::vector<int>(k));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < k; ++c) {
        pp[i][c] = p[rows[i]][cols[c]];
        rp[i][c] = r[rows[i]][cols[c]];
      }
    const PRF1 a = macro_prf1(p, r), b = macro_prf1(pp, rp);
    CHECK(a.f1 == doctest::Approx(b.f1).epsilon(1e-14));
    CHECK(a.precision == doctest::Approx(b.precision).epsilon(1e-14));
    CHECK(a.recall == doctest::Approx(b.recall).epsilon(1e-14));
    for (double v : {a.f1, a.precision, a.recall}) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
}

TEST_CASE("tokenizer lowercases and separates punctuation") {
  CHECK(tokenize("The lung, is CLEAR.") == Tokens{"the", "lung", ",", "is", "clear", "."});
  CHECK(tokenize("  \t\n").empty());
  CHECK(tokenize("no-effusion") == Tokens{"no", "-", "effusion"});
}

TEST_CASE("bleu golden cases") {
  // c = 3 > r = 2 so BP = 1 and BLEU-1 is the clipped unigram precision 1/3.
  const BleuResult r = bleu({words("a a a")}, {words("a b")});
  CHECK(r.matches[0] == 1);
  CHECK(r.totals[0] == 3);
  CHECK(r.brevity_penalty == 1.0);
  CHECK(r.bleu[0] == 1.0 / 3.0);
  CHECK(r.bleu[1] == 0.0);
  CHECK(!r.warnings.empty());

  // Short candidate: BP = exp(1 - 4/2).
  const BleuResult s = bleu({words("a b")}, {words("a b c d")});
  CHECK(s.brevity_penalty == std::exp(1.0 - 2.0));
  CHECK(s.bleu[0] == std::exp(-1.0));
  CHECK(s.bleu[1] == doctest::Approx(std::exp(-1.0)).epsilon(1e-12));

  const BleuResult same = bleu({words("the heart is normal in size")}, {words("the heart is normal in size")});
  for (double v : same.bleu) CHECK(v == doctest::Approx(1.0).epsilon(1e-12));

  const BleuResult disjoint = bleu({words("x y z w")}, {words("a b c d")});
  for (double v : disjoint.bleu) CHECK(v == 0.0);

  CHECK_THROWS_AS(bleu({}, {}), DimensionError);
  CHECK_THROWS_AS(bleu({words("a")}, {}), DimensionError);
}

TEST_CASE("bleu matches the longhand formula on random corpora") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 1 + rng() % 5;
    std::vector<Tokens> c, r;
    for (std::size_t s = 0; s < n; ++s) {
      r.push_back(random_tokens(rng, 1, 12, 4));
      Tokens t = r.back();
      for (auto& w : t)
        if (rng() % 4 == 0) w = "w" + std::to_string(rng() % 6);
      if (rng() % 3 == 0) t.push_back("w0");
      if (rng() % 3 == 0 && t.size() > 1) t.pop_back();
      c.push_back(t);
    }
    const BleuResult got = bleu(c, r);
    const auto want = oracle::bleu(c, r, 4);
    for (std::size_t k = 0; k < 4; ++k) {
      if (got.bleu[k] == 0.0) {
        // Some order up to k had no matches; the longhand product is then 0 too.
        CHECK(want[k] == 0.0);
        continue;
      }
      CHECK(got.bleu[k] == doctest::Approx(want[k]).epsilon(1e-12));
      CHECK(got.bleu[k] >= 0.0);
      CHECK(got.bleu[k] <= 1.0);
    }
  }
}

TEST_CASE("bleu is order free and non-increasing when precisions are") {
  std::mt19937_64 rng(3);
  int premise_held = 0;
  for (int trial = 0; trial < 400; ++trial) {
    const std::size_t n = 2 + rng() % 4;
    std::vector<Tokens> c, r;
    for (std::size_t s = 0; s < n; ++s) {
      r.push_back(random_tokens(rng, 4, 14, 5));
      Tokens t = r.back();
      for (auto& w : t)
        if (rng() % 5 == 0) w = "w" + std::to_string(rng() % 7);
      c.push_back(t);
    }
    const BleuResult a = bleu(c, r);

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<Tokens> c2, r2;
    for (auto i : order) {
      c2.push_back(c[i]);
      r2.push_back(r[i]);
    }
    CHECK(bleu(c2, r2).bleu == a.bleu);

    bool premise = true;
    for (std::size_t k = 1; k < 4; ++k)
      premise = premise && a.matches[k] * a.totals[k - 1] <= a.matches[k - 1] * a.totals[k];
    if (!premise) continue;
    ++premise_held;
    for (std::size_t k = 1; k < 4; ++k) CHECK(a.bleu[k] <= a.bleu[k - 1] * (1 + 1e-12));
  }
  CHECK(premise_held >= 100);
}

TEST_CASE("bleu tolerates empty candidates") {
  const BleuResult r = bleu({Tokens{}, words("a b c")}, {words("a b"), words("a b c")});
  CHECK(r.candidate_length == 3);
  CHECK(r.reference_length == 5);
  CHECK(r.bleu[0] == doctest::Approx(std::exp(1.0 - 5.0 / 3.0)).epsilon(1e-12));

  const BleuResult all_empty = bleu({Tokens{}}, {words("a")});
  for (double v : all_empty.bleu) CHECK(v == 0.0);
  CHECK(!all_empty.warnings.empty());
}

TEST_CASE("rouge-l golden cases") {
  const RougeResult r = rouge_l({words("a b c d")}, {words("a c d")});
  const double p = 0.75, rec = 1.0, b2 = 1.2 * 1.2;
  CHECK(r.f == doctest::Approx((1 + b2) * p * rec / (rec + b2 * p)).epsilon(1e-12));

  for (double beta : {0.5, 1.0, 1.2, 3.0})
    CHECK(rouge_l({words("left lower lobe")}, {words("left lower lobe")}, beta).f == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(rouge_l({words("a b")}, {words("c d")}).f == 0.0);

  const RougeResult e = rouge_l({Tokens{}, words("a")}, {Tokens{}, words("a")});
  CHECK(e.both_empty == std::vector<std::size_t>{0});
  CHECK(e.per_sample[0] == 0.0);
  CHECK(e.f == 0.5);

  CHECK_THROWS_AS(rouge_l({}, {}), DimensionError);
}

TEST_CASE("lcs matches enumeration and rouge stays in range") {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 300; ++trial) {
    const Tokens a = random_tokens(rng, 0, 9, 3), b = random_tokens(rng, 0, 9, 3);
    const std::size_t l = lcs_length(a, b);
    CHECK(l == brute_lcs(a, b));
    CHECK(l == lcs_length(b, a));
    const double f = rouge_l({a}, {b}).f;
    CHECK(f >= 0.0);
    CHECK(f <= 1.0 + 1e-15);
  }
}
