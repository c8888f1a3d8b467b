#include "ctgraph/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>

#include "ctgraph/error.hpp"

namespace ctgraph {

namespace {

double ratio(double num, double den) { return den == 0.0 ? 0.0 : num / den; }

}  // namespace

PRF1 macro_prf1(const LabelMatrix& pred, const LabelMatrix& ref) {
  if (pred.size() != ref.size())
    throw DimensionError("macro_prf1: " + std::to_string(pred.size()) + " predictions vs " +
                         std::to_string(ref.size()) + " references");
  if (pred.empty()) throw DimensionError("macro_prf1: no samples");
  const std::size_t classes = ref.front().size();
  for (std::size_t s = 0; s < ref.size(); ++s)
    if (pred[s].size() != classes || ref[s].size() != classes)
      throw DimensionError("macro_prf1: sample " + std::to_string(s) + " has inconsistent class count");
  if (classes == 0) throw DimensionError("macro_prf1: no classes");

  PRF1 out;
  for (std::size_t c = 0; c < classes; ++c) {
    double tp = 0, fp = 0, fn = 0;
    for (std::size_t s = 0; s < ref.size(); ++s) {
      const bool p = pred[s][c] != 0, r = ref[s][c] != 0;
      tp += p && r;
      fp += p && !r;
      fn += !p && r;
    }
    if (tp + fn == 0) out.degenerate.push_back(c);
    const double P = ratio(tp, tp + fp), R = ratio(tp, tp + fn);
    out.class_precision.push_back(P);
    out.class_recall.push_back(R);
    out.class_f1.push_back(ratio(2 * P * R, P + R));
  }
  auto mean = [&](const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  };
  out.precision = mean(out.class_precision);
  out.recall = mean(out.class_recall);
  out.f1 = mean(out.class_f1);
  return out;
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (char ch : text) {
    const auto u = static_cast<unsigned char>(ch);
    if (std::isspace(u)) {
      flush();
    } else if (std::ispunct(u)) {
      flush();
      out.emplace_back(1, ch);
    } else {
      cur.push_back(static_cast<char>(std::tolower(u)));
    }
  }
  flush();
  return out;
}

namespace {

std::map<std::vector<std::string>, std::int64_t> ngram_counts(const Tokens& t, std::size_t n) {
  std::map<std::vector<std::string>, std::int64_t> counts;
  for (std::size_t i = 0; i + n <= t.size(); ++i) ++counts[Tokens(t.begin() + i, t.begin() + i + n)];
  return counts;
}

}  // namespace

BleuResult bleu(const std::vector<Tokens>& candidates, const std::vector<Tokens>& references,
                std::size_t n_max) {
  if (candidates.size() != references.size())
    throw DimensionError("bleu: " + std::to_string(candidates.size()) + " candidates vs " +
                         std::to_string(references.size()) + " references");
  if (candidates.empty()) throw DimensionError("bleu: empty corpus");
  if (n_max == 0) throw DimensionError("bleu: n_max must be positive");
  BleuResult r;
  r.matches.assign(n_max, 0);
  r.totals.assign(n_max, 0);
  for (std::size_t s = 0; s < candidates.size(); ++s) {
    r.candidate_length += static_cast<std::int64_t>(candidates[s].size());
    r.reference_length += static_cast<std::int64_t>(references[s].size());
    for (std::size_t n = 1; n <= n_max; ++n) {
      const auto cand = ngram_counts(candidates[s], n);
      const auto ref = ngram_counts(references[s], n);
      for (const auto& [gram, count] : cand) {
        r.totals[n - 1] += count;
        const auto it = ref.find(gram);
        if (it != ref.end()) r.matches[n - 1] += std::min(count, it->second);
      }
    }
  }
  const double c = static_cast<double>(r.candidate_length), ref_len = static_cast<double>(r.reference_length);
  if (c == 0) {
    r.brevity_penalty = 0.0;
    r.warnings.push_back("all candidates are empty");
  } else {
    r.brevity_penalty = c > ref_len ? 1.0 : std::exp(1.0 - ref_len / c);
  }
  double log_sum = 0.0;
  bool zero = false;
  for (std::size_t k = 1; k <= n_max; ++k) {
    const auto m = r.matches[k - 1], t = r.totals[k - 1];
    if (m == 0 || t == 0) {
      if (!zero) r.warnings.push_back("zero " + std::to_string(k) + "-gram matches; BLEU-" + std::to_string(k) +
                                      " and above are 0");
      zero = true;
    }
    if (zero) {
      r.bleu.push_back(0.0);
      continue;
    }
    const double p = static_cast<double>(m) / static_cast<double>(t);
    log_sum += std::log(p);
    // BLEU-1 skips exp(log(.)) so rational cases stay exact.
    r.bleu.push_back(k == 1 ? r.brevity_penalty * p
                            : r.brevity_penalty * std::exp(log_sum / static_cast<double>(k)));
  }
  return r;
}

std::size_t lcs_length(const Tokens& a, const Tokens& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

RougeResult rouge_l(const std::vector<Tokens>& candidates, const std::vector<Tokens>& references,
                    double beta) {
  if (candidates.size() != references.size())
    throw DimensionError("rouge_l: " + std::to_string(candidates.size()) + " candidates vs " +
                         std::to_string(references.size()) + " references");
  if (candidates.empty()) throw DimensionError("rouge_l: empty corpus");
  RougeResult r;
  const double b2 = beta * beta;
  for (std::size_t s = 0; s < candidates.size(); ++s) {
    const auto& c = candidates[s];
    const auto& ref = references[s];
    if (c.empty() && ref.empty()) r.both_empty.push_back(s);
    const double l = static_cast<double>(lcs_length(c, ref));
    const double p = ratio(l, static_cast<double>(c.size())), rec = ratio(l, static_cast<double>(ref.size()));
    r.per_sample.push_back(p == 0 || rec == 0 ? 0.0 : (1 + b2) * p * rec / (rec + b2 * p));
  }
  double sum = 0;
  for (double v : r.per_sample) sum += v;
  r.f = sum / static_cast<double>(r.per_sample.size());
  return r;
}

}  // namespace ctgraph
