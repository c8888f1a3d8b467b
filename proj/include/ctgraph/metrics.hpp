#pragma once

// Clinical-efficacy (macro P/R/F1) and text metrics (corpus BLEU, ROUGE-L).

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace ctgraph {

using LabelMatrix = std::vector<std::vector<int>>;  // samples x classes, entries 0/1

struct PRF1 {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::vector<double> class_precision, class_recall, class_f1;
  // Classes with no reference positives; their recall and F1 are 0 by convention.
  std::vector<std::size_t> degenerate;
};

// Per-class counts with 0 for any 0/0 ratio, then the unweighted class mean.
PRF1 macro_prf1(const LabelMatrix& pred, const LabelMatrix& ref);

// Lowercase, split punctuation into its own tokens, split on whitespace.
std::vector<std::string> tokenize(std::string_view text);

using Tokens = std::vector<std::string>;

struct BleuResult {
  std::vector<double> bleu;  // bleu[k-1] = BLEU-k
  double brevity_penalty = 0.0;
  std::vector<std::int64_t> matches;  // clipped n-gram matches per order
  std::vector<std::int64_t> totals;   // candidate n-grams per order
  std::int64_t candidate_length = 0;
  std::int64_t reference_length = 0;
  std::vector<std::string> warnings;
};

// Corpus-level BLEU, one reference per candidate, no smoothing.
// BP = 1 if c > r else exp(1 - r/c); BLEU-k = BP * exp(mean_{n<=k} log p_n),
// 0 when some p_n is 0.
BleuResult bleu(const std::vector<Tokens>& candidates, const std::vector<Tokens>& references,
                std::size_t n_max = 4);

struct RougeResult {
  double f = 0.0;  // mean of per-sample F
  std::vector<double> per_sample;
  std::vector<std::size_t> both_empty;  // samples defined as 0
};

std::size_t lcs_length(const Tokens& a, const Tokens& b);
// F = (1 + beta^2) P R / (R + beta^2 P), P = LCS/|candidate|, R = LCS/|reference|.
RougeResult rouge_l(const std::vector<Tokens>& candidates, const std::vector<Tokens>& references,
                    double beta = 1.2);

}  // namespace ctgraph
