#pragma once

// Independent brute-force oracles for the tests. Nothing here calls the
// library's kernels; plain loops over nested vectors only.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

namespace oracle {

using Mat = std::vector<std::vector<double>>;

inline Mat matmul(const Mat& a, const Mat& b) {
  Mat c(a.size(), std::vector<double>(b.front().size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b.front().size(); ++j)
      for (std::size_t k = 0; k < b.size(); ++k) c[i][j] += a[i][k] * b[k][j];
  return c;
}

inline std::size_t nearest_src(std::size_t tgt, std::size_t src_extent, std::size_t tgt_extent) {
  const double x = std::floor((static_cast<double>(tgt) + 0.5) * static_cast<double>(src_extent) /
                              static_cast<double>(tgt_extent));
  return std::min(static_cast<std::size_t>(x), src_extent - 1);
}

// Nearest-neighbour resize of a flat (h, w, d) label array, depth fastest.
inline std::vector<std::int32_t> resize_nearest(const std::vector<std::int32_t>& src, std::size_t sh,
                                                std::size_t sw, std::size_t sd, std::size_t th, std::size_t tw,
                                                std::size_t td) {
  std::vector<std::int32_t> out(th * tw * td);
  for (std::size_t i = 0; i < th; ++i)
    for (std::size_t j = 0; j < tw; ++j)
      for (std::size_t t = 0; t < td; ++t)
        out[(i * tw + j) * td + t] =
            src[(nearest_src(i, sh, th) * sw + nearest_src(j, sw, tw)) * sd + nearest_src(t, sd, td)];
  return out;
}

// Box means over a (gh, gw, gd) partition with floor bounds, output
// (a, b, c, channel) with channel fastest.
inline std::vector<double> adaptive_pool(const std::vector<double>& feats, std::size_t channels, std::size_t h,
                                         std::size_t w, std::size_t d, std::size_t gh, std::size_t gw,
                                         std::size_t gd) {
  std::vector<double> out;
  const std::size_t n = h * w * d;
  for (std::size_t a = 0; a < gh; ++a)
    for (std::size_t b = 0; b < gw; ++b)
      for (std::size_t c = 0; c < gd; ++c)
        for (std::size_t ch = 0; ch < channels; ++ch) {
          double s = 0;
          std::size_t k = 0;
          for (std::size_t i = a * h / gh; i < (a + 1) * h / gh; ++i)
            for (std::size_t j = b * w / gw; j < (b + 1) * w / gw; ++j)
              for (std::size_t t = c * d / gd; t < (c + 1) * d / gd; ++t, ++k) s += feats[ch * n + (i * w + j) * d + t];
          out.push_back(k ? s / double(k) : 0.0);
        }
  return out;
}

// Mean over voxels whose label is in `labels`, per channel, from a
// channel-first array. Returns empty when no voxel matches.
inline std::vector<double> masked_mean(const std::vector<double>& feats, std::size_t channels,
                                       const std::vector<std::int32_t>& mask,
                                       const std::vector<std::int32_t>& labels) {
  const std::size_t n = mask.size();
  std::vector<double> sum(channels, 0.0);
  std::size_t count = 0;
  for (std::size_t v = 0; v < n; ++v) {
    if (std::find(labels.begin(), labels.end(), mask[v]) == labels.end()) continue;
    ++count;
    for (std::size_t c = 0; c < channels; ++c) sum[c] += feats[c * n + v];
  }
  if (count == 0) return {};
  for (auto& s : sum) s /= static_cast<double>(count);
  return sum;
}

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

inline std::vector<double> layer_norm(const std::vector<double>& x, const std::vector<double>& gamma,
                                      const std::vector<double>& beta, double eps) {
  double mu = 0;
  for (double v : x) mu += v;
  mu /= static_cast<double>(x.size());
  double var = 0;
  for (double v : x) var += (v - mu) * (v - mu);
  var /= static_cast<double>(x.size());
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = gamma[i] * (x[i] - mu) / std::sqrt(var + eps) + beta[i];
  return out;
}

struct Head {
  Mat w;                  // d_h x d_head
  std::vector<double> a;  // 2 * d_head
};

// For one target: members are rows of `x` (already normalized) with the
// target last. Returns the concatenation over heads of sum alpha W x_v.
inline std::vector<double> attend(const Mat& x, const std::vector<std::size_t>& members,
                                  const std::vector<Head>& heads, double slope,
                                  std::vector<std::vector<double>>* alphas = nullptr) {
  std::vector<double> out;
  const std::size_t t = members.back();
  for (const auto& h : heads) {
    const std::size_t dh = h.w.front().size();
    auto project = [&](std::size_t row) {
      std::vector<double> p(dh, 0.0);
      for (std::size_t j = 0; j < dh; ++j)
        for (std::size_t k = 0; k < x[row].size(); ++k) p[j] += x[row][k] * h.w[k][j];
      return p;
    };
    const auto wt = project(t);
    std::vector<std::vector<double>> wv;
    std::vector<double> e;
    for (auto m : members) {
      wv.push_back(project(m));
      double s = 0;
      for (std::size_t j = 0; j < dh; ++j) s += h.a[j] * wv.back()[j] + h.a[dh + j] * wt[j];
      e.push_back(s > 0 ? s : slope * s);
    }
    const double mx = *std::max_element(e.begin(), e.end());
    double z = 0;
    for (double& v : e) z += (v = std::exp(v - mx));
    for (double& v : e) v /= z;
    if (alphas) alphas->push_back(e);
    for (std::size_t j = 0; j < dh; ++j) {
      double acc = 0;
      for (std::size_t m = 0; m < members.size(); ++m) acc += e[m] * wv[m][j];
      out.push_back(acc);
    }
  }
  return out;
}

// Longhand corpus BLEU with one reference each and no smoothing.
inline std::vector<double> bleu(const std::vector<std::vector<std::string>>& cand,
                                const std::vector<std::vector<std::string>>& ref, std::size_t n_max) {
  std::vector<double> match(n_max, 0), total(n_max, 0);
  double c = 0, r = 0;
  for (std::size_t s = 0; s < cand.size(); ++s) {
    c += static_cast<double>(cand[s].size());
    r += static_cast<double>(ref[s].size());
    for (std::size_t n = 1; n <= n_max; ++n) {
      std::map<std::string, int> cc, rc;
      for (std::size_t i = 0; i + n <= cand[s].size(); ++i) {
        std::string g;
        for (std::size_t k = 0; k < n; ++k) g += cand[s][i + k] + "\x1f";
        ++cc[g];
      }
      for (std::size_t i = 0; i + n <= ref[s].size(); ++i) {
        std::string g;
        for (std::size_t k = 0; k < n; ++k) g += ref[s][i + k] + "\x1f";
        ++rc[g];
      }
      for (auto& [g, k] : cc) {
        total[n - 1] += k;
        match[n - 1] += std::min(k, rc[g]);
      }
    }
  }
  const double bp = c > r ? 1.0 : std::exp(1.0 - r / c);
  std::vector<double> out;
  for (std::size_t k = 1; k <= n_max; ++k) {
    double prod = 1;
    for (std::size_t n = 0; n < k; ++n) prod *= total[n] > 0 ? match[n] / total[n] : 0.0;
    out.push_back(bp * std::pow(prod, 1.0 / static_cast<double>(k)));
  }
  return out;
}

// Central finite differences of f around x, in place.
inline std::vector<double> numeric_grad(const std::function<double()>& f, std::vector<double>& x, double h = 1e-5) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f();
    x[i] = keep - h;
    const double down = f();
    x[i] = keep;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

// max |a - n| / max(1, |a|, |n|) style relative error with a floor so tiny
// gradients compare absolutely.
inline double max_rel_error(const std::vector<double>& analytic, const std::vector<double>& numeric,
                            double floor = 1e-3) {
  double worst = 0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric[i]), floor});
    worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / denom);
  }
  return worst;
}

}  // namespace oracle
