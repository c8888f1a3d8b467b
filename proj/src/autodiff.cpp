#include "ctgraph/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ctgraph/error.hpp"

namespace ctgraph {

namespace {

constexpr std::size_t kParallelFlops = 1 << 16;

// c[m x n] += a[m x k] * b[k x n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
#pragma omp parallel for schedule(static) if (m * k * n > kParallelFlops && m > 1)
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// c[m x k] += a[m x n] * b[k x n]^T
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t n,
             std::size_t k) {
#pragma omp parallel for schedule(static) if (m * k * n > kParallelFlops && m > 1)
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double* brow = b + p * n;
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += arow[j] * brow[j];
      c[i * k + p] += acc;
    }
  }
}

// c[k x n] += a[m x k]^T * b[m x n]
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
#pragma omp parallel for schedule(static) if (m * k * n > kParallelFlops && k > 1)
  for (std::size_t p = 0; p < k; ++p) {
    double* crow = c + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      const double* brow = b + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

double gelu_value(double x) {
  constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  const double u = c * (x + 0.044715 * x * x * x);
  return 0.5 * x * (1.0 + std::tanh(u));
}

double gelu_slope(double x) {
  constexpr double c = 0.7978845608028654;
  const double u = c * (x + 0.044715 * x * x * x);
  const double t = std::tanh(u);
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * c * (1.0 + 3.0 * 0.044715 * x * x);
}

void require_same_shape(const ad::Var& a, const ad::Var& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
}

}  // namespace

void Parameter::zero_grad() {
  if (grad.shape() != value.shape()) grad = Tensor(value.shape(), 0.0);
  std::fill(grad.storage().begin(), grad.storage().end(), 0.0);
}

void matmul_kernel(std::span<const double> a, std::span<const double> b, std::span<double> c,
                   std::size_t m, std::size_t k, std::size_t n) {
  std::fill(c.begin(), c.end(), 0.0);
  gemm_nn(a.data(), b.data(), c.data(), m, k, n);
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows())
    throw DimensionError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  Tensor c({a.rows(), b.cols()}, 0.0);
  gemm_nn(a.data().data(), b.data().data(), c.data().data(), a.rows(), a.cols(), b.cols());
  return c;
}

double leaky_relu(double x, double slope) { return x > 0.0 ? x : slope * x; }

Tensor softmax(const Tensor& scores) {
  if (scores.numel() == 0) throw DimensionError("softmax over an empty group");
  Tensor out = scores;
  const double mx = *std::max_element(out.storage().begin(), out.storage().end());
  double total = 0.0;
  for (double& v : out.storage()) {
    v = std::exp(v - mx);
    total += v;
  }
  for (double& v : out.storage()) v /= total;
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const std::size_t d = x.shape().back();
  if (gamma.numel() != d || beta.numel() != d)
    throw DimensionError("layer_norm: affine length must equal " + std::to_string(d));
  Tensor out = x;
  const std::size_t rows = x.numel() / d;
  for (std::size_t r = 0; r < rows; ++r) {
    double* row = out.data().data() + r * d;
    double mu = 0.0;
    for (std::size_t i = 0; i < d; ++i) mu += row[i];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t i = 0; i < d; ++i) var += (row[i] - mu) * (row[i] - mu);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    for (std::size_t i = 0; i < d; ++i) row[i] = (row[i] - mu) * inv * gamma[i] + beta[i];
  }
  return out;
}

namespace ad {

const Tensor& Var::value() const { return tape_->value(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, false, nullptr, {}, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::input(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, true, nullptr, {}, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::parameter(Parameter& p) {
  if (p.grad.shape() != p.value.shape()) p.zero_grad();
  Node n;
  n.requires_grad = true;
  n.param = &p;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::vector<std::size_t> inputs, BackwardFn backward) {
  bool needs = false;
  for (auto id : inputs) needs = needs || nodes_[id].requires_grad;
  Node n{std::move(value), {}, needs, nullptr, {}, {}};
  if (needs) {
    n.inputs = std::move(inputs);
    n.backward = std::move(backward);
  }
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

std::span<double> Tape::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (n.param) return n.param->grad.data();
  if (n.grad.numel() != n.value.numel()) n.grad = Tensor(n.value.shape(), 0.0);
  return n.grad.data();
}

void Tape::backward(const Var& loss) {
  if (loss.numel() != 1)
    throw DimensionError("backward requires a scalar loss, got " + shape_str(loss.shape()));
  for (auto& n : nodes_)
    if (!n.param) n.grad = Tensor();
  if (!nodes_[loss.id()].requires_grad) return;
  grad_buffer(loss.id())[0] += 1.0;
  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.backward || n.grad.numel() == 0) continue;
    n.backward(*this, id);
  }
}

Tensor Tape::grad(const Var& v) const {
  const Node& n = nodes_[v.id()];
  if (n.param) return n.param->grad;
  if (n.grad.numel() == n.value.numel() && n.value.numel() > 0) return n.grad;
  return Tensor(value(v.id()).shape(), 0.0);
}

Var matmul(const Var& a, const Var& b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
  if (k != bv.rows())
    throw DimensionError("matmul: inner dimensions disagree, " + shape_str(av.shape()) + " x " +
                         shape_str(bv.shape()));
  Tensor out = ctgraph::matmul(av, bv);
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {ia, ib}, [=](Tape& t, std::size_t self) {
    const double* g = t.upstream(self).data().data();
    if (t.requires_grad(ia))
      gemm_nt(g, t.value(ib).data().data(), t.grad_buffer(ia).data(), m, n, k);
    if (t.requires_grad(ib))
      gemm_tn(t.value(ia).data().data(), g, t.grad_buffer(ib).data(), m, k, n);
  });
}

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Tensor out = a.value();
  const auto& bv = b.value().storage();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {ia, ib}, [=](Tape& t, std::size_t self) {
    const auto& g = t.upstream(self).storage();
    for (auto id : {ia, ib}) {
      if (!t.requires_grad(id)) continue;
      auto dst = t.grad_buffer(id);
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
    }
  });
}

Var add_row(const Var& m, const Var& row) {
  const Tensor& mv = m.value();
  const std::size_t r = mv.rows(), d = mv.cols();
  if (row.numel() != d)
    throw DimensionError("add_row: row of " + shape_str(row.shape()) + " cannot broadcast over " +
                         shape_str(mv.shape()));
  Tensor out = mv;
  const auto& rv = row.value().storage();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] += rv[j];
  const std::size_t im = m.id(), ir = row.id();
  return m.tape().record(std::move(out), {im, ir}, [=](Tape& t, std::size_t self) {
    const auto& g = t.upstream(self).storage();
    if (t.requires_grad(im)) {
      auto dst = t.grad_buffer(im);
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
    }
    if (t.requires_grad(ir)) {
      auto dst = t.grad_buffer(ir);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < d; ++j) dst[j] += g[i * d + j];
    }
  });
}

Var add_scalar(const Var& a, const Var& s) {
  if (s.numel() != 1) throw DimensionError("add_scalar: expected one value, got " + shape_str(s.shape()));
  Tensor out = a.value();
  const double sv = s.value()[0];
  for (double& v : out.storage()) v += sv;
  const std::size_t ia = a.id(), is = s.id();
  return a.tape().record(std::move(out), {ia, is}, [=](Tape& t, std::size_t self) {
    const auto& g = t.upstream(self).storage();
    if (t.requires_grad(ia)) {
      auto dst = t.grad_buffer(ia);
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
    }
    if (t.requires_grad(is)) t.grad_buffer(is)[0] += std::accumulate(g.begin(), g.end(), 0.0);
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  Tensor out = a.value();
  const auto& bv = b.value().storage();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {ia, ib}, [=](Tape& t, std::size_t self) {
    const auto& g = t.upstream(self).storage();
    if (t.requires_grad(ia)) {
      auto dst = t.grad_buffer(ia);
      const auto& other = t.value(ib).storage();
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * other[i];
    }
    if (t.requires_grad(ib)) {
      auto dst = t.grad_buffer(ib);
      const auto& other = t.value(ia).storage();
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * other[i];
    }
  });
}

Var scale(const Var& a, double factor) {
  Tensor out = a.value();
  for (double& v : out.storage()) v *= factor;
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {ia}, [=](Tape& t, std::size_t self) {
    const auto& g = t.upstream(self).storage();
    auto dst = t.grad_buffer(ia);
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += factor * g[i];
  });
}

namespace {

template <class F, class D>
Var unary(const Var& x, F f, D df) {
  Tensor out = x.value();
  for (double& v : out.storage()) v = f(v);
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), {ix}, [=](Tape& t, std::size_t self) {
    const auto& g = t.upstream(self).storage();
    const auto& xv = t.value(ix).storage();
    auto dst = t.grad_buffer(ix);
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * df(xv[i]);
  });
}

}  // namespace

Var leaky_relu(const Var& x, double slope) {
  return unary(
      x, [slope](double v) { return ctgraph::leaky_relu(v, slope); },
      [slope](double v) { return v > 0.0 ? 1.0 : slope; });
}

Var gelu(const Var& x) { return unary(x, gelu_value, gelu_slope); }

Var relu(const Var& x) {
  return unary(
      x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v) { return v > 0.0 ? 1.0 : 0.0; });
}

Var softmax(const Var& x) {
  const std::size_t ix = x.id();
  return x.tape().record(ctgraph::softmax(x.value()), {ix}, [=](Tape& t, std::size_t self) {
    const auto& g = t.upstream(self).storage();
    const auto& y = t.value(self).storage();
    double dot = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) dot += g[i] * y[i];
    auto dst = t.grad_buffer(ix);
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += y[i] * (g[i] - dot);
  });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  const Tensor& xv = x.value();
  const std::size_t d = xv.shape().back();
  const std::size_t rows = xv.numel() / d;
  Tensor out = ctgraph::layer_norm(xv, gamma.value(), beta.value(), eps);
  const std::size_t ix = x.id(), ig = gamma.id(), ib = beta.id();
  return x.tape().record(std::move(out), {ix, ig, ib}, [=](Tape& t, std::size_t self) {
    const auto& g = t.upstream(self).storage();
    const auto& xs = t.value(ix).storage();
    const auto& gm = t.value(ig).storage();
    std::vector<double> xhat(d), dxhat(d);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* row = xs.data() + r * d;
      const double* grow = g.data() + r * d;
      double mu = 0.0;
      for (std::size_t i = 0; i < d; ++i) mu += row[i];
      mu /= static_cast<double>(d);
      double var = 0.0;
      for (std::size_t i = 0; i < d; ++i) var += (row[i] - mu) * (row[i] - mu);
      var /= static_cast<double>(d);
      const double inv = 1.0 / std::sqrt(var + eps);
      double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
      for (std::size_t i = 0; i < d; ++i) {
        xhat[i] = (row[i] - mu) * inv;
        dxhat[i] = grow[i] * gm[i];
        mean_dxhat += dxhat[i];
        mean_dxhat_xhat += dxhat[i] * xhat[i];
      }
      mean_dxhat /= static_cast<double>(d);
      mean_dxhat_xhat /= static_cast<double>(d);
      if (t.requires_grad(ix)) {
        auto dst = t.grad_buffer(ix);
        for (std::size_t i = 0; i < d; ++i)
          dst[r * d + i] += inv * (dxhat[i] - mean_dxhat - xhat[i] * mean_dxhat_xhat);
      }
      if (t.requires_grad(ig)) {
        auto dst = t.grad_buffer(ig);
        for (std::size_t i = 0; i < d; ++i) dst[i] += grow[i] * xhat[i];
      }
      if (t.requires_grad(ib)) {
        auto dst = t.grad_buffer(ib);
        for (std::size_t i = 0; i < d; ++i) dst[i] += grow[i];
      }
    }
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t rows = parts[0].rows();
  std::vector<std::size_t> offsets, widths, ids;
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows)
      throw DimensionError("concat_cols: row count mismatch " + shape_str(parts[0].shape()) +
                           " vs " + shape_str(p.shape()));
    offsets.push_back(total);
    widths.push_back(p.cols());
    ids.push_back(p.id());
    total += p.cols();
  }
  Tensor out({rows, total}, 0.0);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& src = parts[k].value().storage();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(src.data() + r * widths[k], widths[k], out.data().data() + r * total + offsets[k]);
  }
  return parts[0].tape().record(std::move(out), ids, [=](Tape& t, std::size_t self) {
    const auto& g = t.upstream(self).storage();
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (!t.requires_grad(ids[k])) continue;
      auto dst = t.grad_buffer(ids[k]);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < widths[k]; ++c)
          dst[r * widths[k] + c] += g[r * total + offsets[k] + c];
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const std::size_t cols = parts[0].cols();
  std::vector<std::size_t> offsets, sizes, ids;
  std::size_t rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols)
      throw DimensionError("concat_rows: column count mismatch " + shape_str(parts[0].shape()) +
                           " vs " + shape_str(p.shape()));
    offsets.push_back(rows * cols);
    sizes.push_back(p.numel());
    ids.push_back(p.id());
    rows += p.rows();
  }
  std::vector<double> data;
  data.reserve(rows * cols);
  for (const auto& p : parts)
    data.insert(data.end(), p.value().storage().begin(), p.value().storage().end());
  return parts[0].tape().record(Tensor({rows, cols}, std::move(data)), ids,
                                [=](Tape& t, std::size_t self) {
                                  const auto& g = t.upstream(self).storage();
                                  for (std::size_t k = 0; k < ids.size(); ++k) {
                                    if (!t.requires_grad(ids[k])) continue;
                                    auto dst = t.grad_buffer(ids[k]);
                                    for (std::size_t i = 0; i < sizes[k]; ++i)
                                      dst[i] += g[offsets[k] + i];
                                  }
                                });
}

Var gather_rows(const Var& a, std::span<const std::size_t> rows) {
  const Tensor& av = a.value();
  const std::size_t cols = av.cols(), n = av.rows();
  if (rows.empty()) throw DimensionError("gather_rows: empty row list");
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  Tensor out({idx.size(), cols}, 0.0);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= n)
      throw DimensionError("gather_rows: row " + std::to_string(idx[r]) + " out of range for " +
                           shape_str(av.shape()));
    std::copy_n(av.data().data() + idx[r] * cols, cols, out.data().data() + r * cols);
  }
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {ia}, [=](Tape& t, std::size_t self) {
    const auto& g = t.upstream(self).storage();
    auto dst = t.grad_buffer(ia);
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (std::size_t c = 0; c < cols; ++c) dst[idx[r] * cols + c] += g[r * cols + c];
  });
}

Var slice_cols(const Var& a, std::size_t begin, std::size_t end) {
  const Tensor& av = a.value();
  const std::size_t rows = av.rows(), cols = av.cols();
  if (begin >= end || end > cols)
    throw DimensionError("slice_cols: [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") out of range for " + shape_str(av.shape()));
  const std::size_t w = end - begin;
  Tensor out({rows, w}, 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(av.data().data() + r * cols + begin, w, out.data().data() + r * w);
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {ia}, [=](Tape& t, std::size_t self) {
    const auto& g = t.upstream(self).storage();
    auto dst = t.grad_buffer(ia);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < w; ++c) dst[r * cols + begin + c] += g[r * w + c];
  });
}

Var reshape(const Var& a, Shape shape) {
  const std::size_t ia = a.id();
  return a.tape().record(a.value().reshaped(std::move(shape)), {ia},
                         [=](Tape& t, std::size_t self) {
                           const auto& g = t.upstream(self).storage();
                           auto dst = t.grad_buffer(ia);
                           for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
                         });
}

Var transpose(const Var& a) {
  const Tensor& av = a.value();
  const std::size_t rows = av.rows(), cols = av.cols();
  Tensor out({cols, rows}, 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = av[r * cols + c];
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {ia}, [=](Tape& t, std::size_t self) {
    const auto& g = t.upstream(self).storage();
    auto dst = t.grad_buffer(ia);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) dst[r * cols + c] += g[c * rows + r];
  });
}

Var sum(const Var& a) {
  const auto& av = a.value().storage();
  const double total = std::accumulate(av.begin(), av.end(), 0.0);
  const std::size_t ia = a.id();
  return a.tape().record(Tensor({1}, {total}), {ia}, [=](Tape& t, std::size_t self) {
    const double g = t.upstream(self)[0];
    for (double& v : t.grad_buffer(ia)) v += g;
  });
}

Var mean(const Var& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

Var bce_with_logits(const Var& logits, const Tensor& targets) {
  const auto& z = logits.value().storage();
  if (targets.numel() != z.size())
    throw DimensionError("bce_with_logits: logits " + shape_str(logits.shape()) + " vs targets " +
                         shape_str(targets.shape()));
  const double n = static_cast<double>(z.size());
  double total = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double y = targets[i];
    total += std::max(z[i], 0.0) - z[i] * y + std::log1p(std::exp(-std::abs(z[i])));
  }
  const std::size_t iz = logits.id();
  return logits.tape().record(Tensor({1}, {total / n}), {iz}, [=](Tape& t, std::size_t self) {
    const double g = t.upstream(self)[0];
    const auto& zs = t.value(iz).storage();
    auto dst = t.grad_buffer(iz);
    for (std::size_t i = 0; i < zs.size(); ++i) {
      const double p = 1.0 / (1.0 + std::exp(-zs[i]));
      dst[i] += g * (p - targets[i]) / n;
    }
  });
}

}  // namespace ad
}  // namespace ctgraph
