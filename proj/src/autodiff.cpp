#include "changediff/autodiff.hpp"

#include <Eigen/Dense>
#include <cmath>

#include "changediff/errors.hpp"

namespace changediff {

std::string Tensor::shape_str() const {
  std::string s = "(";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

namespace ad {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EMap = Eigen::Map<EMat>;
using ECMap = Eigen::Map<const EMat>;

namespace {

EMap map2(Tensor& t, int r, int c) { return EMap(t.data.data(), r, c); }
ECMap cmap2(const Tensor& t, int r, int c) { return ECMap(t.data.data(), r, c); }

void check_same_shape(const Var a, const Var b, const char* op) {
  if (!a->value.same_shape(b->value))
    fail(ErrorKind::Shape, std::string(op) + ": shape mismatch " +
                               a->value.shape_str() + " vs " + b->value.shape_str());
}

}  // namespace

Var Tape::make(Tensor value, bool requires_grad, std::function<void()> backward) {
  nodes_.emplace_back();
  Node& n = nodes_.back();
  n.value = std::move(value);
  n.requires_grad = requires_grad && grad_on_;
  if (n.requires_grad) {
    n.grad = Tensor(n.value.shape);
    n.backward = std::move(backward);
  }
  order_.push_back(&n);
  return &n;
}

Var Tape::input(Tensor value) { return make(std::move(value), false, {}); }

Var Tape::leaf(Tensor value) { return make(std::move(value), true, {}); }

Var Tape::use(Param& p) {
  nodes_.emplace_back();
  Node& n = nodes_.back();
  n.value = p.value;
  n.requires_grad = grad_on_;
  if (n.requires_grad) {
    n.grad = Tensor(n.value.shape);
    Node* self = &n;
    Param* pp = &p;
    n.backward = [self, pp]() {
      for (size_t i = 0; i < pp->grad.data.size(); ++i)
        pp->grad.data[i] += self->grad.data[i];
    };
  }
  order_.push_back(&n);
  return &n;
}

void Tape::backward(Var loss) {
  if (!grad_on_) fail(ErrorKind::Internal, "backward on a no-grad tape");
  if (loss->value.size() != 1)
    fail(ErrorKind::Shape, "backward target must be scalar");
  if (!loss->requires_grad) return;  // nothing upstream to fill
  loss->grad.data[0] = 1.0;
  for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
    Node* n = *it;
    if (n->requires_grad && n->backward) n->backward();
  }
}

// ---------------------------------------------------------------- elementwise

Var add(Tape& t, Var a, Var b) {
  check_same_shape(a, b, "add");
  Tensor v(a->value.shape);
  for (size_t i = 0; i < v.data.size(); ++i)
    v.data[i] = a->value.data[i] + b->value.data[i];
  bool rg = a->requires_grad || b->requires_grad;
  Var out = t.make(std::move(v), rg, {});
  if (out->requires_grad)
    out->backward = [out, a, b]() {
      size_t n = out->grad.data.size();
      if (a->requires_grad)
        for (size_t i = 0; i < n; ++i) a->grad.data[i] += out->grad.data[i];
      if (b->requires_grad)
        for (size_t i = 0; i < n; ++i) b->grad.data[i] += out->grad.data[i];
    };
  return out;
}

Var sub(Tape& t, Var a, Var b) {
  check_same_shape(a, b, "sub");
  Tensor v(a->value.shape);
  for (size_t i = 0; i < v.data.size(); ++i)
    v.data[i] = a->value.data[i] - b->value.data[i];
  bool rg = a->requires_grad || b->requires_grad;
  Var out = t.make(std::move(v), rg, {});
  if (out->requires_grad)
    out->backward = [out, a, b]() {
      size_t n = out->grad.data.size();
      if (a->requires_grad)
        for (size_t i = 0; i < n; ++i) a->grad.data[i] += out->grad.data[i];
      if (b->requires_grad)
        for (size_t i = 0; i < n; ++i) b->grad.data[i] -= out->grad.data[i];
    };
  return out;
}

Var mul(Tape& t, Var a, Var b) {
  check_same_shape(a, b, "mul");
  Tensor v(a->value.shape);
  for (size_t i = 0; i < v.data.size(); ++i)
    v.data[i] = a->value.data[i] * b->value.data[i];
  bool rg = a->requires_grad || b->requires_grad;
  Var out = t.make(std::move(v), rg, {});
  if (out->requires_grad)
    out->backward = [out, a, b]() {
      size_t n = out->grad.data.size();
      if (a->requires_grad)
        for (size_t i = 0; i < n; ++i)
          a->grad.data[i] += out->grad.data[i] * b->value.data[i];
      if (b->requires_grad)
        for (size_t i = 0; i < n; ++i)
          b->grad.data[i] += out->grad.data[i] * a->value.data[i];
    };
  return out;
}

Var scale(Tape& t, Var a, double s) {
  Tensor v(a->value.shape);
  for (size_t i = 0; i < v.data.size(); ++i) v.data[i] = a->value.data[i] * s;
  Var out = t.make(std::move(v), a->requires_grad, {});
  if (out->requires_grad)
    out->backward = [out, a, s]() {
      for (size_t i = 0; i < out->grad.data.size(); ++i)
        a->grad.data[i] += out->grad.data[i] * s;
    };
  return out;
}

Var add_const(Tape& t, Var a, double c) {
  Tensor v(a->value.shape);
  for (size_t i = 0; i < v.data.size(); ++i) v.data[i] = a->value.data[i] + c;
  Var out = t.make(std::move(v), a->requires_grad, {});
  if (out->requires_grad)
    out->backward = [out, a]() {
      for (size_t i = 0; i < out->grad.data.size(); ++i)
        a->grad.data[i] += out->grad.data[i];
    };
  return out;
}

Var sigmoid(Tape& t, Var a) {
  Tensor v(a->value.shape);
  for (size_t i = 0; i < v.data.size(); ++i)
    v.data[i] = 1.0 / (1.0 + std::exp(-a->value.data[i]));
  Var out = t.make(std::move(v), a->requires_grad, {});
  if (out->requires_grad)
    out->backward = [out, a]() {
      for (size_t i = 0; i < out->grad.data.size(); ++i) {
        double y = out->value.data[i];
        a->grad.data[i] += out->grad.data[i] * y * (1.0 - y);
      }
    };
  return out;
}

Var silu(Tape& t, Var a) {
  Tensor v(a->value.shape);
  for (size_t i = 0; i < v.data.size(); ++i) {
    double x = a->value.data[i];
    v.data[i] = x / (1.0 + std::exp(-x));
  }
  Var out = t.make(std::move(v), a->requires_grad, {});
  if (out->requires_grad)
    out->backward = [out, a]() {
      for (size_t i = 0; i < out->grad.data.size(); ++i) {
        double x = a->value.data[i];
        double s = 1.0 / (1.0 + std::exp(-x));
        a->grad.data[i] += out->grad.data[i] * (s * (1.0 + x * (1.0 - s)));
      }
    };
  return out;
}

Var abs_val(Tape& t, Var a) {
  Tensor v(a->value.shape);
  for (size_t i = 0; i < v.data.size(); ++i) v.data[i] = std::abs(a->value.data[i]);
  Var out = t.make(std::move(v), a->requires_grad, {});
  if (out->requires_grad)
    out->backward = [out, a]() {
      for (size_t i = 0; i < out->grad.data.size(); ++i) {
        double x = a->value.data[i];
        double sign = x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0);
        a->grad.data[i] += out->grad.data[i] * sign;
      }
    };
  return out;
}

// --------------------------------------------------------------------- matrix

namespace {

void check_mat(const Var x, const char* op) {
  if (x->value.shape.size() != 2)
    fail(ErrorKind::Shape, std::string(op) + ": expected matrix, got " +
                               x->value.shape_str());
}

}  // namespace

Var matmul(Tape& t, Var a, Var b) {
  check_mat(a, "matmul");
  check_mat(b, "matmul");
  int m = a->value.shape[0], k = a->value.shape[1];
  int k2 = b->value.shape[0], n = b->value.shape[1];
  if (k != k2)
    fail(ErrorKind::Shape, "matmul: inner dims " + std::to_string(k) + " vs " +
                               std::to_string(k2));
  Tensor v({m, n});
  map2(v, m, n).noalias() = cmap2(a->value, m, k) * cmap2(b->value, k, n);
  bool rg = a->requires_grad || b->requires_grad;
  Var out = t.make(std::move(v), rg, {});
  if (out->requires_grad)
    out->backward = [out, a, b, m, k, n]() {
      ECMap dy(out->grad.data.data(), m, n);
      if (a->requires_grad)
        map2(a->grad, m, k).noalias() += dy * cmap2(b->value, k, n).transpose();
      if (b->requires_grad)
        map2(b->grad, k, n).noalias() += cmap2(a->value, m, k).transpose() * dy;
    };
  return out;
}

Var matmul_nt(Tape& t, Var a, Var b) {
  check_mat(a, "matmul_nt");
  check_mat(b, "matmul_nt");
  int m = a->value.shape[0], k = a->value.shape[1];
  int n = b->value.shape[0], k2 = b->value.shape[1];
  if (k != k2)
    fail(ErrorKind::Shape, "matmul_nt: inner dims " + std::to_string(k) + " vs " +
                               std::to_string(k2));
  Tensor v({m, n});
  map2(v, m, n).noalias() =
      cmap2(a->value, m, k) * cmap2(b->value, n, k).transpose();
  bool rg = a->requires_grad || b->requires_grad;
  Var out = t.make(std::move(v), rg, {});
  if (out->requires_grad)
    out->backward = [out, a, b, m, k, n]() {
      ECMap dy(out->grad.data.data(), m, n);
      if (a->requires_grad)
        map2(a->grad, m, k).noalias() += dy * cmap2(b->value, n, k);
      if (b->requires_grad)
        map2(b->grad, n, k).noalias() += dy.transpose() * cmap2(a->value, m, k);
    };
  return out;
}

Var transpose(Tape& t, Var x) {
  check_mat(x, "transpose");
  int r = x->value.shape[0], c = x->value.shape[1];
  Tensor v({c, r});
  EMap(v.data.data(), c, r).noalias() = cmap2(x->value, r, c).transpose();
  Var out = t.make(std::move(v), x->requires_grad, {});
  if (out->requires_grad)
    out->backward = [out, x, r, c]() {
      map2(x->grad, r, c).noalias() += ECMap(out->grad.data.data(), c, r).transpose();
    };
  return out;
}

Var add_bias_rows(Tape& t, Var x, Var b) {
  check_mat(x, "add_bias_rows");
  int r = x->value.shape[0], c = x->value.shape[1];
  if (b->value.size() != c)
    fail(ErrorKind::Shape, "add_bias_rows: bias size mismatch");
  Tensor v({r, c});
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j)
      v.data[i * c + j] = x->value.data[i * c + j] + b->value.data[j];
  bool rg = x->requires_grad || b->requires_grad;
  Var out = t.make(std::move(v), rg, {});
  if (out->requires_grad)
    out->backward = [out, x, b, r, c]() {
      if (x->requires_grad)
        for (size_t i = 0; i < out->grad.data.size(); ++i)
          x->grad.data[i] += out->grad.data[i];
      if (b->requires_grad)
        for (int i = 0; i < r; ++i)
          for (int j = 0; j < c; ++j) b->grad.data[j] += out->grad.data[i * c + j];
    };
  return out;
}

Var linear(Tape& t, Var x, Var w, Var b) { return add_bias_rows(t, matmul(t, x, w), b); }

Var slice_cols(Tape& t, Var x, int c0, int c1) {
  check_mat(x, "slice_cols");
  int r = x->value.shape[0], c = x->value.shape[1];
  if (!(0 <= c0 && c0 < c1 && c1 <= c)) fail(ErrorKind::Shape, "slice_cols: bad range");
  int w = c1 - c0;
  Tensor v({r, w});
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < w; ++j) v.data[i * w + j] = x->value.data[i * c + c0 + j];
  Var out = t.make(std::move(v), x->requires_grad, {});
  if (out->requires_grad)
    out->backward = [out, x, r, c, c0, w]() {
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < w; ++j)
          x->grad.data[i * c + c0 + j] += out->grad.data[i * w + j];
    };
  return out;
}

Var concat_cols(Tape& t, const std::vector<Var>& parts) {
  if (parts.empty()) fail(ErrorKind::Shape, "concat_cols: empty");
  int r = parts[0]->value.shape[0];
  int total = 0;
  bool rg = false;
  for (Var p : parts) {
    check_mat(p, "concat_cols");
    if (p->value.shape[0] != r) fail(ErrorKind::Shape, "concat_cols: row mismatch");
    total += p->value.shape[1];
    rg = rg || p->requires_grad;
  }
  Tensor v({r, total});
  int off = 0;
  for (Var p : parts) {
    int c = p->value.shape[1];
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j)
        v.data[i * total + off + j] = p->value.data[i * c + j];
    off += c;
  }
  Var out = t.make(std::move(v), rg, {});
  if (out->requires_grad) {
    std::vector<Var> ps = parts;
    out->backward = [out, ps, r, total]() {
      int off = 0;
      for (Var p : ps) {
        int c = p->value.shape[1];
        if (p->requires_grad)
          for (int i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j)
              p->grad.data[i * c + j] += out->grad.data[i * total + off + j];
        off += c;
      }
    };
  }
  return out;
}

Var mean_cols(Tape& t, Var x, int c0, int c1) {
  check_mat(x, "mean_cols");
  int r = x->value.shape[0], c = x->value.shape[1];
  if (!(0 <= c0 && c0 < c1 && c1 <= c)) fail(ErrorKind::Shape, "mean_cols: bad range");
  double inv = 1.0 / (c1 - c0);
  Tensor v({r});
  for (int i = 0; i < r; ++i) {
    double s = 0.0;
    for (int j = c0; j < c1; ++j) s += x->value.data[i * c + j];
    v.data[i] = s * inv;
  }
  Var out = t.make(std::move(v), x->requires_grad, {});
  if (out->requires_grad)
    out->backward = [out, x, r, c, c0, c1, inv]() {
      for (int i = 0; i < r; ++i) {
        double g = out->grad.data[i] * inv;
        for (int j = c0; j < c1; ++j) x->grad.data[i * c + j] += g;
      }
    };
  return out;
}

Var softmax_rows(Tape& t, Var x) {
  check_mat(x, "softmax_rows");
  int r = x->value.shape[0], c = x->value.shape[1];
  Tensor v({r, c});
  for (int i = 0; i < r; ++i) {
    const double* xi = &x->value.data[i * c];
    double m = xi[0];
    for (int j = 1; j < c; ++j) m = std::max(m, xi[j]);
    double s = 0.0;
    for (int j = 0; j < c; ++j) {
      double e = std::exp(xi[j] - m);
      v.data[i * c + j] = e;
      s += e;
    }
    double inv = 1.0 / s;
    for (int j = 0; j < c; ++j) v.data[i * c + j] *= inv;
  }
  Var out = t.make(std::move(v), x->requires_grad, {});
  if (out->requires_grad)
    out->backward = [out, x, r, c]() {
      for (int i = 0; i < r; ++i) {
        const double* y = &out->value.data[i * c];
        const double* dy = &out->grad.data[i * c];
        double dot = 0.0;
        for (int j = 0; j < c; ++j) dot += y[j] * dy[j];
        for (int j = 0; j < c; ++j) x->grad.data[i * c + j] += y[j] * (dy[j] - dot);
      }
    };
  return out;
}

Var layer_norm_rows(Tape& t, Var x, Var gamma, Var beta) {
  check_mat(x, "layer_norm_rows");
  int r = x->value.shape[0], c = x->value.shape[1];
  if (gamma->value.size() != c || beta->value.size() != c)
    fail(ErrorKind::Shape, "layer_norm_rows: affine size mismatch");
  constexpr double eps = 1e-5;
  Tensor v({r, c});
  Tensor xhat({r, c});
  Tensor inv_sigma({r});
  for (int i = 0; i < r; ++i) {
    const double* xi = &x->value.data[i * c];
    double mu = 0.0;
    for (int j = 0; j < c; ++j) mu += xi[j];
    mu /= c;
    double var = 0.0;
    for (int j = 0; j < c; ++j) var += (xi[j] - mu) * (xi[j] - mu);
    var /= c;
    double is = 1.0 / std::sqrt(var + eps);
    inv_sigma.data[i] = is;
    for (int j = 0; j < c; ++j) {
      double h = (xi[j] - mu) * is;
      xhat.data[i * c + j] = h;
      v.data[i * c + j] = h * gamma->value.data[j] + beta->value.data[j];
    }
  }
  bool rg = x->requires_grad || gamma->requires_grad || beta->requires_grad;
  Var out = t.make(std::move(v), rg, {});
  if (out->requires_grad) {
    auto xh = std::make_shared<Tensor>(std::move(xhat));
    auto is = std::make_shared<Tensor>(std::move(inv_sigma));
    out->backward = [out, x, gamma, beta, r, c, xh, is]() {
      for (int i = 0; i < r; ++i) {
        const double* dy = &out->grad.data[i * c];
        const double* h = &xh->data[i * c];
        if (gamma->requires_grad)
          for (int j = 0; j < c; ++j) gamma->grad.data[j] += dy[j] * h[j];
        if (beta->requires_grad)
          for (int j = 0; j < c; ++j) beta->grad.data[j] += dy[j];
        if (x->requires_grad) {
          double mean_g = 0.0, mean_gh = 0.0;
          for (int j = 0; j < c; ++j) {
            double g = dy[j] * gamma->value.data[j];
            mean_g += g;
            mean_gh += g * h[j];
          }
          mean_g /= c;
          mean_gh /= c;
          for (int j = 0; j < c; ++j) {
            double g = dy[j] * gamma->value.data[j];
            x->grad.data[i * c + j] += is->data[i] * (g - mean_g - h[j] * mean_gh);
          }
        }
      }
    };
  }
  return out;
}

Var gather_rows(Tape& t, Var table, const std::vector<int>& rows) {
  check_mat(table, "gather_rows");
  int v_rows = table->value.shape[0], d = table->value.shape[1];
  for (int r : rows)
    if (r < 0 || r >= v_rows) fail(ErrorKind::Shape, "gather_rows: index out of range");
  int n = static_cast<int>(rows.size());
  Tensor v({n, d});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) v.data[i * d + j] = table->value.data[rows[i] * d + j];
  Var out = t.make(std::move(v), table->requires_grad, {});
  if (out->requires_grad) {
    std::vector<int> idx = rows;
    out->backward = [out, table, idx, d]() {
      for (size_t i = 0; i < idx.size(); ++i)
        for (int j = 0; j < d; ++j)
          table->grad.data[idx[i] * d + j] += out->grad.data[i * d + j];
    };
  }
  return out;
}

// ---------------------------------------------------------------- image (C,H,W)

namespace {

void check_chw(const Var x, const char* op) {
  if (x->value.shape.size() != 3)
    fail(ErrorKind::Shape, std::string(op) + ": expected (C,H,W), got " +
                               x->value.shape_str());
}

// im2col for 3x3 pad-1: cols is [Ci*9, H*W].
void im2col3(const Tensor& x, Tensor& cols) {
  int ci = x.shape[0], h = x.shape[1], w = x.shape[2];
  int hw = h * w;
  for (int c = 0; c < ci; ++c) {
    for (int dy = -1; dy <= 1; ++dy) {
      for (int dx = -1; dx <= 1; ++dx) {
        int row = (c * 9 + (dy + 1) * 3 + (dx + 1));
        double* dst = &cols.data[static_cast<size_t>(row) * hw];
        for (int y = 0; y < h; ++y) {
          int sy = y + dy;
          if (sy < 0 || sy >= h) {
            for (int xx = 0; xx < w; ++xx) dst[y * w + xx] = 0.0;
            continue;
          }
          const double* src = &x.data[(static_cast<size_t>(c) * h + sy) * w];
          for (int xx = 0; xx < w; ++xx) {
            int sx = xx + dx;
            dst[y * w + xx] = (sx < 0 || sx >= w) ? 0.0 : src[sx];
          }
        }
      }
    }
  }
}

// Transpose of im2col3: scatter-add cols gradient back into dx.
void col2im3(const Tensor& dcols, Tensor& dx) {
  int ci = dx.shape[0], h = dx.shape[1], w = dx.shape[2];
  int hw = h * w;
  for (int c = 0; c < ci; ++c) {
    for (int dy = -1; dy <= 1; ++dy) {
      for (int dx_ = -1; dx_ <= 1; ++dx_) {
        int row = (c * 9 + (dy + 1) * 3 + (dx_ + 1));
        const double* src = &dcols.data[static_cast<size_t>(row) * hw];
        for (int y = 0; y < h; ++y) {
          int sy = y + dy;
          if (sy < 0 || sy >= h) continue;
          double* dst = &dx.data[(static_cast<size_t>(c) * h + sy) * w];
          for (int xx = 0; xx < w; ++xx) {
            int sx = xx + dx_;
            if (sx >= 0 && sx < w) dst[sx] += src[y * w + xx];
          }
        }
      }
    }
  }
}

}  // namespace

Var conv3x3(Tape& t, Var x, Var w, Var b) {
  check_chw(x, "conv3x3");
  int ci = x->value.shape[0], h = x->value.shape[1], ww = x->value.shape[2];
  if (w->value.shape.size() != 4 || w->value.shape[1] != ci ||
      w->value.shape[2] != 3 || w->value.shape[3] != 3)
    fail(ErrorKind::Shape, "conv3x3: weight must be (Co," + std::to_string(ci) +
                               ",3,3), got " + w->value.shape_str());
  int co = w->value.shape[0];
  if (b->value.size() != co) fail(ErrorKind::Shape, "conv3x3: bias size mismatch");
  int hw = h * ww;
  auto cols = std::make_shared<Tensor>(Tensor({ci * 9, hw}));
  im2col3(x->value, *cols);
  Tensor v({co, h, ww});
  EMap(v.data.data(), co, hw).noalias() =
      ECMap(w->value.data.data(), co, ci * 9) * ECMap(cols->data.data(), ci * 9, hw);
  for (int c = 0; c < co; ++c) {
    double bias = b->value.data[c];
    double* row = &v.data[static_cast<size_t>(c) * hw];
    for (int i = 0; i < hw; ++i) row[i] += bias;
  }
  bool rg = x->requires_grad || w->requires_grad || b->requires_grad;
  Var out = t.make(std::move(v), rg, {});
  if (out->requires_grad)
    out->backward = [out, x, w, b, cols, ci, co, h, ww, hw]() {
      ECMap dy(out->grad.data.data(), co, hw);
      if (b->requires_grad)
        for (int c = 0; c < co; ++c)
          b->grad.data[c] += dy.row(c).sum();
      if (w->requires_grad)
        EMap(w->grad.data.data(), co, ci * 9).noalias() +=
            dy * ECMap(cols->data.data(), ci * 9, hw).transpose();
      if (x->requires_grad) {
        Tensor dcols({ci * 9, hw});
        EMap(dcols.data.data(), ci * 9, hw).noalias() =
            ECMap(w->value.data.data(), co, ci * 9).transpose() * dy;
        col2im3(dcols, x->grad);
      }
    };
  return out;
}

Var conv1x1(Tape& t, Var x, Var w, Var b) {
  check_chw(x, "conv1x1");
  int ci = x->value.shape[0], h = x->value.shape[1], ww = x->value.shape[2];
  if (w->value.shape.size() != 2 || w->value.shape[1] != ci)
    fail(ErrorKind::Shape, "conv1x1: weight must be (Co,Ci)");
  int co = w->value.shape[0];
  if (b->value.size() != co) fail(ErrorKind::Shape, "conv1x1: bias size mismatch");
  int hw = h * ww;
  Tensor v({co, h, ww});
  EMap(v.data.data(), co, hw).noalias() =
      ECMap(w->value.data.data(), co, ci) * ECMap(x->value.data.data(), ci, hw);
  for (int c = 0; c < co; ++c) {
    double bias = b->value.data[c];
    double* row = &v.data[static_cast<size_t>(c) * hw];
    for (int i = 0; i < hw; ++i) row[i] += bias;
  }
  bool rg = x->requires_grad || w->requires_grad || b->requires_grad;
  Var out = t.make(std::move(v), rg, {});
  if (out->requires_grad)
    out->backward = [out, x, w, b, ci, co, hw]() {
      ECMap dy(out->grad.data.data(), co, hw);
      if (b->requires_grad)
        for (int c = 0; c < co; ++c) b->grad.data[c] += dy.row(c).sum();
      if (w->requires_grad)
        EMap(w->grad.data.data(), co, ci).noalias() +=
            dy * ECMap(x->value.data.data(), ci, hw).transpose();
      if (x->requires_grad)
        EMap(x->grad.data.data(), ci, hw).noalias() +=
            ECMap(w->value.data.data(), co, ci).transpose() * dy;
    };
  return out;
}

Var group_norm(Tape& t, Var x, Var gamma, Var beta, int groups) {
  check_chw(x, "group_norm");
  int c = x->value.shape[0], h = x->value.shape[1], w = x->value.shape[2];
  if (c % groups != 0) fail(ErrorKind::Shape, "group_norm: channels % groups != 0");
  if (gamma->value.size() != c || beta->value.size() != c)
    fail(ErrorKind::Shape, "group_norm: affine size mismatch");
  constexpr double eps = 1e-5;
  int cpg = c / groups;
  int64_t gsize = static_cast<int64_t>(cpg) * h * w;
  Tensor v(x->value.shape);
  Tensor xhat(x->value.shape);
  Tensor inv_sigma({groups});
  int hw = h * w;
  for (int g = 0; g < groups; ++g) {
    const double* base = &x->value.data[static_cast<size_t>(g) * cpg * hw];
    double mu = 0.0;
    for (int64_t i = 0; i < gsize; ++i) mu += base[i];
    mu /= gsize;
    double var = 0.0;
    for (int64_t i = 0; i < gsize; ++i) var += (base[i] - mu) * (base[i] - mu);
    var /= gsize;
    double is = 1.0 / std::sqrt(var + eps);
    inv_sigma.data[g] = is;
    for (int cc = 0; cc < cpg; ++cc) {
      int ch = g * cpg + cc;
      double gam = gamma->value.data[ch], bet = beta->value.data[ch];
      for (int i = 0; i < hw; ++i) {
        size_t idx = static_cast<size_t>(ch) * hw + i;
        double hv = (x->value.data[idx] - mu) * is;
        xhat.data[idx] = hv;
        v.data[idx] = hv * gam + bet;
      }
    }
  }
  bool rg = x->requires_grad || gamma->requires_grad || beta->requires_grad;
  Var out = t.make(std::move(v), rg, {});
  if (out->requires_grad) {
    auto xh = std::make_shared<Tensor>(std::move(xhat));
    auto is = std::make_shared<Tensor>(std::move(inv_sigma));
    out->backward = [out, x, gamma, beta, groups, cpg, hw, gsize, xh, is]() {
      for (int g = 0; g < groups; ++g) {
        double mean_gd = 0.0, mean_gdh = 0.0;
        for (int cc = 0; cc < cpg; ++cc) {
          int ch = g * cpg + cc;
          double gam = gamma->value.data[ch];
          for (int i = 0; i < hw; ++i) {
            size_t idx = static_cast<size_t>(ch) * hw + i;
            double dy = out->grad.data[idx];
            double hv = xh->data[idx];
            if (gamma->requires_grad) gamma->grad.data[ch] += dy * hv;
            if (beta->requires_grad) beta->grad.data[ch] += dy;
            double gd = dy * gam;
            mean_gd += gd;
            mean_gdh += gd * hv;
          }
        }
        if (!x->requires_grad) continue;
        mean_gd /= gsize;
        mean_gdh /= gsize;
        double isg = is->data[g];
        for (int cc = 0; cc < cpg; ++cc) {
          int ch = g * cpg + cc;
          double gam = gamma->value.data[ch];
          for (int i = 0; i < hw; ++i) {
            size_t idx = static_cast<size_t>(ch) * hw + i;
            double gd = out->grad.data[idx] * gam;
            x->grad.data[idx] += isg * (gd - mean_gd - xh->data[idx] * mean_gdh);
          }
        }
      }
    };
  }
  return out;
}

Var add_bias_ch(Tape& t, Var x, Var b) {
  check_chw(x, "add_bias_ch");
  int c = x->value.shape[0], hw = x->value.shape[1] * x->value.shape[2];
  if (b->value.size() != c) fail(ErrorKind::Shape, "add_bias_ch: bias size mismatch");
  Tensor v(x->value.shape);
  for (int ch = 0; ch < c; ++ch) {
    double bias = b->value.data[ch];
    for (int i = 0; i < hw; ++i)
      v.data[static_cast<size_t>(ch) * hw + i] =
          x->value.data[static_cast<size_t>(ch) * hw + i] + bias;
  }
  bool rg = x->requires_grad || b->requires_grad;
  Var out = t.make(std::move(v), rg, {});
  if (out->requires_grad)
    out->backward = [out, x, b, c, hw]() {
      if (x->requires_grad)
        for (size_t i = 0; i < out->grad.data.size(); ++i)
          x->grad.data[i] += out->grad.data[i];
      if (b->requires_grad)
        for (int ch = 0; ch < c; ++ch) {
          double s = 0.0;
          for (int i = 0; i < hw; ++i) s += out->grad.data[static_cast<size_t>(ch) * hw + i];
          b->grad.data[ch] += s;
        }
    };
  return out;
}

Var avgpool2(Tape& t, Var x) {
  check_chw(x, "avgpool2");
  int c = x->value.shape[0], h = x->value.shape[1], w = x->value.shape[2];
  if (h % 2 || w % 2) fail(ErrorKind::Shape, "avgpool2: odd spatial size");
  int oh = h / 2, ow = w / 2;
  Tensor v({c, oh, ow});
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < oh; ++y)
      for (int xx = 0; xx < ow; ++xx) {
        const double* p = &x->value.data[(static_cast<size_t>(ch) * h + 2 * y) * w + 2 * xx];
        v.data[(static_cast<size_t>(ch) * oh + y) * ow + xx] =
            0.25 * (p[0] + p[1] + p[w] + p[w + 1]);
      }
  Var out = t.make(std::move(v), x->requires_grad, {});
  if (out->requires_grad)
    out->backward = [out, x, c, h, w, oh, ow]() {
      for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < oh; ++y)
          for (int xx = 0; xx < ow; ++xx) {
            double g = 0.25 * out->grad.data[(static_cast<size_t>(ch) * oh + y) * ow + xx];
            double* p = &x->grad.data[(static_cast<size_t>(ch) * h + 2 * y) * w + 2 * xx];
            p[0] += g;
            p[1] += g;
            p[w] += g;
            p[w + 1] += g;
          }
    };
  return out;
}

Var upsample2(Tape& t, Var x) {
  check_chw(x, "upsample2");
  int c = x->value.shape[0], h = x->value.shape[1], w = x->value.shape[2];
  int oh = h * 2, ow = w * 2;
  Tensor v({c, oh, ow});
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < oh; ++y)
      for (int xx = 0; xx < ow; ++xx)
        v.data[(static_cast<size_t>(ch) * oh + y) * ow + xx] =
            x->value.data[(static_cast<size_t>(ch) * h + y / 2) * w + xx / 2];
  Var out = t.make(std::move(v), x->requires_grad, {});
  if (out->requires_grad)
    out->backward = [out, x, c, h, w, oh, ow]() {
      for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < oh; ++y)
          for (int xx = 0; xx < ow; ++xx)
            x->grad.data[(static_cast<size_t>(ch) * h + y / 2) * w + xx / 2] +=
                out->grad.data[(static_cast<size_t>(ch) * oh + y) * ow + xx];
    };
  return out;
}

Var concat_ch(Tape& t, Var a, Var b) {
  check_chw(a, "concat_ch");
  check_chw(b, "concat_ch");
  if (a->value.shape[1] != b->value.shape[1] || a->value.shape[2] != b->value.shape[2])
    fail(ErrorKind::Shape, "concat_ch: spatial mismatch");
  int ca = a->value.shape[0], cb = b->value.shape[0];
  int hw = a->value.shape[1] * a->value.shape[2];
  Tensor v({ca + cb, a->value.shape[1], a->value.shape[2]});
  std::copy(a->value.data.begin(), a->value.data.end(), v.data.begin());
  std::copy(b->value.data.begin(), b->value.data.end(),
            v.data.begin() + static_cast<size_t>(ca) * hw);
  bool rg = a->requires_grad || b->requires_grad;
  Var out = t.make(std::move(v), rg, {});
  if (out->requires_grad)
    out->backward = [out, a, b, ca, hw]() {
      size_t na = a->grad.data.empty() ? a->value.data.size() : a->grad.data.size();
      if (a->requires_grad)
        for (size_t i = 0; i < na; ++i) a->grad.data[i] += out->grad.data[i];
      if (b->requires_grad) {
        size_t off = static_cast<size_t>(ca) * hw;
        for (size_t i = 0; i < b->value.data.size(); ++i)
          b->grad.data[i] += out->grad.data[off + i];
      }
    };
  return out;
}

Var reshape(Tape& t, Var x, std::vector<int> shape) {
  if (Tensor::numel(shape) != x->value.size())
    fail(ErrorKind::Shape, "reshape: numel mismatch");
  Tensor v(shape);
  v.data = x->value.data;
  Var out = t.make(std::move(v), x->requires_grad, {});
  if (out->requires_grad)
    out->backward = [out, x]() {
      for (size_t i = 0; i < out->grad.data.size(); ++i)
        x->grad.data[i] += out->grad.data[i];
    };
  return out;
}

// -------------------------------------------------------- reductions / scalars

Var sum_all(Tape& t, Var x) {
  double s = 0.0;
  for (double v : x->value.data) s += v;
  Var out = t.make(Tensor::scalar(s), x->requires_grad, {});
  if (out->requires_grad)
    out->backward = [out, x]() {
      double g = out->grad.data[0];
      for (size_t i = 0; i < x->grad.data.size(); ++i) x->grad.data[i] += g;
    };
  return out;
}

Var mean_all(Tape& t, Var x) {
  return scale(t, sum_all(t, x), 1.0 / static_cast<double>(x->value.size()));
}

Var max_all(Tape& t, Var x) {
  size_t arg = 0;
  double m = x->value.data[0];
  for (size_t i = 1; i < x->value.data.size(); ++i)
    if (x->value.data[i] > m) {
      m = x->value.data[i];
      arg = i;
    }
  Var out = t.make(Tensor::scalar(m), x->requires_grad, {});
  if (out->requires_grad)
    out->backward = [out, x, arg]() { x->grad.data[arg] += out->grad.data[0]; };
  return out;
}

Var sub_bcast(Tape& t, Var x, Var s) {
  if (s->value.size() != 1) fail(ErrorKind::Shape, "sub_bcast: scalar expected");
  Tensor v(x->value.shape);
  double sv = s->value.data[0];
  for (size_t i = 0; i < v.data.size(); ++i) v.data[i] = x->value.data[i] - sv;
  bool rg = x->requires_grad || s->requires_grad;
  Var out = t.make(std::move(v), rg, {});
  if (out->requires_grad)
    out->backward = [out, x, s]() {
      if (x->requires_grad)
        for (size_t i = 0; i < out->grad.data.size(); ++i)
          x->grad.data[i] += out->grad.data[i];
      if (s->requires_grad) {
        double g = 0.0;
        for (double d : out->grad.data) g += d;
        s->grad.data[0] -= g;
      }
    };
  return out;
}

Var mse(Tape& t, Var a, Var b) {
  Var d = sub(t, a, b);
  return mean_all(t, mul(t, d, d));
}

}  // namespace ad
}  // namespace changediff
