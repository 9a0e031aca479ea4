#include "labeldiff/autograd.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <unordered_set>

#include "labeldiff/errors.hpp"

namespace labeldiff::ag {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

thread_local bool g_grad_enabled = true;

Var make_result(Shape shape, Buffer value, std::vector<Var> parents,
                std::function<void(Node&)> backward_fn) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  if (g_grad_enabled) {
    const bool any = std::any_of(parents.begin(), parents.end(),
                                 [](const Var& p) { return p.defined() && p.requires_grad(); });
    if (any) {
      node->requires_grad = true;
      node->parents.reserve(parents.size());
      for (auto& p : parents) node->parents.push_back(p.node_ptr());
      node->backward = std::move(backward_fn);
    }
  }
  return Var(std::move(node));
}

// Gradient buffer of parent i, or nullptr when it does not need one.
double* parent_grad(Node& self, std::size_t i) {
  Node* p = self.parents[i].get();
  if (p == nullptr || !p->requires_grad) return nullptr;
  p->ensure_grad();
  return p->grad.data();
}

std::size_t leading_rows(const Var& x) { return x.size() / static_cast<std::size_t>(x.dim(-1)); }

void require(bool cond, const std::string& what) {
  if (!cond) throw ShapeError(what);
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Four-row microkernel. Rows are independent, each accumulating over k in order.
inline void gemm_block4(int n, int k, const double* a, int lda, const double* __restrict b,
                        double* __restrict c) {
  double* r0 = c;
  double* r1 = c + n;
  double* r2 = c + 2 * static_cast<std::ptrdiff_t>(n);
  double* r3 = c + 3 * static_cast<std::ptrdiff_t>(n);
  std::memset(c, 0, sizeof(double) * 4 * static_cast<std::size_t>(n));
  for (int p = 0; p < k; ++p) {
    const double* bp = b + static_cast<std::size_t>(p) * n;
    const double a0 = a[p];
    const double a1 = a[lda + p];
    const double a2 = a[2 * lda + p];
    const double a3 = a[3 * lda + p];
    for (int j = 0; j < n; ++j) {
      const double bv = bp[j];
      r0[j] += a0 * bv;
      r1[j] += a1 * bv;
      r2[j] += a2 * bv;
      r3[j] += a3 * bv;
    }
  }
}

}  // namespace

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  return n;
}

std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Var Var::constant(Shape shape, std::vector<double> values) {
  require(shape_size(shape) == values.size(), "constant: value count does not match shape " + shape_string(shape));
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value.assign(values.begin(), values.end());
  return Var(std::move(node));
}

Var Var::zeros(Shape shape) {
  auto node = std::make_shared<Node>();
  node->value.assign(shape_size(shape), 0.0);
  node->shape = std::move(shape);
  return Var(std::move(node));
}

Var Var::parameter(Shape shape, std::vector<double> values) {
  Var v = constant(std::move(shape), std::move(values));
  v.node_->requires_grad = true;
  return v;
}

void Var::zero_grad() {
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

double Var::item() const {
  require(size() == 1, "item() on non-scalar " + shape_string(shape()));
  return node_->value[0];
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

void backward(const Var& root) {
  require(root.size() == 1, "backward() needs a scalar root");
  if (!root.requires_grad()) return;
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.node(), 0}};
  seen.insert(root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && !p->parents.empty() && seen.insert(p).second) {
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root.node()->ensure_grad();
  root.node()->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

void row_gemm(int m, int n, int k, const double* a, const double* b, double* c) {
  int i = 0;
  for (; i + 4 <= m; i += 4) {
    gemm_block4(n, k, a + static_cast<std::size_t>(i) * k, k, b, c + static_cast<std::size_t>(i) * n);
  }
  if (i < m) {
    const int rest = m - i;
    Buffer pad_a(4 * static_cast<std::size_t>(k), 0.0);
    Buffer pad_c(4 * static_cast<std::size_t>(n), 0.0);
    std::memcpy(pad_a.data(), a + static_cast<std::size_t>(i) * k, sizeof(double) * rest * k);
    gemm_block4(n, k, pad_a.data(), k, b, pad_c.data());
    std::memcpy(c + static_cast<std::size_t>(i) * n, pad_c.data(), sizeof(double) * rest * n);
  }
}

Var add(const Var& a, const Var& b) {
  require(a.shape() == b.shape(), "add: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  Buffer out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (double* g = parent_grad(self, p)) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
      }
    }
  });
}

Var scale(const Var& a, double s) {
  Buffer out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * s;
  return make_result(a.shape(), std::move(out), {a}, [s](Node& self) {
    if (double* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += s * self.grad[i];
    }
  });
}

Var silu(const Var& x) {
  Buffer out(x.size());
  const auto xv = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * sigmoid(xv[i]);
  return make_result(x.shape(), std::move(out), {x}, [](Node& self) {
    if (double* g = parent_grad(self, 0)) {
      const auto& xv = self.parents[0]->value;
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        const double s = sigmoid(xv[i]);
        g[i] += self.grad[i] * s * (1.0 + xv[i] * (1.0 - s));
      }
    }
  });
}

namespace {

// Shared backward for y = x w (+ b): rows x cols products.
void linear_backward(Node& self, int rows, int in, int out, const double* input_rows,
                     bool has_bias, bool input_grad = true) {
  ConstMapMat dy(self.grad.data(), rows, out);
  const Node& w = *self.parents[1];
  if (double* gx = input_grad ? parent_grad(self, 0) : nullptr) {
    MapMat dx(gx, rows, in);
    ConstMapMat wm(w.value.data(), in, out);
    dx.noalias() += dy * wm.transpose();
  }
  if (double* gw = parent_grad(self, 1)) {
    MapMat dw(gw, in, out);
    ConstMapMat xm(input_rows, rows, in);
    dw.noalias() += xm.transpose() * dy;
  }
  if (has_bias) {
    if (double* gb = parent_grad(self, 2)) {
      Eigen::Map<Eigen::RowVectorXd> db(gb, out);
      db += dy.colwise().sum();
    }
  }
}

Var linear_impl(const Var& x, const Var& w, const Var* bias) {
  require(w.rank() == 2, "linear: weight must be rank 2");
  const int in = w.dim(0);
  const int out = w.dim(1);
  require(x.dim(-1) == in, "linear: input width " + std::to_string(x.dim(-1)) + " vs weight " +
                               shape_string(w.shape()));
  const int rows = static_cast<int>(leading_rows(x));
  Buffer y(static_cast<std::size_t>(rows) * out);
  row_gemm(rows, out, in, x.value().data(), w.value().data(), y.data());
  if (bias) {
    require(bias->size() == static_cast<std::size_t>(out), "linear: bias width");
    const auto bv = bias->value();
    for (int r = 0; r < rows; ++r) {
      for (int j = 0; j < out; ++j) y[static_cast<std::size_t>(r) * out + j] += bv[j];
    }
  }
  Shape shape = x.shape();
  shape.back() = out;
  std::vector<Var> parents{x, w};
  if (bias) parents.push_back(*bias);
  const bool has_bias = bias != nullptr;
  return make_result(std::move(shape), std::move(y), std::move(parents),
                     [rows, in, out, has_bias](Node& self) {
                       linear_backward(self, rows, in, out, self.parents[0]->value.data(), has_bias);
                     });
}

}  // namespace

Var matmul(const Var& x, const Var& w) { return linear_impl(x, w, nullptr); }
Var linear(const Var& x, const Var& w, const Var& bias) { return linear_impl(x, w, &bias); }

Var conv2d(const Var& x, const Var& w, const Var& bias, int kernel, int stride, int pad) {
  require(x.rank() == 4, "conv2d: input must be [B,H,W,C], got " + shape_string(x.shape()));
  const int batch = x.dim(0), height = x.dim(1), width = x.dim(2), cin = x.dim(3);
  require(w.rank() == 2 && w.dim(0) == kernel * kernel * cin,
          "conv2d: weight " + shape_string(w.shape()) + " incompatible with " + std::to_string(cin) +
              " input channels");
  const int cout = w.dim(1);
  require(bias.size() == static_cast<std::size_t>(cout), "conv2d: bias width");
  const int oh = (height + 2 * pad - kernel) / stride + 1;
  const int ow = (width + 2 * pad - kernel) / stride + 1;
  require(oh > 0 && ow > 0, "conv2d: empty output");
  const int patch = kernel * kernel * cin;
  const std::size_t rows = static_cast<std::size_t>(batch) * oh * ow;

  auto col = std::make_shared<Buffer>(rows * patch, 0.0);
  const auto xv = x.value();
  for (int b = 0; b < batch; ++b) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        double* dst = col->data() + ((static_cast<std::size_t>(b) * oh + oy) * ow + ox) * patch;
        for (int ky = 0; ky < kernel; ++ky) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= height) continue;
          for (int kx = 0; kx < kernel; ++kx) {
            const int ix = ox * stride - pad + kx;
            if (ix < 0 || ix >= width) continue;
            const double* src = xv.data() + ((static_cast<std::size_t>(b) * height + iy) * width + ix) * cin;
            std::memcpy(dst + (ky * kernel + kx) * cin, src, sizeof(double) * cin);
          }
        }
      }
    }
  }
  Buffer y(rows * cout);
  row_gemm(static_cast<int>(rows), cout, patch, col->data(), w.value().data(), y.data());
  const auto bv = bias.value();
  for (std::size_t r = 0; r < rows; ++r) {
    for (int j = 0; j < cout; ++j) y[r * cout + j] += bv[j];
  }
  if (!grad_enabled()) col.reset();
  return make_result(
      {batch, oh, ow, cout}, std::move(y), {x, w, bias},
      [=](Node& self) {
        const int nrows = static_cast<int>(rows);
        linear_backward(self, nrows, patch, cout, col->data(), true, false);
        double* gx = parent_grad(self, 0);
        if (!gx) return;
        RowMat dcol(nrows, patch);
        ConstMapMat dy(self.grad.data(), nrows, cout);
        ConstMapMat wm(self.parents[1]->value.data(), patch, cout);
        dcol.noalias() = dy * wm.transpose();
        for (int b = 0; b < batch; ++b) {
          for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
              const double* src = dcol.data() + ((static_cast<std::size_t>(b) * oh + oy) * ow + ox) * patch;
              for (int ky = 0; ky < kernel; ++ky) {
                const int iy = oy * stride - pad + ky;
                if (iy < 0 || iy >= height) continue;
                for (int kx = 0; kx < kernel; ++kx) {
                  const int ix = ox * stride - pad + kx;
                  if (ix < 0 || ix >= width) continue;
                  double* dst = gx + ((static_cast<std::size_t>(b) * height + iy) * width + ix) * cin;
                  const double* s = src + (ky * kernel + kx) * cin;
                  for (int c = 0; c < cin; ++c) dst[c] += s[c];
                }
              }
            }
          }
        }
      });
}

Var group_norm(const Var& x, const Var& gamma, const Var& beta, int groups, double eps) {
  require(x.rank() >= 2, "group_norm: rank");
  const int batch = x.dim(0);
  const int channels = x.dim(-1);
  require(groups > 0 && channels % groups == 0,
          "group_norm: " + std::to_string(channels) + " channels not divisible into " + std::to_string(groups));
  require(gamma.size() == static_cast<std::size_t>(channels) && beta.size() == gamma.size(),
          "group_norm: affine width");
  const std::size_t spatial = x.size() / (static_cast<std::size_t>(batch) * channels);
  const int per = channels / groups;
  const double count = static_cast<double>(spatial) * per;
  auto xhat = std::make_shared<Buffer>(x.size());
  auto rstd = std::make_shared<Buffer>(static_cast<std::size_t>(batch) * groups);
  Buffer y(x.size());
  const auto xv = x.value();
  const auto gv = gamma.value();
  const auto bv = beta.value();
  for (int b = 0; b < batch; ++b) {
    const std::size_t base = static_cast<std::size_t>(b) * spatial * channels;
    for (int g = 0; g < groups; ++g) {
      double sum = 0.0;
      for (std::size_t s = 0; s < spatial; ++s) {
        for (int c = g * per; c < (g + 1) * per; ++c) sum += xv[base + s * channels + c];
      }
      const double mean = sum / count;
      double var = 0.0;
      for (std::size_t s = 0; s < spatial; ++s) {
        for (int c = g * per; c < (g + 1) * per; ++c) {
          const double d = xv[base + s * channels + c] - mean;
          var += d * d;
        }
      }
      const double r = 1.0 / std::sqrt(var / count + eps);
      (*rstd)[static_cast<std::size_t>(b) * groups + g] = r;
      for (std::size_t s = 0; s < spatial; ++s) {
        for (int c = g * per; c < (g + 1) * per; ++c) {
          const std::size_t i = base + s * channels + c;
          (*xhat)[i] = (xv[i] - mean) * r;
          y[i] = (*xhat)[i] * gv[c] + bv[c];
        }
      }
    }
  }
  return make_result(x.shape(), std::move(y), {x, gamma, beta}, [=](Node& self) {
    const auto& gv = self.parents[1]->value;
    const auto& dy = self.grad;
    if (double* gg = parent_grad(self, 1)) {
      for (std::size_t i = 0; i < dy.size(); ++i) gg[i % channels] += dy[i] * (*xhat)[i];
    }
    if (double* gb = parent_grad(self, 2)) {
      for (std::size_t i = 0; i < dy.size(); ++i) gb[i % channels] += dy[i];
    }
    double* gx = parent_grad(self, 0);
    if (!gx) return;
    for (int b = 0; b < batch; ++b) {
      const std::size_t base = static_cast<std::size_t>(b) * spatial * channels;
      for (int g = 0; g < groups; ++g) {
        double mean_d = 0.0, mean_dx = 0.0;
        for (std::size_t s = 0; s < spatial; ++s) {
          for (int c = g * per; c < (g + 1) * per; ++c) {
            const std::size_t i = base + s * channels + c;
            const double d = dy[i] * gv[c];
            mean_d += d;
            mean_dx += d * (*xhat)[i];
          }
        }
        mean_d /= count;
        mean_dx /= count;
        const double r = (*rstd)[static_cast<std::size_t>(b) * groups + g];
        for (std::size_t s = 0; s < spatial; ++s) {
          for (int c = g * per; c < (g + 1) * per; ++c) {
            const std::size_t i = base + s * channels + c;
            gx[i] += r * (dy[i] * gv[c] - mean_d - (*xhat)[i] * mean_dx);
          }
        }
      }
    }
  });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  const int width = x.dim(-1);
  require(gamma.size() == static_cast<std::size_t>(width) && beta.size() == gamma.size(),
          "layer_norm: affine width");
  const std::size_t rows = leading_rows(x);
  auto xhat = std::make_shared<Buffer>(x.size());
  auto rstd = std::make_shared<Buffer>(rows);
  Buffer y(x.size());
  const auto xv = x.value();
  const auto gv = gamma.value();
  const auto bv = beta.value();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data() + r * width;
    double mean = 0.0;
    for (int c = 0; c < width; ++c) mean += row[c];
    mean /= width;
    double var = 0.0;
    for (int c = 0; c < width; ++c) var += (row[c] - mean) * (row[c] - mean);
    const double rs = 1.0 / std::sqrt(var / width + eps);
    (*rstd)[r] = rs;
    for (int c = 0; c < width; ++c) {
      const std::size_t i = r * width + c;
      (*xhat)[i] = (row[c] - mean) * rs;
      y[i] = (*xhat)[i] * gv[c] + bv[c];
    }
  }
  return make_result(x.shape(), std::move(y), {x, gamma, beta}, [=](Node& self) {
    const auto& gv = self.parents[1]->value;
    const auto& dy = self.grad;
    if (double* gg = parent_grad(self, 1)) {
      for (std::size_t i = 0; i < dy.size(); ++i) gg[i % width] += dy[i] * (*xhat)[i];
    }
    if (double* gb = parent_grad(self, 2)) {
      for (std::size_t i = 0; i < dy.size(); ++i) gb[i % width] += dy[i];
    }
    double* gx = parent_grad(self, 0);
    if (!gx) return;
    for (std::size_t r = 0; r < rows; ++r) {
      double mean_d = 0.0, mean_dx = 0.0;
      for (int c = 0; c < width; ++c) {
        const std::size_t i = r * width + c;
        const double d = dy[i] * gv[c];
        mean_d += d;
        mean_dx += d * (*xhat)[i];
      }
      mean_d /= width;
      mean_dx /= width;
      for (int c = 0; c < width; ++c) {
        const std::size_t i = r * width + c;
        gx[i] += (*rstd)[r] * (dy[i] * gv[c] - mean_d - (*xhat)[i] * mean_dx);
      }
    }
  });
}

Var add_per_sample(const Var& x, const Var& v) {
  const int batch = x.dim(0);
  const int channels = x.dim(-1);
  require(v.size() == static_cast<std::size_t>(batch) * channels,
          "add_per_sample: " + shape_string(v.shape()) + " vs " + shape_string(x.shape()));
  const std::size_t inner = x.size() / (static_cast<std::size_t>(batch) * channels);
  Buffer y(x.value().begin(), x.value().end());
  const auto vv = v.value();
  for (int b = 0; b < batch; ++b) {
    for (std::size_t s = 0; s < inner; ++s) {
      double* row = y.data() + (static_cast<std::size_t>(b) * inner + s) * channels;
      for (int c = 0; c < channels; ++c) row[c] += vv[static_cast<std::size_t>(b) * channels + c];
    }
  }
  return make_result(x.shape(), std::move(y), {x, v}, [=](Node& self) {
    if (double* gx = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i];
    }
    if (double* gv = parent_grad(self, 1)) {
      for (int b = 0; b < batch; ++b) {
        for (std::size_t s = 0; s < inner; ++s) {
          const double* row = self.grad.data() + (static_cast<std::size_t>(b) * inner + s) * channels;
          for (int c = 0; c < channels; ++c) gv[static_cast<std::size_t>(b) * channels + c] += row[c];
        }
      }
    }
  });
}

Var concat_last(const Var& a, const Var& b) {
  require(a.rank() == b.rank(), "concat_last: rank mismatch");
  for (int i = 0; i + 1 < a.rank(); ++i) require(a.dim(i) == b.dim(i), "concat_last: leading dims differ");
  const int ca = a.dim(-1), cb = b.dim(-1);
  const std::size_t rows = leading_rows(a);
  Buffer y(rows * (ca + cb));
  for (std::size_t r = 0; r < rows; ++r) {
    std::memcpy(y.data() + r * (ca + cb), a.value().data() + r * ca, sizeof(double) * ca);
    std::memcpy(y.data() + r * (ca + cb) + ca, b.value().data() + r * cb, sizeof(double) * cb);
  }
  Shape shape = a.shape();
  shape.back() = ca + cb;
  return make_result(std::move(shape), std::move(y), {a, b}, [=](Node& self) {
    double* ga = parent_grad(self, 0);
    double* gb = parent_grad(self, 1);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* src = self.grad.data() + r * (ca + cb);
      if (ga) for (int c = 0; c < ca; ++c) ga[r * ca + c] += src[c];
      if (gb) for (int c = 0; c < cb; ++c) gb[r * cb + c] += src[ca + c];
    }
  });
}

Var slice_last(const Var& x, int start, int count) {
  const int width = x.dim(-1);
  require(start >= 0 && count >= 0 && start + count <= width, "slice_last: range");
  const std::size_t rows = leading_rows(x);
  Buffer y(rows * count);
  for (std::size_t r = 0; r < rows; ++r) {
    std::memcpy(y.data() + r * count, x.value().data() + r * width + start, sizeof(double) * count);
  }
  Shape shape = x.shape();
  shape.back() = count;
  return make_result(std::move(shape), std::move(y), {x}, [=](Node& self) {
    if (double* g = parent_grad(self, 0)) {
      for (std::size_t r = 0; r < rows; ++r) {
        for (int c = 0; c < count; ++c) g[r * width + start + c] += self.grad[r * count + c];
      }
    }
  });
}

Var concat_tokens(const Var& a, const Var& b) {
  require(a.rank() == 3 && b.rank() == 3, "concat_tokens: expects [B,N,C]");
  require(a.dim(0) == b.dim(0) && a.dim(2) == b.dim(2),
          "concat_tokens: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  const int batch = a.dim(0), na = a.dim(1), nb = b.dim(1), c = a.dim(2);
  const std::size_t sa = static_cast<std::size_t>(na) * c, sb = static_cast<std::size_t>(nb) * c;
  Buffer y(static_cast<std::size_t>(batch) * (sa + sb));
  for (int i = 0; i < batch; ++i) {
    std::memcpy(y.data() + i * (sa + sb), a.value().data() + i * sa, sizeof(double) * sa);
    if (sb) std::memcpy(y.data() + i * (sa + sb) + sa, b.value().data() + i * sb, sizeof(double) * sb);
  }
  return make_result({batch, na + nb, c}, std::move(y), {a, b}, [=](Node& self) {
    double* ga = parent_grad(self, 0);
    double* gb = parent_grad(self, 1);
    for (int i = 0; i < batch; ++i) {
      const double* src = self.grad.data() + i * (sa + sb);
      if (ga) for (std::size_t k = 0; k < sa; ++k) ga[i * sa + k] += src[k];
      if (gb) for (std::size_t k = 0; k < sb; ++k) gb[i * sb + k] += src[sa + k];
    }
  });
}

Var slice_tokens(const Var& x, int start, int count) {
  require(x.rank() == 3, "slice_tokens: expects [B,N,C]");
  const int batch = x.dim(0), n = x.dim(1), c = x.dim(2);
  require(start >= 0 && count >= 0 && start + count <= n, "slice_tokens: range");
  Buffer y(static_cast<std::size_t>(batch) * count * c);
  for (int i = 0; i < batch; ++i) {
    std::memcpy(y.data() + static_cast<std::size_t>(i) * count * c,
                x.value().data() + (static_cast<std::size_t>(i) * n + start) * c,
                sizeof(double) * count * c);
  }
  return make_result({batch, count, c}, std::move(y), {x}, [=](Node& self) {
    if (double* g = parent_grad(self, 0)) {
      for (int i = 0; i < batch; ++i) {
        for (std::size_t k = 0; k < static_cast<std::size_t>(count) * c; ++k) {
          g[(static_cast<std::size_t>(i) * n + start) * c + k] += self.grad[static_cast<std::size_t>(i) * count * c + k];
        }
      }
    }
  });
}

Var stack(const std::vector<Var>& parts) {
  require(!parts.empty(), "stack: no inputs");
  Shape shape = parts[0].shape();
  int rows = 0;
  std::vector<std::size_t> offsets;
  std::size_t total = 0;
  for (const auto& p : parts) {
    require(p.rank() == static_cast<int>(shape.size()), "stack: rank mismatch");
    for (std::size_t d = 1; d < shape.size(); ++d) require(p.dim(d) == shape[d], "stack: trailing dims differ");
    rows += p.dim(0);
    offsets.push_back(total);
    total += p.size();
  }
  Buffer y(total);
  for (std::size_t i = 0; i < parts.size(); ++i) {
    std::copy(parts[i].value().begin(), parts[i].value().end(), y.begin() + offsets[i]);
  }
  shape[0] = rows;
  return make_result(std::move(shape), std::move(y), parts, [offsets](Node& self) {
    for (std::size_t i = 0; i < self.parents.size(); ++i) {
      if (double* g = parent_grad(self, i)) {
        const std::size_t n = self.parents[i]->value.size();
        for (std::size_t k = 0; k < n; ++k) g[k] += self.grad[offsets[i] + k];
      }
    }
  });
}

Var reshape(const Var& x, Shape shape) {
  require(shape_size(shape) == x.size(),
          "reshape: " + shape_string(x.shape()) + " -> " + shape_string(shape));
  Buffer y(x.value().begin(), x.value().end());
  return make_result(std::move(shape), std::move(y), {x}, [](Node& self) {
    if (double* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Var upsample_nearest2(const Var& x) {
  require(x.rank() == 4, "upsample_nearest2: expects [B,H,W,C]");
  const int batch = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  Buffer y(x.size() * 4);
  const auto xv = x.value();
  for (int b = 0; b < batch; ++b) {
    for (int oy = 0; oy < 2 * h; ++oy) {
      for (int ox = 0; ox < 2 * w; ++ox) {
        const double* src = xv.data() + ((static_cast<std::size_t>(b) * h + oy / 2) * w + ox / 2) * c;
        std::memcpy(y.data() + ((static_cast<std::size_t>(b) * 2 * h + oy) * 2 * w + ox) * c, src,
                    sizeof(double) * c);
      }
    }
  }
  return make_result({batch, 2 * h, 2 * w, c}, std::move(y), {x}, [=](Node& self) {
    double* g = parent_grad(self, 0);
    if (!g) return;
    for (int b = 0; b < batch; ++b) {
      for (int oy = 0; oy < 2 * h; ++oy) {
        for (int ox = 0; ox < 2 * w; ++ox) {
          const double* src = self.grad.data() + ((static_cast<std::size_t>(b) * 2 * h + oy) * 2 * w + ox) * c;
          double* dst = g + ((static_cast<std::size_t>(b) * h + oy / 2) * w + ox / 2) * c;
          for (int k = 0; k < c; ++k) dst[k] += src[k];
        }
      }
    }
  });
}

Var bmm(const Var& a, const Var& b) {
  require(a.rank() == 3 && b.rank() == 3 && a.dim(0) == b.dim(0) && a.dim(2) == b.dim(1),
          "bmm: " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  const int batch = a.dim(0), r = a.dim(1), k = a.dim(2), n = b.dim(2);
  Buffer y(static_cast<std::size_t>(batch) * r * n, 0.0);
  const auto av = a.value();
  const auto bv = b.value();
  for (int i = 0; i < batch; ++i) {
    const double* ai = av.data() + static_cast<std::size_t>(i) * r * k;
    const double* bi = bv.data() + static_cast<std::size_t>(i) * k * n;
    double* yi = y.data() + static_cast<std::size_t>(i) * r * n;
    for (int row = 0; row < r; ++row) {
      for (int p = 0; p < k; ++p) {
        const double s = ai[row * k + p];
        for (int j = 0; j < n; ++j) yi[row * n + j] += s * bi[p * n + j];
      }
    }
  }
  return make_result({batch, r, n}, std::move(y), {a, b}, [=](Node& self) {
    double* ga = parent_grad(self, 0);
    double* gb = parent_grad(self, 1);
    for (int i = 0; i < batch; ++i) {
      ConstMapMat dy(self.grad.data() + static_cast<std::size_t>(i) * r * n, r, n);
      if (ga) {
        MapMat da(ga + static_cast<std::size_t>(i) * r * k, r, k);
        ConstMapMat bm(self.parents[1]->value.data() + static_cast<std::size_t>(i) * k * n, k, n);
        da.noalias() += dy * bm.transpose();
      }
      if (gb) {
        MapMat db(gb + static_cast<std::size_t>(i) * k * n, k, n);
        ConstMapMat am(self.parents[0]->value.data() + static_cast<std::size_t>(i) * r * k, r, k);
        db.noalias() += am.transpose() * dy;
      }
    }
  });
}

Var bmm_nt(const Var& a, const Var& b) {
  require(a.rank() == 3 && b.rank() == 3 && a.dim(0) == b.dim(0) && a.dim(2) == b.dim(2),
          "bmm_nt: " + shape_string(a.shape()) + " x " + shape_string(b.shape()) + "^T");
  const int batch = a.dim(0), r = a.dim(1), k = a.dim(2), n = b.dim(1);
  Buffer y(static_cast<std::size_t>(batch) * r * n);
  const auto av = a.value();
  const auto bv = b.value();
  for (int i = 0; i < batch; ++i) {
    const double* ai = av.data() + static_cast<std::size_t>(i) * r * k;
    const double* bi = bv.data() + static_cast<std::size_t>(i) * n * k;
    double* yi = y.data() + static_cast<std::size_t>(i) * r * n;
    for (int row = 0; row < r; ++row) {
      for (int j = 0; j < n; ++j) {
        double s = 0.0;
        for (int p = 0; p < k; ++p) s += ai[row * k + p] * bi[j * k + p];
        yi[row * n + j] = s;
      }
    }
  }
  return make_result({batch, r, n}, std::move(y), {a, b}, [=](Node& self) {
    double* ga = parent_grad(self, 0);
    double* gb = parent_grad(self, 1);
    for (int i = 0; i < batch; ++i) {
      ConstMapMat dy(self.grad.data() + static_cast<std::size_t>(i) * r * n, r, n);
      if (ga) {
        MapMat da(ga + static_cast<std::size_t>(i) * r * k, r, k);
        ConstMapMat bm(self.parents[1]->value.data() + static_cast<std::size_t>(i) * n * k, n, k);
        da.noalias() += dy * bm;
      }
      if (gb) {
        MapMat db(gb + static_cast<std::size_t>(i) * n * k, n, k);
        ConstMapMat am(self.parents[0]->value.data() + static_cast<std::size_t>(i) * r * k, r, k);
        db.noalias() += dy.transpose() * am;
      }
    }
  });
}

Var softmax_last(const Var& x) {
  const int width = x.dim(-1);
  const std::size_t rows = leading_rows(x);
  Buffer y(x.size());
  const auto xv = x.value();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data() + r * width;
    double* out = y.data() + r * width;
    const double mx = *std::max_element(in, in + width);
    double sum = 0.0;
    for (int c = 0; c < width; ++c) {
      out[c] = std::exp(in[c] - mx);
      sum += out[c];
    }
    for (int c = 0; c < width; ++c) out[c] /= sum;
  }
  return make_result(x.shape(), std::move(y), {x}, [=](Node& self) {
    double* g = parent_grad(self, 0);
    if (!g) return;
    for (std::size_t r = 0; r < rows; ++r) {
      const double* yv = self.value.data() + r * width;
      const double* dy = self.grad.data() + r * width;
      double dot = 0.0;
      for (int c = 0; c < width; ++c) dot += dy[c] * yv[c];
      for (int c = 0; c < width; ++c) g[r * width + c] += yv[c] * (dy[c] - dot);
    }
  });
}

Var embedding_mean(const Var& table, std::span<const int> ids) {
  require(table.rank() == 2, "embedding_mean: table must be [V,D]");
  require(!ids.empty(), "embedding_mean: no ids");
  const int vocab = table.dim(0), dim = table.dim(1);
  std::vector<int> idv(ids.begin(), ids.end());
  for (int id : idv) require(id >= 0 && id < vocab, "embedding_mean: id out of range");
  Buffer y(dim, 0.0);
  const auto tv = table.value();
  for (int id : idv) {
    for (int d = 0; d < dim; ++d) y[d] += tv[static_cast<std::size_t>(id) * dim + d];
  }
  const double inv = 1.0 / static_cast<double>(idv.size());
  for (double& v : y) v *= inv;
  return make_result({1, dim}, std::move(y), {table}, [idv, dim, inv](Node& self) {
    if (double* g = parent_grad(self, 0)) {
      for (int id : idv) {
        for (int d = 0; d < dim; ++d) g[static_cast<std::size_t>(id) * dim + d] += inv * self.grad[d];
      }
    }
  });
}

Var mse(const Var& pred, const Var& target) {
  require(pred.size() == target.size(),
          "mse: " + shape_string(pred.shape()) + " vs " + shape_string(target.shape()));
  const std::size_t n = pred.size();
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = pred.value()[i] - target.value()[i];
    sum += d * d;
  }
  return make_result({1}, {sum / static_cast<double>(n)}, {pred, target}, [n](Node& self) {
    const double scale = 2.0 * self.grad[0] / static_cast<double>(n);
    const auto& p = self.parents[0]->value;
    const auto& t = self.parents[1]->value;
    if (double* gp = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < n; ++i) gp[i] += scale * (p[i] - t[i]);
    }
    if (double* gt = parent_grad(self, 1)) {
      for (std::size_t i = 0; i < n; ++i) gt[i] -= scale * (p[i] - t[i]);
    }
  });
}

Var bce_with_logits(const Var& logits, const Var& target) {
  require(logits.size() == target.size(), "bce_with_logits: size mismatch");
  const std::size_t n = logits.size();
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double z = logits.value()[i];
    const double y = target.value()[i];
    sum += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
  }
  return make_result({1}, {sum / static_cast<double>(n)}, {logits, target}, [n](Node& self) {
    if (double* g = parent_grad(self, 0)) {
      const double scale = self.grad[0] / static_cast<double>(n);
      const auto& z = self.parents[0]->value;
      const auto& y = self.parents[1]->value;
      for (std::size_t i = 0; i < n; ++i) g[i] += scale * (sigmoid(z[i]) - y[i]);
    }
  });
}

}  // namespace labeldiff::ag
