#include "saalae/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace saalae::ops {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ConstMap = Eigen::Map<const RowMat<T>>;
template <typename T>
using MutMap = Eigen::Map<RowMat<T>>;

void require(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(what);
}

template <typename T>
void check_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
  if (a->value.shape() != b->value.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_to_string(a->value.shape()) + " vs " +
                                shape_to_string(b->value.shape()));
  }
}

template <typename T>
void check_rank4(const Var<T>& x, const char* op) {
  if (x->value.rank() != 4) {
    throw std::invalid_argument(std::string(op) + ": expected (B, C, H, W), got " + shape_to_string(x->value.shape()));
  }
}

// cols: (C*k*k, H*W) for one sample.
template <typename T>
void im2col(const T* x, std::int64_t c, std::int64_t h, std::int64_t w, std::int64_t k, T* cols) {
  const std::int64_t pad = k / 2;
  const std::int64_t hw = h * w;
  for (std::int64_t ci = 0; ci < c; ++ci) {
    for (std::int64_t ky = 0; ky < k; ++ky) {
      for (std::int64_t kx = 0; kx < k; ++kx) {
        T* row = cols + ((ci * k + ky) * k + kx) * hw;
        const std::int64_t dy = ky - pad, dx = kx - pad;
        for (std::int64_t y = 0; y < h; ++y) {
          const std::int64_t sy = y + dy;
          T* out = row + y * w;
          if (sy < 0 || sy >= h) {
            std::fill(out, out + w, T(0));
            continue;
          }
          const T* src = x + (ci * h + sy) * w;
          for (std::int64_t xx = 0; xx < w; ++xx) {
            const std::int64_t sx = xx + dx;
            out[xx] = (sx < 0 || sx >= w) ? T(0) : src[sx];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* cols, std::int64_t c, std::int64_t h, std::int64_t w, std::int64_t k, T* x) {
  const std::int64_t pad = k / 2;
  const std::int64_t hw = h * w;
  for (std::int64_t ci = 0; ci < c; ++ci) {
    for (std::int64_t ky = 0; ky < k; ++ky) {
      for (std::int64_t kx = 0; kx < k; ++kx) {
        const T* row = cols + ((ci * k + ky) * k + kx) * hw;
        const std::int64_t dy = ky - pad, dx = kx - pad;
        for (std::int64_t y = 0; y < h; ++y) {
          const std::int64_t sy = y + dy;
          if (sy < 0 || sy >= h) continue;
          T* dst = x + (ci * h + sy) * w;
          const T* in = row + y * w;
          for (std::int64_t xx = 0; xx < w; ++xx) {
            const std::int64_t sx = xx + dx;
            if (sx >= 0 && sx < w) dst[sx] += in[xx];
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
void gemm(const T* a, bool transpose_a, const T* b, bool transpose_b, T* c, std::int64_t m, std::int64_t n,
          std::int64_t k, bool accumulate) {
  MutMap<T> C(c, m, n);
  auto run = [&](const auto& A, const auto& B) {
    if (accumulate) {
      C.noalias() += A * B;
    } else {
      C.noalias() = A * B;
    }
  };
  if (!transpose_a && !transpose_b) {
    run(ConstMap<T>(a, m, k), ConstMap<T>(b, k, n));
  } else if (!transpose_a && transpose_b) {
    run(ConstMap<T>(a, m, k), ConstMap<T>(b, n, k).transpose());
  } else if (transpose_a && !transpose_b) {
    run(ConstMap<T>(a, k, m).transpose(), ConstMap<T>(b, k, n));
  } else {
    run(ConstMap<T>(a, k, m).transpose(), ConstMap<T>(b, n, k).transpose());
  }
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  check_same_shape(a, b, "add");
  Tensor<T> out = a->value;
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] += b->value[i];
  return detail::make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
    for (auto& p : self.parents) {
      if (!p->requires_grad) continue;
      auto& g = p->grad_buffer();
      for (std::int64_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  check_same_shape(a, b, "sub");
  Tensor<T> out = a->value;
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] -= b->value[i];
  return detail::make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
    const T sign[2] = {T(1), T(-1)};
    for (std::size_t k = 0; k < 2; ++k) {
      auto& p = self.parents[k];
      if (!p->requires_grad) continue;
      auto& g = p->grad_buffer();
      for (std::int64_t i = 0; i < g.size(); ++i) g[i] += sign[k] * self.grad[i];
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  check_same_shape(a, b, "mul");
  Tensor<T> out = a->value;
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] *= b->value[i];
  return detail::make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    if (pa->requires_grad) {
      auto& g = pa->grad_buffer();
      for (std::int64_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb->value[i];
    }
    if (pb->requires_grad) {
      auto& g = pb->grad_buffer();
      for (std::int64_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa->value[i];
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& x, T factor) {
  Tensor<T> out = x->value;
  for (auto& v : out.storage()) v *= factor;
  return detail::make_result<T>(std::move(out), {x}, [factor](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::int64_t i = 0; i < g.size(); ++i) g[i] += factor * self.grad[i];
  });
}

template <typename T>
Var<T> mul_scalar(const Var<T>& x, const Var<T>& gate) {
  require(gate->value.size() == 1, "mul_scalar: gate must hold one element");
  const T s = gate->value[0];
  Tensor<T> out = x->value;
  for (auto& v : out.storage()) v *= s;
  return detail::make_result<T>(std::move(out), {x, gate}, [](Node<T>& self) {
    auto& px = self.parents[0];
    auto& pg = self.parents[1];
    if (px->requires_grad) {
      auto& g = px->grad_buffer();
      const T s = pg->value[0];
      for (std::int64_t i = 0; i < g.size(); ++i) g[i] += s * self.grad[i];
    }
    if (pg->requires_grad) {
      T acc = 0;
      for (std::int64_t i = 0; i < self.grad.size(); ++i) acc += self.grad[i] * px->value[i];
      pg->grad_buffer()[0] += acc;
    }
  });
}

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  Tensor<T> out = x->value.reshaped(std::move(shape));
  return detail::make_result<T>(std::move(out), {x}, [](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::int64_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
  const auto& xs = x->value.shape();
  const auto& ws = weight->value.shape();
  if (xs.size() != 2 || ws.size() != 2 || xs[1] != ws[1]) {
    throw std::invalid_argument("linear: input " + shape_to_string(xs) + " incompatible with weight " +
                                shape_to_string(ws));
  }
  const std::int64_t batch = xs[0], in = xs[1], out_f = ws[0];
  Tensor<T> out({batch, out_f});
  gemm(x->value.data(), false, weight->value.data(), true, out.data(), batch, out_f, in);
  if (bias) {
    require(bias->value.size() == out_f, "linear: bias size mismatch");
    for (std::int64_t b = 0; b < batch; ++b)
      for (std::int64_t o = 0; o < out_f; ++o) out[b * out_f + o] += bias->value[o];
  }
  std::vector<Var<T>> parents{x, weight};
  if (bias) parents.push_back(bias);
  return detail::make_result<T>(std::move(out), std::move(parents), [batch, in, out_f](Node<T>& self) {
    auto& px = self.parents[0];
    auto& pw = self.parents[1];
    const T* dy = self.grad.data();
    if (px->requires_grad) gemm(dy, false, pw->value.data(), false, px->grad_buffer().data(), batch, in, out_f, true);
    if (pw->requires_grad) gemm(dy, true, px->value.data(), false, pw->grad_buffer().data(), out_f, in, batch, true);
    if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
      auto& gb = self.parents[2]->grad_buffer();
      for (std::int64_t b = 0; b < batch; ++b)
        for (std::int64_t o = 0; o < out_f; ++o) gb[o] += dy[b * out_f + o];
    }
  });
}

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
  check_rank4(x, "conv2d");
  const auto& ws = weight->value.shape();
  if (ws.size() != 4 || ws[1] != x->value.dim(1) || ws[2] != ws[3] || ws[2] % 2 == 0) {
    throw std::invalid_argument("conv2d: weight " + shape_to_string(ws) + " incompatible with input " +
                                shape_to_string(x->value.shape()));
  }
  const std::int64_t batch = x->value.dim(0), cin = ws[1], h = x->value.dim(2), w = x->value.dim(3);
  const std::int64_t cout = ws[0], k = ws[2], hw = h * w, ckk = cin * k * k;
  Tensor<T> out({batch, cout, h, w});
  std::vector<T> cols(k == 1 ? 0 : static_cast<std::size_t>(ckk * hw));
  for (std::int64_t b = 0; b < batch; ++b) {
    const T* xb = x->value.data() + b * cin * hw;
    const T* src = xb;
    if (k != 1) {
      im2col(xb, cin, h, w, k, cols.data());
      src = cols.data();
    }
    T* yb = out.data() + b * cout * hw;
    gemm(weight->value.data(), false, src, false, yb, cout, hw, ckk);
    if (bias) {
      for (std::int64_t o = 0; o < cout; ++o) {
        const T bv = bias->value[o];
        for (std::int64_t i = 0; i < hw; ++i) yb[o * hw + i] += bv;
      }
    }
  }
  std::vector<Var<T>> parents{x, weight};
  if (bias) parents.push_back(bias);
  return detail::make_result<T>(
      std::move(out), std::move(parents), [batch, cin, h, w, cout, k, hw, ckk](Node<T>& self) {
        auto& px = self.parents[0];
        auto& pw = self.parents[1];
        std::vector<T> cols(static_cast<std::size_t>(ckk * hw));
        T* dx = px->requires_grad ? px->grad_buffer().data() : nullptr;
        T* dw = pw->requires_grad ? pw->grad_buffer().data() : nullptr;
        for (std::int64_t b = 0; b < batch; ++b) {
          const T* dy = self.grad.data() + b * cout * hw;
          const T* xb = px->value.data() + b * cin * hw;
          if (dw) {
            const T* src = xb;
            if (k != 1) {
              im2col(xb, cin, h, w, k, cols.data());
              src = cols.data();
            }
            gemm(dy, false, src, true, dw, cout, ckk, hw, true);
          }
          if (dx) {
            if (k == 1) {
              gemm(pw->value.data(), true, dy, false, dx + b * cin * hw, cin, hw, cout, true);
            } else {
              gemm(pw->value.data(), true, dy, false, cols.data(), ckk, hw, cout, false);
              col2im_add(cols.data(), cin, h, w, k, dx + b * cin * hw);
            }
          }
        }
        if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
          auto& gb = self.parents[2]->grad_buffer();
          for (std::int64_t b = 0; b < batch; ++b)
            for (std::int64_t o = 0; o < cout; ++o) {
              const T* dy = self.grad.data() + (b * cout + o) * hw;
              T acc = 0;
              for (std::int64_t i = 0; i < hw; ++i) acc += dy[i];
              gb[o] += acc;
            }
        }
      });
}

template <typename T>
Var<T> avg_pool2(const Var<T>& x) {
  check_rank4(x, "avg_pool2");
  const auto& s = x->value.shape();
  if (s[2] % 2 != 0 || s[3] % 2 != 0) {
    throw std::invalid_argument("avg_pool2: odd spatial size " + shape_to_string(s));
  }
  const std::int64_t planes = s[0] * s[1], h = s[2], w = s[3], oh = h / 2, ow = w / 2;
  Tensor<T> out({s[0], s[1], oh, ow});
  for (std::int64_t p = 0; p < planes; ++p) {
    const T* in = x->value.data() + p * h * w;
    T* o = out.data() + p * oh * ow;
    for (std::int64_t y = 0; y < oh; ++y)
      for (std::int64_t xx = 0; xx < ow; ++xx)
        o[y * ow + xx] = T(0.25) * (in[2 * y * w + 2 * xx] + in[2 * y * w + 2 * xx + 1] +
                                    in[(2 * y + 1) * w + 2 * xx] + in[(2 * y + 1) * w + 2 * xx + 1]);
  }
  return detail::make_result<T>(std::move(out), {x}, [planes, h, w, oh, ow](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::int64_t p = 0; p < planes; ++p) {
      T* gi = g.data() + p * h * w;
      const T* go = self.grad.data() + p * oh * ow;
      for (std::int64_t y = 0; y < oh; ++y)
        for (std::int64_t xx = 0; xx < ow; ++xx) {
          const T v = T(0.25) * go[y * ow + xx];
          gi[2 * y * w + 2 * xx] += v;
          gi[2 * y * w + 2 * xx + 1] += v;
          gi[(2 * y + 1) * w + 2 * xx] += v;
          gi[(2 * y + 1) * w + 2 * xx + 1] += v;
        }
    }
  });
}

template <typename T>
Var<T> upsample_nearest2(const Var<T>& x) {
  check_rank4(x, "upsample_nearest2");
  const auto& s = x->value.shape();
  const std::int64_t planes = s[0] * s[1], h = s[2], w = s[3], oh = 2 * h, ow = 2 * w;
  Tensor<T> out({s[0], s[1], oh, ow});
  for (std::int64_t p = 0; p < planes; ++p) {
    const T* in = x->value.data() + p * h * w;
    T* o = out.data() + p * oh * ow;
    for (std::int64_t y = 0; y < oh; ++y)
      for (std::int64_t xx = 0; xx < ow; ++xx) o[y * ow + xx] = in[(y / 2) * w + xx / 2];
  }
  return detail::make_result<T>(std::move(out), {x}, [planes, h, w, oh, ow](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::int64_t p = 0; p < planes; ++p) {
      T* gi = g.data() + p * h * w;
      const T* go = self.grad.data() + p * oh * ow;
      for (std::int64_t y = 0; y < oh; ++y)
        for (std::int64_t xx = 0; xx < ow; ++xx) gi[(y / 2) * w + xx / 2] += go[y * ow + xx];
    }
  });
}

template <typename T>
Var<T> leaky_relu(const Var<T>& x, T slope) {
  Tensor<T> out = x->value;
  for (auto& v : out.storage()) v = v > T(0) ? v : slope * v;
  return detail::make_result<T>(std::move(out), {x}, [slope](Node<T>& self) {
    auto& p = self.parents[0];
    auto& g = p->grad_buffer();
    for (std::int64_t i = 0; i < g.size(); ++i) g[i] += p->value[i] > T(0) ? self.grad[i] : slope * self.grad[i];
  });
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  Tensor<T> out = x->value;
  for (auto& v : out.storage()) v = v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
  return detail::make_result<T>(std::move(out), {x}, [](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::int64_t i = 0; i < g.size(); ++i) {
      const T y = self.value[i];
      g[i] += self.grad[i] * y * (T(1) - y);
    }
  });
}

template <typename T>
Var<T> softplus(const Var<T>& x) {
  Tensor<T> out = x->value;
  for (auto& v : out.storage()) v = std::max(v, T(0)) + std::log1p(std::exp(-std::abs(v)));
  return detail::make_result<T>(std::move(out), {x}, [](Node<T>& self) {
    auto& p = self.parents[0];
    auto& g = p->grad_buffer();
    for (std::int64_t i = 0; i < g.size(); ++i) {
      const T v = p->value[i];
      const T s = v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
      g[i] += self.grad[i] * s;
    }
  });
}

template <typename T>
Var<T> sum(const Var<T>& x) {
  T acc = 0;
  for (auto v : x->value.storage()) acc += v;
  return detail::make_result<T>(Tensor<T>({1}, acc), {x}, [](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::int64_t i = 0; i < g.size(); ++i) g[i] += self.grad[0];
  });
}

template <typename T>
Var<T> mean(const Var<T>& x) {
  require(x->value.size() > 0, "mean: empty tensor");
  return scale(sum(x), T(1) / static_cast<T>(x->value.size()));
}

template <typename T>
Var<T> mse(const Var<T>& x, const Tensor<T>& target) {
  if (x->value.shape() != target.shape()) throw std::invalid_argument("mse: shape mismatch");
  const auto n = x->value.size();
  require(n > 0, "mse: empty tensor");
  T acc = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    const T d = x->value[i] - target[i];
    acc += d * d;
  }
  return detail::make_result<T>(Tensor<T>({1}, acc / static_cast<T>(n)), {x}, [target, n](Node<T>& self) {
    auto& p = self.parents[0];
    auto& g = p->grad_buffer();
    const T f = T(2) * self.grad[0] / static_cast<T>(n);
    for (std::int64_t i = 0; i < n; ++i) g[i] += f * (p->value[i] - target[i]);
  });
}

template <typename T>
Var<T> softmax_cross_entropy(const Var<T>& logits, const std::vector<int>& labels) {
  const auto& v = logits->value;
  require(v.rank() == 2 && v.dim(0) == static_cast<std::int64_t>(labels.size()) && v.dim(0) > 0,
          "softmax_cross_entropy: logits must be (B, K) with B labels");
  const std::int64_t batch = v.dim(0), k = v.dim(1);
  auto probs = std::make_shared<Tensor<T>>(v.shape());
  T loss = 0;
  for (std::int64_t b = 0; b < batch; ++b) {
    const int y = labels[static_cast<std::size_t>(b)];
    require(y >= 0 && y < k, "softmax_cross_entropy: label out of range");
    const T* row = v.data() + b * k;
    const T mx = *std::max_element(row, row + k);
    T z = 0;
    for (std::int64_t j = 0; j < k; ++j) z += std::exp(row[j] - mx);
    for (std::int64_t j = 0; j < k; ++j) (*probs)[b * k + j] = std::exp(row[j] - mx) / z;
    loss += std::log(z) + mx - row[y];
  }
  return detail::make_result<T>(Tensor<T>({1}, loss / static_cast<T>(batch)), {logits},
                                [probs, labels, batch, k](Node<T>& self) {
                                  auto& g = self.parents[0]->grad_buffer();
                                  const T f = self.grad[0] / static_cast<T>(batch);
                                  for (std::int64_t b = 0; b < batch; ++b)
                                    for (std::int64_t j = 0; j < k; ++j) {
                                      const T onehot = j == labels[static_cast<std::size_t>(b)] ? T(1) : T(0);
                                      g[b * k + j] += f * ((*probs)[b * k + j] - onehot);
                                    }
                                });
}

template <typename T>
Var<T> modulate(const Var<T>& x, const Var<T>& style) {
  check_rank4(x, "modulate");
  const auto& s = x->value.shape();
  const std::int64_t batch = s[0], c = s[1], hw = s[2] * s[3];
  if (style->value.rank() != 2 || style->value.dim(0) != batch || style->value.dim(1) != 2 * c) {
    throw std::invalid_argument("modulate: style " + shape_to_string(style->value.shape()) + " does not match " +
                                shape_to_string(s));
  }
  Tensor<T> out = x->value;
  for (std::int64_t b = 0; b < batch; ++b)
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const T sc = T(1) + style->value[b * 2 * c + ch];
      const T bi = style->value[b * 2 * c + c + ch];
      T* o = out.data() + (b * c + ch) * hw;
      for (std::int64_t i = 0; i < hw; ++i) o[i] = o[i] * sc + bi;
    }
  return detail::make_result<T>(std::move(out), {x, style}, [batch, c, hw](Node<T>& self) {
    auto& px = self.parents[0];
    auto& ps = self.parents[1];
    T* dx = px->requires_grad ? px->grad_buffer().data() : nullptr;
    T* ds = ps->requires_grad ? ps->grad_buffer().data() : nullptr;
    for (std::int64_t b = 0; b < batch; ++b)
      for (std::int64_t ch = 0; ch < c; ++ch) {
        const T sc = T(1) + ps->value[b * 2 * c + ch];
        const T* dy = self.grad.data() + (b * c + ch) * hw;
        const T* xv = px->value.data() + (b * c + ch) * hw;
        if (dx) {
          T* d = dx + (b * c + ch) * hw;
          for (std::int64_t i = 0; i < hw; ++i) d[i] += dy[i] * sc;
        }
        if (ds) {
          T a = 0, bsum = 0;
          for (std::int64_t i = 0; i < hw; ++i) {
            a += dy[i] * xv[i];
            bsum += dy[i];
          }
          ds[b * 2 * c + ch] += a;
          ds[b * 2 * c + c + ch] += bsum;
        }
      }
  });
}

namespace {

template <typename T>
void softmax_rows(T* m, std::int64_t rows, std::int64_t cols) {
  for (std::int64_t i = 0; i < rows; ++i) {
    T* r = m + i * cols;
    const T mx = *std::max_element(r, r + cols);
    T z = 0;
    for (std::int64_t j = 0; j < cols; ++j) {
      r[j] = std::exp(r[j] - mx);
      z += r[j];
    }
    const T inv = T(1) / z;
    for (std::int64_t j = 0; j < cols; ++j) r[j] *= inv;
  }
}

}  // namespace

template <typename T>
Tensor<T> attention_weights(const Tensor<T>& query, const Tensor<T>& key, T logit_scale) {
  if (query.rank() != 3 || query.shape() != key.shape()) {
    throw std::invalid_argument("attention: query/key shape mismatch");
  }
  const std::int64_t batch = query.dim(0), ck = query.dim(1), n = query.dim(2);
  Tensor<T> probs({batch, n, n});
  for (std::int64_t b = 0; b < batch; ++b) {
    T* p = probs.data() + b * n * n;
    gemm(query.data() + b * ck * n, true, key.data() + b * ck * n, false, p, n, n, ck);
    for (std::int64_t i = 0; i < n * n; ++i) p[i] *= logit_scale;
    softmax_rows(p, n, n);
  }
  return probs;
}

template <typename T>
Var<T> attention(const Var<T>& query, const Var<T>& key, const Var<T>& value, T logit_scale) {
  const auto& vs = value->value.shape();
  if (vs.size() != 3 || vs[0] != query->value.dim(0) || vs[2] != query->value.dim(2)) {
    throw std::invalid_argument("attention: value shape " + shape_to_string(vs) + " mismatched");
  }
  auto probs = std::make_shared<Tensor<T>>(attention_weights(query->value, key->value, logit_scale));
  const std::int64_t batch = vs[0], cv = vs[1], n = vs[2], ck = query->value.dim(1);
  Tensor<T> out({batch, cv, n});
  for (std::int64_t b = 0; b < batch; ++b) {
    gemm(value->value.data() + b * cv * n, false, probs->data() + b * n * n, true, out.data() + b * cv * n, cv, n, n);
  }
  return detail::make_result<T>(
      std::move(out), {query, key, value}, [probs, batch, cv, ck, n, logit_scale](Node<T>& self) {
        auto& pq = self.parents[0];
        auto& pk = self.parents[1];
        auto& pv = self.parents[2];
        std::vector<T> dp(static_cast<std::size_t>(n * n));
        for (std::int64_t b = 0; b < batch; ++b) {
          const T* dout = self.grad.data() + b * cv * n;
          const T* p = probs->data() + b * n * n;
          if (pv->requires_grad) gemm(dout, false, p, false, pv->grad_buffer().data() + b * cv * n, cv, n, n, true);
          if (!pq->requires_grad && !pk->requires_grad) continue;
          gemm(dout, true, pv->value.data() + b * cv * n, false, dp.data(), n, n, cv);
          for (std::int64_t i = 0; i < n; ++i) {
            T* dr = dp.data() + i * n;
            const T* pr = p + i * n;
            T dot = 0;
            for (std::int64_t j = 0; j < n; ++j) dot += dr[j] * pr[j];
            for (std::int64_t j = 0; j < n; ++j) dr[j] = logit_scale * pr[j] * (dr[j] - dot);
          }
          if (pq->requires_grad)
            gemm(pk->value.data() + b * ck * n, false, dp.data(), true, pq->grad_buffer().data() + b * ck * n, ck, n, n,
                 true);
          if (pk->requires_grad)
            gemm(pq->value.data() + b * ck * n, false, dp.data(), false, pk->grad_buffer().data() + b * ck * n, ck, n,
                 n, true);
        }
      });
}

template <typename T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, BatchNormStats<T>& stats,
                  bool use_batch_stats, bool update_running, T eps, T momentum) {
  check_rank4(x, "batch_norm");
  const auto& s = x->value.shape();
  const std::int64_t batch = s[0], c = s[1], hw = s[2] * s[3];
  if (gamma->value.size() != c || beta->value.size() != c || stats.running_mean.size() != c ||
      stats.running_var.size() != c) {
    throw std::invalid_argument("batch_norm: channel count mismatch for input " + shape_to_string(s));
  }
  if (use_batch_stats && batch < 2) {
    throw std::invalid_argument("batch_norm: batch size must be at least 2 when using batch statistics");
  }
  const T count = static_cast<T>(batch * hw);
  auto xhat = std::make_shared<Tensor<T>>(s);
  auto inv_std = std::make_shared<std::vector<T>>(static_cast<std::size_t>(c));
  Tensor<T> out(s);
  for (std::int64_t ch = 0; ch < c; ++ch) {
    T mu, var;
    if (use_batch_stats) {
      T acc = 0;
      for (std::int64_t b = 0; b < batch; ++b) {
        const T* xv = x->value.data() + (b * c + ch) * hw;
        for (std::int64_t i = 0; i < hw; ++i) acc += xv[i];
      }
      mu = acc / count;
      T sq = 0;
      for (std::int64_t b = 0; b < batch; ++b) {
        const T* xv = x->value.data() + (b * c + ch) * hw;
        for (std::int64_t i = 0; i < hw; ++i) sq += (xv[i] - mu) * (xv[i] - mu);
      }
      var = sq / count;
      if (update_running) {
        const T unbiased = count > 1 ? sq / (count - 1) : var;
        stats.running_mean[ch] = (T(1) - momentum) * stats.running_mean[ch] + momentum * mu;
        stats.running_var[ch] = (T(1) - momentum) * stats.running_var[ch] + momentum * unbiased;
      }
    } else {
      mu = stats.running_mean[ch];
      var = stats.running_var[ch];
    }
    const T is = T(1) / std::sqrt(var + eps);
    (*inv_std)[static_cast<std::size_t>(ch)] = is;
    const T g = gamma->value[ch], bt = beta->value[ch];
    for (std::int64_t b = 0; b < batch; ++b) {
      const std::int64_t off = (b * c + ch) * hw;
      for (std::int64_t i = 0; i < hw; ++i) {
        const T xh = (x->value[off + i] - mu) * is;
        (*xhat)[off + i] = xh;
        out[off + i] = g * xh + bt;
      }
    }
  }
  return detail::make_result<T>(
      std::move(out), {x, gamma, beta}, [xhat, inv_std, batch, c, hw, count, use_batch_stats](Node<T>& self) {
        auto& px = self.parents[0];
        auto& pg = self.parents[1];
        auto& pb = self.parents[2];
        for (std::int64_t ch = 0; ch < c; ++ch) {
          T sum_dy = 0, sum_dy_xh = 0;
          for (std::int64_t b = 0; b < batch; ++b) {
            const std::int64_t off = (b * c + ch) * hw;
            for (std::int64_t i = 0; i < hw; ++i) {
              sum_dy += self.grad[off + i];
              sum_dy_xh += self.grad[off + i] * (*xhat)[off + i];
            }
          }
          if (pg->requires_grad) pg->grad_buffer()[ch] += sum_dy_xh;
          if (pb->requires_grad) pb->grad_buffer()[ch] += sum_dy;
          if (!px->requires_grad) continue;
          auto& dx = px->grad_buffer();
          const T g = pg->value[ch];
          const T is = (*inv_std)[static_cast<std::size_t>(ch)];
          for (std::int64_t b = 0; b < batch; ++b) {
            const std::int64_t off = (b * c + ch) * hw;
            for (std::int64_t i = 0; i < hw; ++i) {
              if (use_batch_stats) {
                dx[off + i] += g * is * (self.grad[off + i] - sum_dy / count - (*xhat)[off + i] * sum_dy_xh / count);
              } else {
                dx[off + i] += g * is * self.grad[off + i];
              }
            }
          }
        }
      });
}

#define SAALAE_INSTANTIATE(T)                                                                                        \
  template void gemm(const T*, bool, const T*, bool, T*, std::int64_t, std::int64_t, std::int64_t, bool);          \
  template Var<T> add(const Var<T>&, const Var<T>&);                                                                 \
  template Var<T> sub(const Var<T>&, const Var<T>&);                                                                 \
  template Var<T> mul(const Var<T>&, const Var<T>&);                                                                 \
  template Var<T> scale(const Var<T>&, T);                                                                           \
  template Var<T> mul_scalar(const Var<T>&, const Var<T>&);                                                          \
  template Var<T> reshape(const Var<T>&, Shape);                                                                     \
  template Var<T> linear(const Var<T>&, const Var<T>&, const Var<T>&);                                               \
  template Var<T> conv2d(const Var<T>&, const Var<T>&, const Var<T>&);                                               \
  template Var<T> avg_pool2(const Var<T>&);                                                                          \
  template Var<T> upsample_nearest2(const Var<T>&);                                                                  \
  template Var<T> leaky_relu(const Var<T>&, T);                                                                      \
  template Var<T> sigmoid(const Var<T>&);                                                                            \
  template Var<T> softplus(const Var<T>&);                                                                           \
  template Var<T> sum(const Var<T>&);                                                                                \
  template Var<T> mean(const Var<T>&);                                                                               \
  template Var<T> mse(const Var<T>&, const Tensor<T>&);                                                              \
  template Var<T> softmax_cross_entropy(const Var<T>&, const std::vector<int>&);                                                              \
  template Var<T> modulate(const Var<T>&, const Var<T>&);                                                            \
  template Var<T> attention(const Var<T>&, const Var<T>&, const Var<T>&, T);                                         \
  template Tensor<T> attention_weights(const Tensor<T>&, const Tensor<T>&, T);                                       \
  template Var<T> batch_norm(const Var<T>&, const Var<T>&, const Var<T>&, BatchNormStats<T>&, bool, bool, T, T);

SAALAE_INSTANTIATE(float)
SAALAE_INSTANTIATE(double)
#undef SAALAE_INSTANTIATE

}  // namespace saalae::ops
