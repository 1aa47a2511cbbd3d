#include "eanet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace eanet::ops {

using detail::Node;
using detail::make_result;

namespace {

void require(bool ok, const std::string& message) {
  if (!ok) throw DimensionError(message);
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " +
                                      shape_str(a.shape()) + " vs " +
                                      shape_str(b.shape()));
}

// Gradient buffer of input `i`, or nullptr when that input needs no grad.
double* input_grad(Node& node, std::size_t i) {
  Node& in = *node.inputs[i];
  return in.requires_grad ? in.ensure_grad().data() : nullptr;
}

const double* input_data(const Node& node, std::size_t i) {
  return node.inputs[i]->data.data();
}

// C[m,n] += A[m,k] B[k,n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m,
             std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// A[m,k] += C[m,n] B[k,n]^T
void gemm_nt(const double* c, const double* b, double* a, std::size_t m,
             std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ci = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double* bp = b + p * n;
      double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
      std::size_t j = 0;
      for (; j + 4 <= n; j += 4) {
        s0 += ci[j] * bp[j];
        s1 += ci[j + 1] * bp[j + 1];
        s2 += ci[j + 2] * bp[j + 2];
        s3 += ci[j + 3] * bp[j + 3];
      }
      for (; j < n; ++j) s0 += ci[j] * bp[j];
      a[i * k + p] += (s0 + s1) + (s2 + s3);
    }
  }
}

// B[k,n] += A[m,k]^T C[m,n]
void gemm_tn(const double* a, const double* c, double* b, std::size_t m,
             std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ci = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) bp[j] += av * ci[j];
    }
  }
}

template <typename Fwd, typename Bwd>
Tensor unary_elementwise(const Tensor& x, const char* name, Fwd fwd, Bwd dfdx) {
  auto in = x.data();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = fwd(in[i]);
  return make_result(x.shape(), std::move(out), {x}, name,
                     [dfdx](Node& self) {
                       double* gx = input_grad(self, 0);
                       if (!gx) return;
                       const double* xv = input_data(self, 0);
                       for (std::size_t i = 0; i < self.grad.size(); ++i) {
                         gx[i] += self.grad[i] * dfdx(xv[i]);
                       }
                     });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  auto av = a.data();
  auto bv = b.data();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return make_result(a.shape(), std::move(out), {a, b}, "add", [](Node& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (double* g = input_grad(self, k)) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
      }
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  auto av = a.data();
  auto bv = b.data();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return make_result(a.shape(), std::move(out), {a, b}, "sub", [](Node& self) {
    if (double* g = input_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
    if (double* g = input_grad(self, 1)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  auto av = a.data();
  auto bv = b.data();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return make_result(a.shape(), std::move(out), {a, b}, "mul", [](Node& self) {
    const double* ad = input_data(self, 0);
    const double* bd = input_data(self, 1);
    if (double* g = input_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * bd[i];
    }
    if (double* g = input_grad(self, 1)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * ad[i];
    }
  });
}

Tensor scale(const Tensor& x, double factor) {
  auto xv = x.data();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * factor;
  return make_result(x.shape(), std::move(out), {x}, "scale",
                     [factor](Node& self) {
                       if (double* g = input_grad(self, 0)) {
                         for (std::size_t i = 0; i < self.grad.size(); ++i) {
                           g[i] += self.grad[i] * factor;
                         }
                       }
                     });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  require(x.rank() >= 1 && bias.rank() == 1 && bias.dim(0) == x.shape().back(),
          "add_bias: bias " + shape_str(bias.shape()) + " does not match " +
              shape_str(x.shape()));
  const std::size_t n = bias.dim(0);
  auto xv = x.data();
  auto bv = bias.data();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] + bv[i % n];
  return make_result(x.shape(), std::move(out), {x, bias}, "add_bias",
                     [n](Node& self) {
                       if (double* g = input_grad(self, 0)) {
                         for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
                       }
                       if (double* g = input_grad(self, 1)) {
                         for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % n] += self.grad[i];
                       }
                     });
}

Tensor gelu(const Tensor& x) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  constexpr double inv_sqrt_2pi = 0.39894228040143267794;
  return unary_elementwise(
      x, "gelu",
      [](double v) { return 0.5 * v * (1.0 + std::erf(v * inv_sqrt2)); },
      [](double v) {
        return 0.5 * (1.0 + std::erf(v * inv_sqrt2)) +
               v * inv_sqrt_2pi * std::exp(-0.5 * v * v);
      });
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  return make_result({}, {total}, {x}, "sum", [](Node& self) {
    if (double* g = input_grad(self, 0)) {
      const std::size_t n = self.inputs[0]->data.size();
      for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[0];
    }
  });
}

Tensor mean(const Tensor& x) {
  const double n = static_cast<double>(x.numel());
  double total = 0.0;
  for (double v : x.data()) total += v;
  return make_result({}, {total / n}, {x}, "mean", [n](Node& self) {
    if (double* g = input_grad(self, 0)) {
      const std::size_t count = self.inputs[0]->data.size();
      for (std::size_t i = 0; i < count; ++i) g[i] += self.grad[0] / n;
    }
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  require(shape_numel(shape) == x.numel(),
          "reshape: cannot view " + shape_str(x.shape()) + " as " +
              shape_str(shape));
  return make_result(std::move(shape), x.to_vector(), {x}, "reshape",
                     [](Node& self) {
                       if (double* g = input_grad(self, 0)) {
                         for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
                       }
                     });
}

Tensor transpose(const Tensor& x) {
  require(x.rank() == 2, "transpose: rank-2 tensor required, got " +
                             shape_str(x.shape()));
  const std::size_t m = x.dim(0);
  const std::size_t n = x.dim(1);
  auto xv = x.data();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = xv[i * n + j];
  }
  return make_result({n, m}, std::move(out), {x}, "transpose",
                     [m, n](Node& self) {
                       if (double* g = input_grad(self, 0)) {
                         for (std::size_t i = 0; i < m; ++i) {
                           for (std::size_t j = 0; j < n; ++j) g[i * n + j] += self.grad[j * m + i];
                         }
                       }
                     });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  require(!parts.empty(), "concat: no inputs");
  const Shape& first = parts[0].shape();
  require(axis < first.size(), "concat: axis out of range");
  std::size_t outer = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
  std::size_t inner = 1;
  for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];
  std::vector<std::size_t> widths;
  std::size_t total_axis = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool compatible = s.size() == first.size();
    for (std::size_t i = 0; compatible && i < s.size(); ++i) {
      if (i != axis && s[i] != first[i]) compatible = false;
    }
    require(compatible, "concat: incompatible shapes " + shape_str(first) +
                            " and " + shape_str(s));
    widths.push_back(s[axis] * inner);
    total_axis += s[axis];
  }
  Shape out_shape = first;
  out_shape[axis] = total_axis;
  const std::size_t row = total_axis * inner;
  std::vector<double> out(outer * row);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    auto pv = parts[k].data();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(pv.begin() + o * widths[k], widths[k],
                  out.begin() + o * row + offset);
    }
    offset += widths[k];
  }
  return make_result(std::move(out_shape), std::move(out), parts, "concat",
                     [widths, outer, row](Node& self) {
                       std::size_t off = 0;
                       for (std::size_t k = 0; k < widths.size(); ++k) {
                         if (double* g = input_grad(self, k)) {
                           for (std::size_t o = 0; o < outer; ++o) {
                             for (std::size_t i = 0; i < widths[k]; ++i) {
                               g[o * widths[k] + i] += self.grad[o * row + off + i];
                             }
                           }
                         }
                         off += widths[k];
                       }
                     });
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin,
             std::size_t end) {
  const Shape& s = x.shape();
  require(axis < s.size(), "slice: axis out of range");
  require(begin < end && end <= s[axis],
          "slice: bad range [" + std::to_string(begin) + ", " +
              std::to_string(end) + ") for " + shape_str(s));
  std::size_t outer = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  std::size_t inner = 1;
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t in_row = s[axis] * inner;
  const std::size_t width = (end - begin) * inner;
  const std::size_t start = begin * inner;
  auto xv = x.data();
  std::vector<double> out(outer * width);
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(xv.begin() + o * in_row + start, width, out.begin() + o * width);
  }
  Shape out_shape = s;
  out_shape[axis] = end - begin;
  return make_result(std::move(out_shape), std::move(out), {x}, "slice",
                     [outer, in_row, width, start](Node& self) {
                       if (double* g = input_grad(self, 0)) {
                         for (std::size_t o = 0; o < outer; ++o) {
                           for (std::size_t i = 0; i < width; ++i) {
                             g[o * in_row + start + i] += self.grad[o * width + i];
                           }
                         }
                       }
                     });
}

Tensor index_select(const Tensor& x, const std::vector<std::size_t>& indices) {
  require(x.rank() >= 1 && !indices.empty(), "index_select: bad arguments");
  const std::size_t rows = x.dim(0);
  const std::size_t width = x.numel() / rows;
  for (auto i : indices) {
    require(i < rows, "index_select: index " + std::to_string(i) +
                          " out of range for " + shape_str(x.shape()));
  }
  auto xv = x.data();
  std::vector<double> out(indices.size() * width);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    std::copy_n(xv.begin() + indices[r] * width, width, out.begin() + r * width);
  }
  Shape out_shape = x.shape();
  out_shape[0] = indices.size();
  return make_result(std::move(out_shape), std::move(out), {x}, "index_select",
                     [indices, width](Node& self) {
                       if (double* g = input_grad(self, 0)) {
                         for (std::size_t r = 0; r < indices.size(); ++r) {
                           for (std::size_t i = 0; i < width; ++i) {
                             g[indices[r] * width + i] += self.grad[r * width + i];
                           }
                         }
                       }
                     });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(0),
          "matmul: cannot multiply " + shape_str(a.shape()) + " by " +
              shape_str(b.shape()));
  const std::size_t m = a.dim(0);
  const std::size_t k = a.dim(1);
  const std::size_t n = b.dim(1);
  std::vector<double> out(m * n, 0.0);
  gemm_nn(a.data().data(), b.data().data(), out.data(), m, k, n);
  return make_result({m, n}, std::move(out), {a, b}, "matmul",
                     [m, k, n](Node& self) {
                       if (double* ga = input_grad(self, 0)) {
                         gemm_nt(self.grad.data(), input_data(self, 1), ga, m, k, n);
                       }
                       if (double* gb = input_grad(self, 1)) {
                         gemm_tn(input_data(self, 0), self.grad.data(), gb, m, k, n);
                       }
                     });
}

Tensor bmm(const Tensor& a, const Tensor& b) {
  require(a.rank() == 3 && b.rank() == 3 && a.dim(0) == b.dim(0) &&
              a.dim(2) == b.dim(1),
          "bmm: cannot multiply " + shape_str(a.shape()) + " by " +
              shape_str(b.shape()));
  const std::size_t batch = a.dim(0);
  const std::size_t m = a.dim(1);
  const std::size_t k = a.dim(2);
  const std::size_t n = b.dim(2);
  std::vector<double> out(batch * m * n, 0.0);
  for (std::size_t t = 0; t < batch; ++t) {
    gemm_nn(a.data().data() + t * m * k, b.data().data() + t * k * n,
            out.data() + t * m * n, m, k, n);
  }
  return make_result({batch, m, n}, std::move(out), {a, b}, "bmm",
                     [batch, m, k, n](Node& self) {
                       double* ga = input_grad(self, 0);
                       double* gb = input_grad(self, 1);
                       for (std::size_t t = 0; t < batch; ++t) {
                         const double* gc = self.grad.data() + t * m * n;
                         if (ga) gemm_nt(gc, input_data(self, 1) + t * k * n, ga + t * m * k, m, k, n);
                         if (gb) gemm_tn(input_data(self, 0) + t * m * k, gc, gb + t * k * n, m, k, n);
                       }
                     });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require(weight.rank() == 2 && x.rank() >= 1 &&
              x.shape().back() == weight.dim(0),
          "linear: input " + shape_str(x.shape()) + " does not match weight " +
              shape_str(weight.shape()));
  const std::size_t cin = weight.dim(0);
  const std::size_t cout = weight.dim(1);
  const std::size_t rows = x.numel() / cin;
  Tensor flat = x.rank() == 2 ? x : reshape(x, {rows, cin});
  Tensor y = bias.defined() ? add_bias(matmul(flat, weight), bias) : matmul(flat, weight);
  if (x.rank() == 2) return y;
  Shape out_shape = x.shape();
  out_shape.back() = cout;
  return reshape(y, std::move(out_shape));
}

Tensor conv1x1(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require(x.rank() == 3, "conv1x1: expected [h, w, c], got " +
                             shape_str(x.shape()));
  return linear(x, weight, bias);
}

Tensor im2col(const Tensor& x, std::size_t kernel, std::size_t stride,
              std::size_t pad) {
  require(x.rank() == 3 && kernel > 0 && stride > 0, "im2col: bad arguments");
  const std::size_t h = x.dim(0);
  const std::size_t w = x.dim(1);
  const std::size_t c = x.dim(2);
  require(h + 2 * pad >= kernel && w + 2 * pad >= kernel,
          "im2col: kernel larger than padded input");
  const std::size_t ho = (h + 2 * pad - kernel) / stride + 1;
  const std::size_t wo = (w + 2 * pad - kernel) / stride + 1;
  const std::size_t cols = kernel * kernel * c;
  // Source index per output slot; -1 marks padding.
  std::vector<std::ptrdiff_t> src(ho * wo * cols, -1);
  for (std::size_t oy = 0; oy < ho; ++oy) {
    for (std::size_t ox = 0; ox < wo; ++ox) {
      for (std::size_t ky = 0; ky < kernel; ++ky) {
        for (std::size_t kx = 0; kx < kernel; ++kx) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                          static_cast<std::ptrdiff_t>(pad);
          const auto ix = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                          static_cast<std::ptrdiff_t>(pad);
          if (iy < 0 || ix < 0 || iy >= static_cast<std::ptrdiff_t>(h) ||
              ix >= static_cast<std::ptrdiff_t>(w)) {
            continue;
          }
          const std::size_t base = ((oy * wo + ox) * kernel * kernel + ky * kernel + kx) * c;
          const std::size_t from = (static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix)) * c;
          for (std::size_t ch = 0; ch < c; ++ch) {
            src[base + ch] = static_cast<std::ptrdiff_t>(from + ch);
          }
        }
      }
    }
  }
  auto xv = x.data();
  std::vector<double> out(src.size(), 0.0);
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (src[i] >= 0) out[i] = xv[static_cast<std::size_t>(src[i])];
  }
  return make_result({ho * wo, cols}, std::move(out), {x}, "im2col",
                     [src = std::move(src)](Node& self) {
                       if (double* g = input_grad(self, 0)) {
                         for (std::size_t i = 0; i < src.size(); ++i) {
                           if (src[i] >= 0) g[static_cast<std::size_t>(src[i])] += self.grad[i];
                         }
                       }
                     });
}

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias,
              std::size_t stride, std::size_t pad) {
  require(x.rank() == 3 && weight.rank() == 4 &&
              weight.dim(0) == weight.dim(1) && weight.dim(2) == x.dim(2),
          "conv2d: input " + shape_str(x.shape()) + " does not match weight " +
              shape_str(weight.shape()));
  const std::size_t k = weight.dim(0);
  const std::size_t cout = weight.dim(3);
  const std::size_t ho = (x.dim(0) + 2 * pad - k) / stride + 1;
  const std::size_t wo = (x.dim(1) + 2 * pad - k) / stride + 1;
  Tensor cols = im2col(x, k, stride, pad);
  Tensor w2 = reshape(weight, {k * k * x.dim(2), cout});
  return reshape(add_bias(matmul(cols, w2), bias), {ho, wo, cout});
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  const Shape& s = x.shape();
  require(axis < s.size(), "softmax: axis " + std::to_string(axis) +
                               " out of range for " + shape_str(s));
  std::size_t outer = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  std::size_t inner = 1;
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[axis];
  auto xv = x.data();
  std::vector<double> out(xv.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      double peak = xv[base];
      for (std::size_t i = 1; i < len; ++i) peak = std::max(peak, xv[base + i * inner]);
      double total = 0.0;
      for (std::size_t i = 0; i < len; ++i) {
        const double e = std::exp(xv[base + i * inner] - peak);
        out[base + i * inner] = e;
        total += e;
      }
      for (std::size_t i = 0; i < len; ++i) out[base + i * inner] /= total;
    }
  }
  return make_result(s, std::move(out), {x}, "softmax",
                     [outer, inner, len](Node& self) {
                       double* g = input_grad(self, 0);
                       if (!g) return;
                       const auto& y = self.data;
                       const auto& gy = self.grad;
                       for (std::size_t o = 0; o < outer; ++o) {
                         for (std::size_t in = 0; in < inner; ++in) {
                           const std::size_t base = o * len * inner + in;
                           double dot = 0.0;
                           for (std::size_t i = 0; i < len; ++i) {
                             dot += gy[base + i * inner] * y[base + i * inner];
                           }
                           for (std::size_t i = 0; i < len; ++i) {
                             const std::size_t at = base + i * inner;
                             g[at] += y[at] * (gy[at] - dot);
                           }
                         }
                       }
                     });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps) {
  require(x.rank() >= 1 && gamma.rank() == 1 && beta.rank() == 1 &&
              gamma.dim(0) == x.shape().back() && beta.dim(0) == gamma.dim(0),
          "layer_norm: parameter shapes do not match " + shape_str(x.shape()));
  const std::size_t c = gamma.dim(0);
  const std::size_t rows = x.numel() / c;
  auto xv = x.data();
  auto gv = gamma.data();
  auto bv = beta.data();
  std::vector<double> normalized(xv.size());
  std::vector<double> inv_std(rows);
  std::vector<double> out(xv.size());
  for (std::size_t r = 0; r < rows; ++r) {
    double mu = 0.0;
    for (std::size_t j = 0; j < c; ++j) mu += xv[r * c + j];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double d = xv[r * c + j] - mu;
      var += d * d;
    }
    var /= static_cast<double>(c);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) {
      const double n = (xv[r * c + j] - mu) * inv_std[r];
      normalized[r * c + j] = n;
      out[r * c + j] = n * gv[j] + bv[j];
    }
  }
  return make_result(x.shape(), std::move(out), {x, gamma, beta}, "layer_norm",
                     [c, rows, normalized = std::move(normalized),
                      inv_std = std::move(inv_std)](Node& self) {
                       const double* gam = input_data(self, 1);
                       const auto& gy = self.grad;
                       if (double* gg = input_grad(self, 1)) {
                         for (std::size_t i = 0; i < gy.size(); ++i) gg[i % c] += gy[i] * normalized[i];
                       }
                       if (double* gb = input_grad(self, 2)) {
                         for (std::size_t i = 0; i < gy.size(); ++i) gb[i % c] += gy[i];
                       }
                       double* gx = input_grad(self, 0);
                       if (!gx) return;
                       const double inv_c = 1.0 / static_cast<double>(c);
                       for (std::size_t r = 0; r < rows; ++r) {
                         double mean_d = 0.0;
                         double mean_dn = 0.0;
                         for (std::size_t j = 0; j < c; ++j) {
                           const double d = gy[r * c + j] * gam[j];
                           mean_d += d;
                           mean_dn += d * normalized[r * c + j];
                         }
                         mean_d *= inv_c;
                         mean_dn *= inv_c;
                         for (std::size_t j = 0; j < c; ++j) {
                           const double d = gy[r * c + j] * gam[j];
                           gx[r * c + j] += inv_std[r] * (d - mean_d - normalized[r * c + j] * mean_dn);
                         }
                       }
                     });
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v,
                 std::size_t heads, std::vector<Tensor>* attention_maps) {
  require(q.rank() == 2 && k.rank() == 2 && v.rank() == 2,
          "attention: rank-2 q, k, v required");
  require(q.dim(1) == k.dim(1) && k.dim(1) == v.dim(1),
          "attention: channel mismatch q" + shape_str(q.shape()) + " k" +
              shape_str(k.shape()) + " v" + shape_str(v.shape()));
  require(k.dim(0) == v.dim(0), "attention: key/value row mismatch");
  const std::size_t c = q.dim(1);
  require(heads >= 1 && c % heads == 0,
          "attention: channels " + std::to_string(c) +
              " not divisible by heads " + std::to_string(heads));
  const std::size_t ch = c / heads;
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(ch));
  auto one_head = [&](const Tensor& qh, const Tensor& kh, const Tensor& vh) {
    Tensor probs = softmax(scale(matmul(qh, transpose(kh)), inv_scale), 1);
    if (attention_maps) attention_maps->push_back(probs);
    return matmul(probs, vh);
  };
  if (heads == 1) return one_head(q, k, v);
  std::vector<Tensor> outs;
  for (std::size_t h = 0; h < heads; ++h) {
    outs.push_back(one_head(slice(q, 1, h * ch, (h + 1) * ch),
                            slice(k, 1, h * ch, (h + 1) * ch),
                            slice(v, 1, h * ch, (h + 1) * ch)));
  }
  return concat(outs, 1);
}

Tensor soft_argmax_2_5d(const Tensor& heatmap) {
  require(heatmap.rank() == 4, "soft_argmax_2_5d: expected [h, w, d, J], got " +
                                   shape_str(heatmap.shape()));
  const std::size_t h = heatmap.dim(0);
  const std::size_t w = heatmap.dim(1);
  const std::size_t d = heatmap.dim(2);
  const std::size_t joints = heatmap.dim(3);
  const std::size_t cells = h * w * d;
  // Cell coordinates (x, y, z) of each flattened heatmap cell.
  std::vector<double> coord(cells * 3);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t z = 0; z < d; ++z) {
        const std::size_t cell = (y * w + x) * d + z;
        coord[cell * 3 + 0] = static_cast<double>(x);
        coord[cell * 3 + 1] = static_cast<double>(y);
        coord[cell * 3 + 2] = static_cast<double>(z);
      }
    }
  }
  const double upper[3] = {static_cast<double>(w - 1), static_cast<double>(h - 1),
                           static_cast<double>(d - 1)};
  auto logits = heatmap.data();
  std::vector<double> probs(cells * joints);
  std::vector<double> out(joints * 3, 0.0);
  for (std::size_t j = 0; j < joints; ++j) {
    double peak = logits[j];
    for (std::size_t i = 1; i < cells; ++i) peak = std::max(peak, logits[i * joints + j]);
    double total = 0.0;
    for (std::size_t i = 0; i < cells; ++i) {
      const double e = std::exp(logits[i * joints + j] - peak);
      probs[i * joints + j] = e;
      total += e;
    }
    double acc[3] = {0.0, 0.0, 0.0};
    for (std::size_t i = 0; i < cells; ++i) {
      const double p = probs[i * joints + j] / total;
      probs[i * joints + j] = p;
      for (int a = 0; a < 3; ++a) acc[a] += p * coord[i * 3 + a];
    }
    for (int a = 0; a < 3; ++a) out[j * 3 + a] = std::clamp(acc[a], 0.0, upper[a]);
  }
  return make_result({joints, 3}, std::move(out), {heatmap}, "soft_argmax_2_5d",
                     [cells, joints, probs = std::move(probs),
                      coord = std::move(coord)](Node& self) {
                       double* g = input_grad(self, 0);
                       if (!g) return;
                       for (std::size_t j = 0; j < joints; ++j) {
                         const double* gy = self.grad.data() + j * 3;
                         const double* e = self.data.data() + j * 3;
                         for (std::size_t i = 0; i < cells; ++i) {
                           double s = 0.0;
                           for (int a = 0; a < 3; ++a) s += gy[a] * (coord[i * 3 + a] - e[a]);
                           g[i * joints + j] += probs[i * joints + j] * s;
                         }
                       }
                     });
}

Tensor bilinear_sample(const Tensor& fmap, const Tensor& coords) {
  require(fmap.rank() == 3, "bilinear_sample: expected fmap [h, w, c], got " +
                                shape_str(fmap.shape()));
  require(coords.rank() == 2 && coords.dim(1) == 2,
          "bilinear_sample: expected coords [J, 2], got " +
              shape_str(coords.shape()));
  const std::size_t h = fmap.dim(0);
  const std::size_t w = fmap.dim(1);
  const std::size_t c = fmap.dim(2);
  const std::size_t n = coords.dim(0);
  struct Tap {
    std::size_t x0, x1, y0, y1;
    double fx, fy;
    bool free_x, free_y;  // false when the coordinate was clamped
  };
  std::vector<Tap> taps(n);
  auto cv = coords.data();
  auto fv = fmap.data();
  std::vector<double> out(n * c);
  for (std::size_t j = 0; j < n; ++j) {
    const double max_x = static_cast<double>(w - 1);
    const double max_y = static_cast<double>(h - 1);
    const double x = std::clamp(cv[j * 2 + 0], 0.0, max_x);
    const double y = std::clamp(cv[j * 2 + 1], 0.0, max_y);
    Tap t;
    t.free_x = cv[j * 2 + 0] >= 0.0 && cv[j * 2 + 0] <= max_x;
    t.free_y = cv[j * 2 + 1] >= 0.0 && cv[j * 2 + 1] <= max_y;
    t.x0 = std::min(static_cast<std::size_t>(std::floor(x)), w - 1);
    t.y0 = std::min(static_cast<std::size_t>(std::floor(y)), h - 1);
    t.x1 = std::min(t.x0 + 1, w - 1);
    t.y1 = std::min(t.y0 + 1, h - 1);
    t.fx = x - static_cast<double>(t.x0);
    t.fy = y - static_cast<double>(t.y0);
    taps[j] = t;
    const double* f00 = &fv[(t.y0 * w + t.x0) * c];
    const double* f01 = &fv[(t.y0 * w + t.x1) * c];
    const double* f10 = &fv[(t.y1 * w + t.x0) * c];
    const double* f11 = &fv[(t.y1 * w + t.x1) * c];
    const double w00 = (1.0 - t.fx) * (1.0 - t.fy);
    const double w01 = t.fx * (1.0 - t.fy);
    const double w10 = (1.0 - t.fx) * t.fy;
    const double w11 = t.fx * t.fy;
    for (std::size_t ch = 0; ch < c; ++ch) {
      out[j * c + ch] = w00 * f00[ch] + w01 * f01[ch] + w10 * f10[ch] + w11 * f11[ch];
    }
  }
  return make_result({n, c}, std::move(out), {fmap, coords}, "bilinear_sample",
                     [taps = std::move(taps), w, c](Node& self) {
                       double* gf = input_grad(self, 0);
                       double* gc = input_grad(self, 1);
                       const double* fv = input_data(self, 0);
                       for (std::size_t j = 0; j < taps.size(); ++j) {
                         const Tap& t = taps[j];
                         const std::size_t i00 = (t.y0 * w + t.x0) * c;
                         const std::size_t i01 = (t.y0 * w + t.x1) * c;
                         const std::size_t i10 = (t.y1 * w + t.x0) * c;
                         const std::size_t i11 = (t.y1 * w + t.x1) * c;
                         const double* gy = self.grad.data() + j * c;
                         if (gf) {
                           const double w00 = (1.0 - t.fx) * (1.0 - t.fy);
                           const double w01 = t.fx * (1.0 - t.fy);
                           const double w10 = (1.0 - t.fx) * t.fy;
                           const double w11 = t.fx * t.fy;
                           for (std::size_t ch = 0; ch < c; ++ch) {
                             gf[i00 + ch] += w00 * gy[ch];
                             gf[i01 + ch] += w01 * gy[ch];
                             gf[i10 + ch] += w10 * gy[ch];
                             gf[i11 + ch] += w11 * gy[ch];
                           }
                         }
                         if (gc) {
                           double dx = 0.0;
                           double dy = 0.0;
                           for (std::size_t ch = 0; ch < c; ++ch) {
                             const double f00 = fv[i00 + ch], f01 = fv[i01 + ch];
                             const double f10 = fv[i10 + ch], f11 = fv[i11 + ch];
                             dx += gy[ch] * ((1.0 - t.fy) * (f01 - f00) + t.fy * (f11 - f10));
                             dy += gy[ch] * ((1.0 - t.fx) * (f10 - f00) + t.fx * (f11 - f01));
                           }
                           if (t.free_x) gc[j * 2 + 0] += dx;
                           if (t.free_y) gc[j * 2 + 1] += dy;
                         }
                       }
                     });
}

Tensor global_average_pool(const Tensor& x) {
  require(x.rank() == 3, "global_average_pool: expected [h, w, c], got " +
                             shape_str(x.shape()));
  const std::size_t sites = x.dim(0) * x.dim(1);
  const std::size_t c = x.dim(2);
  auto xv = x.data();
  std::vector<double> out(c, 0.0);
  for (std::size_t s = 0; s < sites; ++s) {
    for (std::size_t ch = 0; ch < c; ++ch) out[ch] += xv[s * c + ch];
  }
  const double inv = 1.0 / static_cast<double>(sites);
  for (auto& v : out) v *= inv;
  return make_result({c}, std::move(out), {x}, "global_average_pool",
                     [sites, c, inv](Node& self) {
                       if (double* g = input_grad(self, 0)) {
                         for (std::size_t s = 0; s < sites; ++s) {
                           for (std::size_t ch = 0; ch < c; ++ch) g[s * c + ch] += self.grad[ch] * inv;
                         }
                       }
                     });
}

Tensor l1_loss(const Tensor& pred, const Tensor& target) {
  require_same_shape(pred, target, "l1_loss");
  auto pv = pred.data();
  auto tv = target.data();
  const double n = static_cast<double>(pv.size());
  double total = 0.0;
  for (std::size_t i = 0; i < pv.size(); ++i) total += std::abs(pv[i] - tv[i]);
  return make_result({}, {total / n}, {pred, target}, "l1_loss", [n](Node& self) {
    const double* p = input_data(self, 0);
    const double* t = input_data(self, 1);
    const std::size_t count = self.inputs[0]->data.size();
    const double scale_g = self.grad[0] / n;
    auto sign = [](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); };
    if (double* gp = input_grad(self, 0)) {
      for (std::size_t i = 0; i < count; ++i) gp[i] += scale_g * sign(p[i] - t[i]);
    }
    if (double* gt = input_grad(self, 1)) {
      for (std::size_t i = 0; i < count; ++i) gt[i] -= scale_g * sign(p[i] - t[i]);
    }
  });
}

namespace {

// Coefficients of R = I + a K + b K^2 and their derivatives divided by theta.
struct RodriguesCoeffs {
  double a, b, da, db;
};

RodriguesCoeffs rodrigues_coeffs(double theta_sq) {
  if (theta_sq < 0.05 * 0.05) {
    const double t = theta_sq;
    return {1.0 - t / 6.0 + t * t / 120.0 - t * t * t / 5040.0,
            0.5 - t / 24.0 + t * t / 720.0 - t * t * t / 40320.0,
            -1.0 / 3.0 + t / 30.0 - t * t / 840.0 + t * t * t / 45360.0,
            -1.0 / 12.0 + t / 180.0 - t * t / 6720.0 + t * t * t / 453600.0};
  }
  const double th = std::sqrt(theta_sq);
  const double s = std::sin(th);
  const double co = std::cos(th);
  return {s / th, (1.0 - co) / theta_sq, (th * co - s) / (theta_sq * th),
          (th * s - 2.0 * (1.0 - co)) / (theta_sq * theta_sq)};
}

}  // namespace

Tensor rodrigues(const Tensor& axis_angle) {
  require(axis_angle.rank() == 2 && axis_angle.dim(1) == 3,
          "rodrigues: expected [n, 3], got " + shape_str(axis_angle.shape()));
  const std::size_t n = axis_angle.dim(0);
  auto rv = axis_angle.data();
  std::vector<double> out(n * 9);
  for (std::size_t t = 0; t < n; ++t) {
    const double r[3] = {rv[t * 3], rv[t * 3 + 1], rv[t * 3 + 2]};
    const double tsq = r[0] * r[0] + r[1] * r[1] + r[2] * r[2];
    const auto co = rodrigues_coeffs(tsq);
    const double k[9] = {0, -r[2], r[1], r[2], 0, -r[0], -r[1], r[0], 0};
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) {
        const double delta = i == j ? 1.0 : 0.0;
        const double k2 = r[i] * r[j] - tsq * delta;
        out[t * 9 + i * 3 + j] = delta + co.a * k[i * 3 + j] + co.b * k2;
      }
    }
  }
  return make_result({n, 3, 3}, std::move(out), {axis_angle}, "rodrigues",
                     [n](Node& self) {
                       double* g = input_grad(self, 0);
                       if (!g) return;
                       const double* rv = input_data(self, 0);
                       for (std::size_t t = 0; t < n; ++t) {
                         const double r[3] = {rv[t * 3], rv[t * 3 + 1], rv[t * 3 + 2]};
                         const double tsq = r[0] * r[0] + r[1] * r[1] + r[2] * r[2];
                         const auto co = rodrigues_coeffs(tsq);
                         const double* G = self.grad.data() + t * 9;
                         const double k[9] = {0, -r[2], r[1], r[2], 0, -r[0], -r[1], r[0], 0};
                         double gk = 0.0;
                         double gk2 = 0.0;
                         for (int i = 0; i < 3; ++i) {
                           for (int j = 0; j < 3; ++j) {
                             gk += G[i * 3 + j] * k[i * 3 + j];
                             gk2 += G[i * 3 + j] * (r[i] * r[j] - (i == j ? tsq : 0.0));
                           }
                         }
                         const double skew[3] = {G[7] - G[5], G[2] - G[6], G[3] - G[1]};
                         const double trace = G[0] + G[4] + G[8];
                         for (int m = 0; m < 3; ++m) {
                           double row = 0.0;
                           double col = 0.0;
                           for (int j = 0; j < 3; ++j) {
                             row += G[m * 3 + j] * r[j];
                             col += G[j * 3 + m] * r[j];
                           }
                           const double dk2 = row + col - 2.0 * r[m] * trace;
                           g[t * 3 + m] += co.da * r[m] * gk + co.a * skew[m] +
                                           co.db * r[m] * gk2 + co.b * dk2;
                         }
                       }
                     });
}

}  // namespace eanet::ops
