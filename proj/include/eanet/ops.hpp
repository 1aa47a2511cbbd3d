#pragma once

#include <cstddef>
#include <vector>

#include "eanet/tensor.hpp"

// Differentiable primitives. Every function records a backward rule when grad
// recording is enabled and an input requires grad.
namespace eanet::ops {

// Elementwise, equal shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
/// x[..., n] + bias[n], broadcast over all leading axes.
Tensor add_bias(const Tensor& x, const Tensor& bias);
Tensor gelu(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// Layout.
Tensor reshape(const Tensor& x, Shape shape);
Tensor transpose(const Tensor& x);  // rank 2
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin,
             std::size_t end);
/// Rows of x (along axis 0) at the given indices, repeats allowed.
Tensor index_select(const Tensor& x, const std::vector<std::size_t>& indices);

// Linear algebra.
Tensor matmul(const Tensor& a, const Tensor& b);  // [m,k] @ [k,n]
Tensor bmm(const Tensor& a, const Tensor& b);     // [B,m,k] @ [B,k,n]
/// Row-wise affine map: x[..., cin] @ weight[cin, cout] + bias[cout].
/// An undefined bias means no bias term.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);
/// 1x1 convolution over a channels-last map x[h, w, cin].
Tensor conv1x1(const Tensor& x, const Tensor& weight, const Tensor& bias);
/// Patches of x[h, w, c] as rows [(ho*wo), (k*k*c)], zero padded.
Tensor im2col(const Tensor& x, std::size_t kernel, std::size_t stride,
              std::size_t pad);
/// Strided convolution, weight[k, k, cin, cout], bias[cout].
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias,
              std::size_t stride, std::size_t pad);

// Normalization and attention.
Tensor softmax(const Tensor& x, std::size_t axis);
/// Per-row normalization over the last axis with affine gamma/beta.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5);
/// softmax(q k^T / sqrt(c_head)) v. With heads > 1 the channel axis is split
/// evenly and the per-head results are concatenated. When `attention_maps`
/// is given, the per-head probability matrices are appended to it.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v,
                 std::size_t heads = 1,
                 std::vector<Tensor>* attention_maps = nullptr);

// Pose-specific primitives.
/// heatmap[h, w, d, J] -> [J, 3] expected (x, y, z) cell coordinates.
Tensor soft_argmax_2_5d(const Tensor& heatmap);
/// fmap[h, w, c] sampled at coords[J, 2] given as (x, y) cell units.
Tensor bilinear_sample(const Tensor& fmap, const Tensor& coords);
/// x[h, w, c] -> [c].
Tensor global_average_pool(const Tensor& x);
/// Mean absolute difference; the subgradient at zero difference is 0.
Tensor l1_loss(const Tensor& pred, const Tensor& target);
/// Axis-angle rows r[n, 3] -> rotation matrices [n, 3, 3].
Tensor rodrigues(const Tensor& axis_angle);

}  // namespace eanet::ops
