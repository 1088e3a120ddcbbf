// Reference implementations of the numeric kernels, written as plain nested
// loops with no shortcuts, no blocking, and no shared code with the library.
// Tests compare the optimized kernels against these.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "gks/tensor.hpp"

namespace oracle {

using gks::Tensor;

// y = max(x, 0), elementwise.
inline Tensor relu(const Tensor& x) {
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i)
    y.data()[i] = x.data()[i] > 0.0 ? x.data()[i] : 0.0;
  return y;
}

// C[i,j] = sum_k A[i,k] * B[k,j] for rank-2 operands.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor c({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t kk = 0; kk < k; ++kk) s += a.at(i, kk) * b.at(kk, j);
      c.at(i, j) = s;
    }
  return c;
}

// Treats x as [rows, p] row-major and computes rows x [p,q] (+ bias).
inline Tensor linear(const Tensor& x, const Tensor& w,
                     const Tensor* bias = nullptr) {
  const std::size_t p = w.dim(0), q = w.dim(1);
  const std::size_t rows = x.numel() / p;
  std::vector<std::size_t> out_shape = x.shape();
  out_shape.back() = q;
  Tensor y(out_shape);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < q; ++j) {
      double s = bias ? bias->data()[j] : 0.0;
      for (std::size_t kk = 0; kk < p; ++kk)
        s += x.data()[r * p + kk] * w.at(kk, j);
      y.data()[r * q + j] = s;
    }
  return y;
}

// Shared adjacency applied to every batch entry:
// out[b,i,:] = sum_j A[i,j] * Y[b,j,:].
inline Tensor adj_matmul(const Tensor& adj, const Tensor& nodes) {
  const std::size_t B = nodes.dim(0), n = nodes.dim(1), d = nodes.dim(2);
  Tensor out({B, n, d});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t kk = 0; kk < d; ++kk) {
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j)
          s += adj.at(i, j) * nodes.at(b, j, kk);
        out.at(b, i, kk) = s;
      }
  return out;
}

// Per-batch-entry matrix product: out[b] = A[b] * Y[b].
inline Tensor pair_matmul(const Tensor& a, const Tensor& nodes) {
  const std::size_t B = a.dim(0), n = a.dim(1), m = a.dim(2);
  const std::size_t d = nodes.dim(2);
  Tensor out({B, n, d});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t kk = 0; kk < d; ++kk) {
        double s = 0.0;
        for (std::size_t j = 0; j < m; ++j)
          s += a.at(b, i, j) * nodes.at(b, j, kk);
        out.at(b, i, kk) = s;
      }
  return out;
}

// Same-padded 2D convolution, NHWC input, [K,K,Ci,Co] kernel.
inline Tensor conv2d(const Tensor& input, const Tensor& kernel,
                     const Tensor& bias) {
  const std::size_t B = input.dim(0), H = input.dim(1), W = input.dim(2),
                    Ci = input.dim(3);
  const std::size_t K = kernel.dim(0), Co = kernel.dim(3);
  const long pad = static_cast<long>(K / 2);
  Tensor out({B, H, W, Co});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x)
        for (std::size_t co = 0; co < Co; ++co) {
          double s = bias.data()[co];
          for (std::size_t dy = 0; dy < K; ++dy)
            for (std::size_t dx = 0; dx < K; ++dx) {
              const long sy = static_cast<long>(y) + static_cast<long>(dy) - pad;
              const long sx = static_cast<long>(x) + static_cast<long>(dx) - pad;
              if (sy < 0 || sy >= static_cast<long>(H) || sx < 0 ||
                  sx >= static_cast<long>(W))
                continue;
              for (std::size_t ci = 0; ci < Ci; ++ci)
                s += input.at(b, static_cast<std::size_t>(sy),
                              static_cast<std::size_t>(sx), ci) *
                     kernel.at(dy, dx, ci, co);
            }
          out.at(b, y, x, co) = s;
        }
  return out;
}

// Row-wise softmax over the trailing axis.
inline Tensor softmax_rows(const Tensor& x) {
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.numel() / n;
  Tensor y(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    double mx = x.data()[r * n];
    for (std::size_t j = 1; j < n; ++j)
      mx = std::max(mx, x.data()[r * n + j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      y.data()[r * n + j] = std::exp(x.data()[r * n + j] - mx);
      sum += y.data()[r * n + j];
    }
    for (std::size_t j = 0; j < n; ++j) y.data()[r * n + j] /= sum;
  }
  return y;
}

// Cosine similarity of every target node against every source node,
// [B,N,d] x [B,M,d] -> [B,N,M]; a zero-norm operand yields similarity 0.
inline Tensor cosine_logits(const Tensor& a, const Tensor& b) {
  const std::size_t B = a.dim(0), N = a.dim(1), M = b.dim(1), d = a.dim(2);
  Tensor out({B, N, M});
  for (std::size_t bb = 0; bb < B; ++bb)
    for (std::size_t i = 0; i < N; ++i)
      for (std::size_t j = 0; j < M; ++j) {
        double dot = 0.0, na = 0.0, nb = 0.0;
        for (std::size_t k = 0; k < d; ++k) {
          const double av = a.at(bb, i, k), bv = b.at(bb, j, k);
          dot += av * bv;
          na += av * av;
          nb += bv * bv;
        }
        na = std::sqrt(na);
        nb = std::sqrt(nb);
        out.at(bb, i, j) = (na == 0.0 || nb == 0.0) ? 0.0 : dot / (na * nb);
      }
  return out;
}

// Gaussian kernel values exp(-|a_i-b_j|^2 / (2 sigma^2)) with sigma the
// median of the N*M pairwise Euclidean distances per batch entry (mean of
// the two middle values when the count is even). sigma == 0 yields all ones.
inline Tensor gaussian_kernel(const Tensor& a, const Tensor& b) {
  const std::size_t B = a.dim(0), N = a.dim(1), M = b.dim(1), d = a.dim(2);
  Tensor out({B, N, M});
  for (std::size_t bb = 0; bb < B; ++bb) {
    std::vector<double> dist(N * M);
    for (std::size_t i = 0; i < N; ++i)
      for (std::size_t j = 0; j < M; ++j) {
        double s = 0.0;
        for (std::size_t k = 0; k < d; ++k) {
          const double df = a.at(bb, i, k) - b.at(bb, j, k);
          s += df * df;
        }
        dist[i * M + j] = s;
      }
    std::vector<double> sorted = dist;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t total = N * M;
    const double sigma = 0.5 * (std::sqrt(sorted[(total - 1) / 2]) +
                                std::sqrt(sorted[total / 2]));
    for (std::size_t e = 0; e < total; ++e)
      out.data()[bb * total + e] =
          sigma == 0.0 ? 1.0 : std::exp(-dist[e] / (2.0 * sigma * sigma));
  }
  return out;
}

// One reasoning step: relu(A * Y * W) with the adjacency shared by the batch.
inline Tensor graph_conv_step(const Tensor& nodes, const Tensor& adjacency,
                              const Tensor& weight) {
  return relu(linear(adj_matmul(adjacency, nodes), weight));
}

// Source nodes carried into the target node space: (A_tr * Y_l) * W_i.
inline Tensor intermediate_graph(const Tensor& a_tr, const Tensor& source_nodes,
                                 const Tensor& w_inter) {
  return linear(pair_matmul(a_tr, source_nodes), w_inter);
}

// Row-stochastic similarity matrix: softmax over each target node's
// similarities to all source nodes.
inline Tensor transfer_matrix(const Tensor& target_nodes,
                              const Tensor& source_nodes, bool cosine) {
  return softmax_rows(cosine ? cosine_logits(target_nodes, source_nodes)
                             : gaussian_kernel(target_nodes, source_nodes));
}

// Residual fusion: y_t + relu([y_t ; y_i ; y_l] * W_f + b_f).
inline Tensor inter_graph_fusion(const Tensor& y_t, const Tensor& y_i,
                                 const Tensor& y_l, const Tensor& w_fuse,
                                 const Tensor& b_fuse) {
  const std::size_t B = y_t.dim(0), n = y_t.dim(1), d = y_t.dim(2);
  Tensor cat({B, n, 3 * d});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < d; ++k) {
        cat.at(b, i, k) = y_t.at(b, i, k);
        cat.at(b, i, d + k) = y_i.at(b, i, k);
        cat.at(b, i, 2 * d + k) = y_l.at(b, i, k);
      }
  Tensor gate = relu(linear(cat, w_fuse, &b_fuse));
  Tensor out({B, n, d});
  for (std::size_t e = 0; e < out.numel(); ++e)
    out.data()[e] = y_t.data()[e] + gate.data()[e];
  return out;
}

// Batch normalization over all axes but the last, training statistics.
inline Tensor batch_norm_train(const Tensor& x, const Tensor& gamma,
                               const Tensor& beta, double eps) {
  const std::size_t c = x.shape().back();
  const std::size_t rows = x.numel() / c;
  Tensor y(x.shape());
  for (std::size_t ch = 0; ch < c; ++ch) {
    double mean = 0.0;
    for (std::size_t r = 0; r < rows; ++r) mean += x.data()[r * c + ch];
    mean /= static_cast<double>(rows);
    double var = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
      const double df = x.data()[r * c + ch] - mean;
      var += df * df;
    }
    var /= static_cast<double>(rows);
    const double inv = 1.0 / std::sqrt(var + eps);
    for (std::size_t r = 0; r < rows; ++r)
      y.data()[r * c + ch] =
          gamma.data()[ch] * (x.data()[r * c + ch] - mean) * inv +
          beta.data()[ch];
  }
  return y;
}

// Mean cross-entropy of integer labels against [B,K] logits.
inline double cross_entropy(const Tensor& logits,
                            const std::vector<int>& labels) {
  const std::size_t B = logits.dim(0), K = logits.dim(1);
  double total = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    double mx = logits.at(b, std::size_t{0});
    for (std::size_t k = 1; k < K; ++k)
      mx = std::max(mx, logits.at(b, k));
    double sum = 0.0;
    for (std::size_t k = 0; k < K; ++k)
      sum += std::exp(logits.at(b, k) - mx);
    total += std::log(sum) -
             (logits.at(b, static_cast<std::size_t>(labels[b])) - mx);
  }
  return total / static_cast<double>(B);
}

// One Adam update on a flat parameter vector; returns the new parameter.
struct AdamRef {
  std::vector<double> m, v;
  long step = 0;
  void update(std::vector<double>& param, const std::vector<double>& grad,
              double lr, double beta1, double beta2, double eps) {
    if (m.empty()) {
      m.assign(param.size(), 0.0);
      v.assign(param.size(), 0.0);
    }
    ++step;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
    for (std::size_t i = 0; i < param.size(); ++i) {
      m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      param[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
};

}  // namespace oracle
