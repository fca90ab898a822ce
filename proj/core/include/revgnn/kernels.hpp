#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "revgnn/graph.hpp"
#include "revgnn/tensor.hpp"

namespace revgnn {

template <class S>
Mat<S> cast_mat(const Mat<double>& m) {
  Mat<S> out(m.rows(), m.cols());
  for (index_t i = 0; i < m.size(); ++i) out.data()[i] = static_cast<S>(m.data()[i]);
  return out;
}

template <class S>
struct LinearParams {
  Mat<S> weight;  // d_in x d_out
  Mat<S> bias;    // 1 x d_out

  index_t d_in() const { return weight.rows(); }
  index_t d_out() const { return weight.cols(); }
};

template <class S>
struct NormParams {
  Mat<S> scale;  // 1 x d
  Mat<S> shift;  // 1 x d
  S epsilon = S(1e-5);
};

// One Bernoulli pattern, reused across layers within an optimization step.
struct DropoutMask {
  Mat<std::uint8_t> mask;  // entries in {0,1}
  double keep_prob = 1.0;
};

enum class AggKind { sum, mean, max, softmax };

template <class S>
struct AggSpec {
  AggKind kind = AggKind::sum;
  S beta = S(1);                                 // softmax temperature
  const std::vector<S>* edge_weights = nullptr;  // per-edge weights, sum aggregation only
};

// ---------------------------------------------------------------------------
// dense kernels

template <class S>
Mat<S> linear(const Mat<S>& x, const LinearParams<S>& p) {
  require(x.cols() == p.d_in(), "linear: input width mismatch");
  Mat<S> y(x.rows(), p.d_out());
  const index_t din = p.d_in(), dout = p.d_out();
  for (index_t n = 0; n < x.rows(); ++n) {
    S* yr = y.row(n);
    for (index_t o = 0; o < dout; ++o) yr[o] = p.bias.data()[o];
    const S* xr = x.row(n);
    for (index_t i = 0; i < din; ++i) {
      const S xi = xr[i];
      const S* wr = p.weight.row(i);
      for (index_t o = 0; o < dout; ++o) yr[o] += xi * wr[o];
    }
  }
  return y;
}

// Returns gx; accumulates parameter gradients into acc.
template <class S>
Mat<S> linear_vjp(const Mat<S>& x, const LinearParams<S>& p, const Mat<S>& gy, LinearParams<S>& acc) {
  require(gy.rows() == x.rows() && gy.cols() == p.d_out(), "linear_vjp: upstream shape mismatch");
  Mat<S> gx(x.rows(), p.d_in());
  const index_t din = p.d_in(), dout = p.d_out();
  for (index_t n = 0; n < x.rows(); ++n) {
    const S* gr = gy.row(n);
    const S* xr = x.row(n);
    S* gxr = gx.row(n);
    for (index_t i = 0; i < din; ++i) {
      const S* wr = p.weight.row(i);
      S acc_i = 0;
      for (index_t o = 0; o < dout; ++o) acc_i += gr[o] * wr[o];
      gxr[i] = acc_i;
      S* gwr = acc.weight.row(i);
      const S xi = xr[i];
      for (index_t o = 0; o < dout; ++o) gwr[o] += xi * gr[o];
    }
    S* gb = acc.bias.data();
    for (index_t o = 0; o < dout; ++o) gb[o] += gr[o];
  }
  return gx;
}

template <class S>
Mat<S> relu(const Mat<S>& x) {
  Mat<S> y(x.rows(), x.cols());
  for (index_t i = 0; i < x.size(); ++i) y.data()[i] = x.data()[i] > S(0) ? x.data()[i] : S(0);
  return y;
}

template <class S>
Mat<S> relu_vjp(const Mat<S>& x, const Mat<S>& gy) {
  require(x.same_shape(gy), "relu_vjp: shape mismatch");
  Mat<S> gx(x.rows(), x.cols());
  for (index_t i = 0; i < x.size(); ++i) gx.data()[i] = x.data()[i] > S(0) ? gy.data()[i] : S(0);
  return gx;
}

// Per-row mean and reciprocal standard deviation (population variance).
// Column 0 holds the mean, column 1 the reciprocal of sqrt(var + eps).
template <class S>
Mat<S> row_stats(const Mat<S>& x, S epsilon) {
  Mat<S> stats(x.rows(), 2);
  const index_t d = x.cols();
  for (index_t n = 0; n < x.rows(); ++n) {
    const S* xr = x.row(n);
    S mean = 0;
    for (index_t c = 0; c < d; ++c) mean += xr[c];
    mean /= static_cast<S>(d);
    S var = 0;
    for (index_t c = 0; c < d; ++c) {
      const S dlt = xr[c] - mean;
      var += dlt * dlt;
    }
    var /= static_cast<S>(d);
    stats(n, 0) = mean;
    stats(n, 1) = S(1) / std::sqrt(var + epsilon);
  }
  return stats;
}

template <class S>
Mat<S> layer_norm(const Mat<S>& x, const NormParams<S>& p) {
  require(x.cols() == p.scale.cols(), "layer_norm: width mismatch");
  Mat<S> stats = row_stats(x, p.epsilon);
  Mat<S> y(x.rows(), x.cols());
  for (index_t n = 0; n < x.rows(); ++n) {
    const S mean = stats(n, 0), rstd = stats(n, 1);
    const S* xr = x.row(n);
    S* yr = y.row(n);
    for (index_t c = 0; c < x.cols(); ++c)
      yr[c] = (xr[c] - mean) * rstd * p.scale.data()[c] + p.shift.data()[c];
  }
  return y;
}

// gx = rstd * (g1 - mean(g1) - xhat * mean(g1 * xhat)), with g1 = gy * scale
template <class S>
Mat<S> layer_norm_vjp(const Mat<S>& x, const NormParams<S>& p, const Mat<S>& gy, NormParams<S>& acc) {
  require(x.same_shape(gy), "layer_norm_vjp: shape mismatch");
  Mat<S> stats = row_stats(x, p.epsilon);
  Mat<S> gx(x.rows(), x.cols());
  const index_t d = x.cols();
  for (index_t n = 0; n < x.rows(); ++n) {
    const S mean = stats(n, 0), rstd = stats(n, 1);
    const S* xr = x.row(n);
    const S* gr = gy.row(n);
    S m1 = 0, m2 = 0;
    for (index_t c = 0; c < d; ++c) {
      const S xhat = (xr[c] - mean) * rstd;
      const S g1 = gr[c] * p.scale.data()[c];
      m1 += g1;
      m2 += g1 * xhat;
      acc.scale.data()[c] += gr[c] * xhat;
      acc.shift.data()[c] += gr[c];
    }
    m1 /= static_cast<S>(d);
    m2 /= static_cast<S>(d);
    S* gxr = gx.row(n);
    for (index_t c = 0; c < d; ++c) {
      const S xhat = (xr[c] - mean) * rstd;
      const S g1 = gr[c] * p.scale.data()[c];
      gxr[c] = rstd * (g1 - m1 - xhat * m2);
    }
  }
  return gx;
}

// Batch normalization with statistics recomputed from the current batch,
// column-wise. Offered only in the non-reversible baseline. Row 0 of the
// stats matrix is the mean, row 1 the reciprocal standard deviation.
template <class S>
Mat<S> col_stats(const Mat<S>& x, S epsilon) {
  Mat<S> stats(2, x.cols());
  const index_t n_rows = x.rows();
  for (index_t c = 0; c < x.cols(); ++c) {
    S mean = 0;
    for (index_t n = 0; n < n_rows; ++n) mean += x(n, c);
    mean /= static_cast<S>(n_rows);
    S var = 0;
    for (index_t n = 0; n < n_rows; ++n) {
      const S d = x(n, c) - mean;
      var += d * d;
    }
    var /= static_cast<S>(n_rows);
    stats(0, c) = mean;
    stats(1, c) = S(1) / std::sqrt(var + epsilon);
  }
  return stats;
}

template <class S>
Mat<S> batch_norm(const Mat<S>& x, const NormParams<S>& p) {
  require(x.cols() == p.scale.cols(), "batch_norm: width mismatch");
  require(x.rows() >= 1, "batch_norm: empty batch");
  Mat<S> stats = col_stats(x, p.epsilon);
  Mat<S> y(x.rows(), x.cols());
  for (index_t n = 0; n < x.rows(); ++n)
    for (index_t c = 0; c < x.cols(); ++c)
      y(n, c) = (x(n, c) - stats(0, c)) * stats(1, c) * p.scale.data()[c] + p.shift.data()[c];
  return y;
}

template <class S>
Mat<S> batch_norm_vjp(const Mat<S>& x, const NormParams<S>& p, const Mat<S>& gy, NormParams<S>& acc) {
  require(x.same_shape(gy), "batch_norm_vjp: shape mismatch");
  Mat<S> stats = col_stats(x, p.epsilon);
  Mat<S> gx(x.rows(), x.cols());
  const index_t n_rows = x.rows();
  for (index_t c = 0; c < x.cols(); ++c) {
    const S mean = stats(0, c), rstd = stats(1, c);
    S m1 = 0, m2 = 0;
    for (index_t n = 0; n < n_rows; ++n) {
      const S xhat = (x(n, c) - mean) * rstd;
      const S g1 = gy(n, c) * p.scale.data()[c];
      m1 += g1;
      m2 += g1 * xhat;
      acc.scale.data()[c] += gy(n, c) * xhat;
      acc.shift.data()[c] += gy(n, c);
    }
    m1 /= static_cast<S>(n_rows);
    m2 /= static_cast<S>(n_rows);
    for (index_t n = 0; n < n_rows; ++n) {
      const S xhat = (x(n, c) - mean) * rstd;
      const S g1 = gy(n, c) * p.scale.data()[c];
      gx(n, c) = rstd * (g1 - m1 - xhat * m2);
    }
  }
  return gx;
}

template <class S>
Mat<S> dropout_apply(const Mat<S>& x, const DropoutMask& m) {
  require(x.rows() == m.mask.rows() && x.cols() == m.mask.cols(), "dropout_apply: mask shape mismatch");
  Mat<S> y(x.rows(), x.cols());
  const S inv_keep = S(1.0 / m.keep_prob);
  for (index_t i = 0; i < x.size(); ++i)
    y.data()[i] = m.mask.data()[i] ? x.data()[i] * inv_keep : S(0);
  return y;
}

template <class S>
Mat<S> dropout_vjp(const DropoutMask& m, const Mat<S>& gy) {
  require(gy.rows() == m.mask.rows() && gy.cols() == m.mask.cols(), "dropout_vjp: mask shape mismatch");
  Mat<S> gx(gy.rows(), gy.cols());
  const S inv_keep = S(1.0 / m.keep_prob);
  for (index_t i = 0; i < gy.size(); ++i)
    gx.data()[i] = m.mask.data()[i] ? gy.data()[i] * inv_keep : S(0);
  return gx;
}

// ---------------------------------------------------------------------------
// graph-sparse aggregation
//
// Message on edge e = (v,u): m_e = x[v] (+ edge_msg[e] when supplied; raw
// edge features are projected to the working width by the caller). Output
// row u reduces over u's in-edges. Sum handles empty neighborhoods (zero
// row); mean/max/softmax require in-degree >= 1, guaranteed by self-loops.

// Backward bookkeeping for max aggregation: position of the winning in-edge
// within u's in-list. Ties keep the lowest index, which makes the
// subgradient routing deterministic.
struct AggCache {
  Mat<std::uint16_t> argmax;
};

template <class S>
Mat<S> aggregate(const CsrGraph& g, const Mat<S>& x, const Mat<S>& edge_msg, const AggSpec<S>& spec,
                 AggCache* cache = nullptr) {
  require(x.rows() == g.num_nodes, "aggregate: feature row count mismatch");
  const bool has_msg = !edge_msg.empty();
  if (has_msg)
    require(edge_msg.rows() == g.num_edges() && edge_msg.cols() == x.cols(),
            "aggregate: edge message shape mismatch");
  if (spec.edge_weights != nullptr)
    require(static_cast<index_t>(spec.edge_weights->size()) == g.num_edges(),
            "aggregate: edge weight count mismatch");
  const index_t d = x.cols();
  Mat<S> out(g.num_nodes, d);

  if (spec.kind == AggKind::max && cache != nullptr)
    cache->argmax = Mat<std::uint16_t>(g.num_nodes, d);

  for (index_t u = 0; u < g.num_nodes; ++u) {
    const index_t begin = g.in_ptr[u], end = g.in_ptr[u + 1];
    const index_t deg = end - begin;
    if (deg == 0) {
      require(spec.kind == AggKind::sum,
              "aggregate: mean/max/softmax need in-degree >= 1 (add self-loops)");
      continue;  // sum over the empty set is a zero row
    }
    S* outr = out.row(u);
    switch (spec.kind) {
      case AggKind::sum:
      case AggKind::mean: {
        for (index_t k = begin; k < end; ++k) {
          const index_t e = g.in_edge_id[k];
          const S* xr = x.row(g.in_src[k]);
          const S* er = has_msg ? edge_msg.row(e) : nullptr;
          const S w = spec.edge_weights ? (*spec.edge_weights)[static_cast<std::size_t>(e)] : S(1);
          for (index_t c = 0; c < d; ++c) outr[c] += w * (er ? xr[c] + er[c] : xr[c]);
        }
        if (spec.kind == AggKind::mean) {
          const S inv = S(1) / static_cast<S>(deg);
          for (index_t c = 0; c < d; ++c) outr[c] *= inv;
        }
        break;
      }
      case AggKind::max: {
        require(deg <= index_t(std::numeric_limits<std::uint16_t>::max()) + 1,
                "aggregate: in-degree exceeds max-aggregation bookkeeping range");
        std::uint16_t* arg = cache ? cache->argmax.row(u) : nullptr;
        for (index_t k = begin; k < end; ++k) {
          const index_t e = g.in_edge_id[k];
          const S* xr = x.row(g.in_src[k]);
          const S* er = has_msg ? edge_msg.row(e) : nullptr;
          for (index_t c = 0; c < d; ++c) {
            const S m = er ? xr[c] + er[c] : xr[c];
            if (k == begin || m > outr[c]) {
              outr[c] = m;
              if (arg) arg[c] = static_cast<std::uint16_t>(k - begin);
            }
          }
        }
        break;
      }
      case AggKind::softmax: {
        // stable two-pass softmax(beta * m) per channel over the neighborhood
        std::vector<S> mx(static_cast<std::size_t>(d), std::numeric_limits<S>::lowest());
        std::vector<S> den(static_cast<std::size_t>(d), S(0));
        std::vector<S> num(static_cast<std::size_t>(d), S(0));
        for (index_t k = begin; k < end; ++k) {
          const S* xr = x.row(g.in_src[k]);
          const S* er = has_msg ? edge_msg.row(g.in_edge_id[k]) : nullptr;
          for (index_t c = 0; c < d; ++c) {
            const S bm = spec.beta * (er ? xr[c] + er[c] : xr[c]);
            if (bm > mx[static_cast<std::size_t>(c)]) mx[static_cast<std::size_t>(c)] = bm;
          }
        }
        for (index_t k = begin; k < end; ++k) {
          const S* xr = x.row(g.in_src[k]);
          const S* er = has_msg ? edge_msg.row(g.in_edge_id[k]) : nullptr;
          for (index_t c = 0; c < d; ++c) {
            const S m = er ? xr[c] + er[c] : xr[c];
            const S w = std::exp(spec.beta * m - mx[static_cast<std::size_t>(c)]);
            den[static_cast<std::size_t>(c)] += w;
            num[static_cast<std::size_t>(c)] += w * m;
          }
        }
        for (index_t c = 0; c < d; ++c)
          outr[c] = num[static_cast<std::size_t>(c)] / den[static_cast<std::size_t>(c)];
        break;
      }
    }
  }
  return out;
}

// Returns gx; fills g_edge_msg (num_edges x d) when requested. Only softmax
// needs the forward operands back: x and edge_msg may be empty for the other
// kinds (sum/mean scatter by structure, max routes through the cache).
template <class S>
Mat<S> aggregate_vjp(const CsrGraph& g, const Mat<S>& x, const Mat<S>& edge_msg,
                     const AggSpec<S>& spec, const Mat<S>& gy, const AggCache* cache,
                     Mat<S>* g_edge_msg = nullptr) {
  const index_t d = gy.cols();
  require(gy.rows() == g.num_nodes, "aggregate_vjp: upstream row count mismatch");
  require(x.empty() || (x.rows() == g.num_nodes && x.cols() == d),
          "aggregate_vjp: input shape mismatch");
  expect(spec.kind != AggKind::softmax || !x.empty(),
         "aggregate_vjp: softmax needs the forward inputs");
  const bool has_msg = !edge_msg.empty();
  Mat<S> gx(g.num_nodes, d);
  if (g_edge_msg != nullptr) *g_edge_msg = Mat<S>(g.num_edges(), d);

  auto scatter = [&](index_t k, index_t c, S gm) {
    gx(g.in_src[k], c) += gm;
    if (g_edge_msg != nullptr) (*g_edge_msg)(g.in_edge_id[k], c) += gm;
  };

  for (index_t u = 0; u < g.num_nodes; ++u) {
    const index_t begin = g.in_ptr[u], end = g.in_ptr[u + 1];
    const index_t deg = end - begin;
    if (deg == 0) continue;
    const S* gr = gy.row(u);
    switch (spec.kind) {
      case AggKind::sum: {
        for (index_t k = begin; k < end; ++k) {
          const S w = spec.edge_weights ? (*spec.edge_weights)[static_cast<std::size_t>(g.in_edge_id[k])] : S(1);
          for (index_t c = 0; c < d; ++c) scatter(k, c, w * gr[c]);
        }
        break;
      }
      case AggKind::mean: {
        const S inv = S(1) / static_cast<S>(deg);
        for (index_t k = begin; k < end; ++k)
          for (index_t c = 0; c < d; ++c) scatter(k, c, inv * gr[c]);
        break;
      }
      case AggKind::max: {
        expect(cache != nullptr && !cache->argmax.empty(), "aggregate_vjp: max requires forward cache");
        const std::uint16_t* arg = cache->argmax.row(u);
        for (index_t c = 0; c < d; ++c) scatter(begin + arg[c], c, gr[c]);
        break;
      }
      case AggKind::softmax: {
        // d(out)/d(m_k) = alpha_k * (1 + beta * (m_k - out))
        std::vector<S> mx(static_cast<std::size_t>(d), std::numeric_limits<S>::lowest());
        std::vector<S> den(static_cast<std::size_t>(d), S(0));
        std::vector<S> num(static_cast<std::size_t>(d), S(0));
        for (index_t k = begin; k < end; ++k) {
          const S* xr = x.row(g.in_src[k]);
          const S* er = has_msg ? edge_msg.row(g.in_edge_id[k]) : nullptr;
          for (index_t c = 0; c < d; ++c) {
            const S bm = spec.beta * (er ? xr[c] + er[c] : xr[c]);
            if (bm > mx[static_cast<std::size_t>(c)]) mx[static_cast<std::size_t>(c)] = bm;
          }
        }
        for (index_t k = begin; k < end; ++k) {
          const S* xr = x.row(g.in_src[k]);
          const S* er = has_msg ? edge_msg.row(g.in_edge_id[k]) : nullptr;
          for (index_t c = 0; c < d; ++c) {
            const S m = er ? xr[c] + er[c] : xr[c];
            const S w = std::exp(spec.beta * m - mx[static_cast<std::size_t>(c)]);
            den[static_cast<std::size_t>(c)] += w;
            num[static_cast<std::size_t>(c)] += w * m;
          }
        }
        for (index_t k = begin; k < end; ++k) {
          const S* xr = x.row(g.in_src[k]);
          const S* er = has_msg ? edge_msg.row(g.in_edge_id[k]) : nullptr;
          for (index_t c = 0; c < d; ++c) {
            const S m = er ? xr[c] + er[c] : xr[c];
            const S s = num[static_cast<std::size_t>(c)] / den[static_cast<std::size_t>(c)];
            const S alpha = std::exp(spec.beta * m - mx[static_cast<std::size_t>(c)]) / den[static_cast<std::size_t>(c)];
            scatter(k, c, alpha * (S(1) + spec.beta * (m - s)) * gr[c]);
          }
        }
        break;
      }
    }
  }
  return gx;
}

// ---------------------------------------------------------------------------
// graph convolution: linear(aggregate(...)). SAGE mode concatenates the root
// node's own features in front of the aggregated neighborhood before the
// linear map, so the weight is (2*d) x d_out.

template <class S>
struct GraphConvTape {
  Mat<S> edge_msg;   // projected edge features (empty when none)
  Mat<S> conv_in;    // input of the linear map (post-aggregation / concat)
  AggCache agg_cache;
};

template <class S>
Mat<S> concat_cols(const Mat<S>& a, const Mat<S>& b) {
  require(a.rows() == b.rows(), "concat_cols: row mismatch");
  Mat<S> out(a.rows(), a.cols() + b.cols());
  for (index_t n = 0; n < a.rows(); ++n) {
    S* r = out.row(n);
    const S* ar = a.row(n);
    const S* br = b.row(n);
    for (index_t c = 0; c < a.cols(); ++c) r[c] = ar[c];
    for (index_t c = 0; c < b.cols(); ++c) r[a.cols() + c] = br[c];
  }
  return out;
}

template <class S>
Mat<S> graph_conv(const CsrGraph& g, const Mat<S>& x, const LinearParams<S>* edge_proj,
                  const LinearParams<S>& p, const AggSpec<S>& spec, bool concat_root = false,
                  GraphConvTape<S>* tape = nullptr) {
  GraphConvTape<S> local;
  GraphConvTape<S>& t = tape ? *tape : local;
  if (edge_proj != nullptr && g.has_edge_feat()) {
    Mat<S> u = cast_mat<S>(g.edge_feat);
    t.edge_msg = linear(u, *edge_proj);
  }
  Mat<S> agg = aggregate(g, x, t.edge_msg, spec, &t.agg_cache);
  t.conv_in = concat_root ? concat_cols(x, agg) : std::move(agg);
  return linear(t.conv_in, p);
}

template <class S>
struct GraphConvGrads {
  LinearParams<S>* edge_proj = nullptr;
  LinearParams<S>* conv = nullptr;
};

template <class S>
Mat<S> graph_conv_vjp(const CsrGraph& g, const Mat<S>& x, const LinearParams<S>* edge_proj,
                      const LinearParams<S>& p, const AggSpec<S>& spec, bool concat_root,
                      const GraphConvTape<S>& tape, const Mat<S>& gy, GraphConvGrads<S> acc) {
  Mat<S> g_conv_in = linear_vjp(tape.conv_in, p, gy, *acc.conv);
  Mat<S> g_agg;
  Mat<S> g_root;
  if (concat_root) {
    const index_t dx = tape.conv_in.cols() / 2;
    g_root = Mat<S>(g_conv_in.rows(), dx);
    g_agg = Mat<S>(g_conv_in.rows(), dx);
    for (index_t n = 0; n < g_conv_in.rows(); ++n)
      for (index_t c = 0; c < dx; ++c) {
        g_root(n, c) = g_conv_in(n, c);
        g_agg(n, c) = g_conv_in(n, dx + c);
      }
  } else {
    g_agg = std::move(g_conv_in);
  }
  const bool wants_edge_grad = edge_proj != nullptr && acc.edge_proj != nullptr && g.has_edge_feat();
  Mat<S> g_edge_msg;
  Mat<S> gx = aggregate_vjp(g, x, tape.edge_msg, spec, g_agg, &tape.agg_cache,
                            wants_edge_grad ? &g_edge_msg : nullptr);
  if (!g_edge_msg.empty()) {
    Mat<S> u = cast_mat<S>(g.edge_feat);
    (void)linear_vjp(u, *edge_proj, g_edge_msg, *acc.edge_proj);
  }
  if (concat_root)
    for (index_t i = 0; i < gx.size(); ++i) gx.data()[i] += g_root.data()[i];
  return gx;
}

// ---------------------------------------------------------------------------
// finite-difference oracle (double precision, central differences)

inline std::vector<double> finite_diff_grad(const std::function<double(const std::vector<double>&)>& f,
                                            std::vector<double> theta, double h) {
  std::vector<double> grad(theta.size());
  for (std::size_t k = 0; k < theta.size(); ++k) {
    const double saved = theta[k];
    theta[k] = saved + h;
    const double fp = f(theta);
    theta[k] = saved - h;
    const double fm = f(theta);
    theta[k] = saved;
    if (!std::isfinite(fp) || !std::isfinite(fm)) throw numeric_error("finite_diff_grad: non-finite objective");
    grad[k] = (fp - fm) / (2.0 * h);
  }
  return grad;
}

}  // namespace revgnn
