#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "revgnn/deq.hpp"
#include "revgnn/loss.hpp"
#include "revgnn/res_stack.hpp"
#include "revgnn/rev_block.hpp"

namespace revgnn {

enum class Arch { res, rev, wt_res, wt_rev, deq };
enum class Operator { gcn, sage, gen };

struct ModelConfig {
  Arch arch = Arch::rev;
  Operator op = Operator::gen;
  index_t layers = 2;    // explicit depth L; ignored by deq (layers == 0 is the
                         // degenerate encoder->decoder model for every arch)
  index_t channels = 64; // D
  index_t groups = 2;    // C, reversible archs only
  AggKind agg = AggKind::max;  // gen operator: max or softmax
  double beta = 1.0;           // softmax aggregation temperature
  double dropout = 0.1;
  NormKind norm = NormKind::layer;
  index_t deq_max_iter = 32;
  double deq_tol_forward = 0.0;   // 0 = 1e-6 * sqrt(B*D)
  double deq_tol_backward = 0.0;  // 0 = 2e-10 * sqrt(B*D)

  bool reversible() const { return arch == Arch::rev || arch == Arch::wt_rev; }
  bool weight_tied() const { return arch == Arch::wt_res || arch == Arch::wt_rev; }

  void validate() const {
    require(channels >= 1 && layers >= 0, "ModelConfig: bad size");
    if (reversible()) {
      require(groups >= 2, "ModelConfig: reversible archs need at least 2 groups");
      require(channels % groups == 0, "ModelConfig: channels must divide evenly into groups");
      require(norm == NormKind::layer, "ModelConfig: batch norm is not available in reversible archs");
    }
    if (arch == Arch::deq)
      require(norm == NormKind::layer, "ModelConfig: the equilibrium block uses layer norm");
    if (op == Operator::gen)
      require(agg == AggKind::max || agg == AggKind::softmax,
              "ModelConfig: gen operator aggregates with max or softmax");
    require(dropout >= 0.0 && dropout < 1.0, "ModelConfig: dropout must be in [0,1)");
  }

  AggKind effective_agg() const {
    switch (op) {
      case Operator::gcn: return AggKind::sum;
      case Operator::sage: return AggKind::mean;
      case Operator::gen: return agg;
    }
    return agg;
  }
};

template <class S>
struct ModelParams {
  ModelConfig cfg;
  index_t num_features = 0;
  index_t num_edge_features = 0;  // 0 = dataset has none / operator ignores them
  index_t num_outputs = 0;

  LinearParams<S> encoder;
  std::vector<RevBlockParams<S>> rev_layers;  // rev: L bundles, wt_rev: 1
  std::vector<SubBlockParams<S>> res_layers;  // res: L bundles, wt_res: 1
  std::optional<DeqParams<S>> deq;
  NormParams<S> final_norm;
  LinearParams<S> decoder;
};

// Visits every parameter tensor in its declared (checkpoint) order.
template <class S, class Fn>
void for_each_param(ModelParams<S>& p, Fn&& fn) {
  auto visit_linear = [&](LinearParams<S>& lp, const std::string& name) {
    fn(lp.weight, name + ".weight");
    fn(lp.bias, name + ".bias");
  };
  auto visit_norm = [&](NormParams<S>& np, const std::string& name) {
    fn(np.scale, name + ".scale");
    fn(np.shift, name + ".shift");
  };
  auto visit_sub = [&](SubBlockParams<S>& f, const std::string& name) {
    visit_norm(f.norm, name + ".norm");
    if (f.edge_proj.has_value()) visit_linear(*f.edge_proj, name + ".edge_proj");
    visit_linear(f.conv, name + ".conv");
  };
  visit_linear(p.encoder, "encoder");
  for (std::size_t l = 0; l < p.rev_layers.size(); ++l)
    for (std::size_t i = 0; i < p.rev_layers[l].sub_blocks.size(); ++i)
      visit_sub(p.rev_layers[l].sub_blocks[i],
                "layer" + std::to_string(l) + ".group" + std::to_string(i));
  for (std::size_t l = 0; l < p.res_layers.size(); ++l)
    visit_sub(p.res_layers[l], "layer" + std::to_string(l));
  if (p.deq.has_value()) {
    auto visit_conv = [&](GraphConvParams<S>& cp, const std::string& name) {
      if (cp.edge_proj.has_value()) visit_linear(*cp.edge_proj, name + ".edge_proj");
      visit_linear(cp.conv, name + ".conv");
    };
    visit_conv(p.deq->conv1, "deq.conv1");
    visit_norm(p.deq->norm1, "deq.norm1");
    visit_conv(p.deq->conv2, "deq.conv2");
    visit_norm(p.deq->norm2, "deq.norm2");
  }
  visit_norm(p.final_norm, "final_norm");
  visit_linear(p.decoder, "decoder");
}

template <class S, class Fn>
void for_each_param(const ModelParams<S>& p, Fn&& fn) {
  for_each_param(const_cast<ModelParams<S>&>(p),
                 [&](Mat<S>& m, const std::string& name) { fn(static_cast<const Mat<S>&>(m), name); });
}

// Closed-form parameter count; build_model's literal tally must equal this.
inline index_t param_count(const ModelConfig& cfg, index_t num_features, index_t num_edge_features,
                           index_t num_outputs) {
  cfg.validate();
  const index_t d = cfg.channels;
  const bool edge = cfg.op == Operator::gen && num_edge_features > 0;
  auto sub_params = [&](index_t w) {
    const index_t conv_in = cfg.op == Operator::sage ? 2 * w : w;
    index_t n = 2 * w;            // norm affine
    n += conv_in * w + w;         // conv weight + bias
    if (edge) n += num_edge_features * w + w;
    return n;
  };
  index_t stack = 0;
  switch (cfg.arch) {
    case Arch::res: stack = cfg.layers * sub_params(d); break;
    case Arch::wt_res: stack = cfg.layers > 0 ? sub_params(d) : 0; break;
    case Arch::rev: stack = cfg.layers * cfg.groups * sub_params(d / cfg.groups); break;
    case Arch::wt_rev: stack = cfg.layers > 0 ? cfg.groups * sub_params(d / cfg.groups) : 0; break;
    case Arch::deq: {
      index_t conv = d * d + d + (edge ? num_edge_features * d + d : 0);
      if (cfg.op == Operator::sage) conv += d * d;  // concat doubles the weight's input side
      stack = 2 * conv + 4 * d;                     // two convs, two norm affines
      break;
    }
  }
  return num_features * d + d        // encoder
         + stack
         + 2 * d                     // final norm affine
         + d * num_outputs + num_outputs;  // decoder
}

namespace detail {

template <class S>
void glorot_init(Mat<S>& w, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
  for (index_t i = 0; i < w.size(); ++i) w.data()[i] = static_cast<S>(rng.uniform(-limit, limit));
}

template <class S>
LinearParams<S> build_linear(index_t d_in, index_t d_out, Rng& rng) {
  LinearParams<S> p;
  p.weight = Mat<S>(d_in, d_out);
  glorot_init(p.weight, rng);
  p.bias = Mat<S>(1, d_out);
  return p;
}

template <class S>
NormParams<S> build_norm(index_t d) {
  NormParams<S> p;
  p.scale = Mat<S>(1, d);
  p.scale.fill(S(1));
  p.shift = Mat<S>(1, d);
  p.epsilon = S(1e-5);
  return p;
}

template <class S>
SubBlockParams<S> build_sub_block(const ModelConfig& cfg, index_t w, index_t edge_dim, Rng& rng) {
  SubBlockParams<S> f;
  f.norm = build_norm<S>(w);
  f.norm_kind = cfg.norm;
  f.agg.kind = cfg.effective_agg();
  f.agg.beta = static_cast<S>(cfg.beta);
  f.concat_root = cfg.op == Operator::sage;
  const bool edge = cfg.op == Operator::gen && edge_dim > 0;
  if (edge) f.edge_proj = build_linear<S>(edge_dim, w, rng);
  f.conv = build_linear<S>(f.concat_root ? 2 * w : w, w, rng);
  return f;
}

}  // namespace detail

// Deterministic per seed: Glorot-uniform weights, zero biases, unit norm
// scales, zero shifts. Parameter buffers never count as activations.
template <class S>
ModelParams<S> build_model(const ModelConfig& cfg, index_t num_features, index_t num_edge_features,
                           index_t num_outputs, std::uint64_t seed) {
  cfg.validate();
  MeterPause pause;
  Rng rng(hash_combine(seed, 0x6d6f64656cull));  // "model"
  ModelParams<S> p;
  p.cfg = cfg;
  p.num_features = num_features;
  p.num_edge_features = num_edge_features;
  p.num_outputs = num_outputs;
  const index_t d = cfg.channels;

  p.encoder = detail::build_linear<S>(num_features, d, rng);
  const index_t edge_dim = cfg.op == Operator::gen ? num_edge_features : 0;
  switch (cfg.arch) {
    case Arch::res:
    case Arch::wt_res: {
      const index_t bundles = cfg.weight_tied() ? (cfg.layers > 0 ? 1 : 0) : cfg.layers;
      for (index_t l = 0; l < bundles; ++l)
        p.res_layers.push_back(detail::build_sub_block<S>(cfg, d, edge_dim, rng));
      break;
    }
    case Arch::rev:
    case Arch::wt_rev: {
      const index_t bundles = cfg.weight_tied() ? (cfg.layers > 0 ? 1 : 0) : cfg.layers;
      const index_t w = d / cfg.groups;
      for (index_t l = 0; l < bundles; ++l) {
        RevBlockParams<S> block;
        for (index_t i = 0; i < cfg.groups; ++i)
          block.sub_blocks.push_back(detail::build_sub_block<S>(cfg, w, edge_dim, rng));
        p.rev_layers.push_back(std::move(block));
      }
      break;
    }
    case Arch::deq: {
      DeqParams<S> dp;
      auto build_conv = [&](GraphConvParams<S>& cp) {
        cp.agg.kind = cfg.effective_agg();
        cp.agg.beta = static_cast<S>(cfg.beta);
        cp.concat_root = cfg.op == Operator::sage;
        if (edge_dim > 0) cp.edge_proj = detail::build_linear<S>(edge_dim, d, rng);
        cp.conv = detail::build_linear<S>(cp.concat_root ? 2 * d : d, d, rng);
      };
      build_conv(dp.conv1);
      build_conv(dp.conv2);
      dp.norm1 = detail::build_norm<S>(d);
      dp.norm2 = detail::build_norm<S>(d);
      dp.drop = cfg.dropout;
      p.deq = std::move(dp);
      break;
    }
  }
  p.final_norm = detail::build_norm<S>(d);
  p.decoder = detail::build_linear<S>(d, num_outputs, rng);
  return p;
}

template <class S>
index_t param_tally(const ModelParams<S>& p) {
  index_t n = 0;
  for_each_param(p, [&](const Mat<S>& m, const std::string&) { n += m.size(); });
  return n;
}

template <class S>
ModelParams<S> zero_grads_of(const ModelParams<S>& p) {
  MeterPause pause;
  ModelParams<S> g;
  g.cfg = p.cfg;
  g.num_features = p.num_features;
  g.num_edge_features = p.num_edge_features;
  g.num_outputs = p.num_outputs;
  auto zero_linear = [](const LinearParams<S>& src) {
    LinearParams<S> out;
    out.weight = Mat<S>(src.weight.rows(), src.weight.cols());
    out.bias = Mat<S>(1, src.bias.cols());
    return out;
  };
  auto zero_norm = [](const NormParams<S>& src) {
    NormParams<S> out;
    out.scale = Mat<S>(1, src.scale.cols());
    out.shift = Mat<S>(1, src.shift.cols());
    out.epsilon = src.epsilon;
    return out;
  };
  auto zero_sub = [&](const SubBlockParams<S>& src) {
    SubBlockParams<S> out;
    out.norm = zero_norm(src.norm);
    if (src.edge_proj.has_value()) out.edge_proj = zero_linear(*src.edge_proj);
    out.conv = zero_linear(src.conv);
    out.agg = src.agg;
    out.norm_kind = src.norm_kind;
    out.concat_root = src.concat_root;
    return out;
  };
  g.encoder = zero_linear(p.encoder);
  for (const auto& block : p.rev_layers) {
    RevBlockParams<S> zb;
    for (const auto& f : block.sub_blocks) zb.sub_blocks.push_back(zero_sub(f));
    g.rev_layers.push_back(std::move(zb));
  }
  for (const auto& f : p.res_layers) g.res_layers.push_back(zero_sub(f));
  if (p.deq.has_value()) {
    DeqParams<S> zd;
    auto zero_conv = [&](const GraphConvParams<S>& src) {
      GraphConvParams<S> out;
      if (src.edge_proj.has_value()) out.edge_proj = zero_linear(*src.edge_proj);
      out.conv = zero_linear(src.conv);
      out.agg = src.agg;
      out.concat_root = src.concat_root;
      return out;
    };
    zd.conv1 = zero_conv(p.deq->conv1);
    zd.conv2 = zero_conv(p.deq->conv2);
    zd.norm1 = zero_norm(p.deq->norm1);
    zd.norm2 = zero_norm(p.deq->norm2);
    zd.drop = p.deq->drop;
    g.deq = std::move(zd);
  }
  g.final_norm = zero_norm(p.final_norm);
  g.decoder = zero_linear(p.decoder);
  return g;
}

// ---------------------------------------------------------------------------
// forward / backward

namespace detail {

template <class S>
GraphContext<S> build_context(const ModelConfig& cfg, const CsrGraph& g, index_t edge_dim) {
  GraphContext<S> ctx;
  ctx.graph = &g;
  if (cfg.op == Operator::gcn) {
    auto w = gcn_norm_weights(g);
    ctx.gcn_weights.assign(w.begin(), w.end());
  }
  if (cfg.op == Operator::gen && edge_dim > 0 && g.has_edge_feat()) {
    TagScope tag(MemTag::input);
    ctx.edge_feat = cast_mat<S>(g.edge_feat);
  }
  return ctx;
}

// Streaming head: logits = decoder(ReLU(Norm(x))). The layer-norm variant
// needs only per-row stats; batch norm precomputes column stats. Neither
// retains the normalized tensor.
template <class S>
struct HeadStats {
  Mat<S> stats;  // row stats (layer) or col stats (batch)
};

template <class S>
Mat<S> head_forward(const Mat<S>& x, const NormParams<S>& norm, NormKind kind,
                    const LinearParams<S>& dec, HeadStats<S>* cache = nullptr) {
  Mat<S> stats = kind == NormKind::layer ? row_stats(x, norm.epsilon) : col_stats(x, norm.epsilon);
  const index_t d = x.cols(), t = dec.d_out();
  Mat<S> logits(x.rows(), t);
  std::vector<S> trow(static_cast<std::size_t>(d));
  for (index_t n = 0; n < x.rows(); ++n) {
    const S* xr = x.row(n);
    for (index_t c = 0; c < d; ++c) {
      const S mean = kind == NormKind::layer ? stats(n, 0) : stats(0, c);
      const S rstd = kind == NormKind::layer ? stats(n, 1) : stats(1, c);
      const S v = (xr[c] - mean) * rstd * norm.scale.data()[c] + norm.shift.data()[c];
      trow[static_cast<std::size_t>(c)] = v > S(0) ? v : S(0);
    }
    S* lr = logits.row(n);
    for (index_t o = 0; o < t; ++o) lr[o] = dec.bias.data()[o];
    for (index_t c = 0; c < d; ++c) {
      const S tv = trow[static_cast<std::size_t>(c)];
      if (tv == S(0)) continue;
      const S* wr = dec.weight.row(c);
      for (index_t o = 0; o < t; ++o) lr[o] += tv * wr[o];
    }
  }
  if (cache) cache->stats = std::move(stats);
  return logits;
}

template <class S>
Mat<S> head_backward(const Mat<S>& x, const NormParams<S>& norm, NormKind kind,
                     const LinearParams<S>& dec, const HeadStats<S>& cache, const Mat<S>& glogits,
                     NormParams<S>& norm_acc, LinearParams<S>& dec_acc) {
  const index_t d = x.cols(), t = dec.d_out();
  Mat<S> g_t1(x.rows(), d);  // gradient at the norm output
  std::vector<S> trow(static_cast<std::size_t>(d));
  for (index_t n = 0; n < x.rows(); ++n) {
    const S* xr = x.row(n);
    const S* gr = glogits.row(n);
    S* g1r = g_t1.row(n);
    for (index_t c = 0; c < d; ++c) {
      const S mean = kind == NormKind::layer ? cache.stats(n, 0) : cache.stats(0, c);
      const S rstd = kind == NormKind::layer ? cache.stats(n, 1) : cache.stats(1, c);
      const S v = (xr[c] - mean) * rstd * norm.scale.data()[c] + norm.shift.data()[c];
      trow[static_cast<std::size_t>(c)] = v > S(0) ? v : S(0);
    }
    for (index_t o = 0; o < t; ++o) dec_acc.bias.data()[o] += gr[o];
    for (index_t c = 0; c < d; ++c) {
      const S tv = trow[static_cast<std::size_t>(c)];
      const S* wr = dec.weight.row(c);
      S acc = 0;
      for (index_t o = 0; o < t; ++o) {
        acc += gr[o] * wr[o];
        if (tv != S(0)) dec_acc.weight(c, o) += tv * gr[o];
      }
      g1r[c] = tv > S(0) ? acc : S(0);  // ReLU gate
    }
  }
  // norm backward, overwriting g_t1 in place (per-row for layer norm,
  // per-column for batch norm; the reductions happen before each overwrite)
  if (kind == NormKind::layer) {
    for (index_t n = 0; n < x.rows(); ++n) {
      const S mean = cache.stats(n, 0), rstd = cache.stats(n, 1);
      const S* xr = x.row(n);
      S* g1 = g_t1.row(n);
      S m1 = 0, m2 = 0;
      for (index_t c = 0; c < d; ++c) {
        const S xhat = (xr[c] - mean) * rstd;
        const S gg = g1[c] * norm.scale.data()[c];
        m1 += gg;
        m2 += gg * xhat;
        norm_acc.scale.data()[c] += g1[c] * xhat;
        norm_acc.shift.data()[c] += g1[c];
      }
      m1 /= static_cast<S>(d);
      m2 /= static_cast<S>(d);
      for (index_t c = 0; c < d; ++c) {
        const S xhat = (xr[c] - mean) * rstd;
        const S gg = g1[c] * norm.scale.data()[c];
        g1[c] = rstd * (gg - m1 - xhat * m2);
      }
    }
  } else {
    const index_t rows = x.rows();
    for (index_t c = 0; c < d; ++c) {
      const S mean = cache.stats(0, c), rstd = cache.stats(1, c);
      S m1 = 0, m2 = 0;
      for (index_t n = 0; n < rows; ++n) {
        const S xhat = (x(n, c) - mean) * rstd;
        const S gg = g_t1(n, c) * norm.scale.data()[c];
        m1 += gg;
        m2 += gg * xhat;
        norm_acc.scale.data()[c] += g_t1(n, c) * xhat;
        norm_acc.shift.data()[c] += g_t1(n, c);
      }
      m1 /= static_cast<S>(rows);
      m2 /= static_cast<S>(rows);
      for (index_t n = 0; n < rows; ++n) {
        const S xhat = (x(n, c) - mean) * rstd;
        const S gg = g_t1(n, c) * norm.scale.data()[c];
        g_t1(n, c) = rstd * (gg - m1 - xhat * m2);
      }
    }
  }
  return g_t1;
}

// parameter-only linear backward (gx not needed at the model input)
template <class S>
void linear_param_grads(const Mat<S>& x, const Mat<S>& gy, LinearParams<S>& acc) {
  for (index_t n = 0; n < x.rows(); ++n) {
    const S* xr = x.row(n);
    const S* gr = gy.row(n);
    for (index_t i = 0; i < x.cols(); ++i) {
      const S xi = xr[i];
      S* wr = acc.weight.row(i);
      for (index_t o = 0; o < gy.cols(); ++o) wr[o] += xi * gr[o];
    }
    for (index_t o = 0; o < gy.cols(); ++o) acc.bias.data()[o] += gr[o];
  }
}

template <class S>
std::optional<SharedDropoutState> make_step_mask(const ModelConfig& cfg, index_t n, bool training,
                                                 std::uint64_t drop_seed) {
  if (!training || cfg.dropout <= 0.0 || cfg.layers == 0) return std::nullopt;
  const index_t width = cfg.reversible() ? cfg.channels / cfg.groups : cfg.channels;
  return make_shared_mask(n, width, cfg.dropout, drop_seed);
}

}  // namespace detail

template <class S>
Mat<S> model_forward(const ModelParams<S>& params, const CsrGraph& g, const Mat<S>& x_raw,
                     bool training, std::uint64_t drop_seed, DeqDiagnostics* deq_diag = nullptr) {
  const ModelConfig& cfg = params.cfg;
  require(x_raw.cols() == params.num_features, "model_forward: feature width mismatch");
  require(x_raw.rows() == g.num_nodes, "model_forward: feature row count mismatch");
  GraphContext<S> ctx = detail::build_context<S>(cfg, g, params.num_edge_features);
  auto drop = detail::make_step_mask<S>(cfg, g.num_nodes, training, drop_seed);
  const SharedDropoutState* drop_ptr = drop.has_value() ? &*drop : nullptr;

  Mat<S> x = linear(x_raw, params.encoder);
  // layers == 0 is the degenerate encoder->decoder model for every arch
  // (deq otherwise ignores the layer count)
  if (cfg.layers == 0) return linear(x, params.decoder);

  switch (cfg.arch) {
    case Arch::res:
    case Arch::wt_res: {
      std::vector<const SubBlockParams<S>*> layers(static_cast<std::size_t>(cfg.layers),
                                                   &params.res_layers[0]);
      if (!cfg.weight_tied())
        for (index_t l = 0; l < cfg.layers; ++l) layers[static_cast<std::size_t>(l)] = &params.res_layers[static_cast<std::size_t>(l)];
      x = res_stack_forward(layers, std::move(x), ctx, drop_ptr);
      break;
    }
    case Arch::rev:
    case Arch::wt_rev: {
      GroupedFeatures<S> ys = group_split(x, cfg.groups);
      x.release();
      for (index_t l = 0; l < cfg.layers; ++l) {
        const RevBlockParams<S>& block =
            cfg.weight_tied() ? params.rev_layers[0] : params.rev_layers[static_cast<std::size_t>(l)];
        ys = rev_forward(block, ys, ctx, drop_ptr);
      }
      x = group_concat(ys);
      break;
    }
    case Arch::deq: {
      auto cfg_s = SolverConfig<S>::with_defaults(cfg.deq_max_iter, g.num_nodes, cfg.channels);
      if (cfg.deq_tol_forward > 0) cfg_s.tol_forward = static_cast<S>(cfg.deq_tol_forward);
      if (cfg.deq_tol_backward > 0) cfg_s.tol_backward = static_cast<S>(cfg.deq_tol_backward);
      Mat<S> z = deq_forward(x, ctx, *params.deq, drop_ptr, cfg_s, deq_diag);
      x = std::move(z);
      break;
    }
  }
  return detail::head_forward(x, params.final_norm, cfg.norm, params.decoder);
}

template <class S>
struct BackwardResult {
  S loss = 0;
  Mat<S> logits;  // per-step predictions, kept for training metrics
  ModelParams<S> grads;
  DeqDiagnostics deq;
  double reconstruction_error = -1.0;  // rev drift sample; -1 when not measured
};

// Full training-step backward (forward, loss, gradients) with the
// architecture-appropriate memory regime. checkpoint_every > 0 selects
// sqrt(L)-style checkpointing for the res baseline.
template <class S>
BackwardResult<S> model_backward(const ModelParams<S>& params, const CsrGraph& g,
                                 const Mat<S>& x_raw, const LabelSet& labels, LossKind loss_kind,
                                 std::uint64_t drop_seed, index_t checkpoint_every = 0,
                                 bool monitor_reconstruction = false) {
  const ModelConfig& cfg = params.cfg;
  require(x_raw.cols() == params.num_features, "model_backward: feature width mismatch");
  GraphContext<S> ctx = detail::build_context<S>(cfg, g, params.num_edge_features);
  auto drop = detail::make_step_mask<S>(cfg, g.num_nodes, true, drop_seed);
  const SharedDropoutState* drop_ptr = drop.has_value() ? &*drop : nullptr;

  BackwardResult<S> out;
  out.grads = zero_grads_of(params);

  Mat<S> x0 = linear(x_raw, params.encoder);

  if (cfg.layers == 0) {
    Mat<S> logits = linear(x0, params.decoder);
    LossResult<S> lr = loss_and_grad(logits, labels, labels.train_mask, loss_kind);
    out.loss = lr.value;
    out.logits = std::move(logits);
    Mat<S> g_x0 = linear_vjp(x0, params.decoder, lr.grad, out.grads.decoder);
    lr.grad.release();
    x0.release();
    detail::linear_param_grads(x_raw, g_x0, out.grads.encoder);
    return out;
  }

  switch (cfg.arch) {
    case Arch::res:
    case Arch::wt_res: {
      std::vector<const SubBlockParams<S>*> layers(static_cast<std::size_t>(cfg.layers),
                                                   &params.res_layers[0]);
      std::vector<SubBlockParams<S>*> accs(static_cast<std::size_t>(cfg.layers),
                                           &out.grads.res_layers[0]);
      if (!cfg.weight_tied()) {
        for (index_t l = 0; l < cfg.layers; ++l) {
          layers[static_cast<std::size_t>(l)] = &params.res_layers[static_cast<std::size_t>(l)];
          accs[static_cast<std::size_t>(l)] = &out.grads.res_layers[static_cast<std::size_t>(l)];
        }
      }
      Mat<S> g_x0;
      if (checkpoint_every > 0) {
        // forward to the head without cache, then checkpointed stack backward
        Mat<S> x_in = x0;
        Mat<S> x_top = res_stack_forward(layers, std::move(x_in), ctx, drop_ptr);
        detail::HeadStats<S> head;
        Mat<S> logits = detail::head_forward(x_top, params.final_norm, cfg.norm, params.decoder, &head);
        LossResult<S> lr = loss_and_grad(logits, labels, labels.train_mask, loss_kind);
        out.loss = lr.value;
        out.logits = std::move(logits);
        Mat<S> g_top = detail::head_backward(x_top, params.final_norm, cfg.norm, params.decoder, head,
                                             lr.grad, out.grads.final_norm, out.grads.decoder);
        lr.grad.release();
        x_top.release();
        g_x0 = res_stack_checkpointed_backward(layers, x0, std::move(g_top), ctx, drop_ptr, accs,
                                               checkpoint_every);
      } else {
        ResStackTape<S> tape;
        Mat<S> x_in = x0;
        Mat<S> x_top = res_stack_forward(layers, std::move(x_in), ctx, drop_ptr, &tape);
        detail::HeadStats<S> head;
        Mat<S> logits = detail::head_forward(x_top, params.final_norm, cfg.norm, params.decoder, &head);
        LossResult<S> lr = loss_and_grad(logits, labels, labels.train_mask, loss_kind);
        out.loss = lr.value;
        out.logits = std::move(logits);
        Mat<S> g_top = detail::head_backward(x_top, params.final_norm, cfg.norm, params.decoder, head,
                                             lr.grad, out.grads.final_norm, out.grads.decoder);
        lr.grad.release();
        x_top.release();
        g_x0 = res_stack_backward(layers, tape, std::move(g_top), ctx, drop_ptr, accs);
      }
      x0.release();
      detail::linear_param_grads(x_raw, g_x0, out.grads.encoder);
      break;
    }
    case Arch::rev:
    case Arch::wt_rev: {
      std::vector<const RevBlockParams<S>*> blocks(static_cast<std::size_t>(cfg.layers),
                                                   &params.rev_layers[0]);
      std::vector<RevBlockParams<S>*> accs(static_cast<std::size_t>(cfg.layers),
                                           &out.grads.rev_layers[0]);
      if (!cfg.weight_tied()) {
        for (index_t l = 0; l < cfg.layers; ++l) {
          blocks[static_cast<std::size_t>(l)] = &params.rev_layers[static_cast<std::size_t>(l)];
          accs[static_cast<std::size_t>(l)] = &out.grads.rev_layers[static_cast<std::size_t>(l)];
        }
      }
      GroupedFeatures<S> input_copy;
      if (monitor_reconstruction) {
        MeterPause pause;  // diagnostic copy must not distort the byte ledger
        input_copy = group_split(x0, cfg.groups);
      }
      GroupedFeatures<S> ys = group_split(x0, cfg.groups);
      x0.release();
      for (index_t l = 0; l < cfg.layers; ++l) ys = rev_forward(*blocks[static_cast<std::size_t>(l)], ys, ctx, drop_ptr);

      Mat<S> x_top = group_concat(ys);
      for (auto& m : ys) m.release();
      detail::HeadStats<S> head;
      Mat<S> logits = detail::head_forward(x_top, params.final_norm, cfg.norm, params.decoder, &head);
      LossResult<S> lr = loss_and_grad(logits, labels, labels.train_mask, loss_kind);
      out.loss = lr.value;
      out.logits = std::move(logits);
      Mat<S> g_top = detail::head_backward(x_top, params.final_norm, cfg.norm, params.decoder, head,
                                           lr.grad, out.grads.final_norm, out.grads.decoder);
      lr.grad.release();
      head.stats.release();

      GroupedFeatures<S> ys_final = group_split(x_top, cfg.groups);
      x_top.release();
      GroupedFeatures<S> g_groups = group_split(g_top, cfg.groups);
      g_top.release();
      auto result = stack_backward(blocks, std::move(ys_final), std::move(g_groups), ctx, drop_ptr, accs);

      if (monitor_reconstruction) {
        double worst = 0;
        for (std::size_t i = 0; i < input_copy.size(); ++i)
          worst = std::max(worst, static_cast<double>(max_abs_diff(result.reconstructed_input[i], input_copy[i])));
        out.reconstruction_error = worst;
      }
      Mat<S> g_x0 = group_concat(result.grad_input);
      for (auto& m : result.grad_input) m.release();
      for (auto& m : result.reconstructed_input) m.release();
      detail::linear_param_grads(x_raw, g_x0, out.grads.encoder);
      break;
    }
    case Arch::deq: {
      auto cfg_s = SolverConfig<S>::with_defaults(cfg.deq_max_iter, g.num_nodes, cfg.channels);
      if (cfg.deq_tol_forward > 0) cfg_s.tol_forward = static_cast<S>(cfg.deq_tol_forward);
      if (cfg.deq_tol_backward > 0) cfg_s.tol_backward = static_cast<S>(cfg.deq_tol_backward);
      Mat<S> z_star = deq_forward(x0, ctx, *params.deq, drop_ptr, cfg_s, &out.deq);

      detail::HeadStats<S> head;
      Mat<S> logits = detail::head_forward(z_star, params.final_norm, cfg.norm, params.decoder, &head);
      LossResult<S> lr = loss_and_grad(logits, labels, labels.train_mask, loss_kind);
      out.loss = lr.value;
      out.logits = std::move(logits);
      Mat<S> g_z = detail::head_backward(z_star, params.final_norm, cfg.norm, params.decoder, head,
                                         lr.grad, out.grads.final_norm, out.grads.decoder);
      lr.grad.release();
      head.stats.release();

      Mat<S> g_x0(x0.rows(), x0.cols());
      DeqGrads<S> acc;
      DeqParams<S>& gd = *out.grads.deq;
      acc.c1.conv = &gd.conv1.conv;
      acc.c1.edge_proj = gd.conv1.edge_proj.has_value() ? &*gd.conv1.edge_proj : nullptr;
      acc.c2.conv = &gd.conv2.conv;
      acc.c2.edge_proj = gd.conv2.edge_proj.has_value() ? &*gd.conv2.edge_proj : nullptr;
      acc.norm1 = &gd.norm1;
      acc.norm2 = &gd.norm2;
      acc.gx = &g_x0;
      (void)deq_backward(z_star, x0, ctx, *params.deq, drop_ptr, g_z, cfg_s, acc, &out.deq);
      g_z.release();
      z_star.release();
      x0.release();
      detail::linear_param_grads(x_raw, g_x0, out.grads.encoder);
      break;
    }
  }
  return out;
}

}  // namespace revgnn
