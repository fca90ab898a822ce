#pragma once

#include <chrono>
#include <cstdio>
#include <string>
#include <vector>

#include "revgnn/dataset.hpp"
#include "revgnn/metrics.hpp"
#include "revgnn/model.hpp"

namespace revgnn {

template <class S>
struct AdamState {
  std::vector<Mat<S>> first_moment;   // aligned with for_each_param order
  std::vector<Mat<S>> second_moment;
  index_t step = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps_adam = 1e-8;

  static AdamState init(const ModelParams<S>& params, double lr) {
    MeterPause pause;
    AdamState st;
    st.lr = lr;
    for_each_param(params, [&](const Mat<S>& m, const std::string&) {
      st.first_moment.emplace_back(m.rows(), m.cols());
      st.second_moment.emplace_back(m.rows(), m.cols());
    });
    return st;
  }
};

// Bias-corrected Adam. Aborts with a diagnostic on non-finite gradients.
template <class S>
void adam_step(ModelParams<S>& params, const ModelParams<S>& grads, AdamState<S>& st) {
  st.step += 1;
  const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
  std::size_t slot = 0;
  std::vector<const Mat<S>*> grad_list;
  for_each_param(grads, [&](const Mat<S>& g, const std::string&) { grad_list.push_back(&g); });
  for_each_param(params, [&](Mat<S>& p, const std::string& name) {
    const Mat<S>& g = *grad_list[slot];
    expect(g.same_shape(p), "adam_step: gradient shape mismatch at " + name);
    Mat<S>& m = st.first_moment[slot];
    Mat<S>& v = st.second_moment[slot];
    for (index_t i = 0; i < p.size(); ++i) {
      const double gi = static_cast<double>(g.data()[i]);
      if (!std::isfinite(gi))
        throw numeric_error("adam_step: non-finite gradient in " + name + " at index " + std::to_string(i));
      const double mi = st.beta1 * static_cast<double>(m.data()[i]) + (1.0 - st.beta1) * gi;
      const double vi = st.beta2 * static_cast<double>(v.data()[i]) + (1.0 - st.beta2) * gi * gi;
      m.data()[i] = static_cast<S>(mi);
      v.data()[i] = static_cast<S>(vi);
      p.data()[i] -= static_cast<S>(st.lr * (mi / bc1) / (std::sqrt(vi / bc2) + st.eps_adam));
    }
    ++slot;
  });
}

struct EpochLog {
  index_t epoch = 0;
  std::string split;
  double loss = 0.0;
  double metric = 0.0;
  std::int64_t peak_bytes = 0;
  double wall_seconds = 0.0;
  index_t deq_iters = 0;
  double deq_residual = 0.0;
  bool has_deq = false;
};

struct TrainSettings {
  index_t parts_train = 10;
  index_t parts_eval = 5;
  index_t views = 1;
  index_t epochs = 200;
  double lr = 1e-3;
  index_t checkpoint_every = 0;  // res baseline: >0 enables sqrt(L)-style checkpointing
  bool repartition_each_epoch = true;
  std::uint64_t seed = 1;
  double drift_warn_threshold = 1e-3;
};

namespace detail {

inline LossKind loss_for(const Dataset& data) {
  return data.multilabel ? LossKind::bce_logits : LossKind::softmax_ce;
}

}  // namespace detail

// One pass over all training parts: re-partitions the graph (seed derived
// from the epoch), runs one optimizer step per part-subgraph with a fresh
// shared dropout mask, and reports the worst per-step activation peak. The
// logged metric is computed on the training rows from the step logits.
template <class S>
EpochLog train_epoch(ModelParams<S>& params, AdamState<S>& adam, const Dataset& data,
                     const TrainSettings& settings, index_t epoch, MemoryMeter& meter) {
  const auto t_start = std::chrono::steady_clock::now();
  const LossKind loss_kind = detail::loss_for(data);
  const std::uint64_t part_seed =
      hash_combine(settings.seed, settings.repartition_each_epoch ? static_cast<std::uint64_t>(epoch) : 0ull);
  Partition part = random_partition(data.graph, settings.parts_train, part_seed);

  EpochLog log;
  log.epoch = epoch;
  log.split = "train";
  log.has_deq = params.cfg.arch == Arch::deq;

  double loss_sum = 0.0;
  index_t steps = 0;
  std::int64_t peak = 0;
  index_t deq_iter_sum = 0;
  double deq_residual_worst = 0.0;

  // training-metric accumulators (harness state, not activations)
  Mat<double> metric_scores;
  Mat<double> metric_labels;
  std::vector<index_t> metric_classes;
  std::vector<std::uint8_t> metric_mask;
  {
    MeterPause pause;
    const index_t t = data.multilabel ? data.labels.binary.cols() : data.num_classes;
    metric_scores = Mat<double>(data.graph.num_nodes, t);
    if (data.multilabel) metric_labels = Mat<double>(data.graph.num_nodes, t);
    metric_mask.assign(static_cast<std::size_t>(data.graph.num_nodes), 0);
  }

  for (index_t part_id = 0; part_id < settings.parts_train; ++part_id) {
    Subgraph sub = induced_subgraph(data.graph, data.features, data.labels, part, part_id);
    index_t active = 0;
    for (auto m : sub.labels.train_mask) active += m != 0;
    if (active == 0) continue;  // nothing to fit in this part

    meter.reset_peaks();
    const std::uint64_t step_seed = hash_combine(part_seed, 0x73746570ull + static_cast<std::uint64_t>(part_id));
    BackwardResult<S> result;
    {
      MeterScope scope(meter);
      Mat<S> x;
      {
        TagScope tag(MemTag::input);
        x = cast_mat<S>(sub.features);
      }
      const bool monitor = params.cfg.reversible() && part_id == 0;
      result = model_backward(params, sub.graph, x, sub.labels, loss_kind, step_seed,
                              settings.checkpoint_every, monitor);
    }
    peak = std::max(peak, meter.peak_activation_bytes());
    if (!std::isfinite(static_cast<double>(result.loss)))
      throw numeric_error("train_epoch: non-finite loss at epoch " + std::to_string(epoch) +
                          ", part " + std::to_string(part_id));
    if (result.reconstruction_error > settings.drift_warn_threshold)
      std::fprintf(stderr, "warning: epoch %lld reconstruction drift %.3e above %.1e\n",
                   static_cast<long long>(epoch), result.reconstruction_error,
                   settings.drift_warn_threshold);

    loss_sum += static_cast<double>(result.loss);
    ++steps;
    if (log.has_deq) {
      deq_iter_sum += result.deq.forward_iters;
      deq_residual_worst = std::max(deq_residual_worst, result.deq.forward_residual);
    }

    {
      MeterPause pause;
      for (index_t local = 0; local < sub.graph.num_nodes; ++local) {
        if (!sub.labels.train_mask[static_cast<std::size_t>(local)]) continue;
        const index_t global = sub.local_to_global[static_cast<std::size_t>(local)];
        metric_mask[static_cast<std::size_t>(global)] = 1;
        for (index_t c = 0; c < result.logits.cols(); ++c)
          metric_scores(global, c) = static_cast<double>(result.logits(local, c));
        if (data.multilabel)
          for (index_t c = 0; c < sub.labels.binary.cols(); ++c)
            metric_labels(global, c) = sub.labels.binary(local, c);
      }
    }

    adam_step(params, result.grads, adam);
  }
  require(steps > 0, "train_epoch: no part contained training rows");

  log.loss = loss_sum / static_cast<double>(steps);
  log.peak_bytes = peak;
  if (data.multilabel)
    log.metric = roc_auc(metric_scores, metric_labels, metric_mask);
  else
    log.metric = accuracy(metric_scores, data.labels.class_ids, metric_mask);
  if (log.has_deq) {
    log.deq_iters = steps > 0 ? deq_iter_sum / steps : 0;
    log.deq_residual = deq_residual_worst;
  }
  log.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return log;
}

template <class S>
struct EvalResult {
  Mat<double> probabilities;  // N x T, mean over views
  double valid_metric = 0.0;
  double test_metric = 0.0;
  bool valid_available = false;
  bool test_available = false;
};

// Multi-view inference with explicit per-view partition seeds: each view
// partitions the graph afresh, runs per-part forward passes, reassembles
// logits in global order and converts them to probabilities; the final
// prediction is the arithmetic mean of the per-view probabilities.
template <class S>
EvalResult<S> evaluate_multiview_seeds(const ModelParams<S>& params, const Dataset& data,
                                       const std::vector<std::uint64_t>& view_seeds,
                                       index_t parts_eval) {
  require(!view_seeds.empty(), "evaluate_multiview: need at least one view");
  const index_t n = data.graph.num_nodes;
  const index_t t = params.num_outputs;
  EvalResult<S> out;
  out.probabilities = Mat<double>(n, t);

  for (std::uint64_t vs : view_seeds) {
    Partition part = random_partition(data.graph, parts_eval, vs);
    for (index_t part_id = 0; part_id < parts_eval; ++part_id) {
      Subgraph sub = induced_subgraph(data.graph, data.features, data.labels, part, part_id);
      Mat<S> x = cast_mat<S>(sub.features);
      Mat<S> logits = model_forward(params, sub.graph, x, false, 0);
      Mat<S> probs = data.multilabel ? sigmoid_all(logits) : softmax_rows(logits);
      for (index_t local = 0; local < sub.graph.num_nodes; ++local) {
        const index_t global = sub.local_to_global[static_cast<std::size_t>(local)];
        for (index_t c = 0; c < t; ++c)
          out.probabilities(global, c) += static_cast<double>(probs(local, c));
      }
    }
  }
  const double inv = 1.0 / static_cast<double>(view_seeds.size());
  for (index_t i = 0; i < out.probabilities.size(); ++i) out.probabilities.data()[i] *= inv;

  auto metric_on = [&](const std::vector<std::uint8_t>& mask) {
    if (data.multilabel) return roc_auc(out.probabilities, data.labels.binary, mask);
    return accuracy(out.probabilities, data.labels.class_ids, mask);
  };
  auto any = [](const std::vector<std::uint8_t>& mask) {
    for (auto m : mask)
      if (m) return true;
    return false;
  };
  if (any(data.labels.valid_mask)) {
    out.valid_metric = metric_on(data.labels.valid_mask);
    out.valid_available = true;
  }
  if (any(data.labels.test_mask)) {
    out.test_metric = metric_on(data.labels.test_mask);
    out.test_available = true;
  }
  return out;
}

template <class S>
EvalResult<S> evaluate_multiview(const ModelParams<S>& params, const Dataset& data, index_t views,
                                 index_t parts_eval, std::uint64_t seed) {
  require(views >= 1, "evaluate_multiview: views must be >= 1");
  std::vector<std::uint64_t> seeds;
  for (index_t v = 0; v < views; ++v) seeds.push_back(hash_combine(seed, 0x76696577ull + static_cast<std::uint64_t>(v)));
  return evaluate_multiview_seeds(params, data, seeds, parts_eval);
}

}  // namespace revgnn
