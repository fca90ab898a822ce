#include "revgnn/run.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>

#include "json.hpp"
#include "revgnn/checkpoint.hpp"
#include "revgnn/config_io.hpp"

namespace revgnn {

namespace {

using ordered_json = nlohmann::ordered_json;

std::unique_ptr<std::ofstream> open_or_null(const std::string& path) {
  if (path.empty()) return nullptr;
  auto out = std::make_unique<std::ofstream>(path, std::ios::trunc);
  require(out->good(), "cannot write " + path);
  return out;
}

void emit_line(std::ostream* file, const std::string& line) {
  if (file)
    (*file) << line << "\n";
  else
    std::cout << line << "\n";
}

// cross-entropy / binary cross-entropy evaluated on averaged probabilities
double loss_from_probs(const Mat<double>& probs, const LabelSet& labels,
                       const std::vector<std::uint8_t>& mask, bool multilabel) {
  double loss = 0.0;
  index_t active = 0;
  const double floor_p = 1e-12;
  for (index_t n = 0; n < probs.rows(); ++n) {
    if (!mask[static_cast<std::size_t>(n)]) continue;
    ++active;
    if (multilabel) {
      for (index_t c = 0; c < probs.cols(); ++c) {
        const double p = std::min(1.0 - floor_p, std::max(floor_p, probs(n, c)));
        const double y = labels.binary(n, c);
        loss += -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
      }
    } else {
      const double p = std::max(floor_p, probs(n, labels.class_ids[static_cast<std::size_t>(n)]));
      loss += -std::log(p);
    }
  }
  if (active == 0) return 0.0;
  return loss / static_cast<double>(multilabel ? active * probs.cols() : active);
}

template <class S>
EpochLog eval_log(const ModelParams<S>& params, const Dataset& data, const RunConfig& cfg,
                  index_t epoch, const std::string& split) {
  auto result = evaluate_multiview(params, data, cfg.views, cfg.parts_eval,
                                   hash_combine(cfg.seed, 0x6576616cull));
  const auto& mask = split == "valid" ? data.labels.valid_mask : data.labels.test_mask;
  EpochLog log;
  log.epoch = epoch;
  log.split = split;
  log.metric = split == "valid" ? result.valid_metric : result.test_metric;
  log.loss = loss_from_probs(result.probabilities, data.labels, mask, data.multilabel);
  log.has_deq = params.cfg.arch == Arch::deq;
  return log;
}

bool has_any(const std::vector<std::uint8_t>& mask) {
  for (auto m : mask)
    if (m) return true;
  return false;
}

template <class S>
int run_train_impl(const RunConfig& cfg) {
  Dataset data = prepare_dataset(cfg);
  const index_t outputs = data.multilabel ? data.labels.binary.cols() : data.num_classes;
  ModelParams<S> params = build_model<S>(cfg.model, data.features.cols(),
                                         data.graph.edge_feat_dim(), outputs, cfg.seed);
  AdamState<S> adam = AdamState<S>::init(params, cfg.lr);

  TrainSettings settings;
  settings.parts_train = cfg.parts_train;
  settings.parts_eval = cfg.parts_eval;
  settings.views = cfg.views;
  settings.epochs = cfg.epochs;
  settings.lr = cfg.lr;
  settings.checkpoint_every = cfg.grad_checkpoint_every;
  settings.repartition_each_epoch = cfg.repartition_each_epoch;
  settings.seed = cfg.seed;

  auto log_file = open_or_null(cfg.log_file);
  MemoryMeter meter;
  std::int64_t peak_bytes = 0;

  for (index_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    EpochLog log = train_epoch(params, adam, data, settings, epoch, meter);
    peak_bytes = std::max(peak_bytes, log.peak_bytes);
    emit_line(log_file.get(), epoch_log_to_json(log));
    if (cfg.eval_every > 0 && (epoch + 1) % cfg.eval_every == 0 && has_any(data.labels.valid_mask))
      emit_line(log_file.get(), epoch_log_to_json(eval_log(params, data, cfg, epoch, "valid")));
    if (cfg.ckpt_every > 0 && !cfg.ckpt_path.empty() && (epoch + 1) % cfg.ckpt_every == 0)
      save_checkpoint(cfg.ckpt_path + ".epoch" + std::to_string(epoch), params);
  }

  if (!cfg.ckpt_path.empty()) save_checkpoint(cfg.ckpt_path, params);

  ordered_json summary;
  for (const auto& [k, v] : model_config_to_kv(cfg.model, data.features.cols(),
                                               data.graph.edge_feat_dim(), outputs))
    summary["config"][k] = v;
  summary["config"]["parts_train"] = cfg.parts_train;
  summary["config"]["parts_eval"] = cfg.parts_eval;
  summary["config"]["views"] = cfg.views;
  summary["config"]["epochs"] = cfg.epochs;
  summary["config"]["lr"] = cfg.lr;
  summary["config"]["seed"] = cfg.seed;
  summary["config"]["precision"] = cfg.precision;
  summary["param_count"] =
      param_count(cfg.model, data.features.cols(), data.graph.edge_feat_dim(), outputs);
  summary["peak_bytes"] = peak_bytes;

  if (has_any(data.labels.valid_mask)) {
    EpochLog v = eval_log(params, data, cfg, cfg.epochs - 1, "valid");
    emit_line(log_file.get(), epoch_log_to_json(v));
    summary["valid_metric"] = v.metric;
  }
  if (has_any(data.labels.test_mask)) {
    EpochLog t = eval_log(params, data, cfg, cfg.epochs - 1, "test");
    emit_line(log_file.get(), epoch_log_to_json(t));
    summary["test_metric"] = t.metric;
  }
  if (!cfg.summary_file.empty()) {
    std::ofstream out(cfg.summary_file, std::ios::trunc);
    require(out.good(), "cannot write " + cfg.summary_file);
    out << summary.dump(2) << "\n";
  } else {
    std::cout << summary.dump(2) << "\n";
  }
  return 0;
}

template <class S>
int run_eval_impl(const RunConfig& cfg) {
  require(!cfg.ckpt_path.empty(), "eval: --ckpt is required");
  ModelParams<S> params = load_checkpoint<S>(cfg.ckpt_path);
  Dataset data = prepare_dataset(cfg);
  auto result = evaluate_multiview(params, data, cfg.views, cfg.parts_eval,
                                   hash_combine(cfg.seed, 0x6576616cull));
  ordered_json out;
  out["views"] = cfg.views;
  out["parts_eval"] = cfg.parts_eval;
  if (result.valid_available) out["valid_metric"] = result.valid_metric;
  if (result.test_available) out["test_metric"] = result.test_metric;
  const std::string text = out.dump(2);
  if (!cfg.summary_file.empty()) {
    std::ofstream file(cfg.summary_file, std::ios::trunc);
    require(file.good(), "cannot write " + cfg.summary_file);
    file << text << "\n";
  }
  std::cout << text << "\n";
  return 0;
}

template <class S>
std::int64_t bench_cell_peak(const Dataset& data, const ModelConfig& mc, index_t grad_ckpt_every) {
  ModelParams<S> params =
      build_model<S>(mc, data.features.cols(), data.graph.edge_feat_dim(),
                     data.multilabel ? data.labels.binary.cols() : data.num_classes, 1234);
  MemoryMeter meter;
  {
    MeterScope scope(meter);
    Mat<S> x;
    {
      TagScope tag(MemTag::input);
      x = cast_mat<S>(data.features);
    }
    (void)model_backward(params, data.graph, x, data.labels,
                         data.multilabel ? LossKind::bce_logits : LossKind::softmax_ce, 77,
                         grad_ckpt_every);
  }
  expect(meter.balanced(), "bench_memory: unbalanced meter after step");
  return meter.peak_activation_bytes();
}

}  // namespace

Dataset prepare_dataset(const RunConfig& cfg) {
  require(cfg.synthetic || !cfg.data_dir.empty(), "no data source: pass --data or --synthetic");
  Dataset data = cfg.synthetic ? gen_sbm(cfg.sbm) : load_dataset(cfg.data_dir);
  if (cfg.edge_sum_features) data.features = features_from_edge_sums(data.graph);
  if (cfg.self_loops) data.graph = add_self_loops(data.graph);
  return data;
}

std::string epoch_log_to_json(const EpochLog& log) {
  ordered_json j;
  j["epoch"] = log.epoch;
  j["split"] = log.split;
  j["loss"] = log.loss;
  j["metric"] = log.metric;
  j["peak_bytes"] = log.peak_bytes;
  j["wall_seconds"] = log.wall_seconds;
  j["deq_iters"] = log.deq_iters;
  j["deq_residual"] = log.deq_residual;
  return j.dump();
}

int run_train(const RunConfig& cfg) {
  cfg.model.validate();
  require(cfg.precision == "single" || cfg.precision == "double",
          "precision must be single or double");
  return cfg.precision == "double" ? run_train_impl<double>(cfg) : run_train_impl<float>(cfg);
}

int run_eval(const RunConfig& cfg) {
  require(cfg.precision == "single" || cfg.precision == "double",
          "precision must be single or double");
  return cfg.precision == "double" ? run_eval_impl<double>(cfg) : run_eval_impl<float>(cfg);
}

int run_gen_sbm(const SbmSpec& spec, const std::string& out_dir) {
  require(!out_dir.empty(), "gen-sbm: --out is required");
  Dataset data = gen_sbm(spec);
  save_dataset(out_dir, data);
  std::cout << "wrote " << out_dir << " (nodes " << data.graph.num_nodes << ", directed edge slots "
            << data.graph.num_edges() << ")\n";
  return 0;
}

std::vector<BenchCell> bench_memory(const BenchSpec& spec) {
  SbmSpec sbm;
  sbm.num_nodes = spec.nodes;
  sbm.num_classes = 4;
  sbm.p_in = 8.0 / static_cast<double>(spec.nodes);
  sbm.p_out = 2.0 / static_cast<double>(spec.nodes);
  sbm.feature_dim = 8;
  sbm.feature_noise = 0.5;
  sbm.seed = spec.seed;
  Dataset data = gen_sbm(sbm);
  data.graph = add_self_loops(data.graph);

  std::vector<BenchCell> cells;
  for (const std::string& arch : spec.archs) {
    for (index_t depth : spec.depths) {
      BenchCell cell;
      cell.arch = arch;
      cell.depth = depth;
      try {
        ModelConfig mc;
        mc.op = Operator::gen;
        mc.agg = AggKind::max;
        mc.channels = spec.channels;
        mc.groups = spec.groups;
        mc.dropout = 0.1;
        index_t grad_ckpt = 0;
        if (arch == "res_ckpt") {
          mc.arch = Arch::res;
          mc.layers = depth;
          grad_ckpt = static_cast<index_t>(std::ceil(std::sqrt(static_cast<double>(depth))));
        } else {
          mc.arch = arch_from_string(arch);
          if (mc.arch == Arch::deq) {
            mc.layers = 1;
            mc.deq_max_iter = depth;
          } else {
            mc.layers = depth;
          }
        }
        cell.peak_bytes = spec.precision == "double"
                              ? bench_cell_peak<double>(data, mc, grad_ckpt)
                              : bench_cell_peak<float>(data, mc, grad_ckpt);
      } catch (const std::exception& e) {
        cell.error = e.what();
      }
      cells.push_back(std::move(cell));
    }
  }
  return cells;
}

int run_bench_memory(const BenchSpec& spec) {
  std::vector<BenchCell> cells = bench_memory(spec);

  std::string table;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-10s %8s %16s  %s\n", "arch", "depth", "peak_bytes", "note");
  table += buf;
  for (const auto& c : cells) {
    std::snprintf(buf, sizeof buf, "%-10s %8lld %16lld  %s\n", c.arch.c_str(),
                  static_cast<long long>(c.depth), static_cast<long long>(c.peak_bytes),
                  c.error.empty() ? "" : c.error.c_str());
    table += buf;
  }
  if (spec.table_file.empty()) {
    std::cout << table;
  } else {
    std::ofstream out(spec.table_file, std::ios::trunc);
    require(out.good(), "cannot write " + spec.table_file);
    out << table;
  }
  if (!spec.jsonl_file.empty()) {
    std::ofstream out(spec.jsonl_file, std::ios::trunc);
    require(out.good(), "cannot write " + spec.jsonl_file);
    for (const auto& c : cells) {
      ordered_json j;
      j["arch"] = c.arch;
      j["depth"] = c.depth;
      j["peak_bytes"] = c.peak_bytes;
      if (!c.error.empty()) j["error"] = c.error;
      out << j.dump() << "\n";
    }
  }
  for (const auto& c : cells)
    if (!c.error.empty()) return 1;
  return 0;
}

std::vector<BenchCell> parse_bench_jsonl(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), "cannot open " + path);
  std::vector<BenchCell> cells;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto j = ordered_json::parse(line);
    BenchCell c;
    c.arch = j.at("arch").get<std::string>();
    c.depth = j.at("depth").get<index_t>();
    c.peak_bytes = j.at("peak_bytes").get<std::int64_t>();
    if (j.contains("error")) c.error = j.at("error").get<std::string>();
    cells.push_back(std::move(c));
  }
  return cells;
}

namespace {

double vjp_check_worst(const std::function<double(const std::vector<double>&)>& objective,
                       const std::vector<double>& theta, const std::vector<double>& analytic) {
  std::vector<double> fd = finite_diff_grad(objective, theta, 1e-5);
  double scale = 1e-12, worst = 0.0;
  for (double w : fd) scale = std::max(scale, std::abs(w));
  for (std::size_t i = 0; i < fd.size(); ++i) worst = std::max(worst, std::abs(analytic[i] - fd[i]));
  return worst / scale;
}

void fill_random(Mat<double>& m, Rng& rng, double s = 1.0) {
  for (index_t i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-s, s);
}

}  // namespace

int run_grad_check(std::uint64_t seed) {
  Rng rng(seed);
  bool ok = true;
  auto report = [&](const std::string& name, double err) {
    const bool pass = err < 1e-6;
    ok = ok && pass;
    std::printf("%-28s max_rel_err %.3e  %s\n", name.c_str(), err, pass ? "ok" : "FAIL");
  };

  // dense kernels under <g, K(theta)> objectives
  {
    Mat<double> x(6, 4), up(6, 3);
    fill_random(x, rng);
    fill_random(up, rng);
    LinearParams<double> p;
    p.weight = Mat<double>(4, 3);
    p.bias = Mat<double>(1, 3);
    fill_random(p.weight, rng);
    fill_random(p.bias, rng);
    auto dot = [](const Mat<double>& a, const Mat<double>& b) {
      double acc = 0;
      for (index_t i = 0; i < a.size(); ++i) acc += a.data()[i] * b.data()[i];
      return acc;
    };
    std::vector<double> theta(x.data(), x.data() + x.size());
    theta.insert(theta.end(), p.weight.data(), p.weight.data() + p.weight.size());
    theta.insert(theta.end(), p.bias.data(), p.bias.data() + p.bias.size());
    auto objective = [&](const std::vector<double>& t) {
      Mat<double> xx = x;
      LinearParams<double> pp = p;
      std::size_t pos = 0;
      for (index_t i = 0; i < xx.size(); ++i) xx.data()[i] = t[pos++];
      for (index_t i = 0; i < pp.weight.size(); ++i) pp.weight.data()[i] = t[pos++];
      for (index_t i = 0; i < pp.bias.size(); ++i) pp.bias.data()[i] = t[pos++];
      return dot(up, linear(xx, pp));
    };
    LinearParams<double> acc;
    acc.weight = Mat<double>(4, 3);
    acc.bias = Mat<double>(1, 3);
    Mat<double> gx = linear_vjp(x, p, up, acc);
    std::vector<double> analytic(gx.data(), gx.data() + gx.size());
    analytic.insert(analytic.end(), acc.weight.data(), acc.weight.data() + acc.weight.size());
    analytic.insert(analytic.end(), acc.bias.data(), acc.bias.data() + acc.bias.size());
    report("linear", vjp_check_worst(objective, theta, analytic));
  }
  {
    Mat<double> x(5, 5), up(5, 5);
    fill_random(x, rng);
    fill_random(up, rng);
    auto objective = [&](const std::vector<double>& t) {
      Mat<double> xx = x;
      for (index_t i = 0; i < xx.size(); ++i) xx.data()[i] = t[static_cast<std::size_t>(i)];
      Mat<double> y = relu(xx);
      double acc = 0;
      for (index_t i = 0; i < y.size(); ++i) acc += up.data()[i] * y.data()[i];
      return acc;
    };
    Mat<double> gx = relu_vjp(x, up);
    report("relu", vjp_check_worst(objective, std::vector<double>(x.data(), x.data() + x.size()),
                                   std::vector<double>(gx.data(), gx.data() + gx.size())));
  }
  for (bool batch : {false, true}) {
    Mat<double> x(6, 5), up(6, 5);
    fill_random(x, rng, 2.0);
    fill_random(up, rng);
    NormParams<double> p;
    p.scale = Mat<double>(1, 5);
    p.shift = Mat<double>(1, 5);
    fill_random(p.scale, rng, 0.3);
    for (index_t i = 0; i < 5; ++i) p.scale.data()[i] += 1.2;
    fill_random(p.shift, rng, 0.3);
    p.epsilon = 1e-6;
    auto objective = [&](const std::vector<double>& t) {
      Mat<double> xx = x;
      for (index_t i = 0; i < xx.size(); ++i) xx.data()[i] = t[static_cast<std::size_t>(i)];
      Mat<double> y = batch ? batch_norm(xx, p) : layer_norm(xx, p);
      double acc = 0;
      for (index_t i = 0; i < y.size(); ++i) acc += up.data()[i] * y.data()[i];
      return acc;
    };
    NormParams<double> accp;
    accp.scale = Mat<double>(1, 5);
    accp.shift = Mat<double>(1, 5);
    Mat<double> gx = batch ? batch_norm_vjp(x, p, up, accp) : layer_norm_vjp(x, p, up, accp);
    report(batch ? "batch_norm" : "layer_norm",
           vjp_check_worst(objective, std::vector<double>(x.data(), x.data() + x.size()),
                           std::vector<double>(gx.data(), gx.data() + gx.size())));
  }
  {
    // aggregation kinds on a random self-looped graph
    EdgeList edges;
    const index_t n = 9;
    for (index_t u = 0; u < n; ++u) {
      edges.emplace_back(u, u);
      for (index_t v = 0; v < n; ++v)
        if (u != v && rng.uniform() < 0.3) edges.emplace_back(u, v);
    }
    CsrGraph g = build_csr(edges, n);
    for (AggKind kind : {AggKind::sum, AggKind::mean, AggKind::max, AggKind::softmax}) {
      Mat<double> x(n, 3), up(n, 3), none;
      fill_random(x, rng);
      fill_random(up, rng);
      AggSpec<double> spec;
      spec.kind = kind;
      spec.beta = 0.8;
      auto objective = [&](const std::vector<double>& t) {
        Mat<double> xx = x;
        for (index_t i = 0; i < xx.size(); ++i) xx.data()[i] = t[static_cast<std::size_t>(i)];
        Mat<double> y = aggregate(g, xx, none, spec);
        double acc = 0;
        for (index_t i = 0; i < y.size(); ++i) acc += up.data()[i] * y.data()[i];
        return acc;
      };
      AggCache cache;
      (void)aggregate(g, x, none, spec, &cache);
      Mat<double> gx = aggregate_vjp(g, x, none, spec, up, &cache);
      report("aggregate_" + to_string(kind),
             vjp_check_worst(objective, std::vector<double>(x.data(), x.data() + x.size()),
                             std::vector<double>(gx.data(), gx.data() + gx.size())));
    }

    // one grouped reversible block end to end
    GraphContext<double> ctx;
    ctx.graph = &g;
    RevBlockParams<double> block;
    for (int i = 0; i < 2; ++i) {
      SubBlockParams<double> f;
      f.norm.scale = Mat<double>(1, 4);
      f.norm.shift = Mat<double>(1, 4);
      fill_random(f.norm.scale, rng, 0.3);
      for (index_t k = 0; k < 4; ++k) f.norm.scale.data()[k] += 1.0;
      fill_random(f.norm.shift, rng, 0.3);
      f.norm.epsilon = 1e-6;
      f.conv.weight = Mat<double>(4, 4);
      f.conv.bias = Mat<double>(1, 4);
      fill_random(f.conv.weight, rng, 0.4);
      fill_random(f.conv.bias, rng, 0.1);
      f.agg.kind = AggKind::max;
      block.sub_blocks.push_back(std::move(f));
    }
    SharedDropoutState drop = make_shared_mask(n, 4, 0.2, seed);
    GroupedFeatures<double> xs, up2;
    for (int i = 0; i < 2; ++i) {
      Mat<double> m(n, 4), u(n, 4);
      fill_random(m, rng);
      fill_random(u, rng);
      xs.push_back(std::move(m));
      up2.push_back(std::move(u));
    }
    auto objective = [&](const std::vector<double>& t) {
      GroupedFeatures<double> xx = xs;
      std::size_t pos = 0;
      for (auto& m : xx)
        for (index_t i = 0; i < m.size(); ++i) m.data()[i] = t[pos++];
      GroupedFeatures<double> yy = rev_forward(block, xx, ctx, &drop);
      double acc = 0;
      for (std::size_t i = 0; i < yy.size(); ++i)
        for (index_t k = 0; k < yy[i].size(); ++k) acc += up2[i].data()[k] * yy[i].data()[k];
      return acc;
    };
    std::vector<double> theta;
    for (const auto& m : xs) theta.insert(theta.end(), m.data(), m.data() + m.size());
    RevBlockParams<double> acc_block;
    for (const auto& f : block.sub_blocks) {
      SubBlockParams<double> z;
      z.norm.scale = Mat<double>(1, 4);
      z.norm.shift = Mat<double>(1, 4);
      z.conv.weight = Mat<double>(4, 4);
      z.conv.bias = Mat<double>(1, 4);
      z.agg = f.agg;
      acc_block.sub_blocks.push_back(std::move(z));
    }
    GroupedFeatures<double> ys = rev_forward(block, xs, ctx, &drop);
    auto [gin, xrec] = rev_backward(block, ys, up2, ctx, &drop, acc_block);
    std::vector<double> analytic;
    for (const auto& m : gin) analytic.insert(analytic.end(), m.data(), m.data() + m.size());
    report("rev_block_inputs", vjp_check_worst(objective, theta, analytic));
  }

  std::printf("%s\n", ok ? "all gradient checks passed" : "gradient checks FAILED");
  return ok ? 0 : 1;
}

}  // namespace revgnn
