#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "revgnn/dataset.hpp"
#include "revgnn/train.hpp"
#include "test_util.hpp"

using namespace revgnn;
using namespace testutil;

namespace {

Dataset toy_sbm(index_t n = 60, std::uint64_t seed = 5) {
  SbmSpec spec;
  spec.num_nodes = n;
  spec.num_classes = 3;
  spec.p_in = 0.25;
  spec.p_out = 0.02;
  spec.feature_dim = 6;
  spec.feature_noise = 0.6;
  spec.seed = seed;
  Dataset data = gen_sbm(spec);
  data.graph = add_self_loops(data.graph);
  return data;
}

ModelConfig toy_cfg(Arch arch, index_t layers = 2, index_t channels = 8) {
  ModelConfig cfg;
  cfg.arch = arch;
  cfg.op = Operator::gen;
  cfg.agg = AggKind::max;
  cfg.layers = layers;
  cfg.channels = channels;
  cfg.groups = 2;
  cfg.dropout = 0.1;
  return cfg;
}

// exhaustive pairwise AUC with half-credit for ties
double pairwise_auc(const Mat<double>& scores, const Mat<double>& labels,
                    const std::vector<std::uint8_t>& mask) {
  double total = 0;
  index_t cols = 0;
  for (index_t c = 0; c < scores.cols(); ++c) {
    double wins = 0;
    index_t pairs = 0;
    bool has_pos = false, has_neg = false;
    for (index_t i = 0; i < scores.rows(); ++i) {
      if (!mask[static_cast<std::size_t>(i)]) continue;
      if (labels(i, c) > 0.5)
        has_pos = true;
      else
        has_neg = true;
    }
    if (!has_pos || !has_neg) continue;
    for (index_t i = 0; i < scores.rows(); ++i) {
      if (!mask[static_cast<std::size_t>(i)] || labels(i, c) <= 0.5) continue;
      for (index_t j = 0; j < scores.rows(); ++j) {
        if (!mask[static_cast<std::size_t>(j)] || labels(j, c) > 0.5) continue;
        ++pairs;
        if (scores(i, c) > scores(j, c))
          wins += 1.0;
        else if (scores(i, c) == scores(j, c))
          wins += 0.5;
      }
    }
    total += wins / static_cast<double>(pairs);
    ++cols;
  }
  return total / static_cast<double>(cols);
}

}  // namespace

TEST_CASE("adam examples") {
  // scalar first step: theta = 0, g = 1, lr = 0.1 -> delta ~ -0.1
  ModelConfig cfg = toy_cfg(Arch::res, 0, 4);
  ModelParams<double> p = build_model<double>(cfg, 1, 0, 1, 1);
  for_each_param(p, [](Mat<double>& m, const std::string&) { m.zero(); });
  ModelParams<double> g = zero_grads_of(p);
  AdamState<double> st = AdamState<double>::init(p, 0.1);

  // zero grads leave parameters unchanged but advance the step counter
  adam_step(p, g, st);
  CHECK(st.step == 1);
  for_each_param(p, [](Mat<double>& m, const std::string&) {
    for (index_t i = 0; i < m.size(); ++i) CHECK(m.data()[i] == 0.0);
  });

  for_each_param(g, [](Mat<double>& m, const std::string&) { m.fill(1.0); });
  ModelParams<double> p2 = build_model<double>(cfg, 1, 0, 1, 1);
  for_each_param(p2, [](Mat<double>& m, const std::string&) { m.zero(); });
  AdamState<double> st2 = AdamState<double>::init(p2, 0.1);
  adam_step(p2, g, st2);
  for_each_param(p2, [](Mat<double>& m, const std::string&) {
    for (index_t i = 0; i < m.size(); ++i) CHECK(std::abs(m.data()[i] + 0.1) < 1e-6);
  });
}

TEST_CASE("adam matches a scalar reference over 100 steps") {
  ModelConfig cfg = toy_cfg(Arch::res, 0, 1);
  // one-feature one-output linear model gives two scalar parameter tensors
  ModelParams<double> p = build_model<double>(cfg, 1, 0, 1, 3);
  std::vector<double> reference;
  for_each_param(p, [&](Mat<double>& m, const std::string&) {
    for (index_t i = 0; i < m.size(); ++i) reference.push_back(m.data()[i]);
  });

  AdamState<double> st = AdamState<double>::init(p, 0.01);
  std::vector<double> ref_m(reference.size(), 0.0), ref_v(reference.size(), 0.0);
  Rng rng(9);
  ModelParams<double> g = zero_grads_of(p);
  for (int step = 1; step <= 100; ++step) {
    std::vector<double> gs;
    for_each_param(g, [&](Mat<double>& m, const std::string&) {
      for (index_t i = 0; i < m.size(); ++i) {
        m.data()[i] = rng.uniform(-1, 1);
        gs.push_back(m.data()[i]);
      }
    });
    adam_step(p, g, st);
    // reference update
    const double bc1 = 1.0 - std::pow(0.9, step);
    const double bc2 = 1.0 - std::pow(0.999, step);
    for (std::size_t i = 0; i < reference.size(); ++i) {
      ref_m[i] = 0.9 * ref_m[i] + 0.1 * gs[i];
      ref_v[i] = 0.999 * ref_v[i] + 0.001 * gs[i] * gs[i];
      reference[i] -= 0.01 * (ref_m[i] / bc1) / (std::sqrt(ref_v[i] / bc2) + 1e-8);
    }
    std::size_t k = 0;
    for_each_param(p, [&](Mat<double>& m, const std::string&) {
      for (index_t i = 0; i < m.size(); ++i) CHECK(std::abs(m.data()[i] - reference[k++]) < 1e-12);
    });
  }
}

TEST_CASE("loss examples") {
  LabelSet one;
  one.binary = Mat<double>(1, 1, {1.0});
  std::vector<std::uint8_t> mask{1};
  Mat<double> zero_logit(1, 1, {0.0});
  auto bce = loss_and_grad(zero_logit, one, mask, LossKind::bce_logits);
  CHECK(static_cast<double>(bce.value) == doctest::Approx(std::log(2.0)));

  LabelSet cls;
  cls.class_ids = {1};
  Mat<double> huge(1, 3, {0.0, 50.0, 0.0});
  auto ce = loss_and_grad(huge, cls, mask, LossKind::softmax_ce);
  CHECK(static_cast<double>(ce.value) < 1e-12);

  CHECK_THROWS_AS(loss_and_grad(zero_logit, one, std::vector<std::uint8_t>{0}, LossKind::bce_logits),
                  input_error);
}

TEST_CASE("loss gradients match finite differences") {
  Rng rng(91);
  for (LossKind kind : {LossKind::softmax_ce, LossKind::bce_logits}) {
    const index_t n = 7, t = 4;
    Mat<double> logits = random_mat(rng, n, t, 2.0);
    LabelSet labels;
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(n));
    for (index_t i = 0; i < n; ++i) mask[static_cast<std::size_t>(i)] = rng.uniform() < 0.7 ? 1 : 0;
    mask[0] = 1;
    if (kind == LossKind::softmax_ce) {
      for (index_t i = 0; i < n; ++i)
        labels.class_ids.push_back(static_cast<index_t>(rng.uniform_int(t)));
    } else {
      labels.binary = Mat<double>(n, t);
      for (index_t i = 0; i < labels.binary.size(); ++i)
        labels.binary.data()[i] = rng.uniform() < 0.5 ? 1.0 : 0.0;
    }
    auto res = loss_and_grad(logits, labels, mask, kind);
    auto objective = [&](const std::vector<double>& theta) {
      Mat<double> z = logits;
      std::size_t pos = 0;
      unflatten(theta, pos, z);
      return static_cast<double>(loss_and_grad(z, labels, mask, kind).value);
    };
    std::vector<double> fd = finite_diff_grad(objective, flatten(logits), 1e-6);
    CHECK(rel_err_vec(flatten(res.grad), fd) < 1e-6);
  }
}

TEST_CASE("roc_auc examples") {
  std::vector<std::uint8_t> mask{1, 1, 1, 1};
  Mat<double> labels(4, 1, {0, 0, 1, 1});

  Mat<double> perfect(4, 1, {0.1, 0.2, 0.8, 0.9});
  CHECK(roc_auc(perfect, labels, mask) == doctest::Approx(1.0));

  Mat<double> flat(4, 1, {0.5, 0.5, 0.5, 0.5});
  CHECK(roc_auc(flat, labels, mask) == doctest::Approx(0.5));

  Mat<double> worked(4, 1, {0.1, 0.4, 0.35, 0.8});
  CHECK(roc_auc(worked, labels, mask) == doctest::Approx(0.75));

  Mat<double> single(4, 1, {0.1, 0.4, 0.35, 0.8});
  Mat<double> all_pos(4, 1, {1, 1, 1, 1});
  CHECK_THROWS_AS(roc_auc(single, all_pos, mask), numeric_error);
}

TEST_CASE("roc_auc equals the exhaustive pairwise oracle") {
  Rng rng(92);
  for (int trial = 0; trial < 10; ++trial) {
    const index_t n = 5 + static_cast<index_t>(rng.uniform_int(195));
    const index_t t = 1 + static_cast<index_t>(rng.uniform_int(4));
    Mat<double> scores(n, t);
    Mat<double> labels(n, t);
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(n));
    for (index_t i = 0; i < scores.size(); ++i) {
      // coarse quantization forces plenty of ties
      scores.data()[i] = std::floor(rng.uniform(0, 8)) / 8.0;
      labels.data()[i] = rng.uniform() < 0.4 ? 1.0 : 0.0;
    }
    bool any = false;
    for (index_t i = 0; i < n; ++i) {
      mask[static_cast<std::size_t>(i)] = rng.uniform() < 0.8 ? 1 : 0;
      any |= mask[static_cast<std::size_t>(i)] != 0;
    }
    if (!any) mask[0] = 1;
    // ensure at least one valid column
    labels(0, 0) = 1.0;
    labels(1, 0) = 0.0;
    mask[0] = mask[1] = 1;
    CHECK(roc_auc(scores, labels, mask) == doctest::Approx(pairwise_auc(scores, labels, mask)).epsilon(1e-12));
  }
}

TEST_CASE("accuracy counts masked argmax hits") {
  Mat<double> scores(3, 2, {0.9, 0.1, 0.2, 0.8, 0.6, 0.4});
  std::vector<index_t> cls{0, 1, 1};
  CHECK(accuracy(scores, cls, {1, 1, 1}) == doctest::Approx(2.0 / 3.0));
  CHECK(accuracy(scores, cls, {1, 1, 0}) == doctest::Approx(1.0));
}

TEST_CASE("train_epoch with one part is full-batch training") {
  Dataset data = toy_sbm();
  ModelConfig cfg = toy_cfg(Arch::rev);
  ModelParams<float> params = build_model<float>(cfg, data.features.cols(), 0, data.num_classes, 7);
  AdamState<float> adam = AdamState<float>::init(params, 1e-3);
  TrainSettings settings;
  settings.parts_train = 1;
  settings.seed = 3;
  MemoryMeter meter;
  EpochLog log = train_epoch(params, adam, data, settings, 0, meter);
  CHECK(log.split == "train");
  CHECK(std::isfinite(log.loss));
  CHECK(log.metric >= 0.0);
  CHECK(log.metric <= 1.0);
  CHECK(adam.step == 1);  // exactly one optimizer step
  CHECK(meter.balanced());
}

TEST_CASE("train_epoch is bit-reproducible for fixed seeds") {
  Dataset data = toy_sbm();
  TrainSettings settings;
  settings.parts_train = 4;
  settings.seed = 17;

  auto run_two_epochs = [&]() {
    ModelConfig cfg = toy_cfg(Arch::rev);
    ModelParams<float> params = build_model<float>(cfg, data.features.cols(), 0, data.num_classes, 99);
    AdamState<float> adam = AdamState<float>::init(params, 1e-3);
    MemoryMeter meter;
    std::vector<EpochLog> logs;
    for (index_t e = 0; e < 2; ++e) logs.push_back(train_epoch(params, adam, data, settings, e, meter));
    return logs;
  };
  auto a = run_two_epochs();
  auto b = run_two_epochs();
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(std::memcmp(&a[i].loss, &b[i].loss, sizeof(double)) == 0);
    CHECK(std::memcmp(&a[i].metric, &b[i].metric, sizeof(double)) == 0);
    CHECK(a[i].peak_bytes == b[i].peak_bytes);
  }
}

TEST_CASE("loss trends down on the SBM toy") {
  Dataset data = toy_sbm(80, 11);
  ModelConfig cfg = toy_cfg(Arch::rev, 3, 8);
  ModelParams<float> params = build_model<float>(cfg, data.features.cols(), 0, data.num_classes, 1);
  AdamState<float> adam = AdamState<float>::init(params, 5e-3);
  TrainSettings settings;
  settings.parts_train = 2;
  settings.seed = 5;
  MemoryMeter meter;
  double first = 0, last = 0;
  for (index_t e = 0; e < 30; ++e) {
    EpochLog log = train_epoch(params, adam, data, settings, e, meter);
    if (e == 0) first = log.loss;
    last = log.loss;
  }
  CHECK(last < 0.6 * first);
}

TEST_CASE("multi-view evaluation: V=1, P=1 equals plain full-batch evaluation") {
  Dataset data = toy_sbm();
  ModelConfig cfg = toy_cfg(Arch::rev);
  ModelParams<float> params = build_model<float>(cfg, data.features.cols(), 0, data.num_classes, 7);

  auto mv = evaluate_multiview(params, data, 1, 1, 42);

  Mat<float> x = cast_mat<float>(data.features);
  Mat<float> logits = model_forward(params, data.graph, x, false, 0);
  Mat<float> probs = softmax_rows(logits);
  for (index_t i = 0; i < probs.size(); ++i)
    CHECK(mv.probabilities.data()[i] == doctest::Approx(static_cast<double>(probs.data()[i])).epsilon(1e-12));
  CHECK(mv.test_metric == doctest::Approx(accuracy(mv.probabilities, data.labels.class_ids, data.labels.test_mask)));
}

TEST_CASE("multi-view evaluation: identical view seeds degenerate to one view") {
  Dataset data = toy_sbm();
  ModelConfig cfg = toy_cfg(Arch::rev);
  ModelParams<float> params = build_model<float>(cfg, data.features.cols(), 0, data.num_classes, 7);
  auto one = evaluate_multiview_seeds(params, data, {123ull}, 3);
  auto two = evaluate_multiview_seeds(params, data, {123ull, 123ull}, 3);
  CHECK(max_abs_diff(one.probabilities, two.probabilities) < 1e-15);
}

TEST_CASE("multi-view probabilities are the arithmetic mean of per-view probabilities") {
  Dataset data = toy_sbm();
  ModelConfig cfg = toy_cfg(Arch::rev);
  ModelParams<float> params = build_model<float>(cfg, data.features.cols(), 0, data.num_classes, 7);
  std::vector<std::uint64_t> seeds{11ull, 22ull, 33ull};
  auto mv = evaluate_multiview_seeds(params, data, seeds, 2);
  Mat<double> mean(mv.probabilities.rows(), mv.probabilities.cols());
  for (std::uint64_t s : seeds) {
    auto single = evaluate_multiview_seeds(params, data, {s}, 2);
    for (index_t i = 0; i < mean.size(); ++i) mean.data()[i] += single.probabilities.data()[i];
  }
  for (index_t i = 0; i < mean.size(); ++i) mean.data()[i] /= 3.0;
  CHECK(max_abs_diff(mv.probabilities, mean) < 1e-12);
}

TEST_CASE("sbm generator basics") {
  SbmSpec spec;
  spec.num_nodes = 300;
  spec.num_classes = 3;
  spec.p_in = 0.1;
  spec.p_out = 0.0;
  spec.feature_dim = 5;
  spec.feature_noise = 0.0;
  spec.seed = 2;
  Dataset data = gen_sbm(spec);

  // p_out = 0: no inter-class edges
  for (auto [u, v] : edge_list(data.graph))
    CHECK(data.labels.class_ids[static_cast<std::size_t>(u)] == data.labels.class_ids[static_cast<std::size_t>(v)]);

  // noise 0: features are exact one-hot centroids
  for (index_t i = 0; i < data.graph.num_nodes; ++i)
    for (index_t c = 0; c < 5; ++c)
      CHECK(data.features(i, c) == (c == data.labels.class_ids[static_cast<std::size_t>(i)] ? 1.0 : 0.0));

  // split sizes: 60/20/20
  auto count = [](const std::vector<std::uint8_t>& m) {
    index_t k = 0;
    for (auto b : m) k += b != 0;
    return k;
  };
  CHECK(count(data.labels.train_mask) == 180);
  CHECK(count(data.labels.valid_mask) == 60);
  CHECK(count(data.labels.test_mask) == 60);
}

TEST_CASE("sbm edge count is near its expectation") {
  SbmSpec spec;
  spec.num_nodes = 2000;
  spec.num_classes = 4;
  spec.p_in = 0.02;
  spec.p_out = 0.002;
  spec.feature_dim = 8;
  spec.seed = 7;
  Dataset data = gen_sbm(spec);
  // expected undirected edges: within-class pairs * p_in + cross pairs * p_out
  const double n = 2000;
  const double within = n * n / 2.0 / 4.0;  // ~N^2/(2*classes)
  const double cross = n * n / 2.0 - within;
  const double expected = within * spec.p_in + cross * spec.p_out;
  const double got = static_cast<double>(data.graph.num_edges()) / 2.0;  // directed slots / 2
  CHECK(std::abs(got - expected) / expected < 0.10);
}

TEST_CASE("datasets round-trip through the tsv format losslessly") {
  namespace fs = std::filesystem;
  SbmSpec spec;
  spec.num_nodes = 50;
  spec.num_classes = 3;
  spec.p_in = 0.2;
  spec.p_out = 0.02;
  spec.feature_dim = 4;
  spec.feature_noise = 0.7;
  spec.seed = 9;
  Dataset data = gen_sbm(spec);

  const std::string dir = (fs::temp_directory_path() / "revgnn_roundtrip").string();
  save_dataset(dir, data);
  Dataset back = load_dataset(dir);

  CHECK(back.graph.row_ptr == data.graph.row_ptr);
  CHECK(back.graph.col_idx == data.graph.col_idx);
  CHECK(max_abs_diff(back.features, data.features) == 0.0);
  CHECK(back.labels.class_ids == data.labels.class_ids);
  CHECK(back.labels.train_mask == data.labels.train_mask);
  CHECK(back.labels.valid_mask == data.labels.valid_mask);
  CHECK(back.labels.test_mask == data.labels.test_mask);
  CHECK(back.num_classes == data.num_classes);
  fs::remove_all(dir);
}

TEST_CASE("malformed dataset rows abort with their line number") {
  namespace fs = std::filesystem;
  const std::string dir = (fs::temp_directory_path() / "revgnn_baddata").string();
  fs::create_directories(dir);
  auto write = [&](const std::string& name, const std::string& content) {
    std::ofstream out(dir + "/" + name);
    out << content;
  };
  write("meta.tsv", "num_nodes\t2\nnum_classes\t2\ntask\tmulticlass\ndirected\t0\n");
  write("nodes.tsv", "0\t1.0\n1\tnot_a_number\n");
  write("edges.tsv", "0\t1\n");
  write("labels.tsv", "0\t0\n1\t1\n");
  write("splits.tsv", "0\ttrain\n1\ttest\n");
  try {
    (void)load_dataset(dir);
    CHECK(false);
  } catch (const input_error& e) {
    CHECK(std::string(e.what()).find("nodes.tsv:2") != std::string::npos);
  }

  write("nodes.tsv", "0\t1.0\n1\t2.0\n");
  write("splits.tsv", "0\ttrain\n1\tnowhere\n");
  try {
    (void)load_dataset(dir);
    CHECK(false);
  } catch (const input_error& e) {
    CHECK(std::string(e.what()).find("splits.tsv:2") != std::string::npos);
  }
  fs::remove_all(dir);
}

TEST_CASE("edge-sum feature initialization") {
  Mat<double> feat(2, 2, {1.0, 2.0, 10.0, 20.0});
  CsrGraph g = build_csr({{0, 1}, {1, 0}}, 2, feat);
  Mat<double> x = features_from_edge_sums(g);
  // node 0 receives edge (1,0), node 1 receives edge (0,1)
  CHECK(x(0, 0) == doctest::Approx(10.0));
  CHECK(x(0, 1) == doctest::Approx(20.0));
  CHECK(x(1, 0) == doctest::Approx(1.0));
}
