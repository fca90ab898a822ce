#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "revgnn/checkpoint.hpp"
#include "revgnn/cli.hpp"
#include "test_util.hpp"

using namespace revgnn;
using namespace testutil;

namespace {

CliAction parse(std::vector<std::string> args) {
  std::vector<const char*> argv;
  argv.push_back("revgnn");
  for (const auto& a : args) argv.push_back(a.c_str());
  return parse_cli(static_cast<int>(argv.size()), argv.data());
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("the reference training protocol is expressible purely via CLI flags") {
  CliAction a = parse({"train", "--synthetic", "--arch", "rev", "--layers", "32", "--channels", "64",
                       "--groups", "2", "--parts-train", "10", "--parts-eval", "5", "--agg", "max",
                       "--lr", "0.001"});
  REQUIRE(!a.should_exit);
  CHECK(a.kind == CliAction::Kind::train);
  CHECK(a.config.model.arch == Arch::rev);
  CHECK(a.config.model.layers == 32);
  CHECK(a.config.model.channels == 64);
  CHECK(a.config.model.groups == 2);
  CHECK(a.config.model.agg == AggKind::max);
  CHECK(a.config.parts_train == 10);
  CHECK(a.config.parts_eval == 5);
  CHECK(a.config.lr == 0.001);
}

TEST_CASE("deq dispatch and negated flags") {
  CliAction a = parse({"train", "--synthetic", "--arch", "deq", "--deq-max-iter", "32",
                       "--no-self-loops", "--fixed-partition"});
  REQUIRE(!a.should_exit);
  CHECK(a.config.model.arch == Arch::deq);
  CHECK(a.config.model.deq_max_iter == 32);
  CHECK(a.config.self_loops == false);
  CHECK(a.config.repartition_each_epoch == false);
}

TEST_CASE("unknown flags abort with a usage error") {
  CliAction a = parse({"train", "--synthetic", "--definitely-not-a-flag", "3"});
  CHECK(a.should_exit);
  CHECK(a.exit_code != 0);

  CliAction b = parse({"not-a-subcommand"});
  CHECK(b.should_exit);
  CHECK(b.exit_code != 0);
}

TEST_CASE("config file values load and command line wins") {
  namespace fs = std::filesystem;
  const std::string path = (fs::temp_directory_path() / "revgnn_cli.cfg").string();
  {
    std::ofstream out(path);
    out << "train.channels=48\ntrain.layers=12\n";
  }
  CliAction a = parse({"--config", path, "train", "--synthetic", "--layers", "7"});
  REQUIRE(!a.should_exit);
  CHECK(a.config.model.channels == 48);  // from file
  CHECK(a.config.model.layers == 7);     // command line beats the file

  // unknown config keys abort
  {
    std::ofstream out(path);
    out << "train.not_a_real_key=1\n";
  }
  CliAction b = parse({"--config", path, "train", "--synthetic"});
  CHECK(b.should_exit);
  CHECK(b.exit_code != 0);
  fs::remove(path);
}

TEST_CASE("checkpoints round-trip bitwise and reject corruption") {
  namespace fs = std::filesystem;
  ModelConfig cfg;
  cfg.arch = Arch::rev;
  cfg.op = Operator::gen;
  cfg.layers = 3;
  cfg.channels = 8;
  cfg.groups = 2;
  ModelParams<float> params = build_model<float>(cfg, 5, 2, 4, 77);
  // make values non-trivial
  Rng rng(5);
  for_each_param(params, [&](Mat<float>& m, const std::string&) {
    for (index_t i = 0; i < m.size(); ++i) m.data()[i] += static_cast<float>(rng.uniform(-1, 1));
  });

  const std::string path = (fs::temp_directory_path() / "revgnn_test.ckpt").string();
  save_checkpoint(path, params);
  ModelParams<float> back = load_checkpoint<float>(path);
  CHECK(back.cfg.arch == cfg.arch);
  CHECK(back.cfg.layers == cfg.layers);
  CHECK(back.num_features == 5);
  CHECK(back.num_edge_features == 2);
  CHECK(back.num_outputs == 4);

  std::vector<float> a, b;
  for_each_param(params, [&](Mat<float>& m, const std::string&) {
    a.insert(a.end(), m.data(), m.data() + m.size());
  });
  for_each_param(back, [&](Mat<float>& m, const std::string&) {
    b.insert(b.end(), m.data(), m.data() + m.size());
  });
  CHECK(a == b);

  // cross-precision load applies a value-preserving cast
  ModelParams<double> wide = load_checkpoint<double>(path);
  std::vector<double> c;
  for_each_param(wide, [&](Mat<double>& m, const std::string&) {
    c.insert(c.end(), m.data(), m.data() + m.size());
  });
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(c[i] == static_cast<double>(a[i]));

  // flip one payload byte: the checksum must catch it
  std::string bytes = slurp(path);
  bytes[bytes.size() / 2] = static_cast<char>(bytes[bytes.size() / 2] ^ 0x40);
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << bytes;
  }
  CHECK_THROWS_AS((void)load_checkpoint<float>(path), input_error);
  fs::remove(path);
}

TEST_CASE("gen-sbm output loads back and trains") {
  namespace fs = std::filesystem;
  const std::string dir = (fs::temp_directory_path() / "revgnn_sbm_cli").string();
  SbmSpec spec;
  spec.num_nodes = 120;
  spec.num_classes = 3;
  spec.p_in = 0.15;
  spec.p_out = 0.01;
  spec.feature_dim = 6;
  spec.seed = 8;
  CHECK(run_gen_sbm(spec, dir) == 0);

  RunConfig cfg;
  cfg.data_dir = dir;
  cfg.model.arch = Arch::rev;
  cfg.model.layers = 2;
  cfg.model.channels = 8;
  cfg.epochs = 2;
  cfg.parts_train = 2;
  cfg.parts_eval = 1;
  cfg.log_file = dir + "/log.jsonl";
  cfg.summary_file = dir + "/summary.json";
  CHECK(run_train(cfg) == 0);
  CHECK(fs::exists(dir + "/log.jsonl"));
  CHECK(fs::exists(dir + "/summary.json"));
  fs::remove_all(dir);
}

TEST_CASE("identical config and seed produce identical summary files") {
  namespace fs = std::filesystem;
  const std::string base = (fs::temp_directory_path() / "revgnn_det").string();
  fs::create_directories(base);
  auto run_once = [&](const std::string& tag) {
    RunConfig cfg;
    cfg.synthetic = true;
    cfg.sbm.num_nodes = 100;
    cfg.sbm.num_classes = 3;
    cfg.sbm.p_in = 0.15;
    cfg.sbm.p_out = 0.02;
    cfg.sbm.feature_dim = 6;
    cfg.sbm.seed = 4;
    cfg.model.arch = Arch::rev;
    cfg.model.layers = 2;
    cfg.model.channels = 8;
    cfg.epochs = 3;
    cfg.parts_train = 2;
    cfg.parts_eval = 1;
    cfg.seed = 21;
    cfg.log_file = base + "/log_" + tag + ".jsonl";
    cfg.summary_file = base + "/summary_" + tag + ".json";
    CHECK(run_train(cfg) == 0);
  };
  run_once("a");
  run_once("b");
  CHECK(slurp(base + "/summary_a.json") == slurp(base + "/summary_b.json"));
  fs::remove_all(base);
}

TEST_CASE("bench-mem emits a parse-back-exact table") {
  namespace fs = std::filesystem;
  const std::string base = (fs::temp_directory_path() / "revgnn_bench").string();
  fs::create_directories(base);
  BenchSpec spec;
  spec.archs = {"rev"};
  spec.depths = {4};
  spec.nodes = 128;
  spec.channels = 16;
  spec.table_file = base + "/table.txt";
  spec.jsonl_file = base + "/cells.jsonl";
  CHECK(run_bench_memory(spec) == 0);

  auto cells = bench_memory(spec);
  REQUIRE(cells.size() == 1);
  auto parsed = parse_bench_jsonl(spec.jsonl_file);
  REQUIRE(parsed.size() == 1);
  CHECK(parsed[0].arch == "rev");
  CHECK(parsed[0].depth == 4);
  CHECK(parsed[0].peak_bytes == cells[0].peak_bytes);

  // the text table has a header plus exactly one data row
  std::string table = slurp(spec.table_file);
  CHECK(std::count(table.begin(), table.end(), '\n') == 2);
  fs::remove_all(base);
}

TEST_CASE("failed bench cells are marked and the sweep continues") {
  BenchSpec spec;
  spec.archs = {"rev", "res"};
  spec.depths = {2};
  spec.nodes = 64;
  spec.channels = 7;  // indivisible by groups=2: the rev cell must fail
  auto cells = bench_memory(spec);
  REQUIRE(cells.size() == 2);
  CHECK(cells[0].peak_bytes == -1);
  CHECK(!cells[0].error.empty());
  CHECK(cells[1].peak_bytes > 0);
}

TEST_CASE("epoch log lines carry the stable field order") {
  EpochLog log;
  log.epoch = 3;
  log.split = "train";
  log.loss = 0.5;
  log.metric = 0.75;
  log.peak_bytes = 1024;
  log.wall_seconds = 0.0;
  std::string line = epoch_log_to_json(log);
  CHECK(line.find("\"epoch\"") < line.find("\"split\""));
  CHECK(line.find("\"split\"") < line.find("\"loss\""));
  CHECK(line.find("\"loss\"") < line.find("\"metric\""));
  CHECK(line.find("\"metric\"") < line.find("\"peak_bytes\""));
  CHECK(line.find("\"peak_bytes\"") < line.find("\"wall_seconds\""));
  CHECK(line.find("\"deq_iters\"") != std::string::npos);
  CHECK(line.find("\"deq_residual\"") != std::string::npos);
}
