#pragma once

#include <string>
#include <vector>

#include "revgnn/dataset.hpp"
#include "revgnn/model.hpp"
#include "revgnn/train.hpp"

namespace revgnn {

// Everything one experiment needs, assembled from config file + CLI flags
// (flat key=value semantics; command-line values win).
struct RunConfig {
  // data source: a dataset directory, or a synthetic SBM instance
  std::string data_dir;
  bool synthetic = false;
  SbmSpec sbm;
  bool self_loops = true;
  bool edge_sum_features = false;  // node features from summed incident edge features

  ModelConfig model;

  // protocol defaults follow the reference training setup: 10 training
  // parts, 5 evaluation parts, Adam at 1e-3
  index_t parts_train = 10;
  index_t parts_eval = 5;
  index_t views = 1;
  index_t epochs = 200;
  double lr = 1e-3;
  index_t grad_checkpoint_every = 0;  // res baseline only; 0 = full caching
  bool repartition_each_epoch = true;
  index_t eval_every = 0;  // 0 = evaluate only at the end

  std::uint64_t seed = 1;
  std::string precision = "single";  // single | double
  std::string log_file;              // "" = stdout
  std::string ckpt_path;
  index_t ckpt_every = 0;
  std::string summary_file;
};

struct BenchSpec {
  std::vector<std::string> archs = {"res", "res_ckpt", "rev", "wt_res", "wt_rev", "deq"};
  std::vector<index_t> depths = {4, 8, 16, 32, 64};  // layer counts; iteration caps for deq
  index_t nodes = 1024;
  index_t channels = 64;
  index_t groups = 2;
  std::string precision = "single";
  std::uint64_t seed = 400;
  std::string table_file;  // aligned text table destination ("" = stdout)
  std::string jsonl_file;  // machine-readable counterpart ("" = skip)
};

struct BenchCell {
  std::string arch;
  index_t depth = 0;
  std::int64_t peak_bytes = -1;  // -1 marks a failed cell
  std::string error;
};

int run_train(const RunConfig& cfg);
int run_eval(const RunConfig& cfg);
int run_gen_sbm(const SbmSpec& spec, const std::string& out_dir);

// One training step per grid cell; failed cells are recorded and the sweep
// continues.
std::vector<BenchCell> bench_memory(const BenchSpec& spec);
int run_bench_memory(const BenchSpec& spec);
std::vector<BenchCell> parse_bench_jsonl(const std::string& path);

// Finite-difference spot checks of every kernel VJP plus one reversible
// block; prints the worst relative error per kernel.
int run_grad_check(std::uint64_t seed);

// Stable-field-order JSON line for the per-epoch log stream.
std::string epoch_log_to_json(const EpochLog& log);

// Loads/generates and prepares the graph per the run configuration.
Dataset prepare_dataset(const RunConfig& cfg);

}  // namespace revgnn
