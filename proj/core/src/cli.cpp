#include "revgnn/cli.hpp"

#include "CLI11.hpp"
#include "revgnn/config_io.hpp"

namespace revgnn {

namespace {

// string-valued staging for enum fields; converted after parsing
struct EnumStrings {
  std::string arch = "rev";
  std::string op = "gen";
  std::string agg = "max";
  std::string norm = "layer";
};

void add_model_options(CLI::App* cmd, RunConfig& cfg, EnumStrings& es) {
  cmd->add_option("--arch", es.arch, "architecture: res|rev|wt_res|wt_rev|deq")
      ->capture_default_str();
  cmd->add_option("--operator", es.op, "graph operator: gcn|sage|gen")->capture_default_str();
  cmd->add_option("--layers", cfg.model.layers, "number of GNN blocks L")->capture_default_str();
  cmd->add_option("--channels", cfg.model.channels, "hidden channels D")->capture_default_str();
  cmd->add_option("--groups", cfg.model.groups, "reversible channel groups C")->capture_default_str();
  cmd->add_option("--agg", es.agg, "gen aggregation: max|softmax")->capture_default_str();
  cmd->add_option("--beta", cfg.model.beta, "softmax aggregation temperature")->capture_default_str();
  cmd->add_option("--dropout", cfg.model.dropout, "dropout probability")->capture_default_str();
  cmd->add_option("--norm", es.norm, "normalization: layer|batch")->capture_default_str();
  cmd->add_option("--deq-max-iter", cfg.model.deq_max_iter, "Broyden iteration cap K")
      ->capture_default_str();
  cmd->add_option("--deq-tol-forward", cfg.model.deq_tol_forward,
                  "forward tolerance override (0 = 1e-6*sqrt(B*D))")
      ->capture_default_str();
  cmd->add_option("--deq-tol-backward", cfg.model.deq_tol_backward,
                  "backward tolerance override (0 = 2e-10*sqrt(B*D))")
      ->capture_default_str();
}

void add_data_options(CLI::App* cmd, RunConfig& cfg) {
  cmd->add_option("--data", cfg.data_dir, "dataset directory (tsv format)");
  cmd->add_flag("--synthetic", cfg.synthetic, "generate an SBM dataset in memory");
  cmd->add_option("--sbm-nodes", cfg.sbm.num_nodes, "SBM node count")->capture_default_str();
  cmd->add_option("--sbm-classes", cfg.sbm.num_classes, "SBM class count")->capture_default_str();
  cmd->add_option("--sbm-p-in", cfg.sbm.p_in, "SBM within-class edge probability")
      ->capture_default_str();
  cmd->add_option("--sbm-p-out", cfg.sbm.p_out, "SBM cross-class edge probability")
      ->capture_default_str();
  cmd->add_option("--sbm-feature-dim", cfg.sbm.feature_dim, "SBM feature width")
      ->capture_default_str();
  cmd->add_option("--sbm-noise", cfg.sbm.feature_noise, "SBM feature noise scale")
      ->capture_default_str();
  cmd->add_option("--sbm-seed", cfg.sbm.seed, "SBM generator seed")->capture_default_str();
  cmd->add_flag("!--no-self-loops", cfg.self_loops, "skip adding self-loops after loading");
  cmd->add_flag("--edge-sum-features", cfg.edge_sum_features,
                "derive node features by summing incident edge features");
}

void add_protocol_options(CLI::App* cmd, RunConfig& cfg) {
  cmd->add_option("--parts-train", cfg.parts_train, "random partitions during training")
      ->capture_default_str();
  cmd->add_option("--parts-eval", cfg.parts_eval, "random partitions during evaluation")
      ->capture_default_str();
  cmd->add_option("--views", cfg.views, "multi-view inference passes")->capture_default_str();
  cmd->add_option("--epochs", cfg.epochs, "training epochs")->capture_default_str();
  cmd->add_option("--lr", cfg.lr, "Adam learning rate")->capture_default_str();
  cmd->add_option("--grad-ckpt-every", cfg.grad_checkpoint_every,
                  "res baseline: keep activations every k layers (0 = full caching)")
      ->capture_default_str();
  cmd->add_flag("!--fixed-partition", cfg.repartition_each_epoch,
                "reuse one training partition instead of re-randomizing per epoch");
  cmd->add_option("--eval-every", cfg.eval_every, "validate every k epochs (0 = end only)")
      ->capture_default_str();
  cmd->add_option("--seed", cfg.seed, "base seed")->envname("REVGNN_SEED")->capture_default_str();
  cmd->add_option("--precision", cfg.precision, "single|double")->capture_default_str();
  cmd->add_option("--log-file", cfg.log_file, "JSON-lines log destination (default stdout)");
  cmd->add_option("--ckpt", cfg.ckpt_path, "model checkpoint path");
  cmd->add_option("--ckpt-every", cfg.ckpt_every, "checkpoint every k epochs (0 = final only)")
      ->capture_default_str();
  cmd->add_option("--summary", cfg.summary_file, "summary JSON destination");
}

}  // namespace

CliAction parse_cli(int argc, const char* const* argv) {
  CliAction action;
  EnumStrings es;

  CLI::App app{"memory-efficient deep GNN training (reversible, weight-tied and equilibrium models)"};
  app.require_subcommand(1);
  // flat key=value config, keys qualified by subcommand (train.channels=64);
  // command-line values win. Placed before the subcommand on the command line.
  app.set_config("--config", "", "flat key=value config file (keys like train.channels=64)");
  app.allow_config_extras(CLI::config_extras_mode::error);

  CLI::App* train = app.add_subcommand("train", "train a model and log per-epoch JSON lines");
  add_data_options(train, action.config);
  add_model_options(train, action.config, es);
  add_protocol_options(train, action.config);

  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint with multi-view inference");
  add_data_options(eval, action.config);
  add_protocol_options(eval, action.config);

  CLI::App* gen = app.add_subcommand("gen-sbm", "write a synthetic SBM dataset directory");
  gen->add_option("--out", action.gen_out_dir, "output directory")->required();
  gen->add_option("--sbm-nodes", action.config.sbm.num_nodes, "node count")->capture_default_str();
  gen->add_option("--sbm-classes", action.config.sbm.num_classes, "class count")->capture_default_str();
  gen->add_option("--sbm-p-in", action.config.sbm.p_in, "within-class edge probability")
      ->capture_default_str();
  gen->add_option("--sbm-p-out", action.config.sbm.p_out, "cross-class edge probability")
      ->capture_default_str();
  gen->add_option("--sbm-feature-dim", action.config.sbm.feature_dim, "feature width")
      ->capture_default_str();
  gen->add_option("--sbm-noise", action.config.sbm.feature_noise, "feature noise scale")
      ->capture_default_str();
  gen->add_option("--sbm-seed", action.config.sbm.seed, "generator seed")->capture_default_str();

  CLI::App* bench = app.add_subcommand("bench-mem", "measure peak activation bytes per (arch, depth)");
  bench->add_option("--archs", action.bench.archs,
                    "grid rows: res|res_ckpt|rev|wt_res|wt_rev|deq")
      ->delimiter(',')
      ->capture_default_str();
  bench->add_option("--depths", action.bench.depths, "layer counts (iteration caps for deq)")
      ->delimiter(',')
      ->capture_default_str();
  bench->add_option("--bench-nodes", action.bench.nodes, "synthetic graph size")->capture_default_str();
  bench->add_option("--bench-channels", action.bench.channels, "hidden channels")->capture_default_str();
  bench->add_option("--bench-groups", action.bench.groups, "reversible groups")->capture_default_str();
  bench->add_option("--precision", action.bench.precision, "single|double")->capture_default_str();
  bench->add_option("--table", action.bench.table_file, "aligned text table destination");
  bench->add_option("--jsonl", action.bench.jsonl_file, "machine-readable JSONL destination");
  bench->add_option("--seed", action.bench.seed, "synthetic data seed")
      ->envname("REVGNN_SEED")
      ->capture_default_str();

  CLI::App* grad = app.add_subcommand("grad-check", "finite-difference checks of every kernel VJP");
  std::uint64_t grad_seed = 1;
  grad->add_option("--seed", grad_seed, "instance seed")->envname("REVGNN_SEED")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    action.should_exit = true;
    action.exit_code = app.exit(e);
    return action;
  }

  try {
    action.config.model.arch = arch_from_string(es.arch);
    action.config.model.op = operator_from_string(es.op);
    action.config.model.agg = agg_from_string(es.agg);
    action.config.model.norm = norm_from_string(es.norm);
  } catch (const input_error& e) {
    std::fprintf(stderr, "%s\n", e.what());
    action.should_exit = true;
    action.exit_code = 2;
    return action;
  }

  if (train->parsed()) action.kind = CliAction::Kind::train;
  if (eval->parsed()) action.kind = CliAction::Kind::eval;
  if (gen->parsed()) action.kind = CliAction::Kind::gen_sbm;
  if (bench->parsed()) action.kind = CliAction::Kind::bench_mem;
  if (grad->parsed()) {
    action.kind = CliAction::Kind::grad_check;
    action.config.seed = grad_seed;
  }
  return action;
}

}  // namespace revgnn
