#include <cstdio>
#include <exception>

#include "revgnn/cli.hpp"

int main(int argc, char** argv) {
  using revgnn::CliAction;
  CliAction action = revgnn::parse_cli(argc, argv);
  if (action.should_exit) return action.exit_code;
  try {
    switch (action.kind) {
      case CliAction::Kind::train:
        return revgnn::run_train(action.config);
      case CliAction::Kind::eval:
        return revgnn::run_eval(action.config);
      case CliAction::Kind::gen_sbm:
        return revgnn::run_gen_sbm(action.config.sbm, action.gen_out_dir);
      case CliAction::Kind::bench_mem:
        return revgnn::run_bench_memory(action.bench);
      case CliAction::Kind::grad_check:
        return revgnn::run_grad_check(action.config.seed);
      case CliAction::Kind::none:
        break;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
