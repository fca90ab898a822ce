#pragma once

#include <string>

#include "revgnn/run.hpp"

namespace revgnn {

// Parsed command-line invocation. `should_exit` covers --help and parse
// errors (exit_code carries the status); otherwise `kind` selects the
// subcommand and the matching payload is filled in.
struct CliAction {
  enum class Kind { none, train, eval, gen_sbm, bench_mem, grad_check };
  Kind kind = Kind::none;
  bool should_exit = false;
  int exit_code = 0;

  RunConfig config;
  std::string gen_out_dir;
  BenchSpec bench;
};

CliAction parse_cli(int argc, const char* const* argv);

}  // namespace revgnn
