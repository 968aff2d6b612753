#pragma once

#include <string>

#include "bhfa/config.hpp"

namespace bhfa {

struct CliOptions {
  std::string config_path;
  std::string checkpoint_path;
  std::string out_path;       // overrides output.dir when nonempty
  std::string seed_override;  // "N" or "data=N,train=M"
  bool perturb_bc = false;    // hidden fault-injection hook for selftest
};

// Exit codes across all commands: 0 success, 1 configuration error (message
// names the bad key or path), 2 runtime or I/O error, 3 checkpoint /
// architecture mismatch, 4 verification-suite failure (first failure named).
int cmd_train(const CliOptions& opt);
int cmd_evaluate(const CliOptions& opt);
int cmd_selftest(const CliOptions& opt);
int cmd_synth_data(const CliOptions& opt);

// Dispatches one of train | evaluate | selftest | synth-data and maps thrown
// errors onto the exit codes above.
int run_cli(const std::string& command, const CliOptions& opt);

}  // namespace bhfa
