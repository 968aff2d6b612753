#include <string>

#include "CLI11.hpp"

#include "bhfa/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"distributional few-shot classification engine"};
  app.require_subcommand(1);

  bhfa::CliOptions opt;
  auto add_common = [&opt](CLI::App* sub) {
    sub->add_option("--config", opt.config_path, "run configuration file (key=value lines)");
    sub->add_option("--checkpoint", opt.checkpoint_path, "model checkpoint path");
    sub->add_option("--out", opt.out_path, "output directory (overrides output.dir)");
    sub->add_option("--seed-override", opt.seed_override, "N, or data=N,train=M");
  };

  CLI::App* train = app.add_subcommand("train", "run episodic training from a config");
  add_common(train);
  CLI::App* evaluate = app.add_subcommand("evaluate", "score a checkpoint and write a report");
  add_common(evaluate);
  CLI::App* selftest = app.add_subcommand("selftest", "run the built-in verification suites");
  add_common(selftest);
  selftest->add_flag("--perturb-bc", opt.perturb_bc)->group("");  // fault-injection hook
  CLI::App* synth = app.add_subcommand("synth-data", "write a synthetic BHFT dataset");
  add_common(synth);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;  // bad invocation reports as a configuration error
  }

  std::string command;
  if (train->parsed()) command = "train";
  if (evaluate->parsed()) command = "evaluate";
  if (selftest->parsed()) command = "selftest";
  if (synth->parsed()) command = "synth-data";
  return bhfa::run_cli(command, opt);
}
