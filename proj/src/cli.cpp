#include "bhfa/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>

#include "json.hpp"

#include "bhfa/errors.hpp"
#include "bhfa/eval.hpp"
#include "bhfa/selfcheck.hpp"

namespace bhfa {

namespace {

RunConfig load_run_config(const CliOptions& opt) {
  if (opt.config_path.empty()) throw ConfigError("missing --config <file>");
  RunConfig cfg = parse_config_file(opt.config_path);
  if (!opt.seed_override.empty()) apply_seed_override(cfg, opt.seed_override);
  if (!opt.out_path.empty()) cfg.output_dir = opt.out_path;
  finalize_config(cfg);
  return cfg;
}

LabeledDataset synth_full(const RunConfig& cfg) {
  return synth_blobs(cfg.synth_classes, cfg.synth_per_class, cfg.side, cfg.synth_noise,
                     cfg.seed_data);
}

// The training split: the base portion in ratio/classes modes, the whole
// synthetic set with dataset.split=none.
LabeledDataset train_dataset(const RunConfig& cfg) {
  if (cfg.synthetic) {
    LabeledDataset full = synth_full(cfg);
    return cfg.split_mode == "none" ? full : split_ratio(full, Split::base);
  }
  SplitAssignment assign;
  assign.side = cfg.side;
  assign.split = Split::base;
  assign.base_classes = cfg.base_classes;
  assign.validation_classes = cfg.validation_classes;
  assign.test_classes = cfg.test_classes;
  return load_image_directory(cfg.dataset_path, assign);
}

LabeledDataset eval_dataset(const RunConfig& cfg) {
  if (cfg.synthetic) {
    LabeledDataset full = synth_full(cfg);
    return cfg.eval_split == "full" ? full : split_ratio(full, parse_split_name(cfg.eval_split));
  }
  SplitAssignment assign;
  assign.side = cfg.side;
  assign.split = parse_split_name(cfg.eval_split);
  assign.base_classes = cfg.base_classes;
  assign.validation_classes = cfg.validation_classes;
  assign.test_classes = cfg.test_classes;
  return load_image_directory(cfg.dataset_path, assign);
}

Arch arch_from_config(const RunConfig& cfg, int in_channels) {
  Arch arch;
  arch.in_channels = in_channels;
  arch.side = cfg.side;
  arch.widths = cfg.widths;
  arch.latent_dim = cfg.latent_dim;
  arch.reductions = cfg.reductions;
  arch.validate();
  return arch;
}

void check_arch_against_config(const Arch& loaded, const RunConfig& cfg, int in_channels) {
  const Arch expected = arch_from_config(cfg, in_channels);
  if (!(loaded == expected)) {
    throw CheckpointMismatch("checkpoint architecture does not match the configuration (side " +
                             std::to_string(loaded.side) + " vs " + std::to_string(expected.side) +
                             ", latent " + std::to_string(loaded.latent_dim) + " vs " +
                             std::to_string(expected.latent_dim) + ")");
  }
}

nlohmann::json manifest_common(const RunConfig& cfg) {
  nlohmann::json m;
  m["config"] = nlohmann::json::parse(config_echo_json(cfg));
  m["seeds"] = {{"data", cfg.seed_data}, {"train", cfg.seed_train}};
  m["formats"] = {{"checkpoint", "BHFA1"}, {"optimizer", "ADAM1"}, {"dataset", "BHFT"}};
  m["engine_version"] = "1.0.0";
  return m;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  require_io(static_cast<bool>(os), "cannot open for write: " + path);
  os << text;
  os.flush();
  require_io(static_cast<bool>(os), "write failed: " + path);
}

}  // namespace

int cmd_train(const CliOptions& opt) {
  RunConfig cfg = load_run_config(opt);
  LabeledDataset ds = train_dataset(cfg);
  ds.validate();
  const int in_channels = ds.images.front().dim(0);

  EncoderModel model{arch_from_config(cfg, in_channels)};
  OptimizerState state;
  if (!opt.checkpoint_path.empty()) {
    LoadedCheckpoint loaded = load_checkpoint(opt.checkpoint_path);
    check_arch_against_config(loaded.model.arch(), cfg, in_channels);
    model = std::move(loaded.model);
    if (loaded.opt) state = std::move(*loaded.opt);
  } else {
    model.init_params(derive_seed(cfg.seed_train, seed_tag::kModelInit));
  }

  std::filesystem::create_directories(cfg.output_dir);
  const std::string ckpt_path = cfg.output_dir + "/checkpoint.bhfa";
  const CheckpointFn save = [&](int, const EncoderModel& m, const OptimizerState& s) {
    save_checkpoint(ckpt_path, m, &s);
  };

  std::vector<TrainLogRecord> log = fit(model, state, ds, cfg.train, save);
  write_train_log_csv(cfg.output_dir + "/train_log.csv", log);

  nlohmann::json manifest = manifest_common(cfg);
  manifest["command"] = "train";
  manifest["dataset"] = {{"classes", ds.n_classes()},
                         {"images", ds.images.size()},
                         {"channels", in_channels}};
  manifest["episodes_run"] = log.size();
  if (!log.empty()) {
    manifest["final"] = {{"total", log.back().total}, {"acc", log.back().acc}};
  }
  write_text(cfg.output_dir + "/manifest.json", manifest.dump(2) + "\n");

  std::cout << "trained " << log.size() << " episodes; checkpoint " << ckpt_path << "\n";
  return 0;
}

int cmd_evaluate(const CliOptions& opt) {
  RunConfig cfg = load_run_config(opt);
  if (opt.checkpoint_path.empty()) throw ConfigError("missing --checkpoint <file>");

  LabeledDataset ds = eval_dataset(cfg);
  ds.validate();
  LoadedCheckpoint loaded = load_checkpoint(opt.checkpoint_path);
  check_arch_against_config(loaded.model.arch(), cfg, ds.images.front().dim(0));

  EvalReport report = evaluate(loaded.model, ds, cfg.eval_spec, cfg.eval_runs, cfg.seed_data);

  std::filesystem::create_directories(cfg.output_dir);
  write_report_json(cfg.output_dir + "/report.json", report);
  write_confusion_csv(cfg.output_dir + "/confusion.csv", report);

  std::cout.precision(4);
  std::cout << std::fixed << "mean_aa " << report.mean_aa << " ± " << report.std_aa << "\n";
  return 0;
}

int cmd_selftest(const CliOptions& opt) {
  selfcheck::SuiteOptions sopt;
  sopt.perturb_bc = opt.perturb_bc;

  std::cout << "scope: desk-scale verification of the engine's math and plumbing; published\n"
               "benchmark tables need external datasets and far larger training budgets and\n"
               "are out of scope here. Shipped constants are verified by the defaults suite.\n";
  std::vector<selfcheck::SuiteResult> results = selfcheck::run_all_suites(sopt);
  std::string first_failure;
  for (const selfcheck::SuiteResult& r : results) {
    std::cout << (r.passed ? "[pass] " : "[FAIL] ") << r.name << " - " << r.detail << " ("
              << static_cast<int>(r.ms) << " ms)\n";
    if (!r.passed && first_failure.empty()) first_failure = r.name;
  }
  if (!first_failure.empty()) {
    std::cout << "selftest failed: " << first_failure << "\n";
    return 4;
  }
  std::cout << "all " << results.size() << " suites passed\n";
  return 0;
}

int cmd_synth_data(const CliOptions& opt) {
  RunConfig cfg = load_run_config(opt);
  if (!cfg.synthetic) {
    throw ConfigError("synth-data needs dataset.synthetic=true in the config");
  }
  LabeledDataset ds = synth_full(cfg);
  const std::string dir = cfg.output_dir;
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  save_bhft_dataset(dir, ds);
  std::cout << "wrote " << ds.images.size() << " images (" << ds.n_classes() << " classes) to "
            << dir << "/dataset.bhft\n";
  return 0;
}

int run_cli(const std::string& command, const CliOptions& opt) {
  try {
    if (command == "train") return cmd_train(opt);
    if (command == "evaluate") return cmd_evaluate(opt);
    if (command == "selftest") return cmd_selftest(opt);
    if (command == "synth-data") return cmd_synth_data(opt);
    throw ConfigError("unknown command: " + command);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const CheckpointMismatch& e) {
    std::cerr << "checkpoint mismatch: " << e.what() << "\n";
    return 3;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace bhfa
