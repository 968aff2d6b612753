#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bhfa/episodes.hpp"
#include "bhfa/trainer.hpp"

namespace bhfa {

// Flat key=value run configuration ("section.key = value" lines, full-line
// # comments). Unknown or duplicate keys are errors naming the key.
struct RunConfig {
  // dataset block: exactly one source (dataset.path or dataset.synthetic).
  std::string dataset_path;
  bool synthetic = false;
  int synth_classes = 5;
  int synth_per_class = 40;
  double synth_noise = 0.05;
  int side = 32;
  std::string split_mode;  // "none" | "ratio" | "classes"; empty -> default
  std::vector<std::string> base_classes, validation_classes, test_classes;

  // model block
  std::vector<int> widths{16, 32, 64};
  int latent_dim = 32;
  std::vector<int> reductions;  // empty -> per-width default rule

  // train + loss blocks (seeds are stamped in by finalize_config)
  TrainConfig train;

  // eval block
  EpisodeSpec eval_spec;
  int eval_runs = 10;
  std::string eval_split;  // "base" | "validation" | "test" | "full"; empty -> default

  // seed block: the only two randomness roots
  std::uint64_t seed_data = 1;
  std::uint64_t seed_train = 2;

  // output block
  std::string output_dir = "out";
};

RunConfig parse_config_text(const std::string& text);
RunConfig parse_config_file(const std::string& path);  // unreadable file -> ConfigError

// "N" sets both seeds; "data=N", "train=M", or "data=N,train=M" set them
// individually. Malformed text -> ConfigError.
void apply_seed_override(RunConfig& cfg, const std::string& override_text);

// Resolves defaulted fields (split modes, eval split), stamps the two seeds
// into the training config, and checks every cross-field invariant, including
// that referenced paths exist. Call after any seed override.
void finalize_config(RunConfig& cfg);

// The effective configuration as a JSON object keyed by config-file key
// names; embedding this in a run manifest makes the run replayable.
std::string config_echo_json(const RunConfig& cfg);

Split parse_split_name(const std::string& name);  // base | validation | test

}  // namespace bhfa
