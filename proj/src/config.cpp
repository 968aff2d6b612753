#include "bhfa/config.hpp"

#include <charconv>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "json.hpp"

#include "bhfa/encoder.hpp"
#include "bhfa/errors.hpp"

namespace bhfa {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const std::string v = trim(value);
  const char* begin = v.data();
  const char* end = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(begin, end, out);
  if (ec != std::errc{} || ptr != end || v.empty()) {
    throw ConfigError("config key '" + key + "': cannot parse number from '" + value + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true") return true;
  if (value == "false") return false;
  throw ConfigError("config key '" + key + "': expected true or false, got '" + value + "'");
}

std::vector<int> parse_int_list(const std::string& key, const std::string& value) {
  std::vector<int> out;
  for (const std::string& item : split_list(value)) out.push_back(parse_number<int>(key, item));
  return out;
}

using Handler = std::function<void(RunConfig&, const std::string&, const std::string&)>;

const std::map<std::string, Handler>& handlers() {
  static const std::map<std::string, Handler> table = {
      {"dataset.path", [](RunConfig& c, const std::string&, const std::string& v) { c.dataset_path = v; }},
      {"dataset.synthetic",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.synthetic = parse_bool(k, v); }},
      {"dataset.classes",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.synth_classes = parse_number<int>(k, v); }},
      {"dataset.per_class",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.synth_per_class = parse_number<int>(k, v); }},
      {"dataset.noise",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.synth_noise = parse_number<double>(k, v); }},
      {"dataset.side",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.side = parse_number<int>(k, v); }},
      {"dataset.split", [](RunConfig& c, const std::string&, const std::string& v) { c.split_mode = v; }},
      {"dataset.base_classes",
       [](RunConfig& c, const std::string&, const std::string& v) { c.base_classes = split_list(v); }},
      {"dataset.validation_classes",
       [](RunConfig& c, const std::string&, const std::string& v) { c.validation_classes = split_list(v); }},
      {"dataset.test_classes",
       [](RunConfig& c, const std::string&, const std::string& v) { c.test_classes = split_list(v); }},

      {"model.widths",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.widths = parse_int_list(k, v); }},
      {"model.latent_dim",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.latent_dim = parse_number<int>(k, v); }},
      {"model.reductions",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.reductions = parse_int_list(k, v); }},

      {"train.episodes",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.train.episodes = parse_number<int>(k, v); }},
      {"train.lr",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.train.lr = parse_number<double>(k, v); }},
      {"train.beta1",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.train.adam_beta1 = parse_number<double>(k, v); }},
      {"train.beta2",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.train.adam_beta2 = parse_number<double>(k, v); }},
      {"train.eps",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.train.adam_eps = parse_number<double>(k, v); }},
      {"train.ways",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.train.spec.ways = parse_number<int>(k, v); }},
      {"train.shots",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.train.spec.n_shot = parse_number<int>(k, v); }},
      {"train.queries",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.train.spec.n_query = parse_number<int>(k, v); }},
      {"train.checkpoint_every",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.train.checkpoint_every = parse_number<int>(k, v);
       }},
      {"train.augment",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.train.augment = parse_bool(k, v); }},
      {"train.early_stopping",
       [](RunConfig& c, const std::string&, const std::string& v) { c.train.early_stopping = v; }},

      {"loss.preset",
       [](RunConfig& c, const std::string&, const std::string& v) { apply_loss_preset(v, c.train.loss); }},
      {"loss.tau",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.train.loss.tau = parse_number<double>(k, v); }},
      {"loss.lambda1",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.train.loss.lambda1 = parse_number<double>(k, v);
       }},
      {"loss.lambda2",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.train.loss.lambda2 = parse_number<double>(k, v);
       }},
      {"loss.lambda3",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.train.loss.lambda3 = parse_number<double>(k, v);
       }},
      {"loss.enable_bhs",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.train.loss.enable_bhs = parse_bool(k, v); }},
      {"loss.enable_cce",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.train.loss.enable_cce = parse_bool(k, v); }},
      {"loss.enable_rec",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.train.loss.enable_rec = parse_bool(k, v); }},

      {"eval.ways",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.eval_spec.ways = parse_number<int>(k, v); }},
      {"eval.shots",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.eval_spec.n_shot = parse_number<int>(k, v); }},
      {"eval.queries",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.eval_spec.n_query = parse_number<int>(k, v); }},
      {"eval.runs",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.eval_runs = parse_number<int>(k, v); }},
      {"eval.split", [](RunConfig& c, const std::string&, const std::string& v) { c.eval_split = v; }},

      {"seed.data",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.seed_data = parse_number<std::uint64_t>(k, v);
       }},
      {"seed.train",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.seed_train = parse_number<std::uint64_t>(k, v);
       }},

      {"output.dir", [](RunConfig& c, const std::string&, const std::string& v) { c.output_dir = v; }},
  };
  return table;
}

}  // namespace

RunConfig parse_config_text(const std::string& text) {
  RunConfig cfg;
  std::set<std::string> seen;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    const std::size_t eq = stripped.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value, got '" +
                        stripped + "'");
    }
    const std::string key = trim(stripped.substr(0, eq));
    const std::string value = trim(stripped.substr(eq + 1));
    auto it = handlers().find(key);
    if (it == handlers().end()) {
      throw ConfigError("unknown config key '" + key + "' (line " + std::to_string(lineno) + ")");
    }
    if (!seen.insert(key).second) {
      throw ConfigError("duplicate config key '" + key + "' (line " + std::to_string(lineno) + ")");
    }
    try {
      it->second(cfg, key, value);
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      throw ConfigError("config key '" + key + "' (line " + std::to_string(lineno) + "): " + e.what());
    }
  }
  return cfg;
}

RunConfig parse_config_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot read config file: " + path);
  std::stringstream buffer;
  buffer << is.rdbuf();
  return parse_config_text(buffer.str());
}

void apply_seed_override(RunConfig& cfg, const std::string& override_text) {
  const std::string text = trim(override_text);
  if (text.empty()) throw ConfigError("seed override: empty value");
  if (text.find('=') == std::string::npos) {
    const std::uint64_t both = parse_number<std::uint64_t>("seed override", text);
    cfg.seed_data = both;
    cfg.seed_train = both;
    return;
  }
  for (const std::string& part : split_list(text)) {
    const std::size_t eq = part.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("seed override: expected name=value in '" + part + "'");
    }
    const std::string name = trim(part.substr(0, eq));
    const std::uint64_t value = parse_number<std::uint64_t>("seed override", part.substr(eq + 1));
    if (name == "data") {
      cfg.seed_data = value;
    } else if (name == "train") {
      cfg.seed_train = value;
    } else {
      throw ConfigError("seed override: unknown seed name '" + name + "' (use data or train)");
    }
  }
}

Split parse_split_name(const std::string& name) {
  if (name == "base") return Split::base;
  if (name == "validation") return Split::validation;
  if (name == "test") return Split::test;
  throw ConfigError("unknown split name '" + name + "' (use base, validation, or test)");
}

void finalize_config(RunConfig& cfg) {
  const bool has_path = !cfg.dataset_path.empty();
  if (has_path == cfg.synthetic) {
    throw ConfigError("config must set exactly one dataset source: dataset.path or dataset.synthetic=true");
  }
  const bool has_lists =
      !cfg.base_classes.empty() || !cfg.validation_classes.empty() || !cfg.test_classes.empty();

  if (cfg.split_mode.empty()) {
    cfg.split_mode = has_lists ? "classes" : (cfg.synthetic ? "none" : "ratio");
  }
  if (cfg.split_mode != "none" && cfg.split_mode != "ratio" && cfg.split_mode != "classes") {
    throw ConfigError("config key 'dataset.split': expected none, ratio, or classes, got '" +
                      cfg.split_mode + "'");
  }
  if (has_lists && cfg.split_mode != "classes") {
    throw ConfigError("config key 'dataset.split': class lists are set but split mode is '" +
                      cfg.split_mode + "'");
  }
  if (cfg.split_mode == "classes") {
    if (!has_lists) throw ConfigError("config key 'dataset.split': classes mode needs class lists");
    if (cfg.synthetic) {
      throw ConfigError("config key 'dataset.split': class lists require dataset.path");
    }
  }
  if (cfg.split_mode == "none" && !cfg.synthetic) {
    throw ConfigError("config key 'dataset.split': 'none' requires dataset.synthetic=true");
  }

  if (cfg.eval_split.empty()) {
    cfg.eval_split = cfg.split_mode == "none" ? "full" : "test";
  }
  if (cfg.split_mode == "none") {
    if (cfg.eval_split != "full") {
      throw ConfigError("config key 'eval.split': '" + cfg.eval_split +
                        "' needs a dataset split; with dataset.split=none use 'full'");
    }
  } else {
    if (cfg.eval_split == "full") {
      throw ConfigError("config key 'eval.split': 'full' is only valid with dataset.split=none");
    }
    parse_split_name(cfg.eval_split);  // throws on anything else
  }

  if (has_path && !std::filesystem::exists(cfg.dataset_path)) {
    throw ConfigError("config key 'dataset.path': path does not exist: " + cfg.dataset_path);
  }
  if (cfg.synthetic) {
    if (cfg.synth_classes < 2) throw ConfigError("config key 'dataset.classes': need >= 2");
    if (cfg.synth_per_class < 1) throw ConfigError("config key 'dataset.per_class': need >= 1");
    if (!(cfg.synth_noise >= 0.0)) throw ConfigError("config key 'dataset.noise': need >= 0");
  }
  if (cfg.output_dir.empty()) throw ConfigError("config key 'output.dir': empty");
  if (cfg.eval_runs < 1) throw ConfigError("config key 'eval.runs': need >= 1");

  cfg.train.spec.seed = cfg.seed_data;
  cfg.train.seed = cfg.seed_train;

  try {
    Arch arch;
    arch.side = cfg.side;
    arch.widths = cfg.widths;
    arch.latent_dim = cfg.latent_dim;
    arch.reductions = cfg.reductions;
    arch.validate();
    cfg.train.validate();
    cfg.eval_spec.validate();
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config invalid: ") + e.what());
  }
}

std::string config_echo_json(const RunConfig& cfg) {
  nlohmann::json j;
  if (!cfg.dataset_path.empty()) j["dataset.path"] = cfg.dataset_path;
  j["dataset.synthetic"] = cfg.synthetic;
  if (cfg.synthetic) {
    j["dataset.classes"] = cfg.synth_classes;
    j["dataset.per_class"] = cfg.synth_per_class;
    j["dataset.noise"] = cfg.synth_noise;
  }
  j["dataset.side"] = cfg.side;
  j["dataset.split"] = cfg.split_mode;
  if (!cfg.base_classes.empty()) j["dataset.base_classes"] = cfg.base_classes;
  if (!cfg.validation_classes.empty()) j["dataset.validation_classes"] = cfg.validation_classes;
  if (!cfg.test_classes.empty()) j["dataset.test_classes"] = cfg.test_classes;
  j["model.widths"] = cfg.widths;
  j["model.latent_dim"] = cfg.latent_dim;
  if (!cfg.reductions.empty()) j["model.reductions"] = cfg.reductions;
  j["train.episodes"] = cfg.train.episodes;
  j["train.lr"] = cfg.train.lr;
  j["train.beta1"] = cfg.train.adam_beta1;
  j["train.beta2"] = cfg.train.adam_beta2;
  j["train.eps"] = cfg.train.adam_eps;
  j["train.ways"] = cfg.train.spec.ways;
  j["train.shots"] = cfg.train.spec.n_shot;
  j["train.queries"] = cfg.train.spec.n_query;
  j["train.checkpoint_every"] = cfg.train.checkpoint_every;
  j["train.augment"] = cfg.train.augment;
  j["train.early_stopping"] = cfg.train.early_stopping;
  j["loss.tau"] = cfg.train.loss.tau;
  j["loss.lambda1"] = cfg.train.loss.lambda1;
  j["loss.lambda2"] = cfg.train.loss.lambda2;
  j["loss.lambda3"] = cfg.train.loss.lambda3;
  j["loss.enable_bhs"] = cfg.train.loss.enable_bhs;
  j["loss.enable_cce"] = cfg.train.loss.enable_cce;
  j["loss.enable_rec"] = cfg.train.loss.enable_rec;
  j["eval.ways"] = cfg.eval_spec.ways;
  j["eval.shots"] = cfg.eval_spec.n_shot;
  j["eval.queries"] = cfg.eval_spec.n_query;
  j["eval.runs"] = cfg.eval_runs;
  j["eval.split"] = cfg.eval_split;
  j["seed.data"] = cfg.seed_data;
  j["seed.train"] = cfg.seed_train;
  j["output.dir"] = cfg.output_dir;
  return j.dump(2);
}

}  // namespace bhfa
