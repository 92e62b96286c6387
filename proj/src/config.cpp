#include "fedpt/config.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace fedpt {

namespace {

OptKind parse_opt_kind(const std::string& s) {
  if (s == "sgd") return OptKind::sgd;
  if (s == "sgdm") return OptKind::sgdm;
  if (s == "adam") return OptKind::adam;
  throw ConfigError("unknown optimizer kind: '" + s + "' (expected sgd|sgdm|adam)");
}

std::vector<int> to_int_list(const TomlValue& v, const std::string& key) {
  if (v.type != TomlValue::Type::array) throw ConfigError(key + ": expected an array of integers");
  std::vector<int> out;
  for (const auto& e : v.array) {
    if (e.type != TomlValue::Type::integer) throw ConfigError(key + ": expected integers");
    out.push_back(static_cast<int>(e.integer));
  }
  return out;
}

void append_freeze_names(std::vector<std::string>& out, const std::string& joined) {
  std::stringstream ss(joined);
  std::string part;
  while (std::getline(ss, part, ',')) {
    const auto a = part.find_first_not_of(" \t");
    if (a == std::string::npos) continue;
    const auto b = part.find_last_not_of(" \t");
    out.push_back(part.substr(a, b - a + 1));
  }
}

std::vector<std::string> to_freeze_list(const TomlValue& v) {
  std::vector<std::string> out;
  if (v.type == TomlValue::Type::string) {
    append_freeze_names(out, v.str);
    return out;
  }
  if (v.type == TomlValue::Type::array) {
    for (const auto& e : v.array) {
      if (e.type != TomlValue::Type::string) {
        throw ConfigError("freeze: expected block-name strings");
      }
      append_freeze_names(out, e.str);
    }
    return out;
  }
  throw ConfigError("freeze: expected a string or an array of strings");
}

int to_int(const TomlValue& v, const std::string& key) {
  if (v.type != TomlValue::Type::integer) throw ConfigError(key + ": expected an integer");
  return static_cast<int>(v.integer);
}

double to_double(const TomlValue& v, const std::string& key) {
  if (v.type != TomlValue::Type::integer && v.type != TomlValue::Type::floating) {
    throw ConfigError(key + ": expected a number");
  }
  return v.as_number();
}

bool to_bool(const TomlValue& v, const std::string& key) {
  if (v.type != TomlValue::Type::boolean) throw ConfigError(key + ": expected true or false");
  return v.boolean;
}

std::string to_string_val(const TomlValue& v, const std::string& key) {
  if (v.type != TomlValue::Type::string) throw ConfigError(key + ": expected a string");
  return v.str;
}

// Applies one config key. Shared by file loading and sweep overrides so a
// grid can vary anything a file can set.
void apply_key(ExperimentConfig& cfg, const std::string& key, const TomlValue& v) {
  if (key == "preset") {
    apply_preset(cfg, to_string_val(v, key));
  } else if (key == "model") {
    cfg.model = to_string_val(v, key);
  } else if (key == "mlp_dims") {
    cfg.mlp_dims = to_int_list(v, key);
  } else if (key == "groupnorm_groups") {
    cfg.groupnorm_groups = to_int(v, key);
  } else if (key == "freeze") {
    cfg.freeze = to_freeze_list(v);
  } else if (key == "protect_norm") {
    cfg.protect_norm = to_bool(v, key);
  } else if (key == "rounds") {
    cfg.rounds = to_int(v, key);
  } else if (key == "clients_per_round") {
    cfg.clients_per_round = to_int(v, key);
  } else if (key == "client_optimizer") {
    cfg.client_opt.kind = parse_opt_kind(to_string_val(v, key));
  } else if (key == "client_lr") {
    cfg.client_opt.lr = to_double(v, key);
  } else if (key == "client_momentum") {
    cfg.client_opt.momentum = to_double(v, key);
  } else if (key == "server_optimizer") {
    cfg.server_opt.kind = parse_opt_kind(to_string_val(v, key));
  } else if (key == "server_lr") {
    cfg.server_opt.lr = to_double(v, key);
  } else if (key == "server_momentum") {
    cfg.server_opt.momentum = to_double(v, key);
  } else if (key == "batch_size") {
    cfg.batch_size = to_int(v, key);
  } else if (key == "local_steps") {
    cfg.local_steps = to_int(v, key);
  } else if (key == "eval_every") {
    cfg.eval_every = to_int(v, key);
  } else if (key == "seed") {
    cfg.seed = static_cast<uint64_t>(v.type == TomlValue::Type::integer
                                         ? v.integer
                                         : throw ConfigError("seed: expected an integer"));
  } else if (key == "weighting") {
    cfg.weighting = to_string_val(v, key);
  } else if (key == "clip_norm") {
    const double c = to_double(v, key);
    cfg.clip_norm = c;
    cfg.dp_cfg.clip_norm = c;
  } else if (key == "dp") {
    cfg.dp = to_bool(v, key);
  } else if (key == "noise_multiplier") {
    cfg.dp_cfg.noise_multiplier = to_double(v, key);
  } else if (key == "report_goal") {
    cfg.dp_cfg.report_goal = to_int(v, key);
  } else if (key == "dp_epsilon") {
    cfg.dp_cfg.epsilon_metadata = to_double(v, key);
  } else if (key == "threads") {
    cfg.threads = to_int(v, key);
  } else if (key == "record_timing") {
    cfg.record_timing = to_bool(v, key);
  } else if (key == "fedavg_baseline") {
    cfg.fedavg_baseline = to_bool(v, key);
  } else if (key == "data") {
    cfg.data.kind = to_string_val(v, key);
  } else if (key == "classes") {
    cfg.data.classes = to_int(v, key);
  } else if (key == "feature_shape") {
    cfg.data.feature_shape = to_int_list(v, key);
  } else if (key == "train_examples") {
    cfg.data.train_examples = to_int(v, key);
  } else if (key == "eval_examples") {
    cfg.data.eval_examples = to_int(v, key);
  } else if (key == "separation") {
    cfg.data.separation = to_double(v, key);
  } else if (key == "noise_std") {
    cfg.data.noise_std = to_double(v, key);
  } else if (key == "partition") {
    cfg.data.partition = to_string_val(v, key);
  } else if (key == "alpha") {
    cfg.data.alpha = to_double(v, key);
  } else if (key == "num_clients") {
    cfg.data.num_clients = to_int(v, key);
  } else if (key == "examples_per_client") {
    cfg.data.examples_per_client = to_int(v, key);
  } else {
    throw ConfigError("unknown config key: '" + key + "'");
  }
}

}  // namespace

std::vector<std::string> known_presets() { return {"emnist-cnn", "mixture-mlp"}; }

void apply_preset(ExperimentConfig& cfg, const std::string& name) {
  if (name == "emnist-cnn") {
    // The published character-recognition recipe: 1500 rounds, 20 clients
    // per round, batch 16, client SGD 0.05, server SGD 0.5, over the
    // Table-6 CNN. Data is a desk-scale synthetic stand-in with the same
    // 28x28x1/62-class shape.
    cfg.model = "emnist-cnn";
    cfg.rounds = 1500;
    cfg.clients_per_round = 20;
    cfg.batch_size = 16;
    cfg.client_opt = OptimizerConfig{OptKind::sgd, 0.05};
    cfg.server_opt = OptimizerConfig{OptKind::sgd, 0.5};
    cfg.data.kind = "mixture";
    cfg.data.classes = 62;
    cfg.data.feature_shape = {28, 28, 1};
    cfg.data.train_examples = 2000;
    cfg.data.eval_examples = 500;
    cfg.data.num_clients = 100;
    cfg.data.examples_per_client = 20;
    cfg.data.alpha = 1.0;
  } else if (name == "mixture-mlp") {
    // Desk-scale mixture task: 4 classes in 32 dims at 6-sigma separation,
    // 40 clients x 100 examples with Dirichlet alpha = 1, width-512 MLP.
    cfg.model = "mlp";
    cfg.mlp_dims = {32, 512, 4};
    cfg.rounds = 200;
    cfg.clients_per_round = 10;
    cfg.batch_size = 16;
    cfg.client_opt = OptimizerConfig{OptKind::sgd, 0.1};
    cfg.server_opt = OptimizerConfig{OptKind::sgd, 1.0};
    cfg.data.kind = "mixture";
    cfg.data.classes = 4;
    cfg.data.feature_shape = {32};
    cfg.data.train_examples = 4000;
    cfg.data.eval_examples = 1000;
    cfg.data.separation = 6.0;
    cfg.data.noise_std = 1.0;
    cfg.data.num_clients = 40;
    cfg.data.examples_per_client = 100;
    cfg.data.alpha = 1.0;
  } else {
    throw ConfigError("unknown preset: '" + name + "'");
  }
  cfg.preset = name;
}

ExperimentConfig config_from_table(const TomlTable& table) {
  ExperimentConfig cfg;
  // Preset first so explicit keys override it regardless of file order.
  if (auto it = table.find("preset"); it != table.end()) {
    apply_key(cfg, "preset", it->second);
  }
  for (const auto& [key, value] : table) {
    if (key == "preset") continue;
    apply_key(cfg, key, value);
  }
  validate_config(cfg);
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  return config_from_table(parse_toml_file(path));
}

ExperimentConfig apply_overrides(const ExperimentConfig& base,
                                 const std::vector<std::pair<std::string, TomlValue>>& overrides) {
  ExperimentConfig cfg = base;
  for (const auto& [key, value] : overrides) apply_key(cfg, key, value);
  validate_config(cfg);
  return cfg;
}

ModelSpec make_model_spec(const ExperimentConfig& cfg) {
  if (cfg.model == "emnist-cnn") return emnist_cnn_spec(cfg.groupnorm_groups);
  if (cfg.model == "mlp") {
    if (cfg.mlp_dims.empty()) throw ConfigError("missing required field: mlp_dims");
    return mlp_spec(cfg.mlp_dims);
  }
  throw ConfigError("unknown model: '" + cfg.model + "' (expected emnist-cnn|mlp)");
}

FreezePlan make_freeze_plan(const ExperimentConfig& cfg) {
  return FreezePlan{cfg.freeze, cfg.protect_norm};
}

void validate_config(const ExperimentConfig& cfg) {
  if (cfg.rounds < 1) throw ConfigError("rounds must be >= 1");
  if (cfg.clients_per_round < 1) throw ConfigError("clients_per_round must be >= 1");
  if (cfg.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (cfg.eval_every < 1) throw ConfigError("eval_every must be >= 1");
  if (cfg.threads < 1) throw ConfigError("threads must be >= 1");
  if (cfg.local_steps && *cfg.local_steps < 0) throw ConfigError("local_steps must be >= 0");
  if (cfg.client_opt.lr < 0 || cfg.server_opt.lr < 0) {
    throw ConfigError("learning rates must be non-negative");
  }
  if (cfg.weighting != "examples" && cfg.weighting != "uniform") {
    throw ConfigError("weighting must be examples|uniform");
  }
  if (cfg.clip_norm && !(*cfg.clip_norm > 0.0)) throw ConfigError("clip_norm must be positive");

  if (cfg.dp) {
    if (!(cfg.dp_cfg.clip_norm > 0.0)) throw ConfigError("dp requires clip_norm > 0");
    if (cfg.dp_cfg.noise_multiplier < 0.0) throw ConfigError("noise_multiplier must be >= 0");
    if (cfg.dp_cfg.report_goal < 1) throw ConfigError("report_goal must be >= 1");
    if (cfg.server_opt.kind == OptKind::adam) {
      throw ConfigError("the dp server path supports sgd or sgdm, not adam");
    }
  }

  if (cfg.fedavg_baseline && !cfg.freeze.empty()) {
    throw ConfigError("fedavg_baseline requires an empty freeze plan");
  }

  const DataConfig& d = cfg.data;
  if (d.kind != "mixture") throw ConfigError("unknown data kind: '" + d.kind + "'");
  if (d.classes < 2) throw ConfigError("classes must be >= 2");
  if (d.train_examples < d.classes) throw ConfigError("train_examples too small");
  if (d.eval_examples < 1) throw ConfigError("eval_examples must be >= 1");
  if (!(d.alpha > 0.0)) throw ConfigError("alpha must be positive");
  if (d.separation < 0.0 || d.noise_std < 0.0) {
    throw ConfigError("separation and noise_std must be non-negative");
  }
  if (d.num_clients < 1) throw ConfigError("num_clients must be >= 1");
  if (d.examples_per_client < 0) throw ConfigError("examples_per_client must be >= 0");
  if (d.partition != "dirichlet" && d.partition != "shard") {
    throw ConfigError("partition must be dirichlet|shard");
  }
  if (d.examples_per_client > 0 &&
      static_cast<int64_t>(d.examples_per_client) * d.num_clients > d.train_examples) {
    throw ConfigError("num_clients * examples_per_client exceeds train_examples");
  }
  if (d.examples_per_client == 0 && d.train_examples < d.num_clients) {
    throw ConfigError("fewer training examples than clients");
  }
  if (cfg.clients_per_round > d.num_clients) {
    throw ConfigError("clients_per_round exceeds num_clients");
  }

  // Model/data shape agreement, and plan names against the spec.
  const ModelSpec spec = make_model_spec(cfg);
  int64_t feat = 1;
  for (int x : d.feature_shape) feat *= x;
  int64_t in = 1;
  for (int x : spec.input_shape) in *= x;
  if (spec.input_shape.size() > 1 && spec.input_shape != d.feature_shape) {
    throw ConfigError("feature_shape does not match the model input shape");
  }
  if (feat != in) throw ConfigError("feature_shape size does not match the model input size");
  const BuiltModel m = build_model(spec);
  if (m.num_classes() != d.classes) {
    throw ConfigError("classes (" + std::to_string(d.classes) +
                      ") does not match the model output (" + std::to_string(m.num_classes()) +
                      ")");
  }
  trainable_fraction(make_freeze_plan(cfg), spec);  // validates plan names
}

namespace {

nlohmann::json spec_to_json(const ModelSpec& spec) {
  nlohmann::json layers = nlohmann::json::array();
  for (const LayerSpec& l : spec.layers) {
    layers.push_back({{"kind", layer_kind_name(l.kind)},
                      {"name", l.name},
                      {"units", l.units},
                      {"kernel", l.kernel},
                      {"channels", l.channels},
                      {"groups", l.groups}});
  }
  return {{"input_shape", spec.input_shape}, {"layers", layers}};
}

LayerKind layer_kind_from_name(const std::string& s) {
  if (s == "dense") return LayerKind::dense;
  if (s == "conv2d") return LayerKind::conv2d;
  if (s == "groupnorm") return LayerKind::groupnorm;
  if (s == "maxpool") return LayerKind::maxpool;
  if (s == "flatten") return LayerKind::flatten;
  if (s == "relu") return LayerKind::relu;
  throw FormatError("unknown layer kind in checkpoint: " + s);
}

ModelSpec spec_from_json(const nlohmann::json& j) {
  ModelSpec spec;
  spec.input_shape = j.at("input_shape").get<std::vector<int>>();
  for (const auto& l : j.at("layers")) {
    spec.layers.push_back({layer_kind_from_name(l.at("kind").get<std::string>()),
                           l.at("name").get<std::string>(), l.at("units").get<int>(),
                           l.at("kernel").get<int>(), l.at("channels").get<int>(),
                           l.at("groups").get<int>()});
  }
  return spec;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const PartitionedParams& params) {
  nlohmann::json header;
  header["format"] = "fedpt-checkpoint-v1";
  header["spec"] = spec_to_json(params.spec);
  header["plan"] = {{"frozen", params.plan.frozen_layers},
                    {"protect_norm", params.plan.protect_norm}};
  header["z"] = params.master_seed;
  header["y_bytes"] = static_cast<int64_t>(params.y.size()) * 4;

  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << header.dump() << '\n';
  f.write(reinterpret_cast<const char*>(params.y.data()),
          static_cast<std::streamsize>(params.y.size()) * 4);
  if (!f.good()) throw IoError("write failed: " + path.string());
}

PartitionedParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(f, line)) throw FormatError("missing checkpoint header");
  nlohmann::json header = nlohmann::json::parse(line, nullptr, false);
  if (header.is_discarded() || header.value("format", "") != "fedpt-checkpoint-v1") {
    throw FormatError("not a fedpt checkpoint: " + path.string());
  }

  PartitionedParams p;
  p.spec = spec_from_json(header.at("spec"));
  p.plan.frozen_layers = header.at("plan").at("frozen").get<std::vector<std::string>>();
  p.plan.protect_norm = header.at("plan").at("protect_norm").get<bool>();
  p.master_seed = header.at("z").get<uint64_t>();

  BuiltModel m = build_model(p.spec);
  p.blocks = std::move(m.blocks);
  detail::resolve_trainable_flags(p.blocks, p.plan);

  const int64_t y_bytes = header.at("y_bytes").get<int64_t>();
  if (y_bytes != trainable_count(p.blocks) * 4) {
    throw IntegrityError("checkpoint y length does not match its plan");
  }
  p.y.resize(y_bytes / 4);
  f.read(reinterpret_cast<char*>(p.y.data()), y_bytes);
  if (!f.good()) throw FormatError("truncated checkpoint: " + path.string());
  return p;
}

}  // namespace fedpt
