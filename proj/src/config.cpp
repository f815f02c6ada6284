// SPDX-License-Identifier: Apache-2.0
#include "relearn/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <memory>
#include <sstream>

#include "relearn/errors.hpp"

namespace relearn {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t x = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'", key);
  }
  return x;
}

std::size_t to_size(const std::string& key, const std::string& v) { return static_cast<std::size_t>(to_u64(key, v)); }

double to_double(const std::string& key, const std::string& v) {
  double x = 0.0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
  if (ec != std::errc() || p != v.data() + v.size() || !std::isfinite(x)) {
    throw ConfigError(key + ": expected a number, got '" + v + "'", key);
  }
  return x;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'", key);
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<std::size_t> to_sizes(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  for (const auto& s : split_list(v)) out.push_back(to_size(key, s));
  return out;
}

std::vector<double> to_doubles(const std::string& key, const std::string& v) {
  std::vector<double> out;
  for (const auto& s : split_list(v)) out.push_back(to_double(key, s));
  return out;
}

std::string fmt(double v) {
  char buf[32];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

std::string fmt(bool v) { return v ? "true" : "false"; }

template <typename T>
std::string fmt_list(const std::vector<T>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ',';
    if constexpr (std::is_floating_point_v<T>) {
      s += fmt(v[i]);
    } else {
      s += std::to_string(v[i]);
    }
  }
  return s;
}

struct Key {
  std::string name;
  std::string doc;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

const std::vector<Key>& keys() {
  static const std::vector<Key> table = {
      {"preset", "desk (E=20, k=5) or paper (E=160, k=40)",
       [](RunConfig& c, const std::string& v) { c.preset = v; }, [](const RunConfig& c) { return c.preset; }},
      // schedule
      {"generations", "number of generations G",
       [](RunConfig& c, const std::string& v) { c.schedule.generations = to_size("generations", v); },
       [](const RunConfig& c) { return std::to_string(c.schedule.generations); }},
      {"epochs", "epochs per generation E",
       [](RunConfig& c, const std::string& v) { c.schedule.epochs = to_size("epochs", v); },
       [](const RunConfig& c) { return std::to_string(c.schedule.epochs); }},
      {"k", "ascent epochs per generation; default floor(E/4)",
       [](RunConfig& c, const std::string& v) {
         if (v == "auto") {
           c.schedule.ascent_epochs.reset();
         } else {
           c.schedule.ascent_epochs = to_size("k", v);
         }
       },
       [](const RunConfig& c) {
         return c.schedule.ascent_epochs ? std::to_string(*c.schedule.ascent_epochs) : std::string("auto");
       }},
      {"lr", "initial learning rate",
       [](RunConfig& c, const std::string& v) { c.schedule.lr = to_double("lr", v); },
       [](const RunConfig& c) { return fmt(c.schedule.lr); }},
      {"ascent_scale", "ascent learning rate multiplier S",
       [](RunConfig& c, const std::string& v) { c.schedule.ascent_scale = to_double("ascent_scale", v); },
       [](const RunConfig& c) { return fmt(c.schedule.ascent_scale); }},
      {"momentum", "SGD momentum",
       [](RunConfig& c, const std::string& v) { c.schedule.momentum = to_double("momentum", v); },
       [](const RunConfig& c) { return fmt(c.schedule.momentum); }},
      {"weight_decay", "weight decay",
       [](RunConfig& c, const std::string& v) { c.schedule.weight_decay = to_double("weight_decay", v); },
       [](const RunConfig& c) { return fmt(c.schedule.weight_decay); }},
      {"batch_size", "mini-batch size",
       [](RunConfig& c, const std::string& v) { c.schedule.batch_size = to_size("batch_size", v); },
       [](const RunConfig& c) { return std::to_string(c.schedule.batch_size); }},
      {"smoothing", "label smoothing alpha",
       [](RunConfig& c, const std::string& v) { c.schedule.smoothing = to_double("smoothing", v); },
       [](const RunConfig& c) { return fmt(c.schedule.smoothing); }},
      {"strategy", "normal, normal-long, llf, seal, seal+freeze, seal+reinit, seal+reverse",
       [](RunConfig& c, const std::string& v) { c.schedule.strategy = parse_strategy(v); },
       [](const RunConfig& c) { return std::string(strategy_name(c.schedule.strategy)); }},
      {"threshold", "layer threshold L; default floor(depth/2)",
       [](RunConfig& c, const std::string& v) {
         if (v == "auto") {
           c.schedule.threshold.reset();
         } else {
           c.schedule.threshold = to_size("threshold", v);
         }
       },
       [](const RunConfig& c) {
         return c.schedule.threshold ? std::to_string(*c.schedule.threshold) : std::string("auto");
       }},
      {"seed", "run seed: initialization, shuffling, re-initialization",
       [](RunConfig& c, const std::string& v) { c.schedule.seed = to_u64("seed", v); },
       [](const RunConfig& c) { return std::to_string(c.schedule.seed); }},
      {"flip", "random horizontal flips (images)",
       [](RunConfig& c, const std::string& v) { c.schedule.flip = to_bool("flip", v); },
       [](const RunConfig& c) { return fmt(c.schedule.flip); }},
      {"crop_pad", "random-crop padding (images)",
       [](RunConfig& c, const std::string& v) { c.schedule.crop_pad = to_size("crop_pad", v); },
       [](const RunConfig& c) { return std::to_string(c.schedule.crop_pad); }},
      // data
      {"dataset", "teacher, blobs, spirals, idx or csv",
       [](RunConfig& c, const std::string& v) {
         if (v != "teacher" && v != "blobs" && v != "spirals" && v != "idx" && v != "csv") {
           throw ConfigError("dataset: unknown kind '" + v + "'", "dataset");
         }
         c.data.kind = v;
       },
       [](const RunConfig& c) { return c.data.kind; }},
      {"classes", "synthetic class count",
       [](RunConfig& c, const std::string& v) { c.data.params.classes = to_size("classes", v); },
       [](const RunConfig& c) { return std::to_string(c.data.params.classes); }},
      {"per_class", "synthetic samples per class",
       [](RunConfig& c, const std::string& v) { c.data.params.per_class = to_size("per_class", v); },
       [](const RunConfig& c) { return std::to_string(c.data.params.per_class); }},
      {"dim", "synthetic input dimension",
       [](RunConfig& c, const std::string& v) { c.data.params.dim = to_size("dim", v); },
       [](const RunConfig& c) { return std::to_string(c.data.params.dim); }},
      {"separation", "blob centre spread",
       [](RunConfig& c, const std::string& v) { c.data.params.separation = to_double("separation", v); },
       [](const RunConfig& c) { return fmt(c.data.params.separation); }},
      {"noise", "spiral noise",
       [](RunConfig& c, const std::string& v) { c.data.params.noise = to_double("noise", v); },
       [](const RunConfig& c) { return fmt(c.data.params.noise); }},
      {"turns", "spiral revolutions",
       [](RunConfig& c, const std::string& v) { c.data.params.turns = to_double("turns", v); },
       [](const RunConfig& c) { return fmt(c.data.params.turns); }},
      {"teacher_width", "teacher hidden width",
       [](RunConfig& c, const std::string& v) { c.data.params.teacher_width = to_size("teacher_width", v); },
       [](const RunConfig& c) { return std::to_string(c.data.params.teacher_width); }},
      {"teacher_depth", "teacher hidden layers",
       [](RunConfig& c, const std::string& v) { c.data.params.teacher_depth = to_size("teacher_depth", v); },
       [](const RunConfig& c) { return std::to_string(c.data.params.teacher_depth); }},
      {"image", "optional C,H,W reshaping of synthetic samples",
       [](RunConfig& c, const std::string& v) { c.data.params.image = to_sizes("image", v); },
       [](const RunConfig& c) { return fmt_list(c.data.params.image); }},
      {"data_path", "csv file or idx image file",
       [](RunConfig& c, const std::string& v) { c.data.path = v; }, [](const RunConfig& c) { return c.data.path; }},
      {"label_path", "idx label file",
       [](RunConfig& c, const std::string& v) { c.data.label_path = v; },
       [](const RunConfig& c) { return c.data.label_path; }},
      {"test_fraction", "held-out share of every class",
       [](RunConfig& c, const std::string& v) { c.data.test_fraction = to_double("test_fraction", v); },
       [](const RunConfig& c) { return fmt(c.data.test_fraction); }},
      {"data_seed", "dataset generation and split seed",
       [](RunConfig& c, const std::string& v) { c.data.seed = to_u64("data_seed", v); },
       [](const RunConfig& c) { return std::to_string(c.data.seed); }},
      // model
      {"arch", "mlp or cnn",
       [](RunConfig& c, const std::string& v) {
         if (v != "mlp" && v != "cnn") throw ConfigError("arch: expected mlp or cnn, got '" + v + "'", "arch");
         c.model.arch = v;
       },
       [](const RunConfig& c) { return c.model.arch; }},
      {"hidden", "mlp hidden widths",
       [](RunConfig& c, const std::string& v) { c.model.hidden = to_sizes("hidden", v); },
       [](const RunConfig& c) { return fmt_list(c.model.hidden); }},
      {"conv_channels", "cnn block widths",
       [](RunConfig& c, const std::string& v) { c.model.conv_channels = to_sizes("conv_channels", v); },
       [](const RunConfig& c) { return fmt_list(c.model.conv_channels); }},
      {"pool", "cnn max-pool flags per block (0 or 1)",
       [](RunConfig& c, const std::string& v) { c.model.pool = to_sizes("pool", v); },
       [](const RunConfig& c) { return fmt_list(c.model.pool); }},
      {"norm_affine", "insert norm-affine layers after hidden layers",
       [](RunConfig& c, const std::string& v) { c.model.norm_affine = to_bool("norm_affine", v); },
       [](const RunConfig& c) { return fmt(c.model.norm_affine); }},
      // diagnostics
      {"knn_k", "neighbours of the k-NN probes",
       [](RunConfig& c, const std::string& v) { c.eval.knn_k = to_size("knn_k", v); },
       [](const RunConfig& c) { return std::to_string(c.eval.knn_k); }},
      {"probe_each_generation", "emit a probe report after every generation",
       [](RunConfig& c, const std::string& v) { c.eval.probe_each_generation = to_bool("probe_each_generation", v); },
       [](const RunConfig& c) { return fmt(c.eval.probe_each_generation); }},
      {"hessian_batch", "training samples in the Hessian batch",
       [](RunConfig& c, const std::string& v) { c.eval.hessian_batch = to_size("hessian_batch", v); },
       [](const RunConfig& c) { return std::to_string(c.eval.hessian_batch); }},
      {"hessian_eps", "finite-difference step of the Hessian",
       [](RunConfig& c, const std::string& v) { c.eval.hessian_eps = to_double("hessian_eps", v); },
       [](const RunConfig& c) { return fmt(c.eval.hessian_eps); }},
      // evaluation
      {"target_seed", "seed of the transfer and few-shot target dataset",
       [](RunConfig& c, const std::string& v) { c.eval.target_seed = to_u64("target_seed", v); },
       [](const RunConfig& c) { return std::to_string(c.eval.target_seed); }},
      {"target_shift", "none, channel-permute, pixelate or invert (images)",
       [](RunConfig& c, const std::string& v) {
         parse_domain_shift(v);
         c.eval.target_shift = v;
       },
       [](const RunConfig& c) { return c.eval.target_shift; }},
      {"transfer_lrs", "linear-probe learning-rate grid",
       [](RunConfig& c, const std::string& v) { c.eval.transfer.lr_grid = to_doubles("transfer_lrs", v); },
       [](const RunConfig& c) { return fmt_list(c.eval.transfer.lr_grid); }},
      {"transfer_epochs", "linear-probe epochs",
       [](RunConfig& c, const std::string& v) { c.eval.transfer.epochs = to_size("transfer_epochs", v); },
       [](const RunConfig& c) { return std::to_string(c.eval.transfer.epochs); }},
      {"transfer_weight_decay", "linear-probe weight decay",
       [](RunConfig& c, const std::string& v) {
         c.eval.transfer.weight_decay = to_double("transfer_weight_decay", v);
       },
       [](const RunConfig& c) { return fmt(c.eval.transfer.weight_decay); }},
      {"n_way", "classes per episode",
       [](RunConfig& c, const std::string& v) { c.eval.fewshot.n_way = to_size("n_way", v); },
       [](const RunConfig& c) { return std::to_string(c.eval.fewshot.n_way); }},
      {"k_shot", "support samples per class",
       [](RunConfig& c, const std::string& v) { c.eval.fewshot.k_shot = to_size("k_shot", v); },
       [](const RunConfig& c) { return std::to_string(c.eval.fewshot.k_shot); }},
      {"q_query", "query samples per class",
       [](RunConfig& c, const std::string& v) { c.eval.fewshot.q_query = to_size("q_query", v); },
       [](const RunConfig& c) { return std::to_string(c.eval.fewshot.q_query); }},
      {"episodes", "few-shot episodes",
       [](RunConfig& c, const std::string& v) { c.eval.fewshot.episodes = to_size("episodes", v); },
       [](const RunConfig& c) { return std::to_string(c.eval.fewshot.episodes); }},
      {"fewshot_mode", "linear or linear+affine",
       [](RunConfig& c, const std::string& v) { c.eval.fewshot.mode = parse_fewshot_mode(v); },
       [](const RunConfig& c) { return std::string(fewshot_mode_name(c.eval.fewshot.mode)); }},
      {"fewshot_steps", "full-support steps per learning rate",
       [](RunConfig& c, const std::string& v) { c.eval.fewshot.steps = to_size("fewshot_steps", v); },
       [](const RunConfig& c) { return std::to_string(c.eval.fewshot.steps); }},
      {"fewshot_lrs", "few-shot learning-rate grid",
       [](RunConfig& c, const std::string& v) { c.eval.fewshot.lr_grid = to_doubles("fewshot_lrs", v); },
       [](const RunConfig& c) { return fmt_list(c.eval.fewshot.lr_grid); }},
  };
  return table;
}

const Key* find_key(const std::string& name) {
  for (const auto& k : keys()) {
    if (k.name == name) return &k;
  }
  return nullptr;
}

void apply_preset(RunConfig& c, const std::string& preset) {
  if (preset == "desk") {
    c.schedule.generations = 10;
    c.schedule.epochs = 20;
  } else if (preset == "paper") {
    c.schedule.generations = 10;
    c.schedule.epochs = 160;
  } else {
    throw ConfigError("preset: unknown preset '" + preset + "'", "preset");
  }
  c.preset = preset;
}

void validate(const RunConfig& c) {
  c.schedule.validate();
  if (!(c.data.test_fraction > 0.0 && c.data.test_fraction < 1.0)) {
    throw ConfigError("test_fraction must be in (0, 1)", "test_fraction");
  }
  if ((c.data.kind == "csv" || c.data.kind == "idx") && c.data.path.empty()) {
    throw ConfigError("dataset " + c.data.kind + " needs data_path", "data_path");
  }
  if (c.data.kind == "idx" && c.data.label_path.empty()) throw ConfigError("dataset idx needs label_path", "label_path");
  if (c.model.arch == "mlp" && c.model.hidden.empty()) throw ConfigError("mlp needs hidden widths", "hidden");
  if (c.model.arch == "cnn") {
    if (c.model.conv_channels.empty()) throw ConfigError("cnn needs conv_channels", "conv_channels");
    if (c.model.pool.size() != c.model.conv_channels.size()) {
      throw ConfigError("pool needs one flag per conv block", "pool");
    }
  }
  if (c.eval.knn_k < 1) throw ConfigError("knn_k must be positive", "knn_k");
  if (!(c.eval.hessian_eps > 0.0)) throw ConfigError("hessian_eps must be positive", "hessian_eps");
  if (c.eval.transfer.lr_grid.empty()) throw ConfigError("transfer_lrs is empty", "transfer_lrs");
  c.eval.fewshot.validate();
}

}  // namespace

ConfigEntries read_config_text(const std::string& text) {
  ConfigEntries out;
  std::stringstream ss(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("config line " + std::to_string(lineno) + ": expected key = value", lineno);
    std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ParseError("config line " + std::to_string(lineno) + ": empty key", lineno);
    out.emplace_back(std::move(key), trim(line.substr(eq + 1)));
  }
  return out;
}

ConfigEntries read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path, "config");
  std::stringstream ss;
  ss << in.rdbuf();
  return read_config_text(ss.str());
}

RunConfig resolve_config(const ConfigEntries& entries) {
  RunConfig c;
  apply_preset(c, "desk");
  for (const auto& [k, v] : entries) {
    if (k == "preset") apply_preset(c, v);
  }
  for (const auto& [k, v] : entries) {
    const Key* key = find_key(k);
    if (!key) throw ConfigError("unknown config key '" + k + "'", k);
    if (k == "preset") continue;
    key->set(c, v);
  }
  validate(c);
  return c;
}

std::map<std::string, std::string> config_values(const RunConfig& config) {
  std::map<std::string, std::string> out;
  for (const auto& k : keys()) out[k.name] = k.get(config);
  return out;
}

std::string canonical_config(const RunConfig& config) {
  std::string s;
  for (const auto& [k, v] : config_values(config)) s += k + "=" + v + "\n";
  return s;
}

std::string run_id(const RunConfig& config) {
  const std::string s = canonical_config(config);
  return crc32_hex(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
}

std::vector<KeyDoc> config_keys() {
  std::vector<KeyDoc> out;
  for (const auto& k : keys()) out.push_back({k.name, k.doc});
  return out;
}

namespace {

Dataset load_source(const DatasetConfig& c, std::uint64_t seed) {
  if (c.kind == "csv") return load_csv(c.path);
  if (c.kind == "idx") return load_idx(c.path, c.label_path);
  return gen_synthetic(parse_synthetic_kind(c.kind), c.params, seed);
}

}  // namespace

std::pair<Dataset, Dataset> load_datasets(const DatasetConfig& config) {
  Dataset all = load_source(config, config.seed);
  const std::vector<double> fractions = {1.0 - config.test_fraction, config.test_fraction};
  auto parts = split_dataset(all, fractions, config.seed);
  parts[0].split = "train";
  parts[1].split = "test";
  return {std::move(parts[0]), std::move(parts[1])};
}

std::pair<Dataset, Dataset> load_target(const RunConfig& config) {
  DatasetConfig t = config.data;
  t.seed = config.eval.target_seed;
  Dataset all = load_source(t, t.seed);
  all = shift_domain(all, parse_domain_shift(config.eval.target_shift), t.seed);
  const std::vector<double> fractions = {1.0 - t.test_fraction, t.test_fraction};
  auto parts = split_dataset(all, fractions, t.seed);
  parts[0].split = "target-train";
  parts[1].split = "target-test";
  return {std::move(parts[0]), std::move(parts[1])};
}

LayeredModel build_model(const ModelConfig& config, const Dataset& data, std::uint64_t seed) {
  LayeredModel m;
  if (config.arch == "mlp") {
    if (data.is_image()) throw ConfigError("mlp needs vector data; use arch = cnn for images", "arch");
    m = make_mlp(data.samples.row_size(), config.hidden, data.classes, config.norm_affine);
  } else {
    if (!data.is_image()) throw ConfigError("cnn needs image data; set image = C,H,W", "arch");
    // std::vector<bool> has no contiguous storage to view as a span.
    std::unique_ptr<bool[]> pool(new bool[config.pool.size()]);
    for (std::size_t i = 0; i < config.pool.size(); ++i) pool[i] = config.pool[i] != 0;
    m = make_cnn(data.samples.dim(1), config.conv_channels, std::span<const bool>(pool.get(), config.pool.size()),
                 data.classes, config.norm_affine);
  }
  Rng rng = stream_rng(seed, Stream::kInit);
  m.initialize(rng);
  return m;
}

}  // namespace relearn
