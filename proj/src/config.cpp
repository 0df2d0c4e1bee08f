#include "deltasub/config.hpp"

#include <fstream>
#include <sstream>

namespace deltasub {

namespace {

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

ConfigFile ConfigFile::parse(const std::string& text) {
  ConfigFile cfg;
  std::istringstream in(text);
  std::string line;
  std::string current;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    size_t comment = line.find_first_of("#;");
    if (comment != std::string::npos) line = line.substr(0, comment);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigInvalidError("unterminated section header at line " + std::to_string(line_no));
      current = trim(line.substr(1, line.size() - 2));
      if (current.empty())
        throw ConfigInvalidError("empty section name at line " + std::to_string(line_no));
      cfg.set(current, "", "");  // ensure section exists even if empty
      continue;
    }
    size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigInvalidError("expected key = value at line " + std::to_string(line_no));
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw ConfigInvalidError("empty key at line " + std::to_string(line_no));
    if (current.empty())
      throw ConfigInvalidError("key before any [section] at line " + std::to_string(line_no));
    cfg.set(current, key, value);
  }
  return cfg;
}

ConfigFile ConfigFile::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in.is_open()) throw ConfigInvalidError("cannot open config file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

void ConfigFile::set(const std::string& section, const std::string& key,
                     const std::string& value) {
  Section* sec = nullptr;
  for (auto& s : sections_)
    if (s.name == section) {
      sec = &s;
      break;
    }
  if (!sec) {
    sections_.push_back(Section{section, {}});
    sec = &sections_.back();
  }
  if (key.empty()) return;
  for (auto& [k, v] : sec->entries)
    if (k == key) {
      v = value;
      return;
    }
  sec->entries.emplace_back(key, value);
}

const std::string* ConfigFile::find(const std::string& section, const std::string& key) const {
  for (const auto& s : sections_)
    if (s.name == section)
      for (const auto& [k, v] : s.entries)
        if (k == key) return &v;
  return nullptr;
}

bool ConfigFile::has(const std::string& section, const std::string& key) const {
  return find(section, key) != nullptr;
}

std::string ConfigFile::get(const std::string& section, const std::string& key) const {
  const auto* v = find(section, key);
  if (!v) throw ConfigInvalidError("missing config key [" + section + "] " + key);
  return *v;
}

std::string ConfigFile::get_or(const std::string& section, const std::string& key,
                               const std::string& fallback) const {
  const auto* v = find(section, key);
  return v ? *v : fallback;
}

int ConfigFile::get_int(const std::string& section, const std::string& key, int fallback) const {
  const auto* v = find(section, key);
  if (!v) return fallback;
  try {
    return std::stoi(*v);
  } catch (const std::exception&) {
    throw ConfigInvalidError("[" + section + "] " + key + " is not an integer: " + *v);
  }
}

float ConfigFile::get_float(const std::string& section, const std::string& key,
                            float fallback) const {
  const auto* v = find(section, key);
  if (!v) return fallback;
  try {
    return std::stof(*v);
  } catch (const std::exception&) {
    throw ConfigInvalidError("[" + section + "] " + key + " is not a number: " + *v);
  }
}

bool ConfigFile::get_bool(const std::string& section, const std::string& key,
                          bool fallback) const {
  const auto* v = find(section, key);
  if (!v) return fallback;
  if (*v == "true" || *v == "1" || *v == "yes") return true;
  if (*v == "false" || *v == "0" || *v == "no") return false;
  throw ConfigInvalidError("[" + section + "] " + key + " is not a boolean: " + *v);
}

uint64_t ConfigFile::get_u64(const std::string& section, const std::string& key,
                             uint64_t fallback) const {
  const auto* v = find(section, key);
  if (!v) return fallback;
  try {
    return std::stoull(*v);
  } catch (const std::exception&) {
    throw ConfigInvalidError("[" + section + "] " + key + " is not an integer: " + *v);
  }
}

std::string ConfigFile::dump() const {
  std::string out;
  for (const auto& s : sections_) {
    out += "[" + s.name + "]\n";
    for (const auto& [k, v] : s.entries) out += k + " = " + v + "\n";
    out += "\n";
  }
  return out;
}

const char* variant_name(ApproxVariant v) {
  return v == ApproxVariant::Decomposed ? "decomposed" : "shared";
}

const char* mode_name(RegistryMode m) { return m == RegistryMode::Single ? "single" : "multi"; }

float ExperimentConfig::pet_lr(PetKind kind) const {
  switch (kind) {
    case PetKind::Adapter: return lr_adapter;
    case PetKind::Prefix: return lr_prefix;
    case PetKind::Lora: return lr_lora;
    default: return lr_finetune;
  }
}

float ExperimentConfig::pet_sigma(PetKind kind) const {
  switch (kind) {
    case PetKind::Adapter: return sigma_adapter;
    case PetKind::Prefix: return sigma_prefix;
    case PetKind::Lora: return sigma_lora;
    default: return 0.0f;
  }
}

ExperimentConfig ExperimentConfig::from_file(const std::filesystem::path& path) {
  return from_config(ConfigFile::load(path));
}

ExperimentConfig ExperimentConfig::from_config(const ConfigFile& file) {
  ExperimentConfig cfg;
  const std::string mode = file.get_or("experiment", "mode", "single");
  if (mode == "single")
    cfg.mode = RegistryMode::Single;
  else if (mode == "multi")
    cfg.mode = RegistryMode::Multi;
  else
    throw ConfigInvalidError("mode must be single or multi, got " + mode);

  const std::string variant = file.get_or("experiment", "variant", "decomposed");
  if (variant == "decomposed")
    cfg.variant = ApproxVariant::Decomposed;
  else if (variant == "shared")
    cfg.variant = ApproxVariant::Shared;
  else
    throw ConfigInvalidError("variant must be decomposed or shared, got " + variant);

  cfg.include_finetune = file.get_bool("experiment", "include_finetune", false);
  cfg.seed = file.get_u64("experiment", "seed", 42);
  cfg.output = file.get("experiment", "output");

  cfg.model.n_layers = file.get_int("model", "n_layers", 2);
  cfg.model.d = file.get_int("model", "d", 32);
  cfg.model.n_heads = file.get_int("model", "n_heads", 4);
  cfg.model.d_m = file.get_int("model", "d_m", 64);
  cfg.model.vocab = file.get_int("model", "vocab", 32);
  cfg.model.max_len = file.get_int("model", "max_len", 16);
  cfg.model.seed = file.get_u64("model", "seed", cfg.seed);
  cfg.pretrain_steps = file.get_int("model", "pretrain_steps", 900);
  cfg.pretrain_lr = file.get_float("model", "pretrain_lr", 3e-3f);
  cfg.pretrain_batch = file.get_int("model", "pretrain_batch", 8);

  cfg.hyper.r_adapter = file.get_int("pet", "r_adapter", 6);
  cfg.hyper.r_lora = file.get_int("pet", "r_lora", 6);
  cfg.hyper.prefix_tokens = file.get_int("pet", "prefix_tokens", 8);
  cfg.hyper.prefix_hidden = file.get_int("pet", "prefix_hidden", 8);
  cfg.hyper.lora_scale = file.get_float("pet", "lora_scale", 1.6f);
  cfg.pet_train.steps = file.get_int("pet", "steps", 600);
  cfg.pet_train.batch = file.get_int("pet", "batch", 8);
  cfg.pet_train.eval_every = file.get_int("pet", "eval_every", 25);
  cfg.lr_adapter = file.get_float("pet", "lr_adapter", 2e-2f);
  cfg.lr_prefix = file.get_float("pet", "lr_prefix", 3e-2f);
  cfg.lr_lora = file.get_float("pet", "lr_lora", 1e-2f);
  cfg.lr_finetune = file.get_float("pet", "lr_finetune", 2e-3f);
  cfg.sigma_adapter = file.get_float("pet", "sigma_adapter", 0.02f);
  cfg.sigma_prefix = file.get_float("pet", "sigma_prefix", 0.1f);
  cfg.sigma_lora = file.get_float("pet", "sigma_lora", 0.02f);

  cfg.approx.y = file.get_int("subspace", "y", cfg.mode == RegistryMode::Single ? 4 : 16);
  cfg.approx.dist_weight = file.get_float("approx", "dist_weight", 10.0f);
  cfg.approx.lr_proj = file.get_float("approx", "lr_proj", 2e-3f);
  cfg.approx.lr_shared_intrinsic = file.get_float("approx", "lr_shared_intrinsic", 2e-2f);
  cfg.approx.steps = file.get_int("approx", "steps", 2000);
  cfg.approx.batch = file.get_int("approx", "batch", 4);
  cfg.approx.eval_every = file.get_int("approx", "eval_every", 50);
  cfg.approx.task_loss = file.get_bool("approx", "task_loss", true);
  cfg.approx.init_sigma_up = file.get_float("approx", "init_sigma_up", 0.01f);
  cfg.approx.seed = file.get_u64("approx", "seed", cfg.seed);

  cfg.approx.opt_steps = file.get_int("optimize", "steps", 300);
  cfg.approx.lr_intrinsic = file.get_float("optimize", "lr", 5e-2f);
  if (file.has("optimize", "lr_grid")) {
    std::string grid = file.get("optimize", "lr_grid");
    size_t start = 0;
    while (start < grid.size()) {
      size_t comma = grid.find(',', start);
      const std::string item =
          grid.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
      try {
        cfg.approx.opt_lr_grid.push_back(std::stof(item));
      } catch (const std::exception&) {
        throw ConfigInvalidError("[optimize] lr_grid has a non-numeric entry: " + item);
      }
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
  }
  cfg.approx.opt_batch = file.get_int("optimize", "batch", 8);
  cfg.approx.opt_eval_every = file.get_int("optimize", "eval_every", 20);
  cfg.approx.opt_init_sigma = file.get_float("optimize", "init_sigma", 1.0f);
  cfg.approx.fastfood_gain = file.get_float("approx", "fastfood_gain", 1.0f);
  const std::string sel = file.get_or("optimize", "selection", "target-dev");
  if (sel == "target-dev")
    cfg.selection = TransferSelection::TargetDev;
  else if (sel == "source-best")
    cfg.selection = TransferSelection::SourceBest;
  else
    throw ConfigInvalidError("selection must be target-dev or source-best, got " + sel);

  cfg.landscape_range = file.get_float("landscape", "range", 4.0f);
  cfg.landscape_step = file.get_float("landscape", "step", 0.4f);
  cfg.landscape_cap = file.get_int("landscape", "cap", 256);
  cfg.landscape_threads = file.get_int("landscape", "threads", 0);
  cfg.landscape_task = file.get_or("landscape", "task", "");

  cfg.task_seq_len = file.get_int("tasks", "seq_len", 12);
  cfg.task_n_train = file.get_int("tasks", "n_train", 192);
  cfg.task_n_dev = file.get_int("tasks", "n_dev", 96);
  cfg.task_n_test = file.get_int("tasks", "n_test", 192);

  cfg.validate();
  return cfg;
}

void ExperimentConfig::validate() const {
  model.validate();
  if (output.empty()) throw ConfigInvalidError("[experiment] output is required");
  if (include_finetune && variant != ApproxVariant::Shared)
    throw ConfigInvalidError("the fine-tuning extension runs on the shared variant only");
  approx.validate();
  check_parity(hyper, model);
}

std::string ExperimentConfig::resolved_dump() const {
  ConfigFile out;
  auto s = [&](const std::string& sec, const std::string& key, const std::string& v) {
    out.set(sec, key, v);
  };
  auto f = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%g", v);
    return std::string(buf);
  };
  s("experiment", "mode", mode_name(mode));
  s("experiment", "variant", variant_name(variant));
  s("experiment", "include_finetune", include_finetune ? "true" : "false");
  s("experiment", "seed", std::to_string(seed));
  s("experiment", "output", output.string());
  s("model", "n_layers", std::to_string(model.n_layers));
  s("model", "d", std::to_string(model.d));
  s("model", "n_heads", std::to_string(model.n_heads));
  s("model", "d_m", std::to_string(model.d_m));
  s("model", "vocab", std::to_string(model.vocab));
  s("model", "max_len", std::to_string(model.max_len));
  s("model", "seed", std::to_string(model.seed));
  s("model", "pretrain_steps", std::to_string(pretrain_steps));
  s("model", "pretrain_lr", f(pretrain_lr));
  s("model", "pretrain_batch", std::to_string(pretrain_batch));
  s("pet", "r_adapter", std::to_string(hyper.r_adapter));
  s("pet", "r_lora", std::to_string(hyper.r_lora));
  s("pet", "prefix_tokens", std::to_string(hyper.prefix_tokens));
  s("pet", "prefix_hidden", std::to_string(hyper.prefix_hidden));
  s("pet", "lora_scale", f(hyper.lora_scale));
  s("pet", "steps", std::to_string(pet_train.steps));
  s("pet", "batch", std::to_string(pet_train.batch));
  s("pet", "eval_every", std::to_string(pet_train.eval_every));
  s("pet", "lr_adapter", f(lr_adapter));
  s("pet", "lr_prefix", f(lr_prefix));
  s("pet", "lr_lora", f(lr_lora));
  s("pet", "lr_finetune", f(lr_finetune));
  s("pet", "sigma_adapter", f(sigma_adapter));
  s("pet", "sigma_prefix", f(sigma_prefix));
  s("pet", "sigma_lora", f(sigma_lora));
  s("subspace", "y", std::to_string(approx.y));
  s("approx", "dist_weight", f(approx.dist_weight));
  s("approx", "lr_proj", f(approx.lr_proj));
  s("approx", "lr_shared_intrinsic", f(approx.lr_shared_intrinsic));
  s("approx", "steps", std::to_string(approx.steps));
  s("approx", "batch", std::to_string(approx.batch));
  s("approx", "eval_every", std::to_string(approx.eval_every));
  s("approx", "task_loss", approx.task_loss ? "true" : "false");
  s("approx", "init_sigma_up", f(approx.init_sigma_up));
  s("approx", "fastfood_gain", f(approx.fastfood_gain));
  s("approx", "seed", std::to_string(approx.seed));
  s("optimize", "steps", std::to_string(approx.opt_steps));
  s("optimize", "lr", f(approx.lr_intrinsic));
  if (!approx.opt_lr_grid.empty()) {
    std::string grid;
    for (size_t i = 0; i < approx.opt_lr_grid.size(); ++i) {
      if (i) grid += ",";
      grid += f(approx.opt_lr_grid[i]);
    }
    s("optimize", "lr_grid", grid);
  }
  s("optimize", "batch", std::to_string(approx.opt_batch));
  s("optimize", "eval_every", std::to_string(approx.opt_eval_every));
  s("optimize", "init_sigma", f(approx.opt_init_sigma));
  s("optimize", "selection",
    selection == TransferSelection::TargetDev ? "target-dev" : "source-best");
  s("landscape", "range", f(landscape_range));
  s("landscape", "step", f(landscape_step));
  s("landscape", "cap", std::to_string(landscape_cap));
  s("landscape", "threads", std::to_string(landscape_threads));
  if (!landscape_task.empty()) s("landscape", "task", landscape_task);
  s("tasks", "seq_len", std::to_string(task_seq_len));
  s("tasks", "n_train", std::to_string(task_n_train));
  s("tasks", "n_dev", std::to_string(task_n_dev));
  s("tasks", "n_test", std::to_string(task_n_test));
  return out.dump();
}

}  // namespace deltasub
