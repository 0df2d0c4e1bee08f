#include "deltasub/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

namespace deltasub {

using nlohmann::json;

namespace {

constexpr int kSchemaVersion = 1;

std::string hex64(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void write_file(const std::filesystem::path& path, const void* data, size_t n) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out.is_open()) throw ConfigInvalidError("cannot write " + path.string());
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
  if (!out.good()) throw ConfigInvalidError("short write to " + path.string());
}

}  // namespace

CheckpointWriter::CheckpointWriter(std::string kind) : kind_(std::move(kind)) {}

void CheckpointWriter::add_f32(const std::string& name, std::span<const float> values, int rows,
                               int cols) {
  if (values.size() != static_cast<size_t>(rows) * cols)
    throw ShapeMismatchError("checkpoint array " + name + " shape mismatch");
  Array a{name, "f32", rows, cols, payload_.size()};
  const auto* bytes = reinterpret_cast<const unsigned char*>(values.data());
  payload_.insert(payload_.end(), bytes, bytes + values.size() * sizeof(float));
  arrays_.push_back(std::move(a));
}

void CheckpointWriter::add_i32(const std::string& name, std::span<const int32_t> values, int rows,
                               int cols) {
  if (values.size() != static_cast<size_t>(rows) * cols)
    throw ShapeMismatchError("checkpoint array " + name + " shape mismatch");
  Array a{name, "i32", rows, cols, payload_.size()};
  const auto* bytes = reinterpret_cast<const unsigned char*>(values.data());
  payload_.insert(payload_.end(), bytes, bytes + values.size() * sizeof(int32_t));
  arrays_.push_back(std::move(a));
}

void CheckpointWriter::meta(const std::string& key, const std::string& value) {
  meta_str_[key] = value;
}
void CheckpointWriter::meta(const std::string& key, double value) { meta_num_[key] = value; }
void CheckpointWriter::meta(const std::string& key, uint64_t value) { meta_u64_[key] = value; }

void CheckpointWriter::write(const std::filesystem::path& base) const {
  json manifest;
  manifest["schema_version"] = kSchemaVersion;
  manifest["kind"] = kind_;
  manifest["encoding"] = "le";
  manifest["payload_bytes"] = payload_.size();
  manifest["content_hash"] = hex64(fnv1a64(payload_.data(), payload_.size()));
  json arrays = json::array();
  for (const auto& a : arrays_) {
    arrays.push_back({{"name", a.name},
                      {"dtype", a.dtype},
                      {"rows", a.rows},
                      {"cols", a.cols},
                      {"byte_offset", a.byte_offset}});
  }
  manifest["arrays"] = arrays;
  manifest["meta_str"] = meta_str_;
  manifest["meta_num"] = meta_num_;
  manifest["meta_u64"] = meta_u64_;

  std::filesystem::create_directories(base.parent_path());
  const std::string text = manifest.dump(2);
  write_file(base.string() + ".json", text.data(), text.size());
  write_file(base.string() + ".bin", payload_.data(), payload_.size());
}

bool CheckpointReader::exists(const std::filesystem::path& base) {
  return std::filesystem::exists(base.string() + ".json") &&
         std::filesystem::exists(base.string() + ".bin");
}

CheckpointReader CheckpointReader::load(const std::filesystem::path& base) {
  std::ifstream mf(base.string() + ".json");
  if (!mf.is_open()) throw MissingArtifactError("no checkpoint manifest at " + base.string());
  json manifest;
  try {
    mf >> manifest;
  } catch (const json::exception& e) {
    throw CorruptCheckpointError("unreadable manifest " + base.string() + ": " + e.what());
  }

  CheckpointReader r;
  try {
    if (manifest.at("schema_version").get<int>() != kSchemaVersion)
      throw CorruptCheckpointError("unsupported schema version in " + base.string());
    r.kind_ = manifest.at("kind").get<std::string>();

    std::ifstream pf(base.string() + ".bin", std::ios::binary);
    if (!pf.is_open()) throw MissingArtifactError("no checkpoint payload at " + base.string());
    r.payload_.assign(std::istreambuf_iterator<char>(pf), std::istreambuf_iterator<char>());
    if (r.payload_.size() != manifest.at("payload_bytes").get<size_t>())
      throw CorruptCheckpointError("payload size mismatch in " + base.string());
    if (hex64(fnv1a64(r.payload_.data(), r.payload_.size())) !=
        manifest.at("content_hash").get<std::string>())
      throw CorruptCheckpointError("payload hash mismatch in " + base.string());

    for (const auto& a : manifest.at("arrays")) {
      Array arr{a.at("dtype").get<std::string>(), a.at("rows").get<int>(),
                a.at("cols").get<int>(), a.at("byte_offset").get<size_t>()};
      const size_t elem = arr.dtype == "f32" ? sizeof(float) : sizeof(int32_t);
      const size_t extent = static_cast<size_t>(arr.rows) * arr.cols * elem;
      if (arr.byte_offset + extent > r.payload_.size())
        throw CorruptCheckpointError("array overruns payload in " + base.string());
      r.arrays_.emplace(a.at("name").get<std::string>(), arr);
    }
    if (manifest.contains("meta_str"))
      r.meta_str_ = manifest["meta_str"].get<std::map<std::string, std::string>>();
    if (manifest.contains("meta_num"))
      r.meta_num_ = manifest["meta_num"].get<std::map<std::string, double>>();
    if (manifest.contains("meta_u64"))
      r.meta_u64_ = manifest["meta_u64"].get<std::map<std::string, uint64_t>>();
  } catch (const json::exception& e) {
    throw CorruptCheckpointError("malformed manifest " + base.string() + ": " + e.what());
  }
  return r;
}

bool CheckpointReader::has_array(const std::string& name) const { return arrays_.count(name) > 0; }

std::vector<float> CheckpointReader::f32(const std::string& name, int* rows, int* cols) const {
  auto it = arrays_.find(name);
  if (it == arrays_.end() || it->second.dtype != "f32")
    throw CorruptCheckpointError("missing f32 array " + name);
  const auto& a = it->second;
  std::vector<float> out(static_cast<size_t>(a.rows) * a.cols);
  std::memcpy(out.data(), payload_.data() + a.byte_offset, out.size() * sizeof(float));
  if (rows) *rows = a.rows;
  if (cols) *cols = a.cols;
  return out;
}

std::vector<int32_t> CheckpointReader::i32(const std::string& name, int* rows, int* cols) const {
  auto it = arrays_.find(name);
  if (it == arrays_.end() || it->second.dtype != "i32")
    throw CorruptCheckpointError("missing i32 array " + name);
  const auto& a = it->second;
  std::vector<int32_t> out(static_cast<size_t>(a.rows) * a.cols);
  std::memcpy(out.data(), payload_.data() + a.byte_offset, out.size() * sizeof(int32_t));
  if (rows) *rows = a.rows;
  if (cols) *cols = a.cols;
  return out;
}

std::string CheckpointReader::meta_str(const std::string& key) const {
  auto it = meta_str_.find(key);
  if (it == meta_str_.end()) throw CorruptCheckpointError("missing meta key " + key);
  return it->second;
}

double CheckpointReader::meta_num(const std::string& key) const {
  auto it = meta_num_.find(key);
  if (it == meta_num_.end()) throw CorruptCheckpointError("missing meta key " + key);
  return it->second;
}

uint64_t CheckpointReader::meta_u64(const std::string& key) const {
  auto it = meta_u64_.find(key);
  if (it == meta_u64_.end()) throw CorruptCheckpointError("missing meta key " + key);
  return it->second;
}

bool CheckpointReader::has_meta(const std::string& key) const {
  return meta_str_.count(key) || meta_num_.count(key) || meta_u64_.count(key);
}

// --- typed helpers -------------------------------------------------------

void save_backbone(const std::filesystem::path& base, const BackboneWeights& w) {
  CheckpointWriter out("backbone");
  out.meta("n_layers", static_cast<uint64_t>(w.config.n_layers));
  out.meta("d", static_cast<uint64_t>(w.config.d));
  out.meta("n_heads", static_cast<uint64_t>(w.config.n_heads));
  out.meta("d_m", static_cast<uint64_t>(w.config.d_m));
  out.meta("vocab", static_cast<uint64_t>(w.config.vocab));
  out.meta("max_len", static_cast<uint64_t>(w.config.max_len));
  out.meta("seed", w.config.seed);
  auto tensors = w.all_tensors();
  for (size_t i = 0; i < tensors.size(); ++i)
    out.add_f32("t" + std::to_string(i), tensors[i].data(), tensors[i].rows(), tensors[i].cols());
  out.write(base);
}

BackboneWeights load_backbone(const std::filesystem::path& base) {
  auto in = CheckpointReader::load(base);
  if (in.kind() != "backbone") throw CorruptCheckpointError("not a backbone checkpoint");
  ModelConfig cfg;
  cfg.n_layers = static_cast<int>(in.meta_u64("n_layers"));
  cfg.d = static_cast<int>(in.meta_u64("d"));
  cfg.n_heads = static_cast<int>(in.meta_u64("n_heads"));
  cfg.d_m = static_cast<int>(in.meta_u64("d_m"));
  cfg.vocab = static_cast<int>(in.meta_u64("vocab"));
  cfg.max_len = static_cast<int>(in.meta_u64("max_len"));
  cfg.seed = in.meta_u64("seed");

  BackboneWeights w = BackboneWeights::init(cfg, false);
  auto tensors = w.all_tensors();
  for (size_t i = 0; i < tensors.size(); ++i) {
    int rows = 0, cols = 0;
    auto values = in.f32("t" + std::to_string(i), &rows, &cols);
    if (rows != tensors[i].rows() || cols != tensors[i].cols())
      throw CorruptCheckpointError("backbone tensor shape mismatch");
    std::copy(values.begin(), values.end(), tensors[i].raw_data().begin());
  }
  return w;
}

void save_pet(const std::filesystem::path& base, const PetSolution& sol, double e_dev,
              double e_test) {
  CheckpointWriter out("pet");
  out.meta("pet_kind", std::string(kind_name(sol.kind)));
  out.meta("task_id", sol.task_id);
  out.meta("e_dev", e_dev);
  out.meta("e_test", e_test);
  out.meta("r_adapter", static_cast<uint64_t>(sol.hyper.r_adapter));
  out.meta("r_lora", static_cast<uint64_t>(sol.hyper.r_lora));
  out.meta("prefix_tokens", static_cast<uint64_t>(sol.hyper.prefix_tokens));
  out.meta("prefix_hidden", static_cast<uint64_t>(sol.hyper.prefix_hidden));
  out.meta("lora_scale", static_cast<double>(sol.hyper.lora_scale));
  out.add_f32("flat", sol.flat.data(), sol.flat.rows(), sol.flat.cols());
  out.write(base);
}

LoadedPet load_pet(const std::filesystem::path& base, const ModelConfig& cfg) {
  auto in = CheckpointReader::load(base);
  if (in.kind() != "pet") throw CorruptCheckpointError("not a pet checkpoint");
  LoadedPet out;
  out.solution.kind = kind_from_name(in.meta_str("pet_kind"));
  out.solution.task_id = in.meta_str("task_id");
  out.e_dev = in.meta_num("e_dev");
  out.e_test = in.meta_num("e_test");
  out.solution.hyper.r_adapter = static_cast<int>(in.meta_u64("r_adapter"));
  out.solution.hyper.r_lora = static_cast<int>(in.meta_u64("r_lora"));
  out.solution.hyper.prefix_tokens = static_cast<int>(in.meta_u64("prefix_tokens"));
  out.solution.hyper.prefix_hidden = static_cast<int>(in.meta_u64("prefix_hidden"));
  out.solution.hyper.lora_scale = static_cast<float>(in.meta_num("lora_scale"));
  out.solution.layout = PetLayout::make(out.solution.kind, out.solution.hyper, cfg);
  int rows = 0, cols = 0;
  auto values = in.f32("flat", &rows, &cols);
  if (rows != 1 || static_cast<size_t>(cols) != out.solution.layout.total())
    throw CorruptCheckpointError("pet vector length mismatch");
  out.solution.flat = Tensor::from_flat(1, cols, std::move(values), true);
  return out;
}

void save_artifacts(const std::filesystem::path& base, const SubspaceArtifacts& art) {
  CheckpointWriter out("subspace-artifacts");
  out.meta("y", static_cast<uint64_t>(art.y));
  out.meta("artifact_id", art.artifact_id);
  out.meta("has_down", static_cast<uint64_t>(art.has_down ? 1 : 0));
  out.meta("r_adapter", static_cast<uint64_t>(art.hyper.r_adapter));
  out.meta("r_lora", static_cast<uint64_t>(art.hyper.r_lora));
  out.meta("prefix_tokens", static_cast<uint64_t>(art.hyper.prefix_tokens));
  out.meta("prefix_hidden", static_cast<uint64_t>(art.hyper.prefix_hidden));
  out.meta("lora_scale", static_cast<double>(art.hyper.lora_scale));
  std::string kind_list;
  for (const auto& [kind, pair] : art.projections) {
    if (!kind_list.empty()) kind_list += ",";
    kind_list += kind_name(kind);
    const std::string prefix = std::string("proj.") + kind_name(kind);
    if (pair.down.layer1.defined()) {
      out.add_f32(prefix + ".down1", pair.down.layer1.data(), pair.down.layer1.rows(),
                  pair.down.layer1.cols());
      out.add_f32(prefix + ".down2", pair.down.layer2.data(), pair.down.layer2.rows(),
                  pair.down.layer2.cols());
    }
    out.add_f32(prefix + ".up", pair.up.weight.data(), pair.up.weight.rows(),
                pair.up.weight.cols());
  }
  out.meta("kinds", kind_list);
  if (art.fastfood.has_value()) {
    const auto& ff = *art.fastfood;
    out.meta("fastfood_seed", ff.seed());
    out.meta("fastfood_gain", static_cast<double>(ff.gain()));
    out.meta("fastfood_output_dim", static_cast<uint64_t>(ff.output_dim()));
    out.add_f32("fastfood.b", ff.sign_flips(), 1, static_cast<int>(ff.sign_flips().size()));
    out.add_i32("fastfood.pi", ff.permutation(), 1, static_cast<int>(ff.permutation().size()));
    out.add_f32("fastfood.g", ff.g().data(), 1, static_cast<int>(ff.g().size()));
  }
  std::string shared_names;
  size_t si = 0;
  for (const auto& [task_id, iv] : art.shared_intrinsic) {
    if (!shared_names.empty()) shared_names += ",";
    shared_names += task_id;
    out.add_f32("shared." + std::to_string(si++), iv.values, 1,
                static_cast<int>(iv.values.size()));
  }
  out.meta("shared_tasks", shared_names);
  out.write(base);
}

namespace {

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  size_t start = 0;
  while (start <= s.size() && !s.empty()) {
    size_t comma = s.find(',', start);
    if (comma == std::string::npos) {
      out.push_back(s.substr(start));
      break;
    }
    out.push_back(s.substr(start, comma - start));
    start = comma + 1;
  }
  return out;
}

}  // namespace

SubspaceArtifacts load_artifacts(const std::filesystem::path& base) {
  auto in = CheckpointReader::load(base);
  if (in.kind() != "subspace-artifacts") throw CorruptCheckpointError("not an artifacts checkpoint");
  SubspaceArtifacts art;
  art.y = static_cast<int>(in.meta_u64("y"));
  art.artifact_id = in.meta_u64("artifact_id");
  art.has_down = in.meta_u64("has_down") != 0;
  art.hyper.r_adapter = static_cast<int>(in.meta_u64("r_adapter"));
  art.hyper.r_lora = static_cast<int>(in.meta_u64("r_lora"));
  art.hyper.prefix_tokens = static_cast<int>(in.meta_u64("prefix_tokens"));
  art.hyper.prefix_hidden = static_cast<int>(in.meta_u64("prefix_hidden"));
  art.hyper.lora_scale = static_cast<float>(in.meta_num("lora_scale"));

  for (const auto& name : split_csv(in.meta_str("kinds"))) {
    PetKind kind = kind_from_name(name);
    const std::string prefix = "proj." + name;
    ProjectionPair pair;
    if (in.has_array(prefix + ".down1")) {
      int r = 0, c = 0;
      auto v1 = in.f32(prefix + ".down1", &r, &c);
      pair.down.layer1 = Tensor::from_flat(r, c, std::move(v1), false);
      auto v2 = in.f32(prefix + ".down2", &r, &c);
      pair.down.layer2 = Tensor::from_flat(r, c, std::move(v2), false);
    }
    int r = 0, c = 0;
    auto vu = in.f32(prefix + ".up", &r, &c);
    pair.up.weight = Tensor::from_flat(r, c, std::move(vu), false);
    pair.up.artifact_id = art.artifact_id;
    art.projections.emplace(kind, std::move(pair));
  }

  if (in.has_array("fastfood.g")) {
    auto b = in.f32("fastfood.b");
    auto pi = in.i32("fastfood.pi");
    auto g = in.f32("fastfood.g");
    art.fastfood = FastfoodProjector::restore(
        art.y, static_cast<size_t>(in.meta_u64("fastfood_output_dim")),
        in.meta_u64("fastfood_seed"), static_cast<float>(in.meta_num("fastfood_gain")),
        std::move(b), std::move(pi), std::move(g));
    art.fastfood->artifact_id = art.artifact_id;
    art.fastfood->g().node()->requires_grad = false;
  }

  const std::string shared = in.meta_str("shared_tasks");
  if (!shared.empty()) {
    size_t si = 0;
    for (const auto& task_id : split_csv(shared)) {
      IntrinsicVector iv;
      iv.values = in.f32("shared." + std::to_string(si++));
      iv.artifact_id = art.artifact_id;
      art.shared_intrinsic.emplace(task_id, std::move(iv));
    }
  }
  return art;
}

void save_opt_result(const std::filesystem::path& base, const SubspaceOptResult& result) {
  CheckpointWriter out("subspace-opt");
  out.meta("pet_kind", std::string(kind_name(result.kind)));
  out.meta("task_id", result.task_id);
  out.meta("e_dev", result.e_dev);
  out.meta("e_sub", result.e_sub);
  out.meta("artifact_id", result.best.artifact_id);
  const int y = result.best.y();
  out.add_f32("best", result.best.values, 1, y);
  std::vector<float> trace;
  for (const auto& c : result.checkpoints)
    trace.insert(trace.end(), c.values.begin(), c.values.end());
  out.add_f32("checkpoints", trace, static_cast<int>(result.checkpoints.size()), y);
  std::vector<float> dev(result.checkpoint_dev.begin(), result.checkpoint_dev.end());
  out.add_f32("checkpoint_dev", dev, 1, static_cast<int>(dev.size()));
  out.write(base);
}

SubspaceOptResult load_opt_result(const std::filesystem::path& base) {
  auto in = CheckpointReader::load(base);
  if (in.kind() != "subspace-opt") throw CorruptCheckpointError("not an optimization checkpoint");
  SubspaceOptResult out;
  out.kind = kind_from_name(in.meta_str("pet_kind"));
  out.task_id = in.meta_str("task_id");
  out.e_dev = in.meta_num("e_dev");
  out.e_sub = in.meta_num("e_sub");
  const uint64_t artifact_id = in.meta_u64("artifact_id");
  out.best.values = in.f32("best");
  out.best.artifact_id = artifact_id;
  int rows = 0, cols = 0;
  auto trace = in.f32("checkpoints", &rows, &cols);
  for (int i = 0; i < rows; ++i) {
    IntrinsicVector iv;
    iv.values.assign(trace.begin() + static_cast<size_t>(i) * cols,
                     trace.begin() + static_cast<size_t>(i + 1) * cols);
    iv.artifact_id = artifact_id;
    out.checkpoints.push_back(std::move(iv));
  }
  auto dev = in.f32("checkpoint_dev");
  out.checkpoint_dev.assign(dev.begin(), dev.end());
  return out;
}

}  // namespace deltasub
