#include "deltasub/experiment.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>

#include "deltasub/checkpoint.hpp"
#include "deltasub/landscape.hpp"
#include "deltasub/rng.hpp"

namespace deltasub {

Stage stage_from_name(const std::string& name) {
  if (name == "pretrain-backbone") return Stage::PretrainBackbone;
  if (name == "train-pets") return Stage::TrainPets;
  if (name == "approximate") return Stage::Approximate;
  if (name == "subspace-opt") return Stage::SubspaceOpt;
  if (name == "transfer") return Stage::Transfer;
  if (name == "shared-intrinsic") return Stage::SharedIntrinsic;
  if (name == "finetune-ext") return Stage::FinetuneExt;
  if (name == "landscape") return Stage::Landscape;
  if (name == "report") return Stage::Report;
  throw ConfigInvalidError("unknown stage: " + name);
}

const char* stage_name(Stage s) {
  switch (s) {
    case Stage::PretrainBackbone: return "pretrain-backbone";
    case Stage::TrainPets: return "train-pets";
    case Stage::Approximate: return "approximate";
    case Stage::SubspaceOpt: return "subspace-opt";
    case Stage::Transfer: return "transfer";
    case Stage::SharedIntrinsic: return "shared-intrinsic";
    case Stage::FinetuneExt: return "finetune-ext";
    case Stage::Landscape: return "landscape";
    default: return "report";
  }
}

std::filesystem::path resolve_output_dir(const std::filesystem::path& configured) {
  if (configured.is_absolute()) return configured;
  if (const char* root = std::getenv("DELTASUB_OUTPUT_ROOT"))
    return std::filesystem::path(root) / configured;
  return configured;
}

namespace {

// One writer per artifact directory: stages take an exclusive lock file.
class DirectoryLock {
 public:
  explicit DirectoryLock(const std::filesystem::path& dir) : path_(dir / ".lock") {
    std::filesystem::create_directories(dir);
    FILE* f = std::fopen(path_.c_str(), "wx");
    if (!f)
      throw Error("DirectoryLocked",
                  "another stage holds " + path_.string() + " (remove it if stale)");
    std::fclose(f);
  }
  ~DirectoryLock() { std::filesystem::remove(path_); }
  DirectoryLock(const DirectoryLock&) = delete;
  DirectoryLock& operator=(const DirectoryLock&) = delete;

 private:
  std::filesystem::path path_;
};

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out.is_open()) throw ConfigInvalidError("cannot write " + path.string());
  out << text;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

}  // namespace

ExperimentRunner::ExperimentRunner(ExperimentConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  dir_ = resolve_output_dir(cfg_.output);
}

std::filesystem::path ExperimentRunner::pet_base(const std::string& task, PetKind kind) const {
  return dir_ / ("pet_" + task + "_" + kind_name(kind));
}

std::filesystem::path ExperimentRunner::opt_base(const std::string& task, PetKind kind) const {
  return dir_ / ("opt_" + task + "_" + kind_name(kind));
}

std::filesystem::path ExperimentRunner::landscape_csv_path(const std::string& task) const {
  return dir_ / ("landscape_" + task + ".csv");
}

TaskRegistry ExperimentRunner::task_registry() const {
  auto reg = registry(cfg_.mode, cfg_.seed, cfg_.model, cfg_.task_seq_len);
  auto shape = [&](TaskSpec& spec) {
    spec.n_train = cfg_.task_n_train;
    spec.n_dev = cfg_.task_n_dev;
    spec.n_test = cfg_.task_n_test;
  };
  for (auto& spec : reg.train_tasks) shape(spec);
  for (auto& spec : reg.test_tasks) shape(spec);
  return reg;
}

Task ExperimentRunner::materialize(const TaskSpec& spec) const {
  return generate_task(spec, cfg_.model);
}

std::vector<PetKind> ExperimentRunner::baseline_kinds() const {
  std::vector<PetKind> kinds{PetKind::Adapter, PetKind::Prefix, PetKind::Lora};
  if (cfg_.include_finetune) kinds.push_back(PetKind::FullFineTune);
  return kinds;
}

void ExperimentRunner::run_stage(Stage stage) {
  DirectoryLock lock(dir_);
  write_text(dir_ / "config.resolved.ini", cfg_.resolved_dump());
  switch (stage) {
    case Stage::PretrainBackbone: stage_pretrain(); break;
    case Stage::TrainPets: stage_train_pets(); break;
    case Stage::Approximate: stage_approximate(); break;
    case Stage::SubspaceOpt: stage_subspace_opt(); break;
    case Stage::Transfer: stage_transfer(); break;
    case Stage::SharedIntrinsic: stage_shared(false); break;
    case Stage::FinetuneExt: stage_shared(true); break;
    case Stage::Landscape: stage_landscape(); break;
    case Stage::Report: stage_report(); break;
  }
}

void ExperimentRunner::run_all() {
  run_stage(Stage::PretrainBackbone);
  run_stage(Stage::TrainPets);
  if (cfg_.variant == ApproxVariant::Decomposed)
    run_stage(Stage::Approximate);
  else
    run_stage(cfg_.include_finetune ? Stage::FinetuneExt : Stage::SharedIntrinsic);
  run_stage(Stage::SubspaceOpt);
  run_stage(Stage::Transfer);
  run_stage(Stage::Landscape);
  run_stage(Stage::Report);
}

void ExperimentRunner::stage_pretrain() {
  auto w = BackboneWeights::init(cfg_.model);
  pretrain_backbone(w, cfg_.pretrain_steps, cfg_.pretrain_lr, cfg_.pretrain_batch, cfg_.seed);
  save_backbone(backbone_base(), w);
}

void ExperimentRunner::stage_train_pets() {
  if (!CheckpointReader::exists(backbone_base()))
    throw MissingArtifactError("train-pets needs the pretrained backbone");
  auto w = load_backbone(backbone_base());
  auto reg = task_registry();

  auto train_one = [&](const TaskSpec& spec, PetKind kind) {
    auto task = materialize(spec);
    PetTrainConfig tcfg = cfg_.pet_train;
    tcfg.lr = cfg_.pet_lr(kind);
    tcfg.init_sigma = cfg_.pet_sigma(kind);
    tcfg.seed = derive_seed(cfg_.seed, std::string("pet-") + kind_name(kind) + "-" + spec.name);
    auto result = train_pet(w, task, kind, cfg_.hyper, tcfg);
    save_pet(pet_base(spec.name, kind), result.solution, result.e_dev, result.e_test);
  };

  // original-space baselines on every test task
  for (const auto& spec : reg.test_tasks)
    for (PetKind kind : baseline_kinds()) train_one(spec, kind);
  // solutions to decompose, training tasks only, decomposed variant only
  if (cfg_.variant == ApproxVariant::Decomposed)
    for (const auto& spec : reg.train_tasks)
      for (PetKind kind : {PetKind::Adapter, PetKind::Prefix, PetKind::Lora})
        train_one(spec, kind);
}

void ExperimentRunner::stage_approximate() {
  if (cfg_.variant != ApproxVariant::Decomposed)
    throw ConfigInvalidError("approximate runs on the decomposed variant; use shared-intrinsic");
  if (!CheckpointReader::exists(backbone_base()))
    throw MissingArtifactError("approximate needs the pretrained backbone");
  auto w = load_backbone(backbone_base());
  auto reg = task_registry();

  std::vector<ApproxInput> inputs;
  for (const auto& spec : reg.train_tasks) {
    ApproxInput in;
    in.task = materialize(spec);
    for (PetKind kind : {PetKind::Adapter, PetKind::Prefix, PetKind::Lora}) {
      if (!CheckpointReader::exists(pet_base(spec.name, kind)))
        throw MissingArtifactError("approximate needs trained solutions; missing " +
                                   pet_base(spec.name, kind).string());
      in.solutions.emplace(kind, load_pet(pet_base(spec.name, kind), cfg_.model).solution);
    }
    inputs.push_back(std::move(in));
  }
  auto art = approximate_subspace(w, inputs, cfg_.approx);
  save_artifacts(artifacts_base(), art);

  std::string log = "step,dist,task\n";
  for (const auto& rec : art.log)
    log += std::to_string(rec.step) + "," + fmt(rec.dist) + "," + fmt(rec.task) + "\n";
  write_text(dir_ / "approx_log.csv", log);
}

void ExperimentRunner::stage_shared(bool include_finetune) {
  if (cfg_.variant != ApproxVariant::Shared)
    throw ConfigInvalidError("shared-intrinsic stages need variant = shared");
  if (include_finetune != cfg_.include_finetune)
    throw ConfigInvalidError(include_finetune
                                 ? "finetune-ext needs include_finetune = true"
                                 : "config asks for the fine-tuning extension; run finetune-ext");
  if (!CheckpointReader::exists(backbone_base()))
    throw MissingArtifactError("shared-intrinsic needs the pretrained backbone");
  auto w = load_backbone(backbone_base());
  auto reg = task_registry();

  std::vector<Task> tasks;
  for (const auto& spec : reg.train_tasks) tasks.push_back(materialize(spec));
  auto art = shared_intrinsic_approximate(w, tasks, cfg_.hyper, cfg_.approx, include_finetune);
  save_artifacts(artifacts_base(), art);

  std::string log = "step,dist,task\n";
  for (const auto& rec : art.log)
    log += std::to_string(rec.step) + "," + fmt(rec.dist) + "," + fmt(rec.task) + "\n";
  write_text(dir_ / "approx_log.csv", log);
}

void ExperimentRunner::stage_subspace_opt() {
  if (!CheckpointReader::exists(artifacts_base()))
    throw MissingArtifactError("subspace-opt needs projections; run approximate or "
                               "shared-intrinsic first");
  auto w = load_backbone(backbone_base());
  auto art = load_artifacts(artifacts_base());
  auto reg = task_registry();
  for (const auto& spec : reg.test_tasks) {
    auto task = materialize(spec);
    for (PetKind kind : art.kinds()) {
      auto result = subspace_optimize(w, task, kind, art, cfg_.approx);
      save_opt_result(opt_base(spec.name, kind), result);
    }
  }
}

void ExperimentRunner::stage_transfer() {
  if (!CheckpointReader::exists(artifacts_base()))
    throw MissingArtifactError("transfer needs projections");
  auto w = load_backbone(backbone_base());
  auto art = load_artifacts(artifacts_base());
  auto reg = task_registry();

  std::string csv = "task,source_kind,target_kind,checkpoint_index,e_transfer\n";
  for (const auto& spec : reg.test_tasks) {
    auto task = materialize(spec);
    for (PetKind src : art.kinds()) {
      if (!CheckpointReader::exists(opt_base(spec.name, src)))
        throw MissingArtifactError("transfer needs subspace-opt results; missing " +
                                   opt_base(spec.name, src).string());
      auto source = load_opt_result(opt_base(spec.name, src));
      for (PetKind tgt : art.kinds()) {
        auto tr = transfer(w, task, source, tgt, art, cfg_.selection);
        csv += spec.name;
        csv += ",";
        csv += kind_name(src);
        csv += ",";
        csv += kind_name(tgt);
        csv += "," + std::to_string(tr.checkpoint_index) + "," + fmt(tr.e_transfer) + "\n";
      }
    }
  }
  write_text(transfer_csv(), csv);
}

void ExperimentRunner::stage_landscape() {
  if (!CheckpointReader::exists(artifacts_base()))
    throw MissingArtifactError("landscape needs projections");
  auto w = load_backbone(backbone_base());
  auto art = load_artifacts(artifacts_base());
  auto reg = task_registry();

  std::string task_name = cfg_.landscape_task.empty() ? reg.test_tasks[0].name
                                                      : cfg_.landscape_task;
  const TaskSpec* spec = nullptr;
  for (const auto& s : reg.test_tasks)
    if (s.name == task_name) spec = &s;
  if (!spec) throw ConfigInvalidError("landscape task " + task_name + " is not a test task");
  auto task = materialize(*spec);

  std::map<PetKind, SubspaceOptResult> opts;
  double e_pet = 0.0;
  for (PetKind kind : {PetKind::Adapter, PetKind::Prefix, PetKind::Lora}) {
    if (!CheckpointReader::exists(opt_base(task_name, kind)))
      throw MissingArtifactError("landscape needs subspace-opt results for " + task_name);
    opts.emplace(kind, load_opt_result(opt_base(task_name, kind)));
    if (!CheckpointReader::exists(pet_base(task_name, kind)))
      throw MissingArtifactError("landscape needs original-space baselines for " + task_name);
    e_pet += load_pet(pet_base(task_name, kind), cfg_.model).e_test;
  }
  e_pet /= 3.0;

  auto grid = landscape_grid(w, art, task, opts.at(PetKind::Adapter).best,
                             opts.at(PetKind::Prefix).best, opts.at(PetKind::Lora).best, e_pet,
                             cfg_.landscape_range, cfg_.landscape_step, cfg_.landscape_cap,
                             cfg_.landscape_threads);
  write_text(landscape_csv_path(task_name), landscape_csv(grid));

  // sidecar manifest with origin, axes and solution overlay coordinates
  std::string manifest = "{\n  \"task\": \"" + task_name + "\",\n  \"e_pet\": " + fmt(e_pet) +
                         ",\n  \"range\": " + fmt(grid.range) + ",\n  \"step\": " +
                         fmt(grid.step) + ",\n";
  auto vec_json = [&](const char* name, const std::vector<float>& v) {
    std::string out = std::string("  \"") + name + "\": [";
    for (size_t i = 0; i < v.size(); ++i) {
      if (i) out += ", ";
      out += fmt(v[i]);
    }
    return out + "],\n";
  };
  manifest += vec_json("origin", grid.origin.values);
  manifest += vec_json("u", grid.u);
  manifest += vec_json("v", grid.v);
  const char* names[3] = {"adapter", "prefix", "lora"};
  manifest += "  \"solutions\": {\n";
  for (int i = 0; i < 3; ++i) {
    manifest += std::string("    \"") + names[i] + "\": [" + fmt(grid.solution_coords[i].first) +
                ", " + fmt(grid.solution_coords[i].second) + "]";
    manifest += i < 2 ? ",\n" : "\n";
  }
  manifest += "  }\n}\n";
  write_text(dir_ / ("landscape_" + task_name + ".manifest.json"), manifest);
}

void ExperimentRunner::stage_report() {
  if (!CheckpointReader::exists(artifacts_base()))
    throw MissingArtifactError("report needs a completed pipeline");
  auto art = load_artifacts(artifacts_base());
  auto reg = task_registry();

  // transfer.csv parsed back so the report aggregates persisted artifacts only
  std::ifstream tf(transfer_csv());
  if (!tf.is_open()) throw MissingArtifactError("report needs transfer.csv; run transfer");
  std::map<std::string, double> transfer_cells;  // task|src|tgt -> e_transfer
  std::string line;
  std::getline(tf, line);  // header
  while (std::getline(tf, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    size_t start = 0;
    while (true) {
      size_t comma = line.find(',', start);
      if (comma == std::string::npos) {
        cells.push_back(line.substr(start));
        break;
      }
      cells.push_back(line.substr(start, comma - start));
      start = comma + 1;
    }
    if (cells.size() != 5) throw CorruptCheckpointError("malformed transfer.csv row: " + line);
    transfer_cells[cells[0] + "|" + cells[1] + "|" + cells[2]] = std::stod(cells[4]);
  }

  std::string csv = "task,source_kind,target_kind,e_ori,e_sub,ratio\n";
  for (const auto& spec : reg.test_tasks) {
    std::map<PetKind, double> e_ori;
    for (PetKind kind : art.kinds()) {
      if (!CheckpointReader::exists(pet_base(spec.name, kind)))
        throw MissingArtifactError("report needs baselines for " + spec.name);
      e_ori[kind] = load_pet(pet_base(spec.name, kind), cfg_.model).e_test;
    }
    for (PetKind src : art.kinds()) {
      for (PetKind tgt : art.kinds()) {
        double e_sub;
        if (src == tgt) {
          e_sub = load_opt_result(opt_base(spec.name, src)).e_sub;
        } else {
          auto it = transfer_cells.find(spec.name + "|" + kind_name(src) + "|" + kind_name(tgt));
          if (it == transfer_cells.end())
            throw MissingArtifactError("transfer cell missing for " + spec.name);
          e_sub = it->second;
        }
        csv += spec.name;
        csv += ",";
        csv += kind_name(src);
        csv += ",";
        csv += kind_name(tgt);
        csv += "," + fmt(e_ori.at(tgt)) + "," + fmt(e_sub) + "," +
               fmt(relative_performance(e_sub, e_ori.at(tgt))) + "\n";
      }
    }
  }
  write_text(report_csv(), csv);
}

}  // namespace deltasub
