#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "deltasub/config.hpp"

namespace deltasub {

enum class Stage {
  PretrainBackbone,
  TrainPets,
  Approximate,
  SubspaceOpt,
  Transfer,
  SharedIntrinsic,
  FinetuneExt,
  Landscape,
  Report,
};

Stage stage_from_name(const std::string& name);
const char* stage_name(Stage s);

// Drives the pipeline stage by stage over one artifact directory. Stages are
// idempotent under a fixed config and check their upstream artifacts.
class ExperimentRunner {
 public:
  explicit ExperimentRunner(ExperimentConfig cfg);

  void run_stage(Stage stage);
  void run_all();

  const ExperimentConfig& config() const { return cfg_; }
  const std::filesystem::path& dir() const { return dir_; }

  // artifact locations inside the run directory
  std::filesystem::path backbone_base() const { return dir_ / "backbone"; }
  std::filesystem::path pet_base(const std::string& task, PetKind kind) const;
  std::filesystem::path artifacts_base() const { return dir_ / "projections"; }
  std::filesystem::path opt_base(const std::string& task, PetKind kind) const;
  std::filesystem::path transfer_csv() const { return dir_ / "transfer.csv"; }
  std::filesystem::path report_csv() const { return dir_ / "report.csv"; }
  std::filesystem::path landscape_csv_path(const std::string& task) const;

  // task materialization used by every stage (deterministic from config)
  TaskRegistry task_registry() const;
  Task materialize(const TaskSpec& spec) const;
  std::vector<PetKind> baseline_kinds() const;

 private:
  ExperimentConfig cfg_;
  std::filesystem::path dir_;

  void stage_pretrain();
  void stage_train_pets();
  void stage_approximate();
  void stage_shared(bool include_finetune);
  void stage_subspace_opt();
  void stage_transfer();
  void stage_landscape();
  void stage_report();
};

// Resolves a config path's output directory against DELTASUB_OUTPUT_ROOT.
std::filesystem::path resolve_output_dir(const std::filesystem::path& configured);

}  // namespace deltasub
