#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "deltasub/pet.hpp"
#include "deltasub/subspace.hpp"
#include "deltasub/tasks.hpp"

namespace deltasub {

struct ApproximationConfig {
  float dist_weight = 10.0f;  // balance between reconstruction and task loss
  float lr_proj = 2e-3f;
  float lr_intrinsic = 5e-2f;         // subspace optimization
  float lr_shared_intrinsic = 2e-2f;  // shared-intrinsic variant trains I at its own rate
  int steps = 2000;
  int eval_every = 50;
  int y = 4;
  int batch = 4;
  uint64_t seed = 1;
  bool task_loss = true;
  float init_sigma_up = 0.01f;
  std::vector<PetKind> kinds{PetKind::Adapter, PetKind::Prefix, PetKind::Lora};

  int opt_steps = 300;
  int opt_batch = 8;
  int opt_eval_every = 20;
  float opt_init_sigma = 1.0f;
  float fastfood_gain = 1.0f;  // leaves the standard normalization untouched by default
  // grid-searched; checkpoints from every run feed the
  // dev-set selection
  std::vector<float> opt_lr_grid;  // empty: use lr_intrinsic alone

  void validate() const;
};

struct ProjectionPair {
  DownProjection down;  // absent (undefined tensors) in the shared variant
  UpProjection up;
};

struct LossRecord {
  int step;
  double dist;
  double task;
};

// Trained mappings between each method's parameter space and the unified
// subspace, plus everything needed to reconstruct solutions from it.
struct SubspaceArtifacts {
  int y = 0;
  uint64_t artifact_id = 0;
  PetHyper hyper;
  bool has_down = true;
  std::map<PetKind, ProjectionPair> projections;
  std::optional<FastfoodProjector> fastfood;  // FullFineTune generator
  std::map<std::string, IntrinsicVector> shared_intrinsic;  // per-task, shared variant
  std::vector<LossRecord> log;

  std::vector<PetKind> kinds() const;
  void freeze();
  uint64_t content_hash() const;
};

// Sum (not mean) of squared differences.
Tensor dist_loss(const Tensor& reconstructed, const Tensor& target);

struct ApproxInput {
  Task task;
  std::map<PetKind, PetSolution> solutions;
};

// Stage 1: learn per-method projections by reconstructing stored solutions at
// interpolated intrinsic vectors while keeping them useful for the task.
// Only projection parameters receive updates.
SubspaceArtifacts approximate_subspace(const BackboneWeights& w,
                                       const std::vector<ApproxInput>& inputs,
                                       const ApproximationConfig& cfg);

// Simplified variant: per-task shared intrinsic vectors plus one
// up-projection per method are trained jointly from task loss alone; no
// down-projections and no pre-trained solutions. include_finetune adds a
// Fastfood generator over the full backbone as a fourth method.
SubspaceArtifacts shared_intrinsic_approximate(const BackboneWeights& w,
                                               const std::vector<Task>& train_tasks,
                                               const PetHyper& hyper,
                                               const ApproximationConfig& cfg,
                                               bool include_finetune = false);

// theta-bar for an intrinsic vector under one method's generator.
Tensor generate_theta(const SubspaceArtifacts& art, PetKind kind, const Tensor& intrinsic_row);

// Accuracy of the method reconstructed from `intrinsic` on a task split.
double evaluate_intrinsic(const BackboneWeights& w, const SubspaceArtifacts& art, PetKind kind,
                          const Tensor& intrinsic_row, const Task& task, Split split,
                          int cap = -1);

struct SubspaceOptResult {
  PetKind kind = PetKind::Adapter;
  std::string task_id;
  IntrinsicVector best;
  double e_dev = 0.0;
  double e_sub = 0.0;  // test metric of the best-dev checkpoint
  std::vector<IntrinsicVector> checkpoints;  // every eval_every steps
  std::vector<double> checkpoint_dev;
};

// Stage 2: tune only the y intrinsic coordinates through a frozen generator.
SubspaceOptResult subspace_optimize(const BackboneWeights& w, const Task& task, PetKind kind,
                                    const SubspaceArtifacts& art, const ApproximationConfig& cfg);

enum class TransferSelection { TargetDev, SourceBest };

struct TransferResult {
  PetKind source = PetKind::Adapter;
  PetKind target = PetKind::Adapter;
  std::string task_id;
  double e_transfer = 0.0;
  int checkpoint_index = -1;
};

// Stage 3: decode a source method's checkpointed intrinsic vectors through the
// target generator; TargetDev picks the checkpoint with the best target dev
// metric, SourceBest reuses the source's own selection.
TransferResult transfer(const BackboneWeights& w, const Task& task,
                        const SubspaceOptResult& source, PetKind target,
                        const SubspaceArtifacts& art,
                        TransferSelection selection = TransferSelection::TargetDev);

// E_sub / E_ori; reported x100 in output tables. Ratios above 1 are valid.
double relative_performance(double e_sub, double e_ori);

}  // namespace deltasub
