#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "deltasub/backbone.hpp"
#include "deltasub/pet.hpp"
#include "deltasub/pipeline.hpp"
#include "deltasub/tasks.hpp"

namespace deltasub {

// Sectioned key-value text configuration:
//   [section]
//   key = value        ; comments start with # or ;
// Order is preserved so a resolved dump is deterministic.
class ConfigFile {
 public:
  static ConfigFile parse(const std::string& text);
  static ConfigFile load(const std::filesystem::path& path);

  bool has(const std::string& section, const std::string& key) const;
  std::string get(const std::string& section, const std::string& key) const;
  std::string get_or(const std::string& section, const std::string& key,
                     const std::string& fallback) const;
  int get_int(const std::string& section, const std::string& key, int fallback) const;
  float get_float(const std::string& section, const std::string& key, float fallback) const;
  bool get_bool(const std::string& section, const std::string& key, bool fallback) const;
  uint64_t get_u64(const std::string& section, const std::string& key, uint64_t fallback) const;

  void set(const std::string& section, const std::string& key, const std::string& value);
  std::string dump() const;

 private:
  struct Section {
    std::string name;
    std::vector<std::pair<std::string, std::string>> entries;
  };
  std::vector<Section> sections_;
  const std::string* find(const std::string& section, const std::string& key) const;
};

enum class ApproxVariant { Decomposed, Shared };

struct ExperimentConfig {
  RegistryMode mode = RegistryMode::Single;
  ApproxVariant variant = ApproxVariant::Decomposed;
  bool include_finetune = false;
  uint64_t seed = 42;
  std::filesystem::path output;

  ModelConfig model;
  int pretrain_steps = 900;
  float pretrain_lr = 3e-3f;
  int pretrain_batch = 8;

  PetHyper hyper;
  PetTrainConfig pet_train;  // lr/sigma below override per kind
  float lr_adapter = 2e-2f;
  float lr_prefix = 3e-2f;
  float lr_lora = 1e-2f;
  float lr_finetune = 2e-3f;
  float sigma_adapter = 0.02f;
  float sigma_prefix = 0.1f;
  float sigma_lora = 0.02f;

  ApproximationConfig approx;
  TransferSelection selection = TransferSelection::TargetDev;

  double landscape_range = 4.0;
  double landscape_step = 0.4;
  int landscape_cap = 256;
  int landscape_threads = 0;
  std::string landscape_task;  // default: first test task

  int task_seq_len = 12;
  int task_n_train = 192;
  int task_n_dev = 96;
  int task_n_test = 192;

  float pet_lr(PetKind kind) const;
  float pet_sigma(PetKind kind) const;

  static ExperimentConfig from_file(const std::filesystem::path& path);
  static ExperimentConfig from_config(const ConfigFile& file);
  void validate() const;
  std::string resolved_dump() const;
};

const char* variant_name(ApproxVariant v);
const char* mode_name(RegistryMode m);

}  // namespace deltasub
