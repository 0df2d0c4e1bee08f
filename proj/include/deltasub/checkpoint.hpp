#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "deltasub/backbone.hpp"
#include "deltasub/pet.hpp"
#include "deltasub/pipeline.hpp"

namespace deltasub {

// Checkpoint = <base>.json manifest + <base>.bin payload of raw little-endian
// arrays. The manifest records schema version, artifact kind, array shapes,
// seed provenance and an FNV-1a content hash of the payload.
class CheckpointWriter {
 public:
  explicit CheckpointWriter(std::string kind);

  void add_f32(const std::string& name, std::span<const float> values, int rows, int cols);
  void add_i32(const std::string& name, std::span<const int32_t> values, int rows, int cols);
  void meta(const std::string& key, const std::string& value);
  void meta(const std::string& key, double value);
  void meta(const std::string& key, uint64_t value);

  void write(const std::filesystem::path& base) const;

 private:
  struct Array {
    std::string name;
    std::string dtype;
    int rows, cols;
    size_t byte_offset;
  };
  std::string kind_;
  std::vector<Array> arrays_;
  std::vector<unsigned char> payload_;
  std::map<std::string, std::string> meta_str_;
  std::map<std::string, double> meta_num_;
  std::map<std::string, uint64_t> meta_u64_;
};

class CheckpointReader {
 public:
  // Verifies the payload hash; truncation or corruption raises
  // CorruptCheckpoint.
  static CheckpointReader load(const std::filesystem::path& base);
  static bool exists(const std::filesystem::path& base);

  const std::string& kind() const { return kind_; }
  bool has_array(const std::string& name) const;
  std::vector<float> f32(const std::string& name, int* rows = nullptr, int* cols = nullptr) const;
  std::vector<int32_t> i32(const std::string& name, int* rows = nullptr,
                           int* cols = nullptr) const;
  std::string meta_str(const std::string& key) const;
  double meta_num(const std::string& key) const;
  uint64_t meta_u64(const std::string& key) const;
  bool has_meta(const std::string& key) const;

 private:
  struct Array {
    std::string dtype;
    int rows, cols;
    size_t byte_offset;
  };
  std::string kind_;
  std::map<std::string, Array> arrays_;
  std::vector<unsigned char> payload_;
  std::map<std::string, std::string> meta_str_;
  std::map<std::string, double> meta_num_;
  std::map<std::string, uint64_t> meta_u64_;
};

// Typed artifact helpers.
void save_backbone(const std::filesystem::path& base, const BackboneWeights& w);
BackboneWeights load_backbone(const std::filesystem::path& base);

void save_pet(const std::filesystem::path& base, const PetSolution& sol, double e_dev,
              double e_test);
struct LoadedPet {
  PetSolution solution;
  double e_dev = 0.0;
  double e_test = 0.0;
};
LoadedPet load_pet(const std::filesystem::path& base, const ModelConfig& cfg);

void save_artifacts(const std::filesystem::path& base, const SubspaceArtifacts& art);
SubspaceArtifacts load_artifacts(const std::filesystem::path& base);

void save_opt_result(const std::filesystem::path& base, const SubspaceOptResult& result);
SubspaceOptResult load_opt_result(const std::filesystem::path& base);

}  // namespace deltasub
