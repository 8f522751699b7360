// Model configuration, the named-parameter store for all four networks, and
// the binary checkpoint format ("DNCA" magic, versioned tensor table).
#pragma once

#include "dncasr/model/tape.hpp"

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

namespace dncasr::model {

struct ModelConfig {
  int num_blocks = 2;
  int num_heads = 2;
  int hidden = 64;
  int ffn = 256;
  int vocab = 0;         // word vocabulary including special tokens
  int max_speakers = 8;  // K_max
  int embed_dim = 16;    // speaker window embedding input dim
  int frame_dim = 16;    // frame feature input dim
  int max_positions = 512;

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

class ModelState {
 public:
  ModelState(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }

  Parameter& at(const std::string& name);
  const Parameter& at(const std::string& name) const;
  bool has(const std::string& name) const { return index_.count(name) > 0; }

  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }

  void zero_grads();
  // Marks parameters whose name starts with any of the prefixes; frozen
  // parameters are skipped by the optimizer.
  void set_trainable_by_prefix(const std::vector<std::string>& prefixes, bool trainable);
  bool all_finite() const;

  void save(const std::string& path) const;
  static ModelState load(const std::string& path);

  std::string parameter_digest() const;  // digest over raw parameter bytes

 private:
  ModelState() = default;
  Parameter& add(const std::string& name, int rows, int cols, bool trainable = true);

  ModelConfig config_;
  std::vector<Parameter> params_;
  std::map<std::string, int> index_;
};

}  // namespace dncasr::model
