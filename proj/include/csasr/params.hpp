#pragma once

#include <map>
#include <string>

#include "csasr/autodiff.hpp"

namespace csasr {

// One named learnable tensor. Toggling `trainable` never touches values.
struct ParamGroup {
  std::string name;
  Var var;
  bool trainable = true;
  // Buffers (e.g. batch-norm running stats) are checkpointed model state but
  // never learnable; set_trainable and the optimizer skip them.
  bool learnable = true;
};

// Registry of all model parameters, addressable by dotted name
// (e.g. "encoder.block3.mhsa.wq"). Freezing works on name prefixes.
class ParamStore {
 public:
  // Creates a parameter; throws on duplicate names.
  Var create(const std::string& name, std::vector<int64_t> shape, Rng& rng,
             const std::string& init = "xavier");
  // Non-learnable persistent state (saved in checkpoints).
  Var create_buffer(const std::string& name, std::vector<int64_t> shape,
                    double fill = 0.0);
  Var get(const std::string& name) const;
  bool has(const std::string& name) const { return params_.count(name) > 0; }

  // Marks exactly the subtrees under the given prefixes non-trainable and
  // everything else trainable. Throws if a prefix matches nothing.
  // Returns the number of trainable scalars left.
  int64_t set_trainable(const std::vector<std::string>& frozen_prefixes);

  int64_t total_parameters() const;
  int64_t trainable_parameters() const;
  int64_t parameters_under(const std::string& prefix) const;

  std::map<std::string, ParamGroup>& groups() { return params_; }
  const std::map<std::string, ParamGroup>& groups() const { return params_; }

  void zero_grad();

  // Binary checkpoint: versioned header, named groups with shape + raw
  // little-endian doubles, plus an optimizer step count. Bit-exact.
  void save_checkpoint(const std::string& path, uint64_t step) const;
  // Loads values into matching names; throws on missing/mismatched groups.
  // Returns the stored step count.
  uint64_t load_checkpoint(const std::string& path);

 private:
  std::map<std::string, ParamGroup> params_;
};

}  // namespace csasr
