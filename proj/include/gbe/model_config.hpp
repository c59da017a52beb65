#pragma once

#include <string>

namespace gbe {

// Which pipeline stages are active; a disabled stage is replaced by a
// shape-preserving bypass.
struct ModuleSwitches {
  bool mlfef = true;
  bool lid = true;
  bool gem = true;
  bool gla = true;

  friend bool operator==(const ModuleSwitches&, const ModuleSwitches&) = default;
};

enum class RegMode { WithinRows, AcrossGroups };

struct ModelConfig {
  int in_channels = 3;
  int c1 = 32;
  int c2 = 64;
  int c3 = 128;
  int groups = 8;
  int embed_dim = 16;
  double slope = 0.01;
  bool attention_scale = true;
  bool gate_sigmoid = true;
  bool per_group_weights = false;
  bool learnable_affinity = false;
  ModuleSwitches switches;

  int fused_channels() const { return groups * embed_dim; }
};

}  // namespace gbe
