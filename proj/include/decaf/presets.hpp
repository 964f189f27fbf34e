#pragma once

// Named desk-scale environment families. Each preset fixes an underlying
// process per seed; variants apply the preset's change to its changed block
// and/or jointly intervene its coarse group.

#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "decaf/env_transform.hpp"

namespace decaf {

enum class MixingKind { kAffine, kCouplingFlow };

std::string to_string(MixingKind m);
MixingKind mixing_from_string(const std::string& s);

struct PresetDefaults {
  std::string name;
  std::vector<std::string> variables;
  std::vector<int> changed;
  ChangeKind change = ChangeKind::kIdentity;
  std::vector<int> coarse_group;
  MixingKind mixing = MixingKind::kAffine;
  double intervention_probability = 0.1;
  double tau = 0.2;
  int target_samples = 1000;
  int flow_depth = 4;
  double beta_reg = 2.0;
  double beta_alo = 2.0;
  // Target classifier epochs at the desk-scale budget of 6000 transitions.
  int classifier_epochs = 25;
  // Environment labels: base and changed coordinates, joint and independent
  // interventions on the coarse group.
  std::string base_label = "REG", changed_label = "CH", joint_label = "j", independent_label = "i";
};

const std::vector<std::string>& preset_names();
// Throws ContractViolation naming the known presets.
const PresetDefaults& preset_defaults(std::string_view name);

// Underlying process of a preset: graph, mechanisms, base policy and mixing
// are all drawn from `seed`.
CausalProcess preset_process(const PresetDefaults& preset, MixingKind mixing, std::uint64_t seed);

// Change transform on the preset's changed block; rotation is 30 degrees on a
// 2-d block and a random rotation otherwise.
ChangeTransform preset_change(const PresetDefaults& preset, ChangeKind kind, std::uint64_t seed);

struct Variant {
  bool changed = false;
  bool coarse = false;
};

// Environment on `process`. A changed variant re-expresses the changed block
// through `change`; its intervention ranges are the 2% / 98% quantiles of the
// base ranges mapped through the change.
std::shared_ptr<EnvironmentSpec> make_environment(const PresetDefaults& preset, const CausalProcess& process,
                                                  const ChangeTransform& change, std::string name, Variant variant);

}  // namespace decaf
