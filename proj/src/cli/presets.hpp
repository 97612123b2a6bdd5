#pragma once

#include <functional>
#include <string>
#include <vector>

#include "runner.hpp"

namespace dakit::cli {

/// One --check assertion: evaluated against the finished run's summary.
struct PresetCheck {
  std::string label;
  std::function<bool(const RunOutput&)> ok;
};

struct Preset {
  std::string name;
  std::string description;
  std::string config;  // complete config text, parseable as-is
  std::vector<PresetCheck> checks;
};

const std::vector<Preset>& all_presets();

/// nullptr when no preset has that name.
const Preset* find_preset(const std::string& name);

/// Rewrites `section.key = value` lines: each override ("section.key=value")
/// replaces an existing assignment or is appended.  Validity is established
/// by the subsequent parse_config call, not here.
std::string apply_overrides(const std::string& config,
                            const std::vector<std::string>& overrides);

}  // namespace dakit::cli
