#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "metadro/synth.hpp"
#include "metadro/trainer.hpp"

namespace metadro {

/// Everything a run needs, read from a flat `key = value` file. Lines starting
/// with '#' and blank lines are ignored. `seed` drives both the generator and
/// training. `hidden` is a comma-separated width list; `none` or an empty
/// value means the identity encoder.
struct RunConfig {
  TrainConfig train;
  SynthSpec synth;

  /// Throws ValidationError naming the field.
  void validate() const;
};

/// Known keys in the order to_text writes them.
const std::vector<std::string>& run_config_keys();

/// Sets one key; unknown keys and malformed values throw ValidationError.
void set_option(RunConfig& config, std::string_view key, std::string_view value);

RunConfig parse_run_config(std::istream& in);
RunConfig load_run_config(const std::filesystem::path& path);
std::string to_text(const RunConfig& config);

}  // namespace metadro
