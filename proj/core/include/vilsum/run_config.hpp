#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace vilsum {

/// Flat key=value run configuration. Every key has a default; unknown keys
/// are rejected.
struct RunConfig {
  int d_model = 64;
  int n_heads = 4;
  int enc_layers = 2;
  int dec_layers = 2;
  int patch_size = 8;
  int image_size = 32;
  float lr = 3e-4f;
  long warmup_steps = 1000;
  int batch_size = 8;
  int epochs = 10;
  long seed = 42;
  int beam_size = 3;
  int min_len = 5;
  int max_len = 40;
  int k_select = 3;
  std::string mode = "joint";
  std::string tasks = "gen,sel,reo";

  void validate() const;

  /// Canonical text form: one key=value per line, keys sorted.
  std::string to_text() const;
  std::map<std::string, std::string> to_map() const;

  /// Applies entries on top of defaults; throws ConfigError on unknown keys
  /// or malformed values.
  static RunConfig from_map(const std::map<std::string, std::string>& entries);
  /// Parses key=value lines ('#' comments and blank lines allowed).
  static RunConfig from_text(const std::string& text);
  static RunConfig from_file(const std::filesystem::path& path);

  /// Keys whose values differ between the two configs, sorted.
  static std::vector<std::string> diff_keys(const RunConfig& a, const RunConfig& b);
};

}  // namespace vilsum
