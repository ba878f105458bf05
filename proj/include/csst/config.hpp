#pragma once

// Run configuration shared by the command-line tool: one flat key = value
// namespace over the benchmark, CSS, training and evaluation settings.
//
//   # comment
//   seed = 3
//   data.n_train = 2000
//   train.fusion = logit_sum
//
// Keys are listed by config_keys(). Precedence is defaults < file < flags.

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "csst/css.hpp"
#include "csst/cst.hpp"
#include "csst/dataset.hpp"
#include "csst/eval.hpp"

namespace csst {

/// Field-level configuration error; what() names the key.
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(const std::string& key, const std::string& message)
      : std::invalid_argument(key + ": " + message), key_(key) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

struct RunConfig {
  BenchmarkConfig data;
  CssConfig css;
  TrainConfig train;
  EvalOptions eval;
  std::size_t threads = 1;

  /// Sets one key from its textual value. Throws ConfigError for unknown
  /// keys, unparsable values, and values the owning config rejects.
  void set(const std::string& key, const std::string& value);
  /// Reads `key = value` lines; '#' starts a comment. Errors carry the line.
  void load_file(const std::filesystem::path& path);
  /// Cross-field checks of every sub-config.
  void validate() const;
  /// Canonical `key = value` dump, one line per key in config_keys() order.
  std::string to_text() const;
};

struct ConfigKey {
  std::string name;
  std::string help;
};

const std::vector<ConfigKey>& config_keys();

}  // namespace csst
