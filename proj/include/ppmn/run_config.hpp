#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ppmn/model.hpp"
#include "ppmn/trainer.hpp"

namespace ppmn {

// Unknown key, malformed line or unparsable value.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Flat `key = value` settings covering the model, training, data and output
// locations. Every key has a default; `#` starts a comment.
class RunConfig {
 public:
  RunConfig();

  static RunConfig parse(std::string_view text, const std::string& origin = "<string>");
  static RunConfig load(const std::filesystem::path& path);

  // Throws ConfigError for keys outside the known set.
  void set(const std::string& key, const std::string& value);
  // `--key value` and `--key=value` pairs.
  void apply_overrides(const std::vector<std::string>& args);

  const std::string& get(const std::string& key) const;
  std::string str(const std::string& key) const { return get(key); }
  double real(const std::string& key) const;
  std::size_t count(const std::string& key) const;
  std::uint64_t u64(const std::string& key) const;
  bool flag(const std::string& key) const;
  // `HxW`, e.g. 160x80.
  Extent2 extent(const std::string& key) const;

  ModelConfig model() const;
  TrainConfig train() const;

  // Every key in canonical order, one `key = value` line each.
  std::string resolved() const;
  void write_resolved(const std::filesystem::path& path) const;

  static const std::vector<std::pair<std::string, std::string>>& defaults();

 private:
  std::map<std::string, std::string, std::less<>> values_;
};

}  // namespace ppmn
