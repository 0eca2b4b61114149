#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "hybridflow/cli.hpp"

namespace hybridflow::cli {

/// Bad arguments or configuration; maps to exit code 2.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Kind { Text, Integer, Count, Real, Flag };

struct OptionSpec {
  std::string name;
  Kind kind = Kind::Text;
  std::string help;
  bool positional = false;
};

const std::vector<OptionSpec>& option_catalog();
const OptionSpec& option_spec(const std::string& name);

/// Flat key -> text map of a JSON config file. Values may be strings, numbers,
/// booleans or arrays (joined with commas). Throws UsageError on unreadable
/// files, malformed JSON and unknown keys.
std::map<std::string, std::string> load_config_file(const std::filesystem::path& path);

/// Option values after applying file < environment < flag precedence, with
/// typed accessors that raise UsageError on malformed values.
class Settings {
 public:
  Settings(std::string command, std::map<std::string, std::string> values)
      : command_(std::move(command)), values_(std::move(values)) {}

  const std::string& command() const { return command_; }
  bool has(const std::string& name) const { return values_.count(name) > 0; }
  std::optional<std::string> raw(const std::string& name) const;

  std::string text(const std::string& name, const std::string& fallback) const;
  std::string required(const std::string& name) const;
  std::int64_t integer(const std::string& name, std::int64_t fallback) const;
  std::uint64_t count(const std::string& name, std::uint64_t fallback) const;
  double real(const std::string& name, double fallback) const;
  bool flag(const std::string& name) const;
  /// Comma-separated list; empty when absent.
  std::vector<std::string> list(const std::string& name) const;

 private:
  std::string command_;
  std::map<std::string, std::string> values_;
};

std::vector<std::string> split_list(const std::string& text);
double parse_real(const std::string& name, const std::string& text);
std::uint64_t parse_count(const std::string& name, const std::string& text);
/// "n1:n2" with non-negative integers.
std::pair<int, int> parse_ratio(const std::string& name, const std::string& text);

}  // namespace hybridflow::cli
