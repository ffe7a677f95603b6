#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "tmcda/pipeline.hpp"

namespace tmcda::cli {

// Exit statuses.
inline constexpr int kOk = 0;
inline constexpr int kUsage = 2;
inline constexpr int kValidation = 3;
inline constexpr int kRuntime = 4;

/// Parsed `key = value` file. Lines starting with '#' and blank lines are ignored.
struct KeyValueFile {
  std::vector<std::pair<std::string, std::string>> entries;  // in file order
  std::vector<std::string> problems;                         // syntax errors with line numbers
};

KeyValueFile parse_key_values(std::istream& in, std::string_view source);
KeyValueFile read_key_values(const std::filesystem::path& path);

/// One config per requested movement, starting from the movement defaults. Plain keys apply
/// to every movement; keys prefixed `left.`, `through.` or `right.` apply to that movement
/// and take precedence. Every problem in the file is reported in one ValidationError.
std::vector<PipelineConfig> configs_from(const KeyValueFile& file,
                                         const std::vector<Movement>& movements);

/// Reads grid.n_components, grid.n_samples and grid.alpha (comma-separated lists).
SweepGrid grid_from(const KeyValueFile& file);

std::vector<Movement> parse_movements(std::string_view name);  // left|through|right|all

std::string sha256_file(const std::filesystem::path& path);

// Writes to a temporary sibling, then renames over `path`.
void write_atomically(const std::filesystem::path& path, const std::string& content);

/// Entry point shared by the executable and the tests. Returns the exit status.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace tmcda::cli
