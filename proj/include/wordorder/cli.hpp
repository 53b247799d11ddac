#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>

namespace wordorder::cli {

enum ExitCode : int {
  kOk = 0,
  kUsage = 1,
  kData = 2,
  kConvergence = 3,
  kProtocol = 4,
};

/// Runs one subcommand. `args` excludes the program name. Errors are
/// reported on `err` as a single-line JSON record.
int run(std::span<const std::string> args, std::ostream& out, std::ostream& err);
int run(int argc, char** argv);

/// Writes through a temporary sibling file and renames it into place, so a
/// failed writer leaves no partial output.
void write_file_atomic(const std::filesystem::path& path, const std::function<void(std::ostream&)>& writer);

}  // namespace wordorder::cli
