#pragma once

// The tacmpc command-line tool as a library so tests can drive it in-process.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

namespace tacmpc::cli {

enum ExitCode : int { kOk = 0, kUnexpected = 1, kValidation = 2, kSolverBudget = 3 };

/// args excludes the program name. Summaries go to `out`, diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// FNV-1a of a file's bytes. Throws Error{Io}.
std::uint64_t hash_file(const std::filesystem::path& p);
/// Order-independent of directory iteration: files are visited sorted by
/// relative path; names listed in `skip` are ignored at any depth.
std::uint64_t hash_tree(const std::filesystem::path& dir, const std::vector<std::string>& skip = {"run.json"});

/// Turns a config object into `--key=value` tokens. A run.json record is
/// accepted too; its resolved "config" section is used. Throws Error{Parse}
/// with "file:line:" context for malformed JSON.
std::vector<std::string> config_tokens(const std::filesystem::path& file, std::string* subcommand = nullptr);

}  // namespace tacmpc::cli
