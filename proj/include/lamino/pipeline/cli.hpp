#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace lamino::pipeline {

/// Runs one `lamino` subcommand. Returns 0 on success; on failure prints a
/// single "error: <category>: <message>" line to `err` and returns the
/// category's exit code.
int cli_dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int cli_dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Exit code reported for each error category (usage = 2, config = 3, io = 4, format = 5, others 1).
int exit_code_for(const std::string& category);

}  // namespace lamino::pipeline
