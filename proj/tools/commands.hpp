#pragma once

#include <CLI11.hpp>

#include <cstdint>
#include <string>

namespace ppf::cli {

/// Flags every subcommand accepts.
struct CommonOptions {
  std::uint64_t seed = 1;
  int threads = 0;
  std::string out;
};

/// Registers all subcommands on `app`. The chosen subcommand's handler runs
/// inside app.parse via its callback.
void register_commands(CLI::App& app, int& exit_code);

}  // namespace ppf::cli
