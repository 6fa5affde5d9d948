#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string_view>

#include "satlab/error.hpp"
#include "satlab/io.hpp"

namespace satlab {

enum class Command { Counterexample, Covariance, Ntk, Timecat };

std::optional<Command> parse_command(std::string_view name);
std::string_view to_string(Command c);

struct RunContext {
  std::size_t jobs = 1;
  std::optional<std::uint64_t> seed;  // overrides the config's base seed
};

inline constexpr int kSchemaVersion = 1;

inline constexpr int kExitOk = 0;
inline constexpr int kExitIo = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNumerical = 3;

/// Validates `raw` against the command schema and returns it with every
/// default filled in (and the seed override applied). Throws Config before any
/// computation starts. The result revalidates to itself.
Json effective_config(Command cmd, const Json& raw, const RunContext& ctx = {});

/// Runs the command on an effective config and returns the files to write.
OutputBundle run_command(Command cmd, const Json& effective, const RunContext& ctx = {});

int exit_code_for(ErrorKind kind);

/// Full pipeline used by the executable: read, validate, run, write atomically.
/// Nothing is written unless every step succeeds.
int run_cli(Command cmd, const std::filesystem::path& config_path, const std::filesystem::path& out_dir,
            const RunContext& ctx, std::ostream& log);

}  // namespace satlab
