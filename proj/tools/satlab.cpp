#include <charconv>
#include <cstdint>
#include <cstdlib>
#include <iostream>
#include <string>
#include <string_view>

#include "CLI11.hpp"
#include "satlab/commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"satlab: mixture-pretraining transfer experiments"};
  app.require_subcommand(1);

  std::string config;
  std::string out;
  std::size_t jobs = 1;
  std::uint64_t seed = 0;

  for (auto name : {"counterexample", "covariance", "ntk", "timecat"}) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("--config", config, "experiment config (JSON)")->required();
    sub->add_option("--out", out, "output directory")->required();
    sub->add_option("--jobs", jobs, "parallel workers (default: $SATLAB_JOBS, else 1)")->check(CLI::PositiveNumber);
    sub->add_option("--seed", seed, "override the config base seed");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return satlab::kExitConfig;
  }

  auto* sub = app.get_subcommands().front();
  // Read by hand: CLI11 silently drops environment values that fail validation.
  if (const char* env = std::getenv("SATLAB_JOBS"); env && !sub->count("--jobs")) {
    const std::string_view text(env);
    const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), jobs);
    if (ec != std::errc() || end != text.data() + text.size() || jobs == 0) {
      std::cerr << "SATLAB_JOBS must be a positive integer\n";
      return satlab::kExitConfig;
    }
  }
  satlab::RunContext ctx;
  ctx.jobs = jobs;
  if (sub->count("--seed")) ctx.seed = seed;
  const auto cmd = satlab::parse_command(sub->get_name());
  return satlab::run_cli(*cmd, config, out, ctx, std::cerr);
}
