// cvp: run one experiment from a JSON config.
//   cvp --config run.json --command weave --seed 7 --out results/

#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "cvp/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Conditional variational principle experiments"};
  std::string config_path, command, out = ".";
  std::optional<std::uint64_t> seed;
  app.add_option("--config", config_path, "JSON config")->required();
  app.add_option("--seed", seed, "64-bit seed (overrides the config's \"seed\")");
  app.add_option("--out", out, "output directory");
  app.add_option("--command", command, "spectrum, weave, shadow, katok or shrink")
      ->check(CLI::IsMember({"spectrum", "weave", "shadow", "katok", "shrink"}));
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : cvp::kExitConfig;
  }

  cvp::RunConfig rc;
  try {
    rc.config = cvp::load_config(config_path);
    rc.seed = seed ? *seed : cvp::detail::field_or<std::uint64_t>(rc.config, "seed", 0);
    rc.command = !command.empty() ? command : cvp::detail::field_or<std::string>(rc.config, "command", "");
    if (rc.command.empty()) throw cvp::PreconditionError("no command given (use --command or \"command\")");
  } catch (const cvp::Error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return cvp::kExitConfig;
  }
  rc.out = out;
  return cvp::run(rc, std::cerr);
}
