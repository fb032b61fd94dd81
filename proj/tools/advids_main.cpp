#include <cstdio>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "advids/advids.h"

namespace {

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::size_t parallel = 0;
  std::string dataset;
  std::string schema;
};

void add_flags(CLI::App* cmd, Flags& f) {
  cmd->add_option("--config", f.config, "Experiment config JSON (default: synthetic benchmark)")
      ->check(CLI::ExistingFile);
  cmd->add_option("--seed", f.seed, "Global seed");
  cmd->add_option("--out", f.out, "Output directory");
  cmd->add_option("--parallel", f.parallel, "Concurrent matrix cells")->check(CLI::PositiveNumber);
  cmd->add_option("--dataset", f.dataset, "Dataset CSV replacing the configured datasets");
  cmd->add_option("--schema", f.schema, "Dataset layout")
      ->check(CLI::IsMember({"unsw", "nslkdd", "generic", "synthetic"}));
}

int run(const std::string& command, const Flags& f) {
  advids_run_options o{};
  o.config_path = f.config.empty() ? nullptr : f.config.c_str();
  o.has_seed = f.seed.has_value();
  o.seed = f.seed.value_or(0);
  o.out = f.out.empty() ? nullptr : f.out.c_str();
  o.parallel = f.parallel;
  o.dataset = f.dataset.empty() ? nullptr : f.dataset.c_str();
  o.schema = f.schema.empty() ? nullptr : f.schema.c_str();
  const advids_status status = advids_run(command.c_str(), &o);
  if (status != ADVIDS_OK) {
    std::fprintf(stderr, "advids %s: %s error: %s\n", command.c_str(), advids_status_name(status),
                 advids_last_error());
    return advids_exit_code(status);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adversarial robustness experiments for deep intrusion detectors"};
  app.set_version_flag("--version", std::string(advids_version()));
  app.require_subcommand(1);

  const char* commands[][2] = {
      {"preprocess", "Split, encode, scale and select features"},
      {"train", "Train baseline models and report clean test metrics"},
      {"attack", "Attack baseline models and report degraded metrics"},
      {"advtrain", "Adversarially train the model grid and compare with baselines"},
      {"report", "Aggregate every report under --out into summary.csv/json"},
  };
  Flags flags;
  for (const auto& [name, help] : commands) add_flags(app.add_subcommand(name, help), flags);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;  // bad arguments count as unparseable input
  }
  return run(app.get_subcommands().front()->get_name(), flags);
}
