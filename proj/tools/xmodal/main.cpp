#include <iostream>
#include <map>
#include <string>

#include "CLI11.hpp"
#include "xmodal/cli/commands.hpp"

namespace cli = xmodal::cli;

int main(int argc, char** argv) {
  CLI::App app{"xmodal: frozen speech encoders as feature extractors for sensor time series"};
  app.set_version_flag("--version", std::string("xmodal ") + cli::kVersion);
  app.require_subcommand(1);

  struct Bound {
    const cli::Command* command;
    CLI::App* sub;
    std::map<std::string, std::string> raw;      // config key -> flag text
    std::map<std::string, std::string> outputs;  // output key -> path
    std::map<std::string, CLI::Option*> opts;
    std::string config_file;
    std::size_t jobs = cli::default_jobs();
  };
  std::vector<std::unique_ptr<Bound>> bound;
  for (const auto& cmd : cli::commands()) {
    auto b = std::make_unique<Bound>();
    b->command = &cmd;
    b->sub = app.add_subcommand(cmd.name, cmd.help);
    b->sub->add_option("--config", b->config_file, "JSON config file or a previous artifact of this command");
    b->sub->add_option("--jobs", b->jobs, "worker threads (default: all cores)")->check(CLI::PositiveNumber);
    for (const auto& o : cmd.options) b->opts[o.key] = b->sub->add_option(cli::flag_name(o.key), b->raw[o.key], o.help);
    for (const auto& o : cmd.outputs) b->sub->add_option(cli::flag_name(o.key), b->outputs[o.key], o.help);
    bound.push_back(std::move(b));
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  for (const auto& b : bound) {
    if (!b->sub->parsed()) continue;
    try {
      nlohmann::json flags = nlohmann::json::object();
      for (const auto& o : b->command->options) {
        if (b->opts.at(o.key)->count()) flags[o.key] = cli::parse_flag(o, b->raw.at(o.key));
      }
      cli::RunContext ctx;
      ctx.outputs = b->outputs;
      ctx.jobs = b->jobs;
      std::optional<std::filesystem::path> config_file;
      if (!b->config_file.empty()) config_file = b->config_file;
      return cli::run_command(*b->command, config_file, flags, ctx);
    } catch (const xmodal::Error& e) {
      std::cerr << "error: " << e.what() << "\n";
      return cli::exit_code(e.category());
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << "\n";
      return 2;
    }
  }
  return 1;
}
