#include <csignal>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "lesionforge/pipeline/config.hpp"
#include "lesionforge/pipeline/selection_service.hpp"
#include "lesionforge/pipeline/stages.hpp"

namespace lp = lf::pipeline;

namespace {

struct CommonArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string data;
  std::string out;
  std::string selections;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config, "Pipeline configuration (JSON)")->check(CLI::ExistingFile);
  cmd->add_option("--seed", args.seed, "Global seed (overrides the config)");
  cmd->add_option("--data", args.data, "Dataset directory (overrides the config)");
  cmd->add_option("--out", args.out, "Output root (overrides the config)");
}

lp::PipelineConfig resolve(const CommonArgs& args) {
  lp::PipelineConfig c = args.config.empty() ? lp::PipelineConfig{} : lp::PipelineConfig::load(args.config);
  if (args.seed) c.set_seed(*args.seed);
  if (!args.data.empty()) c.data_dir = args.data;
  if (!args.out.empty()) c.out_dir = args.out;
  c.validate();
  return c;
}

lp::StageOptions stage_options(const CommonArgs& args) {
  lp::StageOptions o;
  if (!args.selections.empty()) o.selections = args.selections;
  return o;
}

lp::SelectionServer* active_server = nullptr;

extern "C" void handle_signal(int) {
  if (active_server) active_server->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"lesionforge: weakly supervised lesion segmentation pipeline"};
  app.require_subcommand(1);
  CommonArgs args;

  struct Stage {
    const char* name;
    const char* help;
    void (*run)(const lp::PipelineConfig&, const lp::StageOptions&);
  };
  const Stage stages[] = {
      {"superpixels", "SLIC superpixels for every image", lp::run_superpixels},
      {"cluster", "Train the clustering network per image", lp::run_cluster},
      {"candidates", "Size-filtered candidate masks and headless selections", lp::run_candidates},
      {"train-rl", "Train the mask-selection agent", lp::run_train_rl},
      {"predict", "Predict test-set masks", lp::run_predict},
      {"evaluate", "Dice scores and significance test", lp::run_evaluate},
  };
  for (const auto& s : stages) {
    CLI::App* cmd = app.add_subcommand(s.name, s.help);
    add_common(cmd, args);
    if (std::string(s.name) == "train-rl") {
      cmd->add_option("--selections", args.selections, "Selections JSON (default <run>/serve/selections.json)");
    }
    cmd->callback([&args, run = s.run] { run(resolve(args), stage_options(args)); });
  }

  CLI::App* report = app.add_subcommand("report", "Aggregate results into report.json");
  add_common(report, args);
  report->callback([&args] { lp::run_report(resolve(args), stage_options(args)); });

  CLI::App* all = app.add_subcommand("run-all", "Every stage in order, using headless selections by default");
  add_common(all, args);
  all->add_option("--selections", args.selections, "Selections JSON instead of the headless file");
  all->callback([&args] { lp::run_all(resolve(args), stage_options(args)); });

  std::string host = "127.0.0.1";
  int port = 8741;
  std::string static_dir;
  CLI::App* serve = app.add_subcommand("serve", "Selection service for the training images");
  add_common(serve, args);
  serve->add_option("--port", port, "TCP port")->check(CLI::Range(0, 65535));
  serve->add_option("--host", host, "Bind address");
  serve->add_option("--static", static_dir, "Directory of UI assets served at /");
  serve->callback([&] {
    const lp::PipelineConfig c = resolve(args);
    const lp::Warn log = [](const std::string& m) { std::cerr << m << "\n"; };
    auto session = lp::SelectionSession::open(c, log);
    lp::SelectionServer server(*session, static_dir.empty() ? std::nullopt : std::optional<std::filesystem::path>(static_dir));
    const int bound = server.bind(host, port);
    std::cerr << "[serve] http://" << host << ":" << bound << "/  (" << session->progress().dump() << ")\n";
    active_server = &server;
    std::signal(SIGINT, handle_signal);
    std::signal(SIGTERM, handle_signal);
    server.listen();
    active_server = nullptr;
  });

  std::size_t count = 20;
  std::uint64_t synth_seed = 0;
  std::string synth_dir = "data";
  CLI::App* synth = app.add_subcommand("synth", "Generate a synthetic phantom dataset");
  synth->add_option("--count", count, "Number of images")->check(CLI::PositiveNumber);
  synth->add_option("--seed", synth_seed, "Generator seed");
  synth->add_option("--data", synth_dir, "Output directory");
  synth->callback([&] { lp::run_synth(synth_dir, count, synth_seed); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
