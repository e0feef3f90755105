#include <iostream>

#include "CLI11.hpp"
#include "taskemb/cli/pipeline.hpp"

using namespace taskemb;

namespace {

// Exit codes: 0 success, 1 stage failure, 2 configuration error.
int run(const std::string& stage, const std::string& config_path, bool force, std::size_t threads) {
  RunConfig cfg;
  try {
    cfg = load_run_config(config_path);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  }
  try {
    Pipeline pipeline(cfg, config_path, {force, threads, &std::cerr});
    pipeline.run(stage);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const StaleError& e) {
    std::cerr << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << stage << " failed: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Task embeddings from agent-population optimality statistics"};
  app.require_subcommand(1);
  std::string config_path;
  bool force = false;
  std::size_t threads = 0;

  const std::vector<std::pair<std::string, std::string>> commands{
      {"train-population", "Train the agent population"},
      {"gen-constraints", "Estimate outcome statistics and sample ordinal constraints"},
      {"train-embedding", "Train the task embedding network (with and without norm constraints)"},
      {"train-predmodel", "Train the variational PredModel baseline"},
      {"silhouette", "Silhouette scores and norm/difficulty correlation"},
      {"eval-prediction", "Performance prediction benchmark, quiz sizes 1..max"},
      {"eval-selection", "Task selection benchmark, Type-1 and Type-2 queries"},
      {"dim-sweep", "Test loss per embedding dimension"},
      {"export-viz", "Embeddings and PCA projection as CSV"},
      {"run-all", "Every stage in order"},
  };
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config_path, "Run configuration file")->required();
    sub->add_flag("--force", force, "Run even if upstream artifacts are stale, ignoring the stage cache");
    sub->add_option("--threads", threads, "Worker threads (overrides [run] threads)")->check(CLI::PositiveNumber);
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  return run(app.get_subcommands().front()->get_name(), config_path, force, threads);
}
