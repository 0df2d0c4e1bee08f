// Command-line driver: runs pipeline stages over an artifact directory and
// exports result tables.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "deltasub/experiment.hpp"
#include "deltasub/tasks.hpp"

using namespace deltasub;

int main(int argc, char** argv) {
  CLI::App app{"delta-tuning subspace analysis pipeline"};
  app.require_subcommand(1);

  std::string config_path;
  std::string stage_name = "all";
  std::string output_override;
  auto* run = app.add_subcommand("run", "run one pipeline stage (or all of them)");
  run->add_option("--config", config_path, "experiment config file")->required();
  run->add_option("--stage", stage_name,
                  "pretrain-backbone | train-pets | approximate | subspace-opt | transfer | "
                  "shared-intrinsic | finetune-ext | landscape | report | all");
  run->add_option("--output", output_override, "override [experiment] output");

  std::string report_config;
  std::string report_out;
  auto* report = app.add_subcommand("report", "aggregate results into a CSV");
  report->add_option("--config", report_config, "experiment config file")->required();
  report->add_option("--out", report_out, "write the report CSV here as well")->required();

  std::string dump_config;
  std::string dump_task;
  std::string dump_split = "test";
  auto* dump = app.add_subcommand("dump-task", "print a task split as token lines");
  dump->add_option("--config", dump_config, "experiment config file")->required();
  dump->add_option("--task", dump_task, "task name from the registry")->required();
  dump->add_option("--split", dump_split, "train | dev | test");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) {
      auto cfg = ExperimentConfig::from_file(config_path);
      if (!output_override.empty()) cfg.output = output_override;
      ExperimentRunner runner(cfg);
      if (stage_name == "all")
        runner.run_all();
      else
        runner.run_stage(stage_from_name(stage_name));
      std::printf("done: %s -> %s\n", stage_name.c_str(), runner.dir().string().c_str());
    } else if (report->parsed()) {
      auto cfg = ExperimentConfig::from_file(report_config);
      ExperimentRunner runner(cfg);
      runner.run_stage(Stage::Report);
      std::filesystem::copy_file(runner.report_csv(), report_out,
                                 std::filesystem::copy_options::overwrite_existing);
      std::printf("report written to %s\n", report_out.c_str());
    } else if (dump->parsed()) {
      auto cfg = ExperimentConfig::from_file(dump_config);
      ExperimentRunner runner(cfg);
      auto reg = runner.task_registry();
      const TaskSpec* spec = nullptr;
      for (const auto& s : reg.train_tasks)
        if (s.name == dump_task) spec = &s;
      for (const auto& s : reg.test_tasks)
        if (s.name == dump_task) spec = &s;
      if (!spec) throw ConfigInvalidError("no task named " + dump_task + " in the registry");
      Split split = dump_split == "train" ? Split::Train
                    : dump_split == "dev" ? Split::Dev
                                          : Split::Test;
      auto task = runner.materialize(*spec);
      std::fputs(serialize_examples(task, split).c_str(), stdout);
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: Internal: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
