#pragma once

// Subcommand implementations behind the CLI binary. Each function performs
// one end-to-end action, writes human-readable progress to `log`, and throws
// on failure; exit_code_for maps exceptions to the process exit code
// (2 = usage/config problem, 1 = runtime failure).

#include <ostream>
#include <string>
#include <vector>

namespace ucmnet {

struct SimulateCmd {
  std::string preset = "toled-like";  // poled-like | toled-like | synth-like
  int count = 8;
  int height = 64, width = 64;
  uint64_t seed = 0;
  std::string out_dir;
  std::string image_dir;  // optional: crop real PNGs instead of procedural
};

struct TrainCmd {
  std::string config_path;
  std::vector<std::string> overrides;  // "key=value"
  std::string manifest;
  std::string out_dir;
};

struct RestoreCmd {
  std::string checkpoint;
  std::vector<std::string> inputs;
  std::vector<std::string> references;  // optional, parallel to inputs
  std::string out_dir;
};

struct EvalCmd {
  std::string checkpoint;
  std::string manifest;
};

struct ExportMapsCmd {
  std::string checkpoint;
  std::string input;
  std::string out_dir;
};

struct InspectCmd {
  std::string checkpoint;
};

int cmd_simulate(const SimulateCmd& args, std::ostream& log);
int cmd_train(const TrainCmd& args, std::ostream& log);
int cmd_restore(const RestoreCmd& args, std::ostream& log);
int cmd_eval(const EvalCmd& args, std::ostream& log);
int cmd_export_maps(const ExportMapsCmd& args, std::ostream& log);
int cmd_inspect(const InspectCmd& args, std::ostream& log);

int exit_code_for(const std::exception& error);

}  // namespace ucmnet
