#include <iostream>

#include "CLI11.hpp"
#include "ucmnet/commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"under-display-camera image restoration toolkit"};
  app.require_subcommand(1);

  ucmnet::SimulateCmd sim;
  auto* s_sim = app.add_subcommand("simulate", "generate a paired degradation dataset");
  s_sim->add_option("--preset", sim.preset, "poled-like | toled-like | synth-like")->capture_default_str();
  s_sim->add_option("-n,--count", sim.count, "number of pairs")->capture_default_str();
  s_sim->add_option("--height", sim.height, "image height")->capture_default_str();
  s_sim->add_option("--width", sim.width, "image width")->capture_default_str();
  s_sim->add_option("--seed", sim.seed, "dataset seed")->capture_default_str();
  s_sim->add_option("--out", sim.out_dir, "output directory")->required();
  s_sim->add_option("--image-dir", sim.image_dir, "crop clean images from this directory of PNGs");

  ucmnet::TrainCmd train;
  auto* s_train = app.add_subcommand("train", "train a model on a simulated dataset");
  s_train->add_option("--config", train.config_path, "run configuration file")->required();
  s_train->add_option("--set", train.overrides, "override a config key, e.g. --set loss.variant=l1-total");
  s_train->add_option("--data", train.manifest, "dataset manifest")->required();
  s_train->add_option("--out", train.out_dir, "output directory")->required();

  ucmnet::RestoreCmd restore;
  auto* s_restore = app.add_subcommand("restore", "restore degraded images with a trained checkpoint");
  s_restore->add_option("--checkpoint", restore.checkpoint, "model checkpoint")->required();
  s_restore->add_option("--reference", restore.references, "ground-truth images for per-image metrics");
  s_restore->add_option("--out", restore.out_dir, "output directory")->required();
  s_restore->add_option("inputs", restore.inputs, "degraded PNG images")->required();

  ucmnet::EvalCmd eval;
  auto* s_eval = app.add_subcommand("eval", "report PSNR/SSIM of a checkpoint over a dataset");
  s_eval->add_option("--checkpoint", eval.checkpoint, "model checkpoint")->required();
  s_eval->add_option("--data", eval.manifest, "dataset manifest")->required();

  ucmnet::ExportMapsCmd maps;
  auto* s_maps = app.add_subcommand("export-maps", "export uncertainty and token-usage maps per stage");
  s_maps->add_option("--checkpoint", maps.checkpoint, "model checkpoint")->required();
  s_maps->add_option("--input", maps.input, "degraded PNG image")->required();
  s_maps->add_option("--out", maps.out_dir, "output directory")->required();

  ucmnet::InspectCmd inspect;
  auto* s_inspect = app.add_subcommand("inspect-checkpoint", "print checkpoint header and sizes");
  s_inspect->add_option("checkpoint", inspect.checkpoint, "model checkpoint")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (s_sim->parsed()) return ucmnet::cmd_simulate(sim, std::cout);
    if (s_train->parsed()) return ucmnet::cmd_train(train, std::cout);
    if (s_restore->parsed()) return ucmnet::cmd_restore(restore, std::cout);
    if (s_eval->parsed()) return ucmnet::cmd_eval(eval, std::cout);
    if (s_maps->parsed()) return ucmnet::cmd_export_maps(maps, std::cout);
    if (s_inspect->parsed()) return ucmnet::cmd_inspect(inspect, std::cout);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return ucmnet::exit_code_for(e);
  }
  return 0;
}
