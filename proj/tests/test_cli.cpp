#include "doctest.h"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include "json.hpp"
#include "ucmnet/checkpoint.hpp"
#include "ucmnet/commands.hpp"
#include "ucmnet/config.hpp"
#include "ucmnet/datasim.hpp"
#include "ucmnet/palette.hpp"
#include "ucmnet/png_io.hpp"

using namespace ucmnet;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

// Tiny model + dataset shared by the command round-trip cases.
ModelConfig small_model() {
  ModelConfig mc;
  mc.stages = 2;
  mc.base_channels = 2;
  mc.blocks_per_stage = 1;
  mc.channel_growth = 2;
  mc.bank_tokens = 4;
  return mc;
}

// Fresh checkpoint at step 0: the network is an exact identity map.
void write_identity_checkpoint(const fs::path& path) {
  Model<double> model(small_model(), 7);
  AdamConfig<double> acfg;
  acfg.total_steps = 10;
  AdamState<double> opt(model.store, acfg);
  Rng rng(3);
  save_checkpoint(path.string(), model, opt, rng, 0);
}

int run_simulate(const fs::path& out, const std::string& preset, int count, int hw,
                 uint64_t seed) {
  SimulateCmd cmd;
  cmd.preset = preset;
  cmd.count = count;
  cmd.height = hw;
  cmd.width = hw;
  cmd.seed = seed;
  cmd.out_dir = out.string();
  std::ostringstream log;
  return cmd_simulate(cmd, log);
}

}  // namespace

// ---------------------------------------------------------------------------
// config parsing
// ---------------------------------------------------------------------------

TEST_CASE("config text parses keys, comments, and last-wins duplicates") {
  const std::string text =
      "# training recipe\n"
      "model.stages = 2   # shallow\n"
      "model.base_channels = 8\n"
      "\n"
      "train.steps = 50\n"
      "train.steps = 75\n"
      "loss.variant = l1-total\n"
      "optim.base_lr = 1e-3\n"
      "train.precision = f32\n";
  const RunConfig cfg = parse_config_text(text, "inline");
  CHECK(cfg.model.stages == 2);
  CHECK(cfg.model.base_channels == 8);
  CHECK(cfg.steps == 75);
  CHECK(cfg.loss.fidelity == LossConfig::Fidelity::kL1);
  CHECK(cfg.base_lr == doctest::Approx(1e-3));
  CHECK(cfg.precision == "f32");
  // untouched keys keep their defaults
  CHECK(cfg.model.bank_tokens == 256);
  CHECK(cfg.loss.lambda1 == doctest::Approx(100.0));
  CHECK(cfg.batch_size == 4);
}

TEST_CASE("config parser reports unknown keys and bad values with line numbers") {
  CHECK_THROWS_WITH_AS(parse_config_text("train.steps = 10\nmodel.depth = 3\n", "run.cfg"),
                       doctest::Contains("run.cfg line 2"), ParseError);
  CHECK_THROWS_WITH_AS(parse_config_text("model.depth = 3\n", "run.cfg"),
                       doctest::Contains("unknown key 'model.depth'"), ParseError);
  CHECK_THROWS_AS(parse_config_text("train.steps = ten\n", "run.cfg"), ParseError);
  CHECK_THROWS_AS(parse_config_text("train.steps = 10 10\n", "run.cfg"), ParseError);
  CHECK_THROWS_AS(parse_config_text("optim.base_lr = 1e-3x\n", "run.cfg"), ParseError);
  CHECK_THROWS_AS(parse_config_text("loss.variant = mse-total\n", "run.cfg"), ParseError);
  CHECK_THROWS_AS(parse_config_text("train.precision = f16\n", "run.cfg"), ParseError);
  CHECK_THROWS_AS(parse_config_text("train.steps\n", "run.cfg"), ParseError);
}

TEST_CASE("config overrides mirror the file grammar") {
  RunConfig cfg = RunConfig::tiny();
  apply_override(cfg, "train.steps=7");
  apply_override(cfg, "loss.variant=l1-total");
  apply_override(cfg, "model.bank_tokens = 32");
  CHECK(cfg.steps == 7);
  CHECK(cfg.loss.fidelity == LossConfig::Fidelity::kL1);
  CHECK(cfg.model.bank_tokens == 32);

  CHECK_THROWS_WITH_AS(apply_override(cfg, "train.steps"), doctest::Contains("--set"),
                       ParseError);
  CHECK_THROWS_WITH_AS(apply_override(cfg, "nope=1"), doctest::Contains("unknown key"),
                       ParseError);
}

TEST_CASE("config survives a text round trip") {
  RunConfig cfg = RunConfig::desk();
  cfg.model.stages = 4;
  cfg.loss.lambda2 = 0.25;
  cfg.loss.fidelity = LossConfig::Fidelity::kL1;
  cfg.base_lr = 3.125e-4;
  cfg.noise_std = 0.0;
  cfg.seed = 12345;
  cfg.precision = "f32";

  const RunConfig back = parse_config_text(config_to_text(cfg), "round-trip");
  CHECK(back.model.stages == cfg.model.stages);
  CHECK(back.model.base_channels == cfg.model.base_channels);
  CHECK(back.model.bank_tokens == cfg.model.bank_tokens);
  CHECK(back.model.bank_momentum == cfg.model.bank_momentum);
  CHECK(back.loss.lambda1 == cfg.loss.lambda1);
  CHECK(back.loss.lambda2 == cfg.loss.lambda2);
  CHECK(back.loss.fidelity == cfg.loss.fidelity);
  CHECK(back.beta1 == cfg.beta1);
  CHECK(back.beta2 == cfg.beta2);
  CHECK(back.eps == cfg.eps);
  CHECK(back.base_lr == cfg.base_lr);
  CHECK(back.total_steps == cfg.total_steps);
  CHECK(back.steps == cfg.steps);
  CHECK(back.batch_size == cfg.batch_size);
  CHECK(back.crop == cfg.crop);
  CHECK(back.noise_std == cfg.noise_std);
  CHECK(back.seed == cfg.seed);
  CHECK(back.precision == cfg.precision);
  CHECK(back.checkpoint_every == cfg.checkpoint_every);
  CHECK(back.holdout == cfg.holdout);
}

TEST_CASE("config validation rejects crops the stage pyramid cannot cover") {
  RunConfig cfg = RunConfig::tiny();
  cfg.model.stages = 3;
  cfg.crop = 20;  // not a multiple of 8
  CHECK_THROWS_AS(cfg.validate(), ParseError);
  cfg.crop = 24;
  CHECK_NOTHROW(cfg.validate());

  RunConfig bad = RunConfig::tiny();
  bad.steps = 0;
  CHECK_THROWS_AS(bad.validate(), ParseError);
}

TEST_CASE("missing config file is a usage error") {
  CHECK_THROWS_AS(load_config("/nonexistent/nowhere.cfg"), ParseError);
}

TEST_CASE("shipped configs parse and match their presets") {
  const fs::path configs = fs::path(UCMNET_SOURCE_DIR) / "configs";

  const RunConfig tiny = load_config((configs / "tiny.cfg").string());
  tiny.validate();
  const RunConfig tiny_ref = RunConfig::tiny();
  CHECK(tiny.model.stages == tiny_ref.model.stages);
  CHECK(tiny.model.base_channels == tiny_ref.model.base_channels);
  CHECK(tiny.model.bank_tokens == tiny_ref.model.bank_tokens);
  CHECK(tiny.steps == tiny_ref.steps);
  CHECK(tiny.crop == tiny_ref.crop);
  CHECK(tiny.holdout == tiny_ref.holdout);

  const RunConfig desk = load_config((configs / "desk.cfg").string());
  desk.validate();
  const RunConfig desk_ref = RunConfig::desk();
  CHECK(desk.model.stages == desk_ref.model.stages);
  CHECK(desk.model.base_channels == desk_ref.model.base_channels);
  CHECK(desk.model.bank_tokens == desk_ref.model.bank_tokens);
  CHECK(desk.model.bank_momentum == desk_ref.model.bank_momentum);
  CHECK(desk.loss.lambda1 == desk_ref.loss.lambda1);
  CHECK(desk.loss.lambda2 == desk_ref.loss.lambda2);
  CHECK(desk.base_lr == desk_ref.base_lr);
  CHECK(desk.steps == desk_ref.steps);
  CHECK(desk.crop == desk_ref.crop);
  CHECK(desk.noise_std == desk_ref.noise_std);

  const RunConfig paper = load_config((configs / "paper.cfg").string());
  paper.validate();
  const RunConfig paper_ref = RunConfig::paper_scale();
  CHECK(paper.model.base_channels == paper_ref.model.base_channels);
  CHECK(paper.model.blocks_per_stage == paper_ref.model.blocks_per_stage);
  CHECK(paper.steps == paper_ref.steps);
  CHECK(paper.crop == paper_ref.crop);
  CHECK(paper.checkpoint_every == paper_ref.checkpoint_every);
}

// ---------------------------------------------------------------------------
// palette
// ---------------------------------------------------------------------------

TEST_CASE("token palette holds 256 distinct deterministic colors") {
  const Palette& pal = token_palette();
  std::set<std::array<uint8_t, 3>> seen(pal.begin(), pal.end());
  CHECK(seen.size() == 256);
  const Palette& again = token_palette();
  CHECK(&pal == &again);
  for (int i = 0; i < 256; ++i) CHECK(pal[i] == again[i]);
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

TEST_CASE("simulate writes pairs plus a manifest that records the preset") {
  const fs::path dir = fresh_dir("ucm_cli_sim_a");
  CHECK(run_simulate(dir, "poled-like", 3, 24, 5) == 0);

  for (int i = 0; i < 3; ++i) {
    char clean[32], deg[32];
    std::snprintf(clean, sizeof(clean), "clean_%04d.png", i);
    std::snprintf(deg, sizeof(deg), "degraded_%04d.png", i);
    CHECK(fs::exists(dir / clean));
    CHECK(fs::exists(dir / deg));
  }
  const std::string manifest = slurp(dir / "manifest.tsv");
  CHECK(manifest.find("preset = poled-like") != std::string::npos);
  CHECK(manifest.find("transmittance = 0.03") != std::string::npos);

  const auto entries = read_manifest((dir / "manifest.tsv").string());
  CHECK(entries.size() == 3);
  CHECK(entries[0].clean_path == "clean_0000.png");

  // same seed, different directory: byte-identical data
  const fs::path dir2 = fresh_dir("ucm_cli_sim_b");
  CHECK(run_simulate(dir2, "poled-like", 3, 24, 5) == 0);
  CHECK(slurp(dir / "manifest.tsv") == slurp(dir2 / "manifest.tsv"));
  CHECK(slurp(dir / "degraded_0002.png") == slurp(dir2 / "degraded_0002.png"));

  CHECK_THROWS_AS(run_simulate(fresh_dir("ucm_cli_sim_c"), "plasma-like", 1, 24, 0),
                  ParseError);
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

TEST_CASE("train runs the shipped tiny recipe end to end") {
  const fs::path data = fresh_dir("ucm_cli_train_data");
  REQUIRE(run_simulate(data, "toled-like", 8, 32, 11) == 0);

  const fs::path run = fresh_dir("ucm_cli_train_run");
  TrainCmd cmd;
  cmd.config_path = (fs::path(UCMNET_SOURCE_DIR) / "configs" / "tiny.cfg").string();
  cmd.manifest = (data / "manifest.tsv").string();
  cmd.out_dir = (run / "out").string();
  cmd.overrides = {"train.seed=9"};
  std::ostringstream log;
  CHECK(cmd_train(cmd, log) == 0);
  CHECK(log.str().find("held-out eval") != std::string::npos);

  // tiny.cfg: 100 steps, checkpoints every 50, final step folded into final.ckpt
  const fs::path out = run / "out";
  CHECK(fs::exists(out / "final.ckpt"));
  CHECK(fs::exists(out / "ckpt_50.ckpt"));
  CHECK_FALSE(fs::exists(out / "ckpt_100.ckpt"));

  // the stored config reflects overrides and reproduces the run settings
  const RunConfig stored = load_config((out / "config.cfg").string());
  CHECK(stored.steps == 100);
  CHECK(stored.seed == 9);
  CHECK(stored.model.base_channels == 2);

  // one JSON record per step, parseable, with monotone step numbers
  std::ifstream metrics(out / "metrics.jsonl");
  std::string line;
  int64_t steps_seen = 0;
  while (std::getline(metrics, line)) {
    const auto rec = nlohmann::json::parse(line);
    ++steps_seen;
    CHECK(rec.at("step").get<int64_t>() == steps_seen);
    CHECK(rec.at("loss_total").is_number());
    CHECK(rec.at("lr").get<double>() >= 0.0);
    CHECK(rec.contains("loss_hf"));
    CHECK(rec.contains("loss_fidelity"));
    CHECK(rec.contains("grad_norm"));
  }
  CHECK(steps_seen == 100);

  const auto header = peek_checkpoint_header((out / "final.ckpt").string());
  CHECK(header.model.stages == 2);
  CHECK(header.dtype == 2);  // f64

  // the alternative fidelity term is selectable from the command line
  TrainCmd l1 = cmd;
  l1.out_dir = (run / "out_l1").string();
  l1.overrides = {"train.seed=9", "train.steps=3", "train.checkpoint_every=0",
                  "loss.variant=l1-total"};
  std::ostringstream log_l1;
  CHECK(cmd_train(l1, log_l1) == 0);
  const RunConfig stored_l1 = load_config((run / "out_l1" / "config.cfg").string());
  CHECK(stored_l1.loss.fidelity == LossConfig::Fidelity::kL1);
}

TEST_CASE("train usage failures map to exit code 2") {
  const fs::path dir = fresh_dir("ucm_cli_train_bad");
  const fs::path cfg_path = dir / "ok.cfg";
  {
    std::ofstream out(cfg_path);
    out << "train.steps = 5\ntrain.crop = 16\nmodel.stages = 2\n"
           "model.base_channels = 2\nmodel.bank_tokens = 4\ntrain.holdout = 1\n";
  }

  TrainCmd missing;
  missing.config_path = cfg_path.string();
  missing.manifest = (dir / "absent.tsv").string();
  missing.out_dir = (dir / "out").string();
  std::ostringstream log;
  try {
    cmd_train(missing, log);
    FAIL("expected a missing-manifest error");
  } catch (const std::exception& e) {
    CHECK(exit_code_for(e) == 2);
    CHECK(std::string(e.what()).find("absent.tsv") != std::string::npos);
  }

  TrainCmd bad_override = missing;
  bad_override.overrides = {"model.depth=4"};
  try {
    cmd_train(bad_override, log);
    FAIL("expected an unknown-key error");
  } catch (const std::exception& e) {
    CHECK(exit_code_for(e) == 2);
  }
}

// ---------------------------------------------------------------------------
// restore / eval
// ---------------------------------------------------------------------------

TEST_CASE("restore through an untrained model reproduces the input exactly") {
  const fs::path dir = fresh_dir("ucm_cli_restore");
  const fs::path ckpt = dir / "zero.ckpt";
  write_identity_checkpoint(ckpt);

  // 20x28 exercises the pad-to-multiple-of-4 and crop-back path
  const TensorT<double> image = procedural_image(20, 28, 21);
  const fs::path in_a = dir / "shot_a.png";
  const fs::path in_b = dir / "shot_b.png";
  const fs::path in_c = dir / "shot_c.png";
  write_png(in_a.string(), image, 8);
  write_png(in_b.string(), procedural_image(24, 24, 22), 8);
  write_png(in_c.string(), procedural_image(16, 16, 23), 8);

  RestoreCmd cmd;
  cmd.checkpoint = ckpt.string();
  cmd.inputs = {in_a.string(), in_b.string(), in_c.string()};
  cmd.out_dir = (dir / "out").string();
  std::ostringstream log;
  CHECK(cmd_restore(cmd, log) == 0);

  for (const char* stem : {"shot_a", "shot_b", "shot_c"}) {
    CHECK(fs::exists(dir / "out" / (std::string(stem) + "_restored.png")));
  }

  const TensorT<double> in_px = read_png(in_a.string());
  const TensorT<double> out_px = read_png((dir / "out" / "shot_a_restored.png").string());
  REQUIRE(out_px.shape == in_px.shape);
  double max_diff = 0;
  for (size_t i = 0; i < in_px.data.size(); ++i) {
    max_diff = std::max(max_diff, std::abs(in_px.data[i] - out_px.data[i]));
  }
  CHECK(max_diff == 0.0);
}

TEST_CASE("restore distinguishes usage errors from broken inputs") {
  const fs::path dir = fresh_dir("ucm_cli_restore_bad");
  const fs::path ckpt = dir / "zero.ckpt";
  write_identity_checkpoint(ckpt);

  RestoreCmd missing;
  missing.checkpoint = ckpt.string();
  missing.inputs = {(dir / "ghost.png").string()};
  missing.out_dir = (dir / "out").string();
  std::ostringstream log;
  try {
    cmd_restore(missing, log);
    FAIL("expected a missing-input error");
  } catch (const std::exception& e) {
    CHECK(exit_code_for(e) == 2);
    CHECK(std::string(e.what()).find("ghost.png") != std::string::npos);
  }

  const fs::path corrupt = dir / "corrupt.png";
  {
    std::ofstream out(corrupt, std::ios::binary);
    out << "not a png";
  }
  RestoreCmd broken = missing;
  broken.inputs = {corrupt.string()};
  try {
    cmd_restore(broken, log);
    FAIL("expected a decode error");
  } catch (const std::exception& e) {
    CHECK(exit_code_for(e) == 1);
    CHECK(std::string(e.what()).find("corrupt.png") != std::string::npos);
  }
}

TEST_CASE("eval through an untrained model scores restored equal to input") {
  const fs::path data = fresh_dir("ucm_cli_eval_data");
  REQUIRE(run_simulate(data, "toled-like", 2, 32, 13) == 0);
  const fs::path ckpt = data / "zero.ckpt";
  write_identity_checkpoint(ckpt);

  EvalCmd cmd;
  cmd.checkpoint = ckpt.string();
  cmd.manifest = (data / "manifest.tsv").string();
  std::ostringstream log;
  CHECK(cmd_eval(cmd, log) == 0);

  // identity model: the "restored" and "input" rows must agree digit for digit
  const std::string text = log.str();
  const auto input_at = text.find("input");
  const auto restored_at = text.find("restored");
  REQUIRE(input_at != std::string::npos);
  REQUIRE(restored_at != std::string::npos);
  const std::string input_line = text.substr(input_at, text.find('\n', input_at) - input_at);
  const std::string restored_line =
      text.substr(restored_at, text.find('\n', restored_at) - restored_at);
  CHECK(input_line.substr(input_line.find("psnr")) ==
        restored_line.substr(restored_line.find("psnr")));
}

// ---------------------------------------------------------------------------
// export-maps / inspect
// ---------------------------------------------------------------------------

TEST_CASE("export-maps writes one uncertainty and one token map per stage") {
  const fs::path dir = fresh_dir("ucm_cli_maps");
  const fs::path ckpt = dir / "zero.ckpt";
  write_identity_checkpoint(ckpt);
  const fs::path input = dir / "frame.png";
  write_png(input.string(), procedural_image(24, 24, 31), 8);

  ExportMapsCmd cmd;
  cmd.checkpoint = ckpt.string();
  cmd.input = input.string();
  cmd.out_dir = (dir / "maps").string();
  std::ostringstream log;
  CHECK(cmd_export_maps(cmd, log) == 0);
  CHECK(log.str().find("stages exported: 2") != std::string::npos);

  std::set<std::array<uint8_t, 3>> palette_colors(token_palette().begin(),
                                                  token_palette().end());
  for (int stage = 0; stage < 2; ++stage) {
    const fs::path unc =
        dir / "maps" / ("uncertainty_stage" + std::to_string(stage) + ".png");
    const fs::path tok = dir / "maps" / ("tokens_stage" + std::to_string(stage) + ".png");
    REQUIRE(fs::exists(unc));
    REQUIRE(fs::exists(tok));

    // uncertainty: grayscale, min-max normalized (or all zero when flat)
    const TensorT<double> u = read_png(unc.string());
    double lo = 1.0, hi = 0.0;
    for (int i = 0; i < u.shape[0]; ++i) {
      for (int j = 0; j < u.shape[1]; ++j) {
        CHECK(u.at({i, j, 0}) == u.at({i, j, 1}));
        CHECK(u.at({i, j, 0}) == u.at({i, j, 2}));
        lo = std::min(lo, u.at({i, j, 0}));
        hi = std::max(hi, u.at({i, j, 0}));
      }
    }
    CHECK(lo == 0.0);
    CHECK((hi == 1.0 || hi == 0.0));

    // token map: every pixel is one of the 256 palette colors
    const TensorT<double> t = read_png(tok.string());
    for (int i = 0; i < t.shape[0]; ++i) {
      for (int j = 0; j < t.shape[1]; ++j) {
        const std::array<uint8_t, 3> px = {
            static_cast<uint8_t>(std::lround(t.at({i, j, 0}) * 255.0)),
            static_cast<uint8_t>(std::lround(t.at({i, j, 1}) * 255.0)),
            static_cast<uint8_t>(std::lround(t.at({i, j, 2}) * 255.0))};
        CHECK(palette_colors.count(px) == 1);
      }
    }
  }
}

TEST_CASE("inspect summarizes the stored run") {
  const fs::path dir = fresh_dir("ucm_cli_inspect");
  const fs::path ckpt = dir / "zero.ckpt";
  write_identity_checkpoint(ckpt);

  InspectCmd cmd;
  cmd.checkpoint = ckpt.string();
  std::ostringstream log;
  CHECK(cmd_inspect(cmd, log) == 0);
  const std::string text = log.str();
  CHECK(text.find("dtype: f64") != std::string::npos);
  CHECK(text.find("stages: 2") != std::string::npos);
  CHECK(text.find("parameters:") != std::string::npos);
  CHECK(text.find("trainer step: 0") != std::string::npos);
}

// ---------------------------------------------------------------------------
// process-level behavior
// ---------------------------------------------------------------------------

TEST_CASE("exceptions map to the documented exit codes") {
  CHECK(exit_code_for(ParseError("bad flag")) == 2);
  CHECK(exit_code_for(IoError("disk on fire")) == 1);
  CHECK(exit_code_for(NumericError("nan")) == 1);
  CHECK(exit_code_for(std::runtime_error("other")) == 1);
}

TEST_CASE("binary smoke: help exits 0, unknown command exits 2") {
  if (!fs::exists("./ucmnet")) return;  // only meaningful from the build tree
  const int help = std::system("./ucmnet --help > /dev/null 2>&1");
  REQUIRE(help != -1);
  CHECK(WEXITSTATUS(help) == 0);
  const int bogus = std::system("./ucmnet frobnicate > /dev/null 2>&1");
  REQUIRE(bogus != -1);
  CHECK(WEXITSTATUS(bogus) == 2);
}
