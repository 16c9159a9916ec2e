#include "ucmnet/commands.hpp"

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "ucmnet/config.hpp"
#include "ucmnet/palette.hpp"
#include "ucmnet/trainer.hpp"

namespace ucmnet {

namespace fs = std::filesystem;

namespace {

void require_input(const std::string& path, const char* what) {
  if (!fs::exists(path)) throw ParseError(std::string(what) + " not found: " + path);
}

void ensure_dir(const std::string& dir, const char* what) {
  if (dir.empty()) throw ParseError(std::string(what) + " directory must be given");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + std::string(what) + " directory " + dir + ": " + ec.message());
}

DegradationSpec preset_spec(const std::string& name, uint64_t seed) {
  if (name == "poled-like") return poled_like_spec(seed);
  if (name == "toled-like") return toled_like_spec(seed);
  if (name == "synth-like") return synth_like_spec(seed);
  throw ParseError("unknown preset '" + name + "', expected poled-like, toled-like, or synth-like");
}

// baseline quality of the degraded inputs themselves
template <typename T>
EvalResult baseline_metrics(const std::vector<PairedSample<T>>& samples) {
  EvalResult out;
  for (const auto& s : samples) {
    out.mean_psnr += psnr(cast_tensor<double>(s.degraded), cast_tensor<double>(s.clean));
    out.mean_ssim += ssim(cast_tensor<double>(s.degraded), cast_tensor<double>(s.clean));
  }
  out.mean_psnr /= static_cast<double>(samples.size());
  out.mean_ssim /= static_cast<double>(samples.size());
  return out;
}

template <typename T>
struct LoadedModel {
  Model<T> model;
  AdamState<T> opt;
  Rng rng{0};
  int64_t step = 0;
};

template <typename T>
LoadedModel<T> load_model(const std::string& path) {
  LoadedModel<T> out;
  out.model = Model<T>(peek_checkpoint_config(path), 0);
  out.step = load_checkpoint(path, out.model, out.opt, out.rng);
  return out;
}

template <typename T>
TensorT<T> run_forward(const Model<T>& model, const TensorT<T>& input, ForwardResult<T>* stages_out,
                       ad::Tape<T>& tape) {
  const auto vars = bind_params(tape, model.store);
  auto fr = model.forward(vars, ad::constant(tape, input));
  TensorT<T> restored = fr.restored.val();
  for (auto& v : restored.data) v = std::min(T(1), std::max(T(0), v));
  if (stages_out) *stages_out = std::move(fr);
  return restored;
}

template <typename T>
int run_train(const RunConfig& cfg, const TrainCmd& args, std::ostream& log) {
  auto pairs = load_pairs<T>(args.manifest);
  UCM_CHECK(static_cast<int>(pairs.size()) > cfg.holdout, ParseError,
            "manifest holds " << pairs.size() << " pairs, need more than train.holdout = " << cfg.holdout);
  std::vector<PairedSample<T>> held(pairs.end() - cfg.holdout, pairs.end());
  pairs.resize(pairs.size() - static_cast<size_t>(cfg.holdout));
  log << "training on " << pairs.size() << " pairs, " << held.size() << " held out\n";

  TrainConfig<T> tc;
  tc.adam.beta1 = static_cast<T>(cfg.beta1);
  tc.adam.beta2 = static_cast<T>(cfg.beta2);
  tc.adam.eps = static_cast<T>(cfg.eps);
  tc.adam.base_lr = static_cast<T>(cfg.base_lr);
  tc.adam.total_steps = cfg.schedule_steps();
  tc.loss = cfg.loss;
  tc.noise_std = static_cast<T>(cfg.noise_std);
  tc.batch_size = cfg.batch_size;
  tc.crop_h = tc.crop_w = cfg.crop;
  tc.seed = cfg.seed;
  Trainer<T> trainer(cfg.model, tc);
  log << "model parameters: " << trainer.model().count_parameters() << " (+"
      << trainer.model().count_memory_scalars() << " memory scalars)\n";

  const auto& eval_set = held.empty() ? pairs : held;
  const EvalResult before = baseline_metrics(eval_set);

  std::ofstream metrics(fs::path(args.out_dir) / "metrics.jsonl", std::ios::binary);
  if (!metrics) throw IoError("cannot open metrics log in " + args.out_dir);
  const int64_t report_every = std::max<int64_t>(1, cfg.steps / 10);
  for (int64_t i = 0; i < cfg.steps; ++i) {
    const auto rec = trainer.train_step(trainer.sample_batch(pairs));
    append_metric_line(metrics, rec);
    if (rec.step % report_every == 0 || rec.step == cfg.steps)
      log << "step " << rec.step << "/" << cfg.steps << "  loss " << static_cast<double>(rec.loss_total)
          << "  lr " << static_cast<double>(rec.lr) << "\n";
    if (cfg.checkpoint_every > 0 && rec.step % cfg.checkpoint_every == 0 && rec.step != cfg.steps) {
      const auto path = fs::path(args.out_dir) / ("ckpt_" + std::to_string(rec.step) + ".ckpt");
      trainer.save(path.string());
    }
  }
  const auto final_path = fs::path(args.out_dir) / "final.ckpt";
  trainer.save(final_path.string());
  log << "checkpoint: " << final_path.string() << "\n";

  const EvalResult after = evaluate(trainer.model(), eval_set);
  log << std::fixed << std::setprecision(4);
  log << (held.empty() ? "train-set" : "held-out") << " eval: psnr " << after.mean_psnr << " dB (input "
      << before.mean_psnr << "), ssim " << after.mean_ssim << " (input " << before.mean_ssim << ")\n";
  return 0;
}

template <typename T>
int run_restore(const RestoreCmd& args, std::ostream& log) {
  const auto loaded = load_model<T>(args.checkpoint);
  for (size_t i = 0; i < args.inputs.size(); ++i) {
    const auto& in_path = args.inputs[i];
    const TensorT<T> input = cast_tensor<T>(read_png(in_path));
    ad::Tape<T> tape;
    const TensorT<T> restored = run_forward(loaded.model, input, static_cast<ForwardResult<T>*>(nullptr), tape);

    const auto out_path = fs::path(args.out_dir) / (fs::path(in_path).stem().string() + "_restored.png");
    write_png(out_path.string(), cast_tensor<double>(restored), 8);
    log << in_path << " -> " << out_path.string();
    if (!args.references.empty()) {
      const auto ref = read_png(args.references[i]);
      const auto got = cast_tensor<double>(restored);
      log << std::fixed << std::setprecision(4) << "  psnr " << psnr(got, ref) << " dB, ssim "
          << ssim(got, ref);
    }
    log << "\n";
  }
  return 0;
}

template <typename T>
int run_eval(const EvalCmd& args, std::ostream& log) {
  const auto loaded = load_model<T>(args.checkpoint);
  const auto pairs = load_pairs<T>(args.manifest);
  UCM_CHECK(!pairs.empty(), ParseError, "manifest lists no pairs: " << args.manifest);
  const EvalResult base = baseline_metrics(pairs);
  const EvalResult got = evaluate(loaded.model, pairs);
  log << std::fixed << std::setprecision(4);
  log << "pairs: " << pairs.size() << "\n";
  log << "input    psnr " << base.mean_psnr << " dB, ssim " << base.mean_ssim << "\n";
  log << "restored psnr " << got.mean_psnr << " dB, ssim " << got.mean_ssim << "\n";
  return 0;
}

template <typename T>
int run_export_maps(const ExportMapsCmd& args, std::ostream& log) {
  auto loaded = load_model<T>(args.checkpoint);
  const TensorT<T> input = cast_tensor<T>(read_png(args.input));
  ad::Tape<T> tape;
  ForwardResult<T> fr;
  (void)run_forward(loaded.model, input, &fr, tape);

  const auto banks = loaded.model.banks();
  const auto& palette = token_palette();
  for (size_t k = 0; k < fr.stages.size(); ++k) {
    const auto& st = fr.stages[k];

    // (a) per-map min-max normalized uncertainty, grayscale
    TensorT<double> s = cast_tensor<double>(st.s.val());
    double lo = s.data[0], hi = s.data[0];
    for (double v : s.data) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    for (auto& v : s.data) v = hi > lo ? (v - lo) / (hi - lo) : 0.0;
    const auto s_path = fs::path(args.out_dir) / ("uncertainty_stage" + std::to_string(k) + ".png");
    write_png(s_path.string(), s, 8);

    // (b) argmax memory-token address per pixel, palette colored
    const TensorT<T> f_u = st.f_u.val();
    const int h = f_u.shape[0], w = f_u.shape[1], c = f_u.shape[2];
    const TensorT<T> tokens = reshape_raw(f_u, {h * w, c});
    const TensorT<T> scores = cosine_scores_raw(banks[k]->memory, tokens);
    const std::vector<int> addr = argmax_axis0(scores);
    TensorT<double> img({h, w, 3});
    for (int i = 0; i < h * w; ++i) {
      const auto& color = palette[static_cast<size_t>(addr[static_cast<size_t>(i)]) % palette.size()];
      for (int ch = 0; ch < 3; ++ch) img.data[static_cast<size_t>(i) * 3 + ch] = color[static_cast<size_t>(ch)] / 255.0;
    }
    const auto t_path = fs::path(args.out_dir) / ("tokens_stage" + std::to_string(k) + ".png");
    write_png(t_path.string(), img, 8);
    log << "stage " << k << ": " << s_path.string() << ", " << t_path.string() << "\n";
  }
  log << "stages exported: " << fr.stages.size() << "\n";
  return 0;
}

template <typename T>
int run_inspect(const CheckpointHeader& header, const InspectCmd& args, std::ostream& log) {
  const auto loaded = load_model<T>(args.checkpoint);
  const auto& m = loaded.model;
  log << "dtype: " << (header.dtype == 1 ? "f32" : "f64") << "\n";
  log << "stages: " << m.cfg.stages << ", base channels: " << m.cfg.base_channels
      << ", blocks per stage: " << m.cfg.blocks_per_stage << ", growth: " << m.cfg.channel_growth << "\n";
  log << "bank: " << m.cfg.bank_tokens << " tokens, momentum " << m.cfg.bank_momentum << "\n";
  log << "parameters: " << m.count_parameters() << "\n";
  log << "memory scalars: " << m.count_memory_scalars() << "\n";
  log << "trainer step: " << loaded.step << ", optimizer step: " << loaded.opt.step << "\n";
  log << "optimizer: lr " << static_cast<double>(loaded.opt.cfg.base_lr) << " over "
      << loaded.opt.cfg.total_steps << " steps\n";
  return 0;
}

template <typename Fn>
int dispatch_precision(const std::string& checkpoint, Fn&& fn) {
  const auto header = peek_checkpoint_header(checkpoint);
  if (header.dtype == 1) return fn(header, float{});
  if (header.dtype == 2) return fn(header, double{});
  throw ParseError("checkpoint " + checkpoint + " has unknown dtype tag " + std::to_string(header.dtype));
}

}  // namespace

int cmd_simulate(const SimulateCmd& args, std::ostream& log) {
  const DegradationSpec spec = preset_spec(args.preset, args.seed);
  ensure_dir(args.out_dir, "output");
  if (!args.image_dir.empty()) require_input(args.image_dir, "image directory");

  DatasetConfig cfg;
  cfg.count = args.count;
  cfg.height = args.height;
  cfg.width = args.width;
  cfg.seed = args.seed;
  cfg.out_dir = args.out_dir;
  cfg.image_dir = args.image_dir;

  std::ostringstream t;
  t << spec.transmittance;
  const auto entries = generate_dataset(cfg, spec,
                                        {"preset = " + args.preset, "transmittance = " + t.str(),
                                         "seed = " + std::to_string(args.seed)});
  log << "wrote " << entries.size() << " pairs to " << (fs::path(args.out_dir) / "manifest.tsv").string()
      << " (preset " << args.preset << ", t = " << t.str() << ")\n";
  return 0;
}

int cmd_train(const TrainCmd& args, std::ostream& log) {
  RunConfig cfg = load_config(args.config_path);
  for (const auto& o : args.overrides) apply_override(cfg, o);
  cfg.validate();
  require_input(args.manifest, "data manifest");
  ensure_dir(args.out_dir, "output");

  std::ofstream cfg_copy(fs::path(args.out_dir) / "config.cfg", std::ios::binary);
  cfg_copy << config_to_text(cfg);
  cfg_copy.close();

  if (cfg.precision == "f32") return run_train<float>(cfg, args, log);
  return run_train<double>(cfg, args, log);
}

int cmd_restore(const RestoreCmd& args, std::ostream& log) {
  require_input(args.checkpoint, "checkpoint");
  UCM_CHECK(!args.inputs.empty(), ParseError, "restore needs at least one input image");
  UCM_CHECK(args.references.empty() || args.references.size() == args.inputs.size(), ParseError,
            "got " << args.references.size() << " references for " << args.inputs.size() << " inputs");
  for (const auto& p : args.inputs) require_input(p, "input image");
  for (const auto& p : args.references) require_input(p, "reference image");
  ensure_dir(args.out_dir, "output");
  return dispatch_precision(args.checkpoint, [&](const CheckpointHeader&, auto tag) {
    return run_restore<decltype(tag)>(args, log);
  });
}

int cmd_eval(const EvalCmd& args, std::ostream& log) {
  require_input(args.checkpoint, "checkpoint");
  require_input(args.manifest, "data manifest");
  return dispatch_precision(args.checkpoint, [&](const CheckpointHeader&, auto tag) {
    return run_eval<decltype(tag)>(args, log);
  });
}

int cmd_export_maps(const ExportMapsCmd& args, std::ostream& log) {
  require_input(args.checkpoint, "checkpoint");
  require_input(args.input, "input image");
  ensure_dir(args.out_dir, "output");
  return dispatch_precision(args.checkpoint, [&](const CheckpointHeader&, auto tag) {
    return run_export_maps<decltype(tag)>(args, log);
  });
}

int cmd_inspect(const InspectCmd& args, std::ostream& log) {
  require_input(args.checkpoint, "checkpoint");
  return dispatch_precision(args.checkpoint, [&](const CheckpointHeader& header, auto tag) {
    return run_inspect<decltype(tag)>(header, args, log);
  });
}

int exit_code_for(const std::exception& error) {
  return dynamic_cast<const ParseError*>(&error) != nullptr ? 2 : 1;
}

}  // namespace ucmnet
