#include "ucmnet/config.hpp"

#include <fstream>
#include <sstream>

namespace ucmnet {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

[[noreturn]] void bad(const std::string& where, const std::string& what) {
  throw ParseError(where + ": " + what);
}

int64_t parse_i64(const std::string& where, const std::string& v) {
  try {
    size_t used = 0;
    const int64_t out = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument("trailing junk");
    return out;
  } catch (const std::exception&) {
    bad(where, "expected an integer, got '" + v + "'");
  }
}

uint64_t parse_u64(const std::string& where, const std::string& v) {
  try {
    size_t used = 0;
    const uint64_t out = std::stoull(v, &used);
    if (used != v.size() || v[0] == '-') throw std::invalid_argument("negative");
    return out;
  } catch (const std::exception&) {
    bad(where, "expected a nonnegative integer, got '" + v + "'");
  }
}

double parse_f64(const std::string& where, const std::string& v) {
  try {
    size_t used = 0;
    const double out = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument("trailing junk");
    return out;
  } catch (const std::exception&) {
    bad(where, "expected a number, got '" + v + "'");
  }
}

int parse_i32(const std::string& where, const std::string& v) {
  const int64_t x = parse_i64(where, v);
  if (x < INT32_MIN || x > INT32_MAX) bad(where, "integer out of range: '" + v + "'");
  return static_cast<int>(x);
}

// single source of truth for the key space
void assign(RunConfig& c, const std::string& key, const std::string& value, const std::string& where) {
  if (key == "model.stages")
    c.model.stages = parse_i32(where, value);
  else if (key == "model.base_channels")
    c.model.base_channels = parse_i32(where, value);
  else if (key == "model.blocks_per_stage")
    c.model.blocks_per_stage = parse_i32(where, value);
  else if (key == "model.channel_growth")
    c.model.channel_growth = parse_i32(where, value);
  else if (key == "model.bank_tokens")
    c.model.bank_tokens = parse_i32(where, value);
  else if (key == "model.bank_momentum")
    c.model.bank_momentum = parse_f64(where, value);
  else if (key == "loss.lambda1")
    c.loss.lambda1 = parse_f64(where, value);
  else if (key == "loss.lambda2")
    c.loss.lambda2 = parse_f64(where, value);
  else if (key == "loss.variant") {
    if (value == "psnr-total")
      c.loss.fidelity = LossConfig::Fidelity::kPsnr;
    else if (value == "l1-total")
      c.loss.fidelity = LossConfig::Fidelity::kL1;
    else
      bad(where, "loss.variant must be psnr-total or l1-total, got '" + value + "'");
  } else if (key == "optim.beta1")
    c.beta1 = parse_f64(where, value);
  else if (key == "optim.beta2")
    c.beta2 = parse_f64(where, value);
  else if (key == "optim.eps")
    c.eps = parse_f64(where, value);
  else if (key == "optim.base_lr")
    c.base_lr = parse_f64(where, value);
  else if (key == "optim.total_steps")
    c.total_steps = parse_i64(where, value);
  else if (key == "train.steps")
    c.steps = parse_i64(where, value);
  else if (key == "train.batch_size")
    c.batch_size = parse_i32(where, value);
  else if (key == "train.crop")
    c.crop = parse_i32(where, value);
  else if (key == "train.noise_std")
    c.noise_std = parse_f64(where, value);
  else if (key == "train.seed")
    c.seed = parse_u64(where, value);
  else if (key == "train.precision") {
    if (value != "f32" && value != "f64")
      bad(where, "train.precision must be f32 or f64, got '" + value + "'");
    c.precision = value;
  } else if (key == "train.checkpoint_every")
    c.checkpoint_every = parse_i64(where, value);
  else if (key == "train.holdout")
    c.holdout = parse_i32(where, value);
  else
    bad(where, "unknown key '" + key + "'");
}

}  // namespace

void RunConfig::validate() const {
  model.validate();
  loss.validate();
  UCM_CHECK(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1, ParseError, "optim betas must lie in [0,1)");
  UCM_CHECK(eps > 0 && base_lr >= 0, ParseError, "optim.eps must be positive, optim.base_lr nonnegative");
  UCM_CHECK(total_steps >= 0, ParseError, "optim.total_steps must be >= 0");
  UCM_CHECK(steps >= 1, ParseError, "train.steps must be >= 1");
  UCM_CHECK(batch_size >= 1, ParseError, "train.batch_size must be >= 1");
  UCM_CHECK(crop >= 1, ParseError, "train.crop must be >= 1");
  UCM_CHECK(crop % (1 << model.stages) == 0, ParseError,
            "train.crop " << crop << " must be divisible by 2^stages = " << (1 << model.stages)
                          << " so stage supervision maps stay aligned");
  UCM_CHECK(noise_std >= 0, ParseError, "train.noise_std must be >= 0");
  UCM_CHECK(checkpoint_every >= 0, ParseError, "train.checkpoint_every must be >= 0");
  UCM_CHECK(holdout >= 0, ParseError, "train.holdout must be >= 0");
}

RunConfig RunConfig::tiny() {
  RunConfig c;
  c.model = ModelConfig::tiny();
  c.steps = 100;
  c.batch_size = 2;
  c.crop = 16;
  c.checkpoint_every = 50;
  c.holdout = 2;
  return c;
}

RunConfig RunConfig::desk() {
  RunConfig c;
  c.model = ModelConfig::desk();
  return c;
}

RunConfig RunConfig::paper_scale() {
  RunConfig c;
  c.model = ModelConfig::paper_scale();
  c.steps = 240000;
  c.crop = 256;
  c.checkpoint_every = 10000;
  return c;
}

RunConfig parse_config_text(const std::string& text, const std::string& origin) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = origin + " line " + std::to_string(lineno);
    const size_t eq = line.find('=');
    if (eq == std::string::npos) bad(where, "expected 'key = value', got '" + line + "'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) bad(where, "empty key");
    if (value.empty()) bad(where, "empty value for key '" + key + "'");
    assign(cfg, key, value, where);
  }
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open config: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str(), path);
}

void apply_override(RunConfig& cfg, const std::string& assignment) {
  const std::string where = "--set " + assignment;
  const size_t eq = assignment.find('=');
  if (eq == std::string::npos) bad(where, "expected key=value");
  const std::string key = trim(assignment.substr(0, eq));
  const std::string value = trim(assignment.substr(eq + 1));
  if (key.empty() || value.empty()) bad(where, "expected key=value");
  assign(cfg, key, value, where);
}

std::string config_to_text(const RunConfig& c) {
  std::ostringstream out;
  out.precision(17);
  out << "# model\n";
  out << "model.stages = " << c.model.stages << "\n";
  out << "model.base_channels = " << c.model.base_channels << "\n";
  out << "model.blocks_per_stage = " << c.model.blocks_per_stage << "\n";
  out << "model.channel_growth = " << c.model.channel_growth << "\n";
  out << "model.bank_tokens = " << c.model.bank_tokens << "\n";
  out << "model.bank_momentum = " << c.model.bank_momentum << "\n";
  out << "\n# loss\n";
  out << "loss.lambda1 = " << c.loss.lambda1 << "\n";
  out << "loss.lambda2 = " << c.loss.lambda2 << "\n";
  out << "loss.variant = " << (c.loss.fidelity == LossConfig::Fidelity::kPsnr ? "psnr-total" : "l1-total")
      << "\n";
  out << "\n# optimizer\n";
  out << "optim.beta1 = " << c.beta1 << "\n";
  out << "optim.beta2 = " << c.beta2 << "\n";
  out << "optim.eps = " << c.eps << "\n";
  out << "optim.base_lr = " << c.base_lr << "\n";
  out << "optim.total_steps = " << c.total_steps << "\n";
  out << "\n# training\n";
  out << "train.steps = " << c.steps << "\n";
  out << "train.batch_size = " << c.batch_size << "\n";
  out << "train.crop = " << c.crop << "\n";
  out << "train.noise_std = " << c.noise_std << "\n";
  out << "train.seed = " << c.seed << "\n";
  out << "train.precision = " << c.precision << "\n";
  out << "train.checkpoint_every = " << c.checkpoint_every << "\n";
  out << "train.holdout = " << c.holdout << "\n";
  return out.str();
}

}  // namespace ucmnet
