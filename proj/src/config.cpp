#include "pams/config.hpp"

#include <fstream>
#include <sstream>

#include "pams/errors.hpp"

namespace pams {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  std::istringstream is(value);
  T out{};
  is >> out;
  if (!is || !is.eof()) throw ParameterError("config key '" + key + "': cannot parse '" + value + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  throw ParameterError("config key '" + key + "': expected a boolean, got '" + value + "'");
}

}  // namespace

void set_config_value(RunConfig& c, const std::string& key, const std::string& value) {
  auto& m = c.model;
  auto& t = c.train;
  if (key == "n_blocks") m.n_blocks = parse_number<int>(key, value);
  else if (key == "n_channels") m.n_channels = parse_number<int>(key, value);
  else if (key == "scale_factor") m.scale_factor = parse_number<int>(key, value);
  else if (key == "n_bits") {
    if (value == "none" || value == "fp" || value == "32") m.n_bits.reset();
    else m.n_bits = parse_number<int>(key, value);
  }
  else if (key == "residual_scaling") m.residual_scaling = parse_number<double>(key, value);
  else if (key == "quantizer") m.activation_mode = quant::parse_quant_mode(value);
  else if (key == "kernel_size") m.kernel_size = parse_number<int>(key, value);
  else if (key == "epochs") t.epochs = parse_number<int>(key, value);
  else if (key == "batch_size") t.batch_size = parse_number<int>(key, value);
  else if (key == "lr") t.lr = parse_number<double>(key, value);
  else if (key == "lr_halving_period") t.lr_halving_period = parse_number<int>(key, value);
  else if (key == "adam_beta1") t.adam_beta1 = parse_number<double>(key, value);
  else if (key == "adam_beta2") t.adam_beta2 = parse_number<double>(key, value);
  else if (key == "adam_eps") t.adam_eps = parse_number<double>(key, value);
  else if (key == "calibration_batches") t.calibration_batches = parse_number<int>(key, value);
  else if (key == "lambda_p") t.loss_weights.lambda_p = parse_number<double>(key, value);
  else if (key == "lambda_s") t.loss_weights.lambda_s = parse_number<double>(key, value);
  else if (key == "seed") t.seed = parse_number<std::uint64_t>(key, value);
  else if (key == "patch_size") t.patch_size = parse_number<int>(key, value);
  else if (key == "steps_per_epoch") t.steps_per_epoch = parse_number<int>(key, value);
  else if (key == "augment") t.augment = parse_bool(key, value);
  else if (key == "optimizer") {
    if (value == "adam") t.optimizer = training::OptimizerKind::adam;
    else if (value == "sgd") t.optimizer = training::OptimizerKind::sgd;
    else throw ParameterError("config key 'optimizer': expected adam or sgd");
  }
  else if (key == "ema_beta") t.ema_beta = parse_number<double>(key, value);
  else if (key == "evaluate_each_epoch") t.evaluate_each_epoch = parse_bool(key, value);
  else throw ParameterError("unknown config key '" + key + "'");
}

RunConfig parse_config(std::istream& in, const std::string& source) {
  RunConfig c;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ParameterError(source + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    try {
      set_config_value(c, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ParameterError& e) {
      throw ParameterError(source + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  c.model.validate();
  c.train.validate();
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path.string() + "'");
  return parse_config(in, path.string());
}

std::string render_config(const RunConfig& c) {
  std::ostringstream os;
  os.precision(17);
  const auto& m = c.model;
  const auto& t = c.train;
  os << "n_blocks = " << m.n_blocks << '\n'
     << "n_channels = " << m.n_channels << '\n'
     << "scale_factor = " << m.scale_factor << '\n'
     << "n_bits = " << (m.n_bits ? std::to_string(*m.n_bits) : std::string("none")) << '\n'
     << "residual_scaling = " << m.residual_scaling << '\n'
     << "quantizer = " << quant::to_string(m.activation_mode) << '\n'
     << "kernel_size = " << m.kernel_size << '\n'
     << "epochs = " << t.epochs << '\n'
     << "batch_size = " << t.batch_size << '\n'
     << "lr = " << t.lr << '\n'
     << "lr_halving_period = " << t.lr_halving_period << '\n'
     << "adam_beta1 = " << t.adam_beta1 << '\n'
     << "adam_beta2 = " << t.adam_beta2 << '\n'
     << "adam_eps = " << t.adam_eps << '\n'
     << "calibration_batches = " << t.calibration_batches << '\n'
     << "lambda_p = " << t.loss_weights.lambda_p << '\n'
     << "lambda_s = " << t.loss_weights.lambda_s << '\n'
     << "seed = " << t.seed << '\n'
     << "patch_size = " << t.patch_size << '\n'
     << "steps_per_epoch = " << t.steps_per_epoch << '\n'
     << "augment = " << (t.augment ? "true" : "false") << '\n'
     << "optimizer = " << (t.optimizer == training::OptimizerKind::adam ? "adam" : "sgd") << '\n'
     << "ema_beta = " << t.ema_beta << '\n'
     << "evaluate_each_epoch = " << (t.evaluate_each_epoch ? "true" : "false") << '\n';
  return os.str();
}

}  // namespace pams
