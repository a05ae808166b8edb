#include <algorithm>
#include <cstring>
#include <fstream>
#include <iterator>

#include <json.hpp>

#include "pams/errors.hpp"
#include "pams/export.hpp"
#include "serialize_util.hpp"

namespace pams::exporter {

namespace {

constexpr char kCheckpointMagic[8] = {'P', 'A', 'M', 'S', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCheckpointVersion = 1;

}  // namespace

nlohmann::json config_to_json(const model::ModelConfig& c) {
  nlohmann::json j;
  j["n_blocks"] = c.n_blocks;
  j["n_channels"] = c.n_channels;
  j["scale_factor"] = c.scale_factor;
  j["n_bits"] = c.n_bits ? nlohmann::json(*c.n_bits) : nlohmann::json(nullptr);
  j["residual_scaling"] = c.residual_scaling;
  j["activation_mode"] = quant::to_string(c.activation_mode);
  j["kernel_size"] = c.kernel_size;
  return j;
}

model::ModelConfig config_from_json(const nlohmann::json& j) {
  model::ModelConfig c;
  c.n_blocks = j.at("n_blocks").get<int>();
  c.n_channels = j.at("n_channels").get<int>();
  c.scale_factor = j.at("scale_factor").get<int>();
  if (!j.at("n_bits").is_null()) c.n_bits = j.at("n_bits").get<int>();
  c.residual_scaling = j.at("residual_scaling").get<double>();
  c.activation_mode = quant::parse_quant_mode(j.at("activation_mode").get<std::string>());
  c.kernel_size = j.at("kernel_size").get<int>();
  c.validate();
  return c;
}

std::vector<std::uint8_t> serialize_checkpoint(const model::SRModel& model) {
  nlohmann::json header;
  header["config"] = config_to_json(model.config());
  header["mean_rgb"] = model.mean_rgb;
  header["sites"] = nlohmann::json::array();
  for (std::size_t s = 0; s < model.site_count(); ++s) {
    const auto* st = model.site_state(s);
    if (!st) continue;
    header["sites"].push_back({{"name", model.site_name(s)},
                               {"mode", quant::to_string(st->mode)},
                               {"n_bits", st->n_bits},
                               {"alpha", st->alpha_value()},
                               {"ema_beta", st->ema_beta},
                               {"step_count", st->step_count}});
  }
  const std::string text = header.dump();

  ByteWriter out;
  out.raw(kCheckpointMagic, sizeof kCheckpointMagic);
  out.u32(kCheckpointVersion);
  out.str32(text);
  const auto tensors = model.weights();
  out.u32(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    out.str32(t.name);
    out.u32(static_cast<std::uint32_t>(t.tensor.rank()));
    for (auto d : t.tensor.shape()) out.u64(d);
    for (double v : t.tensor.data()) out.f64(v);
  }
  return out.take();
}

model::SRModel deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
  ByteReader in(bytes);
  char magic[8];
  in.raw(magic, sizeof magic);
  if (std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) throw IoError("not a checkpoint (bad magic)");
  if (in.u32() != kCheckpointVersion) throw IoError("unsupported checkpoint version");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(in.str32());
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("corrupt checkpoint header: ") + e.what());
  }
  auto config = config_from_json(header.at("config"));
  auto model = model::SRModel::build(config, 0);
  model.mean_rgb = header.at("mean_rgb").get<std::array<double, 3>>();
  for (const auto& site : header.at("sites")) {
    bool found = false;
    for (std::size_t s = 0; s < model.site_count(); ++s) {
      if (model.site_name(s) != site.at("name").get<std::string>()) continue;
      auto* st = model.site_state(s);
      if (!st) throw IoError("checkpoint site '" + model.site_name(s) + "' missing from quantized model");
      st->mode = quant::parse_quant_mode(site.at("mode").get<std::string>());
      st->n_bits = site.at("n_bits").get<int>();
      st->alpha.mutable_data()[0] = site.at("alpha").get<double>();
      st->alpha.set_requires_grad(st->alpha_trainable());
      st->ema_beta = site.at("ema_beta").get<double>();
      st->step_count = site.at("step_count").get<std::int64_t>();
      st->validate();
      found = true;
    }
    if (!found) throw IoError("checkpoint references unknown site '" + site.at("name").get<std::string>() + "'");
  }

  auto weights = model.weights();
  const auto count = in.u32();
  if (count != weights.size()) throw IoError("checkpoint tensor count does not match the architecture");
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name = in.str32();
    const auto rank = in.u32();
    Shape shape(rank);
    for (auto& d : shape) d = in.u64();
    auto it = std::find_if(weights.begin(), weights.end(), [&](const auto& w) { return w.name == name; });
    if (it == weights.end()) throw IoError("checkpoint has unknown tensor '" + name + "'");
    if (it->tensor.shape() != shape) throw IoError("checkpoint tensor '" + name + "' has shape " + shape_str(shape));
    auto dst = it->tensor.mutable_data();
    for (auto& v : dst) v = in.f64();
  }
  if (!in.at_end()) throw IoError("trailing bytes after checkpoint payload");
  return model;
}

void save_checkpoint(const model::SRModel& model, const std::filesystem::path& path) {
  write_file(path, serialize_checkpoint(model));
}

model::SRModel load_checkpoint(const std::filesystem::path& path) { return deserialize_checkpoint(read_file(path)); }

model::SRModel load_any_model(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  if (bytes.size() >= 8 && std::memcmp(bytes.data(), kCheckpointMagic, 8) == 0) return deserialize_checkpoint(bytes);
  return unpack_model(PackedModel::deserialize(bytes));
}

}  // namespace pams::exporter
