#include <algorithm>
#include <cmath>
#include <cstring>

#include <json.hpp>

#include "pams/errors.hpp"
#include "pams/export.hpp"
#include "pams/quant.hpp"
#include "serialize_util.hpp"

namespace pams::exporter {

namespace {

constexpr char kPackedMagic[8] = {'P', 'A', 'M', 'S', 'P', 'A', 'C', 'K'};
constexpr std::uint32_t kPackedVersion = 1;

std::int32_t max_code(int bits) { return (std::int32_t{1} << (bits - 1)) - 1; }

// Same arithmetic as the fake-quant forward: code * a / L clamped to [-a, a].
double dequantize(std::int32_t code, int bits, double a) {
  const double levels = max_code(bits);
  return std::clamp(code * a / levels, -a, a);
}

bool is_block_weight(const std::string& name) {
  return name.rfind("blocks.", 0) == 0 && name.size() > 7 && name.compare(name.size() - 7, 7, ".weight") == 0;
}

}  // namespace

std::vector<std::uint8_t> pack_codes(const std::vector<std::int32_t>& codes, int bits) {
  if (bits < 2 || bits > 16) throw ParameterError("pack_codes: bits must lie in [2, 16]");
  std::vector<std::uint8_t> out((codes.size() * static_cast<std::size_t>(bits) + 7) / 8, 0);
  const std::uint32_t mask = (1u << bits) - 1u;
  std::size_t bitpos = 0;
  for (auto c : codes) {
    if (c < -max_code(bits) || c > max_code(bits)) throw InternalError("pack_codes: code out of range");
    std::uint32_t u = static_cast<std::uint32_t>(c) & mask;
    for (int b = 0; b < bits; ++b, ++bitpos) {
      if (u & (1u << b)) out[bitpos / 8] |= static_cast<std::uint8_t>(1u << (bitpos % 8));
    }
  }
  return out;
}

std::vector<std::int32_t> unpack_codes(const std::vector<std::uint8_t>& bytes, std::size_t count, int bits) {
  if (bits < 2 || bits > 16) throw ParameterError("unpack_codes: bits must lie in [2, 16]");
  if (bytes.size() * 8 < count * static_cast<std::size_t>(bits)) throw IoError("unpack_codes: payload too short");
  std::vector<std::int32_t> out(count);
  std::size_t bitpos = 0;
  for (auto& c : out) {
    std::uint32_t u = 0;
    for (int b = 0; b < bits; ++b, ++bitpos) {
      if (bytes[bitpos / 8] & (1u << (bitpos % 8))) u |= 1u << b;
    }
    // Sign-extend the n-bit two's-complement field.
    if (u & (1u << (bits - 1))) u |= ~((1u << bits) - 1u);
    c = static_cast<std::int32_t>(u);
  }
  return out;
}

std::size_t PackedTensor::payload_bits() const {
  return numel() * (quantized ? static_cast<std::size_t>(n_bits) : 32u);
}

std::size_t PackedModel::payload_bits() const {
  std::size_t bits = 0;
  for (const auto& t : tensors) bits += t.payload_bits();
  return bits;
}

PackedModel pack_model(const model::SRModel& model, int n_bits) {
  const auto& cfg = model.config();
  if (!cfg.quantized()) throw ParameterError("pack_model: model has no quantizer sites");
  if (*cfg.n_bits != n_bits) {
    throw ParameterError("pack_model: model is quantized at " + std::to_string(*cfg.n_bits) + " bits, not " +
                         std::to_string(n_bits));
  }
  PackedModel p;
  p.config = cfg;
  p.n_bits = n_bits;
  p.mean_rgb = model.mean_rgb;
  for (std::size_t s = 0; s < model.site_count(); ++s) {
    const auto* st = model.site_state(s);
    if (st) p.sites.push_back({model.site_name(s), st->mode, st->alpha_value()});
  }
  // Frozen scales from a previously unpacked model take precedence over max|w|.
  auto frozen_scale = [&](const std::string& name) {
    for (std::size_t b = 0; b < model.blocks().size(); ++b) {
      const auto& blk = model.blocks()[b];
      if (name == blk.conv1.name + ".weight" && blk.wq1) return blk.wq1->frozen_scale;
      if (name == blk.conv2.name + ".weight" && blk.wq2) return blk.wq2->frozen_scale;
    }
    return 0.0;
  };
  for (const auto& [name, tensor] : model.weights()) {
    PackedTensor t;
    t.name = name;
    t.shape = tensor.shape();
    if (is_block_weight(name)) {
      t.quantized = true;
      t.n_bits = n_bits;
      const double fs = frozen_scale(name);
      t.scale = fs > 0.0 ? fs : quant::weight_scale(tensor);
      const double levels = max_code(n_bits);
      std::vector<std::int32_t> codes;
      codes.reserve(tensor.numel());
      for (double w : tensor.data()) {
        const double q = quant::round_half_away(std::clamp(w, -t.scale, t.scale) * levels / t.scale);
        codes.push_back(static_cast<std::int32_t>(q));
      }
      t.codes = pack_codes(codes, n_bits);
    } else {
      t.values.reserve(tensor.numel());
      for (double v : tensor.data()) t.values.push_back(static_cast<float>(v));
    }
    p.tensors.push_back(std::move(t));
  }
  return p;
}

model::SRModel unpack_model(const PackedModel& packed) {
  auto m = model::SRModel::build(packed.config, 0);
  m.mean_rgb = packed.mean_rgb;
  for (const auto& site : packed.sites) {
    bool found = false;
    for (std::size_t s = 0; s < m.site_count(); ++s) {
      if (m.site_name(s) != site.name) continue;
      auto* st = m.site_state(s);
      if (!st) throw IoError("packed site '" + site.name + "' missing from the architecture");
      st->mode = site.mode;
      st->alpha.mutable_data()[0] = site.alpha;
      st->alpha.set_requires_grad(st->alpha_trainable());
      st->validate();
      found = true;
    }
    if (!found) throw IoError("packed model references unknown site '" + site.name + "'");
  }
  auto weights = m.weights();
  if (weights.size() != packed.tensors.size()) throw IoError("packed tensor count does not match the architecture");
  for (const auto& t : packed.tensors) {
    auto it = std::find_if(weights.begin(), weights.end(), [&](const auto& w) { return w.name == t.name; });
    if (it == weights.end()) throw IoError("packed model has unknown tensor '" + t.name + "'");
    if (it->tensor.shape() != t.shape) throw IoError("packed tensor '" + t.name + "' has the wrong shape");
    auto dst = it->tensor.mutable_data();
    if (t.quantized) {
      const auto codes = unpack_codes(t.codes, t.numel(), t.n_bits);
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = dequantize(codes[i], t.n_bits, t.scale);
      for (auto& blk : m.blocks()) {
        if (t.name == blk.conv1.name + ".weight") blk.wq1->frozen_scale = t.scale;
        if (t.name == blk.conv2.name + ".weight") blk.wq2->frozen_scale = t.scale;
      }
    } else {
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<double>(t.values[i]);
    }
  }
  return m;
}

std::vector<std::uint8_t> PackedModel::serialize() const {
  nlohmann::json header;
  header["config"] = config_to_json(config);
  header["n_bits"] = n_bits;
  header["mean_rgb"] = mean_rgb;
  header["sites"] = nlohmann::json::array();
  for (const auto& s : sites) {
    header["sites"].push_back({{"name", s.name}, {"mode", quant::to_string(s.mode)}, {"alpha", s.alpha}});
  }
  ByteWriter out;
  out.raw(kPackedMagic, sizeof kPackedMagic);
  out.u32(kPackedVersion);
  out.str32(header.dump());
  out.u32(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    out.str32(t.name);
    out.u8(t.quantized ? 1 : 0);
    out.u32(static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) out.u32(static_cast<std::uint32_t>(d));
    if (t.quantized) {
      out.f64(t.scale);
      out.u8(static_cast<std::uint8_t>(t.n_bits));
      out.raw(t.codes.data(), t.codes.size());
    } else {
      for (float v : t.values) out.f32(v);
    }
  }
  return out.take();
}

PackedModel PackedModel::deserialize(const std::vector<std::uint8_t>& bytes) {
  ByteReader in(bytes);
  char magic[8];
  in.raw(magic, sizeof magic);
  if (std::memcmp(magic, kPackedMagic, sizeof magic) != 0) throw IoError("not a packed model (bad magic)");
  if (in.u32() != kPackedVersion) throw IoError("unsupported packed model version");
  PackedModel p;
  try {
    const auto header = nlohmann::json::parse(in.str32());
    p.config = config_from_json(header.at("config"));
    p.n_bits = header.at("n_bits").get<int>();
    p.mean_rgb = header.at("mean_rgb").get<std::array<double, 3>>();
    for (const auto& s : header.at("sites")) {
      p.sites.push_back({s.at("name").get<std::string>(), quant::parse_quant_mode(s.at("mode").get<std::string>()),
                         s.at("alpha").get<double>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("corrupt packed header: ") + e.what());
  }
  const auto count = in.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    PackedTensor t;
    t.name = in.str32();
    t.quantized = in.u8() != 0;
    t.shape.resize(in.u32());
    for (auto& d : t.shape) d = in.u32();
    if (t.quantized) {
      t.scale = in.f64();
      t.n_bits = in.u8();
      if (t.n_bits < 2 || t.n_bits > 16 || !(t.scale > 0.0)) throw IoError("corrupt quantized tensor '" + t.name + "'");
      t.codes = in.bytes((t.numel() * static_cast<std::size_t>(t.n_bits) + 7) / 8);
    } else {
      t.values.resize(t.numel());
      for (auto& v : t.values) v = in.f32();
    }
    p.tensors.push_back(std::move(t));
  }
  if (!in.at_end()) throw IoError("trailing bytes after packed payload");
  return p;
}

void save_packed(const PackedModel& packed, const std::filesystem::path& path) { write_file(path, packed.serialize()); }

PackedModel load_packed(const std::filesystem::path& path) { return PackedModel::deserialize(read_file(path)); }

}  // namespace pams::exporter
