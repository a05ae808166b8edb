#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "pams/data.hpp"
#include "pams/model.hpp"

namespace pams::exporter {

// -- Full-precision checkpoint -------------------------------------------------
//
// "PAMSCKPT" | u32 version | u32 header length | JSON header (model config,
// mean RGB, quantizer sites) | u32 tensor count | per tensor: u32 name length,
// name, u32 rank, u64 dims[rank], f64 values. Little-endian.

std::vector<std::uint8_t> serialize_checkpoint(const model::SRModel& model);
model::SRModel deserialize_checkpoint(const std::vector<std::uint8_t>& bytes);
void save_checkpoint(const model::SRModel& model, const std::filesystem::path& path);
model::SRModel load_checkpoint(const std::filesystem::path& path);

// -- Bit-packed deployment model -------------------------------------------------
//
// "PAMSPACK" | u32 version | u32 header length | JSON header | u32 tensor
// count | per tensor: u32 name length, name, u8 kind, u32 rank, u32
// dims[rank], then either (kind 1) f64 scale, u8 bits, ceil(numel*bits/8)
// bytes of two's-complement codes packed LSB-first, or (kind 0) numel IEEE
// float32 values.

struct PackedTensor {
  std::string name;
  Shape shape;
  bool quantized = false;
  double scale = 0.0;  // a = max|w| of the source tensor
  int n_bits = 0;
  std::vector<std::uint8_t> codes;  // quantized payload
  std::vector<float> values;        // full-precision payload

  std::size_t numel() const { return shape_numel(shape); }
  std::size_t payload_bits() const;
};

struct PackedSite {
  std::string name;
  quant::QuantMode mode = quant::QuantMode::activation_pams;
  double alpha = 1.0;
};

struct PackedModel {
  model::ModelConfig config;
  int n_bits = 8;
  std::array<double, 3> mean_rgb{};
  std::vector<PackedSite> sites;
  std::vector<PackedTensor> tensors;

  /// Bits spent on parameter values: numel * n_bits per quantized tensor plus
  /// 32 per full-precision value. Everything else in the file is overhead.
  std::size_t payload_bits() const;
  std::vector<std::uint8_t> serialize() const;
  static PackedModel deserialize(const std::vector<std::uint8_t>& bytes);
};

/// Writes `count` signed codes of width `bits` LSB-first.
std::vector<std::uint8_t> pack_codes(const std::vector<std::int32_t>& codes, int bits);
std::vector<std::int32_t> unpack_codes(const std::vector<std::uint8_t>& bytes, std::size_t count, int bits);

/// Quantized block conv weights become integer codes in
/// [-(2^(n-1)-1), 2^(n-1)-1] with their per-tensor scale; every other tensor
/// is stored as float32.
PackedModel pack_model(const model::SRModel& model, int n_bits);
/// Rebuilds a quantized model whose block weights are codes * scale and whose
/// weight quantizers reuse the stored scale.
model::SRModel unpack_model(const PackedModel& packed);

void save_packed(const PackedModel& packed, const std::filesystem::path& path);
PackedModel load_packed(const std::filesystem::path& path);

/// Loads either a checkpoint or a packed model, dispatching on the magic.
model::SRModel load_any_model(const std::filesystem::path& path);

// -- Storage accounting ------------------------------------------------------

struct SizeReport {
  std::size_t total_params = 0;
  std::size_t high_level_params = 0;  // H: quantized block conv weights
  std::size_t other_params = 0;       // R: everything else
  int n_bits = 32;
  double storage_fp_units = 0.0;      // H + R, in 32-bit parameter units
  double storage_quant_units = 0.0;   // H * n / 32 + R
  std::size_t storage_fp_bits = 0;
  std::size_t storage_quant_bits = 0;
  double compression_ratio = 0.0;     // 1 - quant / fp
};

SizeReport size_report(std::size_t high_level_params, std::size_t other_params, int n_bits);
SizeReport size_report(const model::SRModel& model, int n_bits);
void write_size_report(std::ostream& os, const SizeReport& r);

// -- Activation range statistics ---------------------------------------------

struct ActivationStats {
  std::vector<std::string> site_names;
  std::vector<std::string> sample_ids;
  std::vector<std::vector<double>> max_abs;  // [site][sample]

  double site_mean(std::size_t site) const;
  double site_variance(std::size_t site) const;  // population variance
};

/// One forward per image; records max|activation| at every observation site
/// before any quantization.
ActivationStats activation_stats(model::SRModel& model, const std::vector<data::ImagePair>& images);

/// `site<TAB>sample<TAB>max_abs` rows.
void write_stats_table(std::ostream& os, const ActivationStats& stats);
/// `site<TAB>bin_lo<TAB>bin_hi<TAB>count` rows, `bins` equal bins per site.
void write_stats_histogram(std::ostream& os, const ActivationStats& stats, int bins);

}  // namespace pams::exporter
