#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>

#include "pams/errors.hpp"
#include "pams/export.hpp"

namespace pams::exporter {

SizeReport size_report(std::size_t high_level_params, std::size_t other_params, int n_bits) {
  if (n_bits < 1 || n_bits > 32) throw ParameterError("size_report: n_bits must lie in [1, 32]");
  SizeReport r;
  r.high_level_params = high_level_params;
  r.other_params = other_params;
  r.total_params = high_level_params + other_params;
  r.n_bits = n_bits;
  const double h = static_cast<double>(high_level_params), o = static_cast<double>(other_params);
  r.storage_fp_units = h + o;
  r.storage_quant_units = h * n_bits / 32.0 + o;
  r.storage_fp_bits = 32 * r.total_params;
  r.storage_quant_bits = high_level_params * static_cast<std::size_t>(n_bits) + 32 * other_params;
  r.compression_ratio = r.total_params == 0 ? 0.0 : 1.0 - r.storage_quant_units / r.storage_fp_units;
  return r;
}

SizeReport size_report(const model::SRModel& model, int n_bits) {
  const auto h = model.high_level_weight_count();
  return size_report(h, model.parameter_count() - h, n_bits);
}

void write_size_report(std::ostream& os, const SizeReport& r) {
  os << "total_params\t" << r.total_params << '\n'
     << "high_level_params\t" << r.high_level_params << '\n'
     << "other_params\t" << r.other_params << '\n'
     << "n_bits\t" << r.n_bits << '\n'
     << "storage_fp_units\t" << r.storage_fp_units << '\n'
     << "storage_quant_units\t" << r.storage_quant_units << '\n'
     << "storage_fp_bytes\t" << r.storage_fp_bits / 8 << '\n'
     << "storage_quant_bytes\t" << (r.storage_quant_bits + 7) / 8 << '\n'
     << "compression_ratio\t" << std::fixed << std::setprecision(4) << r.compression_ratio << '\n';
  os.unsetf(std::ios::floatfield);
}

double ActivationStats::site_mean(std::size_t site) const {
  const auto& v = max_abs.at(site);
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double ActivationStats::site_variance(std::size_t site) const {
  const auto& v = max_abs.at(site);
  if (v.empty()) return 0.0;
  const double m = site_mean(site);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size());
}

ActivationStats activation_stats(model::SRModel& model, const std::vector<data::ImagePair>& images) {
  if (images.empty()) throw ParameterError("activation_stats: no images");
  ActivationStats stats;
  for (std::size_t s = 0; s < model.site_count(); ++s) stats.site_names.push_back(model.site_name(s));
  stats.max_abs.assign(model.site_count(), {});
  NoGradScope no_grad;
  model::ForwardOptions opts;
  opts.observer = [&](std::size_t site, const Tensor& act) {
    stats.max_abs[site].push_back(quant::per_sample_abs_max(act)[0]);
  };
  for (const auto& img : images) {
    stats.sample_ids.push_back(img.id);
    model.forward(data::stack({img.lr}), opts);
  }
  return stats;
}

void write_stats_table(std::ostream& os, const ActivationStats& stats) {
  os << "site\tsample\tmax_abs\n";
  os << std::setprecision(17);
  for (std::size_t s = 0; s < stats.site_names.size(); ++s)
    for (std::size_t i = 0; i < stats.max_abs[s].size(); ++i)
      os << stats.site_names[s] << '\t' << stats.sample_ids[i] << '\t' << stats.max_abs[s][i] << '\n';
}

void write_stats_histogram(std::ostream& os, const ActivationStats& stats, int bins) {
  if (bins < 1) throw ParameterError("histogram needs at least one bin");
  os << "site\tbin_lo\tbin_hi\tcount\n";
  for (std::size_t s = 0; s < stats.site_names.size(); ++s) {
    const auto& v = stats.max_abs[s];
    if (v.empty()) continue;
    const auto [lo_it, hi_it] = std::minmax_element(v.begin(), v.end());
    const double lo = *lo_it;
    const double width = (*hi_it - lo) > 0.0 ? (*hi_it - lo) / bins : 1.0;
    std::vector<std::size_t> counts(static_cast<std::size_t>(bins), 0);
    for (double x : v) {
      auto b = static_cast<std::size_t>((x - lo) / width);
      counts[std::min(b, counts.size() - 1)]++;
    }
    for (int b = 0; b < bins; ++b) {
      os << stats.site_names[s] << '\t' << lo + b * width << '\t' << lo + (b + 1) * width << '\t'
         << counts[static_cast<std::size_t>(b)] << '\n';
    }
  }
}

}  // namespace pams::exporter
