#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "pams/config.hpp"
#include "pams/data.hpp"
#include "pams/model.hpp"

namespace pams::cli {

/// Entry point shared by the executable and the tests. Returns the process
/// exit code; diagnostics go to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

struct AblationRow {
  std::string quantizer;
  int bits = 0;
  std::uint64_t seed = 0;
  double psnr_db = 0.0;
  double ssim = 0.0;
};

/// Trains one student per (quantizer, bits, seed) from `teacher` and scores it
/// on the held-out split. `seed_offset + i` seeds the i-th repeat.
std::vector<AblationRow> run_ablation(const model::SRModel& teacher, const RunConfig& base,
                                      const data::Dataset& data, const std::vector<std::string>& quantizers,
                                      const std::vector<int>& bits, int seeds);

double median(std::vector<double> values);

void write_train_report(std::ostream& os, const training::TrainReport& report);
void write_alpha_trajectory(std::ostream& os, const training::TrainReport& report);

}  // namespace pams::cli
