#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "pams/data.hpp"
#include "pams/losses.hpp"
#include "pams/model.hpp"

namespace pams::training {

enum class OptimizerKind { adam, sgd };

struct TrainConfig {
  int epochs = 30;
  int batch_size = 16;
  double lr = 1e-4;
  int lr_halving_period = 10;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int calibration_batches = 5;
  losses::LossWeights loss_weights{};
  std::uint64_t seed = 0;

  // Desk-scale knobs.
  int patch_size = 24;      // LR patch side
  int steps_per_epoch = 0;  // 0 = one pass over the training images
  bool augment = true;
  OptimizerKind optimizer = OptimizerKind::adam;
  double ema_beta = quant::kDefaultEmaBeta;
  bool evaluate_each_epoch = true;

  void validate() const;
};

/// lr0 * 0.5^floor(epoch / lr_halving_period)
double learning_rate(const TrainConfig& config, int epoch);

/// Adam with bias correction (or plain SGD), alpha positivity enforced after
/// every step for quantizer scales registered through `alphas`.
class Optimizer {
 public:
  Optimizer(std::vector<model::NamedTensor> params, const TrainConfig& config);

  void step(double lr);
  std::int64_t steps() const { return t_; }
  void register_alpha(quant::QuantizerState* state) { alphas_.push_back(state); }

 private:
  std::vector<model::NamedTensor> params_;
  std::vector<std::vector<double>> m_, v_;
  std::vector<quant::QuantizerState*> alphas_;
  OptimizerKind kind_;
  double beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
};

/// Runs up to `k` full-precision forwards over `lr_batches`, collecting per
/// sample max|activation| at every quantized site and folding each batch into
/// alpha with the EMA rule (the first batch overwrites alpha).
void calibrate_alphas(model::SRModel& model, const std::vector<Tensor>& lr_batches, int k);

struct EpochStats {
  int epoch = 0;
  double lr = 0.0;
  double mean_pix = 0.0;
  double mean_skt = 0.0;
  double val_psnr = 0.0;
  double val_ssim = 0.0;
};

struct TrainReport {
  std::vector<EpochStats> epochs;
  std::vector<std::string> site_names;
  // alpha_trajectory[step][site]; one row per optimizer step.
  std::vector<std::vector<double>> alpha_trajectory;
  std::vector<double> step_pix;
};

struct TrainResult {
  model::SRModel student;
  TrainReport report;
};

/// Without a teacher a full-precision model is trained from the seed and the
/// knowledge-transfer term is dropped. With a teacher, the student copies its
/// weights, gains `model_config.n_bits` quantizers of `activation_mode`, has
/// its alphas calibrated, and is trained on the weighted objective.
TrainResult train(const model::SRModel* teacher, const model::ModelConfig& model_config, const TrainConfig& config,
                  const data::Dataset& data);

/// Full-image evaluation with outputs clamped to [0, 255].
data::EvalResult evaluate(model::SRModel& model, const std::vector<data::ImagePair>& pairs, int shave,
                          bool quantize = true);
data::EvalResult evaluate_bicubic(const std::vector<data::ImagePair>& pairs, int scale, int shave);

}  // namespace pams::training
