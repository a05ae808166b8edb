#include "pams/training.hpp"

#include <algorithm>
#include <cmath>

#include "pams/errors.hpp"
#include "pams/losses.hpp"

namespace pams::training {

void TrainConfig::validate() const {
  if (epochs < 0) throw ParameterError("epochs must be >= 0");
  if (batch_size < 1) throw ParameterError("batch_size must be positive");
  if (!(lr > 0.0)) throw ParameterError("lr must be positive");
  if (lr_halving_period < 1) throw ParameterError("lr_halving_period must be positive");
  if (epochs > 0 && lr_halving_period > epochs) throw ParameterError("lr_halving_period must not exceed epochs");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
    throw ParameterError("adam betas must lie in [0, 1)");
  }
  if (!(adam_eps > 0.0)) throw ParameterError("adam_eps must be positive");
  if (calibration_batches < 1) throw ParameterError("calibration_batches must be positive");
  if (loss_weights.lambda_p < 0.0 || loss_weights.lambda_s < 0.0) throw ParameterError("loss weights must be >= 0");
  if (patch_size < 3) throw ParameterError("patch_size must be >= 3");
  if (steps_per_epoch < 0) throw ParameterError("steps_per_epoch must be >= 0");
  if (!(ema_beta >= 0.0 && ema_beta < 1.0)) throw ParameterError("ema_beta must lie in [0, 1)");
}

double learning_rate(const TrainConfig& config, int epoch) {
  return config.lr * std::pow(0.5, epoch / config.lr_halving_period);
}

Optimizer::Optimizer(std::vector<model::NamedTensor> params, const TrainConfig& config)
    : params_(std::move(params)),
      kind_(config.optimizer),
      beta1_(config.adam_beta1),
      beta2_(config.adam_beta2),
      eps_(config.adam_eps) {
  for (const auto& p : params_) {
    m_.emplace_back(p.tensor.numel(), 0.0);
    v_.emplace_back(p.tensor.numel(), 0.0);
  }
}

void Optimizer::step(double lr) {
  for (const auto& p : params_) {
    if (!p.tensor.has_grad()) throw StateError("optimizer step: no gradient for '" + p.name + "'");
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto w = params_[k].tensor.mutable_data();
    const auto g = params_[k].tensor.grad();
    if (kind_ == OptimizerKind::sgd) {
      for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * g[i];
      continue;
    }
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      w[i] -= lr * mhat / (std::sqrt(vhat) + eps_);
    }
  }
  for (auto* a : alphas_) a->project_alpha();
}

void calibrate_alphas(model::SRModel& model, const std::vector<Tensor>& lr_batches, int k) {
  if (k < 1) throw ParameterError("calibrate_alphas: k must be >= 1");
  if (lr_batches.empty()) throw ParameterError("calibrate_alphas: empty data stream");
  if (model.quantizer_sites().empty()) throw ParameterError("calibrate_alphas: model has no quantizer sites");
  const auto batches = std::min<std::size_t>(static_cast<std::size_t>(k), lr_batches.size());
  NoGradScope no_grad;
  for (std::size_t i = 0; i < batches; ++i) {
    std::vector<std::vector<double>> maxima(model.site_count());
    model::ForwardOptions opts;
    opts.quantize = false;
    opts.observer = [&](std::size_t site, const Tensor& act) { maxima[site] = quant::per_sample_abs_max(act); };
    model.forward(lr_batches[i], opts);
    for (std::size_t s = 0; s < model.site_count(); ++s) {
      if (auto* st = model.site_state(s)) quant::ema_update_alpha(*st, maxima[s]);
    }
  }
}

namespace {

void require_finite_grads(const std::vector<model::NamedTensor>& params, int step) {
  for (const auto& p : params) {
    for (double g : p.tensor.grad()) {
      if (!std::isfinite(g)) {
        throw NumericError("training aborted at step " + std::to_string(step) + ": non-finite gradient in '" +
                           p.name + "'");
      }
    }
  }
}

model::SRModel make_student(const model::SRModel* teacher, const model::ModelConfig& cfg, const TrainConfig& tc,
                            const data::Dataset& data) {
  if (!teacher) {
    auto m = model::SRModel::build(cfg, tc.seed);
    m.mean_rgb = data::mean_rgb(data.train);
    return m;
  }
  const auto& tcfg = teacher->config();
  if (tcfg.quantized()) throw ParameterError("teacher must be a full-precision model");
  if (tcfg.n_blocks != cfg.n_blocks || tcfg.n_channels != cfg.n_channels || tcfg.scale_factor != cfg.scale_factor ||
      tcfg.kernel_size != cfg.kernel_size) {
    throw ParameterError("model config does not match the teacher architecture");
  }
  auto m = cfg.n_bits ? teacher->quantized_copy(*cfg.n_bits, cfg.activation_mode) : teacher->clone();
  m.set_requires_grad(true);
  for (auto* st : m.quantizer_sites()) st->ema_beta = tc.ema_beta;
  return m;
}

}  // namespace

TrainResult train(const model::SRModel* teacher, const model::ModelConfig& model_config, const TrainConfig& config,
                  const data::Dataset& data) {
  model_config.validate();
  config.validate();
  if (data.train.empty()) throw ParameterError("train: empty training split");
  if (data.scale != model_config.scale_factor) throw ParameterError("dataset scale does not match the model");

  TrainResult result{make_student(teacher, model_config, config, data), {}};
  auto& student = result.student;
  auto& report = result.report;

  // Teacher forwards never touch the tape; a private copy keeps the caller's
  // model untouched.
  std::optional<model::SRModel> frozen;
  if (teacher) {
    frozen = teacher->clone();
    frozen->set_requires_grad(false);
  }

  if (!student.quantizer_sites().empty()) {
    data::PatchSampler calib(data.train, config.patch_size, data.scale, false, config.seed ^ 0x9e3779b97f4a7c15ull);
    std::vector<Tensor> batches;
    for (int i = 0; i < config.calibration_batches; ++i) batches.push_back(calib.next(config.batch_size).lr);
    calibrate_alphas(student, batches, config.calibration_batches);
  }

  for (std::size_t s = 0; s < student.site_count(); ++s) {
    if (student.site_state(s)) report.site_names.push_back(student.site_name(s));
  }

  const auto params = student.trainable_parameters();
  Optimizer opt(params, config);
  for (auto* st : student.quantizer_sites()) opt.register_alpha(st);

  const int steps_per_epoch =
      config.steps_per_epoch > 0
          ? config.steps_per_epoch
          : static_cast<int>((data.train.size() + static_cast<std::size_t>(config.batch_size) - 1) /
                             static_cast<std::size_t>(config.batch_size));
  data::PatchSampler sampler(data.train, config.patch_size, data.scale, config.augment, config.seed);
  const bool use_skt = frozen.has_value();
  int global_step = 0;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = learning_rate(config, epoch);
    double sum_pix = 0.0, sum_skt = 0.0;
    for (int step = 0; step < steps_per_epoch; ++step, ++global_step) {
      const auto batch = sampler.next(config.batch_size);
      Tensor teacher_features;
      if (use_skt) {
        NoGradScope no_grad;
        teacher_features = frozen->forward(batch.lr).features;
      }

      Tape tape;
      Tensor l_pix, l_skt, loss;
      try {
        TapeScope scope(tape);
        model::ForwardOptions opts;
        opts.training = true;
        const auto out = student.forward(batch.lr, opts);
        l_pix = losses::pixel_l1(out.sr, batch.hr);
        l_skt = use_skt ? losses::skt_loss(out.features, teacher_features) : Tensor::scalar(0.0);
        loss = losses::total_loss(l_pix, l_skt, config.loss_weights);
      } catch (const NumericError& e) {
        throw NumericError("training aborted at step " + std::to_string(global_step) + ": " + e.what());
      }
      if (!std::isfinite(loss.item())) {
        throw NumericError("training aborted at step " + std::to_string(global_step) + ": non-finite loss");
      }
      student.zero_grad();
      tape.backward(loss);
      require_finite_grads(params, global_step);
      opt.step(lr);

      sum_pix += l_pix.item();
      sum_skt += l_skt.item();
      report.step_pix.push_back(l_pix.item());
      std::vector<double> alphas;
      for (auto* st : student.quantizer_sites()) alphas.push_back(st->alpha_value());
      report.alpha_trajectory.push_back(std::move(alphas));
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.lr = lr;
    stats.mean_pix = sum_pix / steps_per_epoch;
    stats.mean_skt = sum_skt / steps_per_epoch;
    const auto& held = data.held_out();
    if (config.evaluate_each_epoch && !held.empty()) {
      const auto ev = evaluate(student, held, data.scale);
      stats.val_psnr = ev.psnr_db;
      stats.val_ssim = ev.ssim;
    }
    report.epochs.push_back(stats);
  }
  student.set_requires_grad(false);
  return result;
}

data::EvalResult evaluate(model::SRModel& model, const std::vector<data::ImagePair>& pairs, int shave, bool quantize) {
  NoGradScope no_grad;
  std::vector<data::ImageScore> scores;
  model::ForwardOptions opts;
  opts.quantize = quantize;
  for (const auto& p : pairs) {
    const Tensor sr = data::clamp_pixels(data::unstack(model.forward_sr(data::stack({p.lr}), opts), 0));
    scores.push_back({p.id, data::psnr_y(sr, p.hr, shave), data::ssim_y(sr, p.hr, shave)});
  }
  return data::summarize(std::move(scores));
}

data::EvalResult evaluate_bicubic(const std::vector<data::ImagePair>& pairs, int scale, int shave) {
  std::vector<data::ImageScore> scores;
  for (const auto& p : pairs) {
    const Tensor up = data::clamp_pixels(data::bicubic_resize(p.lr, {scale, 1}));
    scores.push_back({p.id, data::psnr_y(up, p.hr, shave), data::ssim_y(up, p.hr, shave)});
  }
  return data::summarize(std::move(scores));
}

}  // namespace pams::training
