#include "pams/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "pams/errors.hpp"
#include "pams/export.hpp"
#include "pams/training.hpp"

namespace pams::cli {

namespace {

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<int> parse_bits_list(const std::string& s) {
  std::vector<int> out;
  for (const auto& item : split_list(s)) {
    try {
      out.push_back(std::stoi(item));
    } catch (const std::exception&) {
      throw ParameterError("cannot parse bit width '" + item + "'");
    }
  }
  if (out.empty()) throw ParameterError("empty bit-width list");
  return out;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write '" + path.string() + "'");
  f << std::setprecision(17);
  return f;
}

RunConfig resolve_config(const std::string& path) {
  return path.empty() ? RunConfig{} : load_config(path);
}

void print_eval(std::ostream& out, const data::EvalResult& r, bool psnr, bool ssim) {
  out << "image";
  if (psnr) out << "\tpsnr_db";
  if (ssim) out << "\tssim";
  out << '\n' << std::fixed << std::setprecision(4);
  auto row = [&](const std::string& id, double p, double s) {
    out << id;
    if (psnr) out << '\t' << p;
    if (ssim) out << '\t' << s;
    out << '\n';
  };
  for (const auto& s : r.per_image) row(s.id, s.psnr_db, s.ssim);
  row("mean", r.psnr_db, r.ssim);
  out.unsetf(std::ios::floatfield);
}

}  // namespace

double median(std::vector<double> values) {
  if (values.empty()) throw ParameterError("median of an empty set");
  std::sort(values.begin(), values.end());
  const auto n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

void write_train_report(std::ostream& os, const training::TrainReport& report) {
  os << std::setprecision(17);
  os << "epoch\tlr\tmean_pix\tmean_skt\tval_psnr\tval_ssim\n";
  for (const auto& e : report.epochs) {
    os << e.epoch << '\t' << e.lr << '\t' << e.mean_pix << '\t' << e.mean_skt << '\t' << e.val_psnr << '\t'
       << e.val_ssim << '\n';
  }
}

void write_alpha_trajectory(std::ostream& os, const training::TrainReport& report) {
  os << std::setprecision(17) << "step";
  for (const auto& n : report.site_names) os << '\t' << n;
  os << '\n';
  for (std::size_t i = 0; i < report.alpha_trajectory.size(); ++i) {
    os << i;
    for (double a : report.alpha_trajectory[i]) os << '\t' << a;
    os << '\n';
  }
}

std::vector<AblationRow> run_ablation(const model::SRModel& teacher, const RunConfig& base, const data::Dataset& data,
                                      const std::vector<std::string>& quantizers, const std::vector<int>& bits,
                                      int seeds) {
  if (seeds < 1) throw ParameterError("need at least one seed");
  std::vector<AblationRow> rows;
  for (const auto& q : quantizers) {
    const auto mode = quant::parse_quant_mode(q);
    for (int b : bits) {
      for (int i = 0; i < seeds; ++i) {
        RunConfig cfg = base;
        cfg.model.n_bits = b;
        cfg.model.activation_mode = mode;
        cfg.train.seed = base.train.seed + static_cast<std::uint64_t>(i);
        cfg.train.evaluate_each_epoch = false;
        auto result = training::train(&teacher, cfg.model, cfg.train, data);
        const auto ev = training::evaluate(result.student, data.held_out(), data.scale);
        rows.push_back({q, b, cfg.train.seed, ev.psnr_db, ev.ssim});
      }
    }
  }
  return rows;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Quantization-aware training toolkit for super-resolution networks", "pams"};
  app.require_subcommand(1);

  // train
  std::string config_path, data_dir, teacher_path, out_dir, quantizer;
  int bits = 0;
  std::int64_t seed = -1;
  auto* train_cmd = app.add_subcommand("train", "Train a full-precision teacher or a quantized student");
  train_cmd->add_option("--config", config_path, "key = value config file");
  train_cmd->add_option("--data", data_dir, "dataset directory with manifest.txt")->required();
  train_cmd->add_option("--teacher", teacher_path, "full-precision checkpoint to distil from");
  train_cmd->add_option("--bits", bits, "quantization bits (omit for full precision)");
  train_cmd->add_option("--quantizer", quantizer, "activation quantizer: pams, fixed_max or pact");
  train_cmd->add_option("--seed", seed, "override the config seed");
  train_cmd->add_option("--out", out_dir, "output directory")->required();

  // eval
  std::string model_path, metrics = "psnr,ssim", split = "test";
  int scale = 0;
  bool bicubic = false;
  auto* eval_cmd = app.add_subcommand("eval", "Score a checkpoint or packed model on a dataset split");
  eval_cmd->add_option("--model", model_path, "checkpoint or packed model")->required();
  eval_cmd->add_option("--data", data_dir, "dataset directory")->required();
  eval_cmd->add_option("--scale", scale, "upscaling factor")->required()->check(CLI::IsMember({2, 4}));
  eval_cmd->add_option("--metrics", metrics, "comma-separated subset of psnr,ssim");
  eval_cmd->add_option("--split", split, "train, val or test");
  eval_cmd->add_flag("--bicubic", bicubic, "also report the bicubic baseline");

  // export
  std::string packed_out;
  auto* export_cmd = app.add_subcommand("export", "Write a bit-packed deployment model");
  export_cmd->add_option("--model", model_path, "quantized checkpoint")->required();
  export_cmd->add_option("--bits", bits, "bit width of the quantized weights")->required();
  export_cmd->add_option("--out", packed_out, "packed model path")->required();

  // stats
  std::string table_out, hist_out;
  int bins = 20;
  auto* stats_cmd = app.add_subcommand("stats", "Per-layer, per-sample activation maxima");
  stats_cmd->add_option("--model", model_path, "checkpoint or packed model")->required();
  stats_cmd->add_option("--data", data_dir, "dataset directory")->required();
  stats_cmd->add_option("--out", table_out, "table path (TSV)")->required();
  stats_cmd->add_option("--hist", hist_out, "histogram path (TSV); defaults to <out>.hist.tsv");
  stats_cmd->add_option("--bins", bins, "histogram bins per site");

  // compare
  std::string quantizers = "pams,fixed_max,pact", bits_list = "8,4";
  int seeds = 1;
  auto* compare_cmd = app.add_subcommand("compare", "Quantizer ablation at desk scale");
  compare_cmd->add_option("--quantizers", quantizers, "comma-separated quantizers");
  compare_cmd->add_option("--bits", bits_list, "comma-separated bit widths");
  compare_cmd->add_option("--config", config_path, "key = value config file");
  compare_cmd->add_option("--data", data_dir, "dataset directory")->required();
  compare_cmd->add_option("--teacher", teacher_path, "full-precision checkpoint (trained from the config if omitted)");
  compare_cmd->add_option("--seeds", seeds, "repeats per configuration");
  compare_cmd->add_option("--out", out_dir, "optional directory for the results table");

  // size
  auto* size_cmd = app.add_subcommand("size", "Storage size and compression ratio");
  size_cmd->add_option("--model", model_path, "checkpoint or packed model")->required();
  size_cmd->add_option("--bits", bits, "bit width for the high-level extractor")->required();

  // make-toy-data
  int count = 20, size = 96, n_test = 4;
  std::uint64_t data_seed = 0;
  auto* toy_cmd = app.add_subcommand("make-toy-data", "Generate a synthetic PNG corpus with a manifest");
  toy_cmd->add_option("--out", out_dir, "output directory")->required();
  toy_cmd->add_option("--count", count, "number of images");
  toy_cmd->add_option("--size", size, "image side in pixels");
  toy_cmd->add_option("--test", n_test, "images assigned to the test split");
  toy_cmd->add_option("--seed", data_seed, "generator seed");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (train_cmd->parsed()) {
      RunConfig cfg = resolve_config(config_path);
      if (bits > 0) cfg.model.n_bits = bits;
      if (!quantizer.empty()) cfg.model.activation_mode = quant::parse_quant_mode(quantizer);
      if (seed >= 0) cfg.train.seed = static_cast<std::uint64_t>(seed);
      cfg.model.validate();
      if (cfg.model.n_bits && teacher_path.empty()) throw ParameterError("quantized training needs --teacher");
      out << "# resolved config\n" << render_config(cfg);
      const auto ds = data::load_dataset(data_dir, cfg.model.scale_factor);
      std::optional<model::SRModel> teacher;
      if (!teacher_path.empty()) teacher = exporter::load_checkpoint(teacher_path);
      auto result = training::train(teacher ? &*teacher : nullptr, cfg.model, cfg.train, ds);
      std::filesystem::create_directories(out_dir);
      const std::filesystem::path dir(out_dir);
      exporter::save_checkpoint(result.student, dir / "model.ckpt");
      {
        auto f = open_out(dir / "config.txt");
        f << render_config(cfg);
      }
      {
        auto f = open_out(dir / "report.tsv");
        write_train_report(f, result.report);
      }
      {
        auto f = open_out(dir / "alpha.tsv");
        write_alpha_trajectory(f, result.report);
      }
      write_train_report(out, result.report);
      out << "wrote " << (dir / "model.ckpt").string() << '\n';
      return 0;
    }
    if (eval_cmd->parsed()) {
      const auto wanted = split_list(metrics);
      const bool psnr = std::find(wanted.begin(), wanted.end(), "psnr") != wanted.end();
      const bool ssim = std::find(wanted.begin(), wanted.end(), "ssim") != wanted.end();
      if (!psnr && !ssim) throw ParameterError("--metrics must name psnr and/or ssim");
      auto m = exporter::load_any_model(model_path);
      if (m.config().scale_factor != scale) throw ParameterError("--scale does not match the model");
      const auto ds = data::load_dataset(data_dir, scale);
      const auto& pairs = ds.split(split);
      if (pairs.empty()) throw ParameterError("split '" + split + "' is empty");
      print_eval(out, training::evaluate(m, pairs, scale), psnr, ssim);
      if (bicubic) {
        out << "# bicubic\n";
        print_eval(out, training::evaluate_bicubic(pairs, scale, scale), psnr, ssim);
      }
      return 0;
    }
    if (export_cmd->parsed()) {
      const auto m = exporter::load_checkpoint(model_path);
      const auto packed = exporter::pack_model(m, bits);
      const auto bytes = packed.serialize();
      exporter::save_packed(packed, packed_out);
      const auto payload = packed.payload_bits();
      out << "payload_bits\t" << payload << '\n'
          << "file_bytes\t" << bytes.size() << '\n'
          << "overhead_bits\t" << bytes.size() * 8 - payload << '\n';
      return 0;
    }
    if (stats_cmd->parsed()) {
      auto m = exporter::load_any_model(model_path);
      const auto ds = data::load_dataset(data_dir, m.config().scale_factor);
      std::vector<data::ImagePair> images = ds.train;
      images.insert(images.end(), ds.val.begin(), ds.val.end());
      images.insert(images.end(), ds.test.begin(), ds.test.end());
      const auto stats = exporter::activation_stats(m, images);
      {
        auto f = open_out(table_out);
        exporter::write_stats_table(f, stats);
      }
      {
        auto f = open_out(hist_out.empty() ? table_out + ".hist.tsv" : hist_out);
        exporter::write_stats_histogram(f, stats, bins);
      }
      out << "site\tmean_max\tvariance\n" << std::setprecision(6);
      for (std::size_t s = 0; s < stats.site_names.size(); ++s) {
        out << stats.site_names[s] << '\t' << stats.site_mean(s) << '\t' << stats.site_variance(s) << '\n';
      }
      return 0;
    }
    if (compare_cmd->parsed()) {
      RunConfig cfg = resolve_config(config_path);
      out << "# resolved config\n" << render_config(cfg);
      const auto ds = data::load_dataset(data_dir, cfg.model.scale_factor);
      model::SRModel teacher = [&] {
        if (!teacher_path.empty()) return exporter::load_checkpoint(teacher_path);
        RunConfig tcfg = cfg;
        tcfg.model.n_bits.reset();
        tcfg.train.evaluate_each_epoch = false;
        return training::train(nullptr, tcfg.model, tcfg.train, ds).student;
      }();
      const auto rows = run_ablation(teacher, cfg, ds, split_list(quantizers), parse_bits_list(bits_list), seeds);
      std::ostringstream table;
      table << std::fixed << std::setprecision(4) << "quantizer\tbits\tseed\tpsnr_db\tssim\n";
      for (const auto& r : rows) {
        table << r.quantizer << '\t' << r.bits << '\t' << r.seed << '\t' << r.psnr_db << '\t' << r.ssim << '\n';
      }
      table << "# median\n";
      for (const auto& q : split_list(quantizers))
        for (int b : parse_bits_list(bits_list)) {
          std::vector<double> p;
          for (const auto& r : rows)
            if (r.quantizer == q && r.bits == b) p.push_back(r.psnr_db);
          table << q << '\t' << b << "\tmedian\t" << median(p) << '\n';
        }
      const auto ev = training::evaluate(teacher, ds.held_out(), ds.scale);
      const auto bic = training::evaluate_bicubic(ds.held_out(), ds.scale, ds.scale);
      table << "teacher\t32\t-\t" << ev.psnr_db << '\t' << ev.ssim << '\n';
      table << "bicubic\t-\t-\t" << bic.psnr_db << '\t' << bic.ssim << '\n';
      out << table.str();
      if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        auto f = open_out(std::filesystem::path(out_dir) / "compare.tsv");
        f << table.str();
      }
      return 0;
    }
    if (size_cmd->parsed()) {
      const auto m = exporter::load_any_model(model_path);
      exporter::write_size_report(out, exporter::size_report(m, bits));
      return 0;
    }
    if (toy_cmd->parsed()) {
      data::write_toy_corpus(out_dir, count, size, n_test, data_seed);
      out << "wrote " << count << " images to " << out_dir << '\n';
      return 0;
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}

}  // namespace pams::cli
