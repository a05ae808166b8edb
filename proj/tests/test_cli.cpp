#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "pams/cli.hpp"
#include "pams/errors.hpp"
#include "pams/export.hpp"

using namespace pams;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("pams_test_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

struct Run {
  int code;
  std::string out, err;
};

Run run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

const char* kQuickConfig =
    "# tiny run\n"
    "n_blocks = 2\n"
    "n_channels = 4\n"
    "epochs = 2\n"
    "lr_halving_period = 1\n"
    "batch_size = 2\n"
    "patch_size = 8\n"
    "steps_per_epoch = 2\n"
    "calibration_batches = 1\n"
    "lr = 1e-3\n";

}  // namespace

TEST_CASE("config parsing") {
  std::istringstream in(kQuickConfig);
  auto c = parse_config(in);
  CHECK(c.model.n_blocks == 2);
  CHECK(c.model.n_channels == 4);
  CHECK(c.train.epochs == 2);
  CHECK(c.train.lr == 1e-3);
  CHECK(c.train.adam_beta2 == 0.999);
  CHECK(c.train.loss_weights.lambda_s == 1e3);
  CHECK_FALSE(c.model.n_bits.has_value());

  std::istringstream again(render_config(c));
  auto d = parse_config(again);
  CHECK(render_config(d) == render_config(c));

  std::istringstream unknown("n_blockz = 3\n");
  CHECK_THROWS_AS(parse_config(unknown), ParameterError);
  std::istringstream bad("epochs = many\n");
  CHECK_THROWS_AS(parse_config(bad), ParameterError);
  std::istringstream noeq("epochs 3\n");
  CHECK_THROWS_AS(parse_config(noeq), ParameterError);
  std::istringstream q("n_bits = 4\nquantizer = pact\noptimizer = sgd\naugment = false\n");
  auto e = parse_config(q);
  CHECK(*e.model.n_bits == 4);
  CHECK(e.model.activation_mode == quant::QuantMode::activation_pact);
  CHECK(e.train.optimizer == training::OptimizerKind::sgd);
  CHECK_FALSE(e.train.augment);
}

TEST_CASE("median") {
  CHECK(cli::median({3.0, 1.0, 2.0}) == 2.0);
  CHECK(cli::median({4.0, 1.0, 2.0, 3.0}) == 2.5);
  CHECK_THROWS_AS(cli::median({}), ParameterError);
}

TEST_CASE("usage errors") {
  CHECK(run({}).code != 0);
  CHECK(run({"frobnicate"}).code != 0);
  CHECK(run({"--help"}).code == 0);
  CHECK(run({"eval", "--model", "x"}).code != 0);
}

TEST_CASE("end-to-end command flow") {
  const auto dir = scratch("flow");
  const auto data = dir / "data";
  REQUIRE(run({"make-toy-data", "--out", data.string(), "--count", "6", "--size", "32", "--test", "2"}).code == 0);
  std::ofstream(dir / "run.cfg") << kQuickConfig;

  auto t = run({"train", "--config", (dir / "run.cfg").string(), "--data", data.string(), "--out", (dir / "fp").string()});
  INFO(t.err);
  REQUIRE(t.code == 0);
  CHECK(t.out.find("n_blocks = 2") != std::string::npos);
  for (auto f : {"model.ckpt", "report.tsv", "alpha.tsv", "config.txt"}) CHECK(fs::exists(dir / "fp" / f));

  auto missing_teacher = run({"train", "--config", (dir / "run.cfg").string(), "--data", data.string(), "--bits",
                              "4", "--out", (dir / "bad").string()});
  CHECK(missing_teacher.code != 0);

  auto s = run({"train", "--config", (dir / "run.cfg").string(), "--data", data.string(), "--teacher",
                (dir / "fp" / "model.ckpt").string(), "--bits", "4", "--out", (dir / "q4").string()});
  INFO(s.err);
  REQUIRE(s.code == 0);
  CHECK(s.out.find("n_bits = 4") != std::string::npos);
  const auto alpha = slurp(dir / "q4" / "alpha.tsv");
  CHECK(alpha.find("blocks.1.act2") != std::string::npos);

  auto ev = run({"eval", "--model", (dir / "q4" / "model.ckpt").string(), "--data", data.string(), "--scale", "2",
                 "--metrics", "psnr,ssim", "--bicubic"});
  INFO(ev.err);
  REQUIRE(ev.code == 0);
  CHECK(ev.out.find("mean") != std::string::npos);
  CHECK(ev.out.find("# bicubic") != std::string::npos);
  CHECK(run({"eval", "--model", (dir / "q4" / "model.ckpt").string(), "--data", data.string(), "--scale", "4"}).code != 0);

  auto ex = run({"export", "--model", (dir / "q4" / "model.ckpt").string(), "--bits", "4", "--out",
                 (dir / "q4.pack").string()});
  INFO(ex.err);
  REQUIRE(ex.code == 0);
  CHECK(fs::exists(dir / "q4.pack"));
  CHECK(run({"export", "--model", (dir / "q4" / "model.ckpt").string(), "--bits", "8", "--out",
             (dir / "q8.pack").string()}).code != 0);

  auto ev2 = run({"eval", "--model", (dir / "q4.pack").string(), "--data", data.string(), "--scale", "2"});
  CHECK(ev2.code == 0);
  CHECK(ev2.out == ev.out.substr(0, ev.out.find("# bicubic")));

  auto sz = run({"size", "--model", (dir / "q4.pack").string(), "--bits", "4"});
  REQUIRE(sz.code == 0);
  CHECK(sz.out.find("compression_ratio") != std::string::npos);

  auto st = run({"stats", "--model", (dir / "fp" / "model.ckpt").string(), "--data", data.string(), "--out",
                 (dir / "stats.tsv").string()});
  INFO(st.err);
  REQUIRE(st.code == 0);
  CHECK(fs::exists(dir / "stats.tsv"));
  CHECK(fs::exists(dir / "stats.tsv.hist.tsv"));
  CHECK(slurp(dir / "stats.tsv").rfind("site\tsample\tmax_abs\n", 0) == 0);
}
