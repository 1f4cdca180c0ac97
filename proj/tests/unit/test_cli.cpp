#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>

#include "l2tkt/cli.hpp"
#include "l2tkt/error.hpp"
#include "temp_dir.hpp"

using namespace l2tkt;
using namespace l2tkt::cli;
using l2tkt::testing::TempDir;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code = 0;
  std::string out;
  std::string err;
};

Outcome run(std::vector<std::string> args) {
  args.insert(args.begin(), "l2tkt");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::main(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) files[fs::relative(e.path(), root).string()] = slurp(e.path());
  }
  return files;
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

std::vector<std::string> fields(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream in(line);
  for (std::string f; std::getline(in, f, ',');) out.push_back(f);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

bool single_error_line(const std::string& err, const std::string& kind) {
  return err.rfind("error[" + kind + "]: ", 0) == 0 && err.find('\n') == err.size() - 1;
}

// Small and fast: 16x16 images and a two-block encoder.
const std::vector<std::string> kSmall{"--set", "block_widths=[4,8]", "--set", "feature_dim=8"};

std::vector<std::string> with(std::vector<std::string> args, const std::vector<std::string>& more) {
  args.insert(args.end(), more.begin(), more.end());
  return args;
}

fs::path make_data(const fs::path& root, const std::string& n = "60",
                   const std::string& noise = "0.1") {
  const fs::path d = root / "data";
  const Outcome o = run({"synth-data", "--n", n, "--n-aux", "24", "--image-size", "16", "--seed",
                         "3", "--noise", noise, "--out", d.string()});
  REQUIRE_MESSAGE(o.code == 0, o.err);
  return d;
}

std::vector<std::string> train_args(const std::string& cmd, const fs::path& data,
                                    const fs::path& out) {
  return with({cmd, "--data", data.string(), "--out", out.string(), "--seed", "5", "--epochs",
               "2", "--lambda-s", "0.05", "--lambda-t", "0.01", "--set", "image_size=16"},
              kSmall);
}

}  // namespace

TEST_CASE("config merge: file keys override defaults and flags override the file") {
  TempDir tmp("cfg");
  const fs::path cfg = tmp.path() / "c.json";
  std::ofstream(cfg) << R"({"seed": 11, "epochs": 3, "lambda_t": 0.002, "pool": "static",
                       "student_optimizer": "adam", "adam_lr": 0.002})";
  const fs::path data = make_data(tmp.path());
  const fs::path out = tmp.path() / "run";
  auto args = train_args("train-baseline", data, out);
  args.insert(args.end(), {"--config", cfg.string()});
  const Outcome o = run(args);
  REQUIRE_MESSAGE(o.code == 0, o.err);
  const auto resolved = nlohmann::json::parse(slurp(out / "config.json"));
  CHECK(resolved["seed"] == 5);        // flag wins
  CHECK(resolved["epochs"] == 2);      // flag wins
  CHECK(resolved["lambda_t"] == 0.01); // flag wins
  CHECK(resolved["pool"] == "static"); // from file
  CHECK(resolved["student_optimizer"] == "adam");
  CHECK(resolved["adam_lr"] == 0.002);
  CHECK(resolved["layout_version"] == kRunLayoutVersion);

  // The written config reloads to the same resolved config.
  RunConfig again = load_run_config(out / "config.json");
  finalize(again);
  CHECK(to_json(again) == resolved);

  RunConfig c = experiment_defaults();
  CHECK_THROWS_AS(merge_json(c, nlohmann::json{{"nope", 1}}), UsageError);
  CHECK_THROWS_AS(merge_json(c, nlohmann::json{{"epochs", "ten"}}), UsageError);
  CHECK_THROWS_AS(merge_json(c, nlohmann::json{{"n_labeled", -4}}), UsageError);
  CHECK_THROWS_AS(merge_json(c, nlohmann::json{{"pool", "sometimes"}}), UsageError);
  CHECK_THROWS_AS(merge_json(c, nlohmann::json{{"student_optimizer", "lbfgs"}}), UsageError);
}

TEST_CASE("synth-data: counts, provenance, byte-identical reruns") {
  TempDir tmp("synth");
  const std::vector<std::string> args{"synth-data", "--n", "200", "--seed", "7", "--image-size",
                                      "16", "--n-aux", "30"};
  const Outcome a = run(with(args, {"--out", (tmp.path() / "a").string()}));
  const Outcome b = run(with(args, {"--out", (tmp.path() / "b").string()}));
  REQUIRE_MESSAGE(a.code == 0, a.err);
  REQUIRE(b.code == 0);

  CHECK(lines(slurp(tmp.path() / "a" / "labeled.csv")).size() == 201);
  CHECK(lines(slurp(tmp.path() / "a" / "auxiliary.csv")).size() == 31);
  const std::size_t parts = lines(slurp(tmp.path() / "a" / "train.csv")).size() +
                            lines(slurp(tmp.path() / "a" / "val.csv")).size() +
                            lines(slurp(tmp.path() / "a" / "test.csv")).size();
  CHECK(parts == 203);
  const auto prov = nlohmann::json::parse(slurp(tmp.path() / "a" / "provenance.json"));
  CHECK(prov["seed"] == 7);
  CHECK(prov["n_labeled"] == 200);
  CHECK(prov["split_sizes"] == nlohmann::json::array({120, 30, 50}));

  const auto ta = tree(tmp.path() / "a");
  CHECK(ta.size() == 200 + 2 * 30 + 6);
  CHECK(ta == tree(tmp.path() / "b"));

  const Outcome zero = run({"synth-data", "--n", "0", "--out", (tmp.path() / "z").string()});
  CHECK(zero.code == 2);
  CHECK(single_error_line(zero.err, "usage"));
  CHECK(run({"synth-data", "--n", "5"}).code == 2);  // no --out
  CHECK(run({"no-such-command"}).code == 2);
}

TEST_CASE("loader worker count does not change results") {
  TempDir tmp("workers");
  const fs::path data = make_data(tmp.path());
  const LoadedData one = load_data_dir(data, true);
  ::setenv("L2TKT_NUM_WORKERS", "3", 1);
  const LoadedData three = load_data_dir(data, true);
  ::setenv("L2TKT_NUM_WORKERS", "zero", 1);
  CHECK_THROWS_AS(load_data_dir(data, false), UsageError);
  ::unsetenv("L2TKT_NUM_WORKERS");
  auto same = [](const Tensor& a, const Tensor& b) {
    return a.shape() == b.shape() && std::equal(a.data().begin(), a.data().end(), b.data().begin());
  };
  CHECK(same(one.train.inputs, three.train.inputs));
  CHECK(one.train.labels == three.train.labels);
  CHECK(same(one.auxiliary.teacher_inputs, three.auxiliary.teacher_inputs));
  CHECK_THROWS_AS(load_data_dir(tmp.path() / "missing", false), IoError);
}

TEST_CASE("train-baseline: run directory layout and reproducibility") {
  TempDir tmp("baseline");
  const fs::path data = make_data(tmp.path());
  const Outcome a = run(train_args("train-baseline", data, tmp.path() / "a"));
  const Outcome b = run(train_args("train-baseline", data, tmp.path() / "b"));
  REQUIRE_MESSAGE(a.code == 0, a.err);
  REQUIRE(b.code == 0);
  for (const char* f : {"config.json", "metrics.csv", "summary.json", "checkpoints/final.json",
                        "checkpoints/final.bin", "checkpoints/best.json", "checkpoints/best.bin"}) {
    CHECK_MESSAGE(fs::exists(tmp.path() / "a" / f), f);
  }
  CHECK_FALSE(fs::exists(tmp.path() / "a" / "pool_history.csv"));
  const auto metrics = lines(slurp(tmp.path() / "a" / "metrics.csv"));
  REQUIRE(metrics.size() == 1 + 2 * 2);  // val and test rows per epoch
  CHECK(metrics[0] == kMetricsHeader);
  for (std::size_t i = 1; i < metrics.size(); ++i) {
    CHECK(fields(metrics[i]).size() == fields(metrics[0]).size());
  }
  CHECK(slurp(tmp.path() / "a" / "metrics.csv") == slurp(tmp.path() / "b" / "metrics.csv"));
  CHECK(slurp(tmp.path() / "a" / "checkpoints/best.bin") ==
        slurp(tmp.path() / "b" / "checkpoints/best.bin"));
  const auto summary = nlohmann::json::parse(slurp(tmp.path() / "a" / "summary.json"));
  CHECK(summary["kind"] == "baseline");
  CHECK(summary.contains("test_best"));

  const Outcome missing = run(train_args("train-baseline", tmp.path() / "nodata", tmp.path() / "c"));
  CHECK(missing.code == 1);
  CHECK(single_error_line(missing.err, "io"));
}

TEST_CASE("train-l2tkt: static and dynamic pools, first-order flag, teacher init errors") {
  TempDir tmp("l2tkt");
  const fs::path data = make_data(tmp.path());
  REQUIRE(run(train_args("train-baseline", data, tmp.path() / "base")).code == 0);
  const std::string ckpt = (tmp.path() / "base" / "checkpoints" / "best").string();

  auto l2tkt = [&](const std::string& dir, std::vector<std::string> extra) {
    return run(with(with(train_args("train-l2tkt", data, tmp.path() / dir), extra),
                    {"--baseline-ckpt", ckpt}));
  };
  const Outcome st = l2tkt("static", {"--pool", "static"});
  const Outcome dy = l2tkt("dynamic", {"--pool", "dynamic"});
  REQUIRE_MESSAGE(st.code == 0, st.err);
  REQUIRE_MESSAGE(dy.code == 0, dy.err);
  const auto ms = lines(slurp(tmp.path() / "static" / "metrics.csv"));
  const auto md = lines(slurp(tmp.path() / "dynamic" / "metrics.csv"));
  CHECK(ms.size() == md.size());
  CHECK(ms[0] == md[0]);
  CHECK(fs::exists(tmp.path() / "dynamic" / "pool_history.csv"));
  CHECK_FALSE(fs::exists(tmp.path() / "static" / "pool_history.csv"));
  CHECK(fs::exists(tmp.path() / "dynamic" / "checkpoints" / "teacher_final.json"));

  const Outcome again = l2tkt("dynamic2", {"--pool", "dynamic"});
  REQUIRE(again.code == 0);
  CHECK(slurp(tmp.path() / "dynamic" / "metrics.csv") ==
        slurp(tmp.path() / "dynamic2" / "metrics.csv"));
  CHECK(slurp(tmp.path() / "dynamic" / "pool_history.csv") ==
        slurp(tmp.path() / "dynamic2" / "pool_history.csv"));

  const Outcome fo = l2tkt("first", {"--first-order"});
  REQUIRE_MESSAGE(fo.code == 0, fo.err);
  CHECK(nlohmann::json::parse(slurp(tmp.path() / "first" / "config.json"))["second_order"] ==
        false);
  CHECK(nlohmann::json::parse(slurp(tmp.path() / "dynamic" / "config.json"))["second_order"] ==
        true);
  CHECK(slurp(tmp.path() / "first" / "metrics.csv") !=
        slurp(tmp.path() / "dynamic" / "metrics.csv"));

  const Outcome no_ckpt =
      run(with(train_args("train-l2tkt", data, tmp.path() / "x"),
               {"--baseline-ckpt", (tmp.path() / "nowhere" / "best").string()}));
  CHECK(no_ckpt.code == 1);
  CHECK(single_error_line(no_ckpt.err, "io"));
  CHECK(no_ckpt.err.find("teacher initialization requires a baseline checkpoint") !=
        std::string::npos);
  const Outcome no_flag = run(train_args("train-l2tkt", data, tmp.path() / "y"));
  CHECK(no_flag.code == 2);
  CHECK(no_flag.err.find("--baseline-ckpt") != std::string::npos);

  const Outcome mismatch = run(with(train_args("train-l2tkt", data, tmp.path() / "z"),
                                    {"--baseline-ckpt", ckpt, "--set", "feature_dim=6"}));
  CHECK(mismatch.code == 1);
  CHECK(single_error_line(mismatch.err, "validation"));

  SUBCASE("inspect-pool") {
    const Outcome ip = run({"inspect-pool", "--run", (tmp.path() / "dynamic").string()});
    REQUIRE_MESSAGE(ip.code == 0, ip.err);
    const auto rows = lines(ip.out);
    REQUIRE(rows.size() == 3);  // header + 2 epochs
    CHECK(rows[0] == kPoolSummaryHeader);
    for (std::size_t i = 1; i < rows.size(); ++i) {
      const auto f = fields(rows[i]);
      REQUIRE(f.size() == 6);
      CHECK(std::stoi(f[0]) == static_cast<int>(i));
      CHECK(std::stoul(f[1]) > 0);
      CHECK(std::stoul(f[2]) <= std::stoul(f[1]));
      const double base = std::stod(f[4]);
      CHECK(base > 0.0);
      CHECK(base < 1.0);
    }
    const Outcome bad = run({"inspect-pool", "--run", (tmp.path() / "static").string()});
    CHECK(bad.code == 1);
    CHECK(single_error_line(bad.err, "validation"));
    CHECK(bad.err.find("dynamic") != std::string::npos);
  }
}

TEST_CASE("eval: CSV output, overfit training split, single-class error") {
  TempDir tmp("eval");
  const fs::path data = make_data(tmp.path(), "40", "0");
  // A tiny training split overfits quickly.
  const Outcome fit =
      run({"train-baseline", "--data", data.string(), "--out", (tmp.path() / "fit").string(),
           "--epochs", "2000", "--lambda-s", "0.3", "--set", "image_size=16"});
  REQUIRE_MESSAGE(fit.code == 0, fit.err);
  const std::string ckpt = (tmp.path() / "fit" / "checkpoints" / "final").string();

  const Outcome o = run({"eval", "--checkpoint", ckpt, "--manifest", (data / "train.csv").string(),
                         "--split", "train", "--out", (tmp.path() / "eval.csv").string()});
  REQUIRE_MESSAGE(o.code == 0, o.err);
  CHECK(slurp(tmp.path() / "eval.csv") == o.out);
  const auto rows = lines(o.out);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0] == kEvalHeader);
  const auto f = fields(rows[1]);
  REQUIRE(f.size() == fields(kEvalHeader).size());
  CHECK(f[0] == "train");
  CHECK(std::stoul(f[1]) == 24);
  CHECK(std::stod(f[2]) >= 0.95);
  CHECK(std::stoul(f[7]) + std::stoul(f[8]) + std::stoul(f[9]) + std::stoul(f[10]) == 24);

  // Keep only one class.
  auto manifest = lines(slurp(data / "train.csv"));
  std::ofstream single(tmp.path() / "single.csv");
  single << manifest[0] << '\n';
  for (std::size_t i = 1; i < manifest.size(); ++i) {
    if (fields(manifest[i])[1] == "1") single << "data/" << manifest[i] << '\n';
  }
  single.close();
  const Outcome one = run({"eval", "--checkpoint", ckpt, "--manifest",
                           (tmp.path() / "single.csv").string()});
  CHECK(one.code == 1);
  CHECK(single_error_line(one.err, "undefined-metric"));

  const Outcome no_ckpt = run({"eval", "--checkpoint", (tmp.path() / "none").string(),
                               "--manifest", (data / "test.csv").string()});
  CHECK(no_ckpt.code == 1);
  CHECK(single_error_line(no_ckpt.err, "io"));
}

TEST_CASE("experiment harness writes a per-seed summary table") {
  TempDir tmp("experiment");
  const Outcome o =
      run(with({"experiment", "--out", tmp.path().string(), "--n", "120", "--n-aux", "24",
                "--image-size", "16", "--epochs", "1", "--seeds", "4,9"},
               kSmall));
  REQUIRE_MESSAGE(o.code == 0, o.err);
  const auto rows = lines(o.out);
  REQUIRE(rows.size() == 5);
  CHECK(rows[0] == "seed,baseline_auc,static_auc,dynamic_auc");
  CHECK(fields(rows[1])[0] == "4");
  CHECK(fields(rows[2])[0] == "9");
  CHECK(fields(rows[3])[0] == "mean");
  CHECK(fields(rows[4])[0] == "sd");
  CHECK(slurp(tmp.path() / "summary.csv") == o.out);
  for (const char* run_dir : {"baseline", "static", "dynamic"}) {
    CHECK(fs::exists(tmp.path() / "seed_4" / run_dir / "metrics.csv"));
  }
  CHECK(run({"experiment", "--out", tmp.path().string(), "--seeds", "1,x"}).code == 2);
}

TEST_CASE("the l2tkt binary reports errors with exit codes") {
  const std::string bin = L2TKT_CLI_PATH;
  CHECK(std::system((bin + " --help > /dev/null").c_str()) == 0);
  const int usage = std::system((bin + " synth-data --n 0 --out /tmp/l2tkt-never 2> /dev/null").c_str());
  CHECK(WIFEXITED(usage));
  CHECK(WEXITSTATUS(usage) == 2);
  const int io = std::system((bin + " inspect-pool --run /nonexistent-run 2> /dev/null").c_str());
  CHECK(WEXITSTATUS(io) == 1);
}
