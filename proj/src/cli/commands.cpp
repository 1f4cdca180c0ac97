#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>

#include "l2tkt/checkpoint.hpp"
#include "l2tkt/cli.hpp"
#include "l2tkt/error.hpp"

namespace l2tkt::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::size_t loader_workers() {
  const char* env = std::getenv("L2TKT_NUM_WORKERS");
  if (env == nullptr || *env == '\0') return 1;
  char* end = nullptr;
  const long value = std::strtol(env, &end, 10);
  if (*end != '\0' || value < 1 || value > 256) {
    throw UsageError(std::string("L2TKT_NUM_WORKERS must be an integer in [1, 256], got '") +
                     env + "'");
  }
  return static_cast<std::size_t>(value);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void prepare_out_dir(const fs::path& dir) {
  if (dir.empty()) throw UsageError("an output directory is required (--out)");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) {
    throw IoError("cannot create output directory " + dir.string());
  }
}

std::string sample_name(const char* prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s_%05zu", prefix, i);
  return buf;
}

LabeledSet load_split(const fs::path& manifest, std::size_t workers) {
  const auto samples = load_labeled_dataset(read_manifest(manifest), workers);
  return to_labeled_set(samples);
}

EncoderConfig teacher_config_for(const EncoderConfig& student) {
  EncoderConfig teacher = student;
  teacher.input_channels = student.input_channels + kMaskChannels;
  return teacher;
}

void check_image_size(const RunConfig& config, const LabeledSet& set, const char* which) {
  if (set.size() == 0) return;
  const Shape& s = set.inputs.shape();
  if (s[2] != config.encoder.image_size || s[3] != config.encoder.image_size) {
    throw ValidationError(std::string(which) + " images are " + std::to_string(s[2]) + "x" +
                          std::to_string(s[3]) + " but the encoder expects " +
                          std::to_string(config.encoder.image_size));
  }
}

EvalResult evaluate_on(const Architecture& arch, const ParamSet& student, const LabeledSet& set) {
  return evaluate(predict_probabilities(arch, student, set.inputs), set.labels);
}

double positive_rate(const std::vector<int>& labels) {
  if (labels.empty()) return kNotApplicable;
  double pos = 0.0;
  for (int y : labels) pos += y;
  return pos / static_cast<double>(labels.size());
}

json eval_json(const EvalResult& e) {
  return json{{"acc", e.acc}, {"sen", e.sen}, {"spec", e.spec}, {"auc", e.auc}};
}

void write_run_files(const RunConfig& config, const fs::path& dir, const char* kind,
                     const std::vector<MetricRow>& history, const RunSummary& summary,
                     const LoadedData& data) {
  write_text(dir / "config.json", to_json(config).dump(2) + "\n");
  write_text(dir / "metrics.csv", format_metrics_csv(history));
  json s{{"kind", kind},
         {"layout_version", kRunLayoutVersion},
         {"seed", config.seed},
         {"best_epoch", summary.best_epoch},
         {"train_size", data.train.size()},
         {"train_positive_rate", positive_rate(data.train.labels)}};
  if (!std::isnan(summary.best_val_auc)) s["best_val_auc"] = summary.best_val_auc;
  if (summary.has_test) {
    s["test_final"] = eval_json(summary.test_final);
    s["test_best"] = eval_json(summary.test_best);
  }
  write_text(dir / "summary.json", s.dump(2) + "\n");
}

void log_summary(std::ostream& log, const char* kind, const RunSummary& s) {
  log << kind << ": best epoch " << s.best_epoch << ", val AUC " << s.best_val_auc;
  if (s.has_test) {
    log << ", test AUC " << s.test_best.auc << " (final " << s.test_final.auc << ")";
  }
  log << '\n';
}

}  // namespace

void synth_data(const RunConfig& config, std::ostream& log) {
  if (config.synth.n_labeled < 1) throw UsageError("--n must be at least 1");
  prepare_out_dir(config.out);
  SynthConfig synth = config.synth;
  synth.seed = config.seed;
  const SynthDataset d = synth_generate(synth);
  const fs::path root = config.out;
  fs::create_directories(root / "images");
  fs::create_directories(root / "masks");

  DatasetManifest labeled{root, {}, "labeled"};
  std::size_t positives = 0;
  for (std::size_t i = 0; i < d.labeled.size(); ++i) {
    const std::string name = "images/" + sample_name("labeled", i) + ".png";
    write_image_png(root / name, d.labeled[i].image);
    labeled.entries.push_back({name, d.labeled[i].label, std::nullopt});
    positives += d.labeled[i].label;
  }
  write_manifest(root / "labeled.csv", labeled);

  const DataSplit<LabeledSample> parts = split(d.labeled, config.split, config.seed);
  auto write_part = [&](const std::vector<LabeledSample>& part, const char* name) {
    DatasetManifest m{root, {}, name};
    for (const auto& s : part) m.entries.push_back(labeled.entries.at(static_cast<std::size_t>(s.id)));
    write_manifest(root / (std::string(name) + ".csv"), m);
  };
  write_part(parts.train, "train");
  write_part(parts.val, "val");
  write_part(parts.test, "test");

  DatasetManifest aux{root, {}, "auxiliary"};
  for (std::size_t i = 0; i < d.auxiliary.size(); ++i) {
    const std::string image = "images/" + sample_name("aux", i) + ".png";
    const std::string mask = "masks/" + sample_name("aux", i) + ".png";
    write_image_png(root / image, d.auxiliary[i].image);
    write_mask_png(root / mask, d.auxiliary[i].mask);
    aux.entries.push_back({image, std::nullopt, mask});
  }
  write_manifest(root / "auxiliary.csv", aux);

  std::size_t flipped = 0;
  for (const auto& r : d.labeled_records) flipped += r.label != r.clean_label;
  const json provenance{
      {"generator", "synthetic-fundus"},
      {"generator_version", 1},
      {"seed", config.seed},
      {"n_labeled", synth.n_labeled},
      {"n_auxiliary", synth.n_auxiliary},
      {"image_size", synth.image_size},
      {"label_noise_rate", synth.label_noise_rate},
      {"cdr_threshold", kGlaucomaCdrThreshold},
      {"split", config.split},
      {"split_sizes", {parts.train.size(), parts.val.size(), parts.test.size()}},
      {"positives", positives},
      {"flipped_labels", flipped},
  };
  write_text(root / "provenance.json", provenance.dump(2) + "\n");
  log << "wrote " << d.labeled.size() << " labeled and " << d.auxiliary.size()
      << " auxiliary images to " << root.string() << '\n';
}

LoadedData load_data_dir(const fs::path& dir, bool with_auxiliary) {
  if (dir.empty()) throw UsageError("a dataset directory is required (--data)");
  const std::size_t workers = loader_workers();
  LoadedData d;
  d.train = load_split(dir / "train.csv", workers);
  d.val = load_split(dir / "val.csv", workers);
  d.test = load_split(dir / "test.csv", workers);
  if (with_auxiliary) {
    d.auxiliary = to_auxiliary_set(load_masked_dataset(read_manifest(dir / "auxiliary.csv"), workers));
  }
  return d;
}

RunSummary train_baseline_run(const RunConfig& config, const LoadedData& data, std::ostream& log) {
  check_image_size(config, data.train, "training");
  prepare_out_dir(config.out);
  fs::create_directories(config.out / "checkpoints");
  const ConvArchitecture arch(config.encoder, teacher_config_for(config.encoder));
  TrainConfig cfg = config.train;
  if (config.baseline_epochs >= 0) cfg.epochs = config.baseline_epochs;
  const StudentModel init = init_student(config.encoder, config.seed);
  const BaselineResult r = train_baseline(arch, cfg, data.train, data.val, data.test, init.params);

  RunSummary s;
  s.best_epoch = r.best_epoch;
  s.best_val_auc = r.best_auc;
  if (data.test.size() > 0) {
    s.has_test = true;
    s.test_final = evaluate_on(arch, r.final_student, data.test);
    s.test_best = evaluate_on(arch, r.best_student, data.test);
  }
  save_student(config.out / "checkpoints" / "final", {config.encoder, r.final_student}, cfg.epochs,
               config.seed, config.train.centered);
  save_student(config.out / "checkpoints" / "best", {config.encoder, r.best_student}, r.best_epoch,
               config.seed, config.train.centered);
  write_run_files(config, config.out, "baseline", r.history, s, data);
  log_summary(log, "baseline", s);
  return s;
}

RunSummary train_l2tkt_run(const RunConfig& config, const LoadedData& data, std::ostream& log) {
  check_image_size(config, data.train, "training");
  if (config.baseline_ckpt.empty()) {
    throw UsageError(
        "train-l2tkt initializes the teacher from a pretrained baseline; pass --baseline-ckpt");
  }
  fs::path stem = config.baseline_ckpt;
  if (stem.extension() == ".json" || stem.extension() == ".bin") stem.replace_extension();
  if (!fs::exists(stem.string() + ".json")) {
    throw IoError("teacher initialization requires a baseline checkpoint, but " +
                  stem.string() + ".json does not exist");
  }
  const StudentModel baseline = load_student(stem);
  if (!(baseline.config == config.encoder)) {
    throw ValidationError("baseline checkpoint encoder does not match the run's encoder config");
  }
  prepare_out_dir(config.out);
  fs::create_directories(config.out / "checkpoints");

  const TeacherModel teacher = init_teacher_from_baseline(baseline);
  const ConvArchitecture arch(config.encoder, teacher.config);
  const StudentModel student = init_student(config.encoder, config.seed);
  FitData fit_data{data.train, data.auxiliary, data.val, data.test};
  const FitResult r = fit(arch, config.train, fit_data, student.params, teacher.params);

  RunSummary s;
  s.best_epoch = r.best_epoch;
  s.best_val_auc = r.best_auc;
  if (data.test.size() > 0) {
    s.has_test = true;
    s.test_final = evaluate_on(arch, r.state.student, data.test);
    s.test_best = evaluate_on(arch, r.best_student, data.test);
  }
  const int epochs = config.train.epochs;
  save_student(config.out / "checkpoints" / "final", {config.encoder, r.state.student}, epochs,
               config.seed, config.train.centered);
  save_student(config.out / "checkpoints" / "best", {config.encoder, r.best_student}, r.best_epoch,
               config.seed, config.train.centered);
  save_checkpoint(config.out / "checkpoints" / "teacher_final",
                  {"teacher", teacher.config, epochs, config.seed, config.train.centered},
                  r.state.teacher);
  if (config.train.pool.mode == PoolMode::dynamic_pool) {
    write_text(config.out / "pool_history.csv", format_pool_log_csv(r.pool_log));
  }
  write_run_files(config, config.out, "l2tkt", r.state.history, s, data);
  if (config.train.test_mode) {
    log << "isolation: " << r.isolation.iterations << " iterations, "
        << r.isolation.teacher_changed_in_student_stages << " teacher changes in stages 1-2, "
        << r.isolation.student_changed_in_teacher_stage << " student changes in stage 3, "
        << r.isolation.quiz_ids_in_student_batches << " quiz ids in student batches\n";
  }
  log_summary(log, config.train.pool.mode == PoolMode::dynamic_pool ? "l2tkt-dynamic" : "l2tkt-static",
              s);
  return s;
}

std::string eval_checkpoint(const fs::path& checkpoint, const fs::path& manifest,
                            const std::string& split_name) {
  const StudentModel model = load_student(checkpoint);
  const LabeledSet set = load_split(manifest, loader_workers());
  if (set.size() == 0) throw ValidationError("evaluation manifest " + manifest.string() + " is empty");
  const Shape& s = set.inputs.shape();
  if (s[1] != model.config.input_channels || s[2] != model.config.image_size ||
      s[3] != model.config.image_size) {
    throw ValidationError("checkpoint expects " + std::to_string(model.config.input_channels) +
                          "x" + std::to_string(model.config.image_size) + "x" +
                          std::to_string(model.config.image_size) + " inputs, manifest has " +
                          to_string(Shape{s[1], s[2], s[3]}));
  }
  const EvalResult e = evaluate(predict(model, set.inputs), set.labels);
  char row[256];
  std::snprintf(row, sizeof row, "%s,%zu,%.10g,%.10g,%.10g,%.10g,%.10g,%zu,%zu,%zu,%zu\n",
                split_name.c_str(), set.size(), e.acc, e.sen, e.spec, e.auc, e.threshold,
                e.counts.tp, e.counts.fp, e.counts.tn, e.counts.fn);
  return std::string(kEvalHeader) + "\n" + row;
}

std::string inspect_pool(const fs::path& run_dir) {
  const fs::path history = run_dir / "pool_history.csv";
  if (!fs::exists(history)) {
    throw ValidationError("run " + run_dir.string() +
                          " has no pool_history.csv; only dynamic-pool runs log pool history");
  }
  double base_rate = kNotApplicable;
  if (fs::exists(run_dir / "summary.json")) {
    const json s = json::parse(read_text(run_dir / "summary.json"));
    if (s.contains("train_positive_rate") && s["train_positive_rate"].is_number()) {
      base_rate = s["train_positive_rate"].get<double>();
    }
  }
  std::istringstream in(read_text(history));
  std::string line;
  if (!std::getline(in, line) || line != kPoolLogHeader) {
    throw IoError(history.string() + " does not start with " + kPoolLogHeader);
  }
  struct EpochStats {
    std::size_t size = 0;
    std::size_t positives = 0;
    double psi = 0.0;
  };
  std::map<int, EpochStats> epochs;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    long long id = 0;
    int label = 0, epoch = 0;
    double psi = 0.0;
    if (std::sscanf(line.c_str(), "%lld,%d,%lf,%d", &id, &label, &psi, &epoch) != 4) {
      throw IoError("malformed pool history row: " + line);
    }
    EpochStats& e = epochs[epoch];
    ++e.size;
    e.positives += label == 1;
    e.psi += psi;
  }
  std::ostringstream out;
  out << kPoolSummaryHeader << '\n';
  for (const auto& [epoch, e] : epochs) {
    char row[160];
    std::snprintf(row, sizeof row, "%d,%zu,%zu,%.6g,%s,%.6g\n", epoch, e.size, e.positives,
                  static_cast<double>(e.positives) / static_cast<double>(e.size),
                  std::isnan(base_rate) ? "" : std::to_string(base_rate).c_str(),
                  e.psi / static_cast<double>(e.size));
    out << row;
  }
  return out.str();
}

ExperimentSummary run_experiment(const RunConfig& config, const std::vector<std::uint64_t>& seeds,
                                 std::ostream& log) {
  if (seeds.empty()) throw UsageError("the experiment needs at least one seed");
  prepare_out_dir(config.out);
  const auto start = std::chrono::steady_clock::now();
  ExperimentSummary summary;
  for (std::uint64_t seed : seeds) {
    const fs::path dir = config.out / ("seed_" + std::to_string(seed));
    RunConfig base = config;
    base.seed = seed;
    finalize(base);

    RunConfig data_cfg = base;
    data_cfg.out = dir / "data";
    synth_data(data_cfg, log);
    const LoadedData data = load_data_dir(data_cfg.out, true);

    SeedOutcome outcome;
    outcome.seed = seed;
    RunConfig baseline_cfg = base;
    baseline_cfg.data = data_cfg.out;
    baseline_cfg.out = dir / "baseline";
    outcome.baseline_auc = train_baseline_run(baseline_cfg, data, log).test_best.auc;

    for (PoolMode mode : {PoolMode::static_pool, PoolMode::dynamic_pool}) {
      RunConfig run = base;
      run.data = data_cfg.out;
      run.train.pool.mode = mode;
      run.baseline_ckpt = baseline_cfg.out / "checkpoints" / "best";
      run.out = dir / (mode == PoolMode::static_pool ? "static" : "dynamic");
      const double auc = train_l2tkt_run(run, data, log).test_best.auc;
      (mode == PoolMode::static_pool ? outcome.static_auc : outcome.dynamic_auc) = auc;
    }
    summary.seeds.push_back(outcome);
    log << "seed " << seed << ": baseline " << outcome.baseline_auc << ", static "
        << outcome.static_auc << ", dynamic " << outcome.dynamic_auc << '\n';
  }
  summary.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  write_text(config.out / "summary.csv", format_experiment_table(summary));
  return summary;
}

std::string format_experiment_table(const ExperimentSummary& summary) {
  std::ostringstream out;
  out << "seed,baseline_auc,static_auc,dynamic_auc\n";
  std::array<std::vector<double>, 3> columns;
  for (const auto& s : summary.seeds) {
    char row[128];
    std::snprintf(row, sizeof row, "%llu,%.6f,%.6f,%.6f\n",
                  static_cast<unsigned long long>(s.seed), s.baseline_auc, s.static_auc,
                  s.dynamic_auc);
    out << row;
    columns[0].push_back(s.baseline_auc);
    columns[1].push_back(s.static_auc);
    columns[2].push_back(s.dynamic_auc);
  }
  auto stats = [](const std::vector<double>& v) {
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    const double sd = v.size() > 1 ? std::sqrt(var / static_cast<double>(v.size() - 1)) : 0.0;
    return std::pair{mean, sd};
  };
  if (!summary.seeds.empty()) {
    const auto [bm, bs] = stats(columns[0]);
    const auto [sm, ss] = stats(columns[1]);
    const auto [dm, ds] = stats(columns[2]);
    char row[160];
    std::snprintf(row, sizeof row, "mean,%.6f,%.6f,%.6f\nsd,%.6f,%.6f,%.6f\n", bm, sm, dm, bs, ss,
                  ds);
    out << row;
  }
  return out.str();
}

namespace {

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> data;
  std::optional<std::string> baseline_ckpt;
  std::optional<std::string> pool;
  std::optional<std::string> cadence;
  std::optional<long long> n;
  std::optional<long long> n_aux;
  std::optional<long long> image_size;
  std::optional<double> noise;
  std::optional<int> epochs;
  std::optional<int> baseline_epochs;
  std::optional<double> lambda_s;
  std::optional<double> lambda_t;
  bool first_order = false;
  bool uncentered = false;
  bool test_mode = false;
  std::vector<std::string> sets;
};

void add_common(CLI::App* cmd, Flags& f) {
  cmd->add_option("--config", f.config, "JSON config file; flags override its keys");
  cmd->add_option("--seed", f.seed, "random seed");
  cmd->add_option("--out", f.out, "output directory");
  cmd->add_option("--set", f.sets, "override any config key: key=<json value>");
}

void add_training(CLI::App* cmd, Flags& f) {
  cmd->add_option("--data", f.data, "dataset directory written by synth-data");
  cmd->add_option("--epochs", f.epochs, "training epochs");
  cmd->add_option("--lambda-s", f.lambda_s, "student step size");
  cmd->add_option("--lambda-t", f.lambda_t, "teacher step size");
}

void add_synth(CLI::App* cmd, Flags& f) {
  cmd->add_option("--n", f.n, "number of labeled images");
  cmd->add_option("--n-aux", f.n_aux, "number of auxiliary images");
  cmd->add_option("--image-size", f.image_size, "image side length");
  cmd->add_option("--noise", f.noise, "label noise rate");
}

void add_l2tkt(CLI::App* cmd, Flags& f) {
  cmd->add_option("--pool", f.pool, "quiz pool mode: static or dynamic");
  cmd->add_option("--cadence", f.cadence, "dynamic pool update cadence: per-epoch or per-iteration");
  cmd->add_option("--baseline-ckpt", f.baseline_ckpt, "baseline checkpoint used to initialize the teacher");
  cmd->add_flag("--first-order", f.first_order, "finite-difference meta-gradient instead of double backprop");
  cmd->add_flag("--uncentered", f.uncentered, "uncentered CKA");
  cmd->add_flag("--test-mode", f.test_mode, "record stage isolation and leakage checks");
}

json flag_overrides(const Flags& f) {
  json j = json::object();
  if (f.seed) j["seed"] = *f.seed;
  if (f.out) j["out"] = *f.out;
  if (f.data) j["data"] = *f.data;
  if (f.baseline_ckpt) j["baseline_ckpt"] = *f.baseline_ckpt;
  if (f.pool) j["pool"] = *f.pool;
  if (f.cadence) j["cadence"] = *f.cadence;
  if (f.n) {
    if (*f.n < 1) throw UsageError("--n must be at least 1");
    j["n_labeled"] = *f.n;
  }
  if (f.n_aux) {
    if (*f.n_aux < 1) throw UsageError("--n-aux must be at least 1");
    j["n_auxiliary"] = *f.n_aux;
  }
  if (f.image_size) {
    if (*f.image_size < 1) throw UsageError("--image-size must be positive");
    j["image_size"] = *f.image_size;
  }
  if (f.noise) j["label_noise_rate"] = *f.noise;
  if (f.epochs) j["epochs"] = *f.epochs;
  if (f.baseline_epochs) j["baseline_epochs"] = *f.baseline_epochs;
  if (f.lambda_s) j["lambda_s"] = *f.lambda_s;
  if (f.lambda_t) j["lambda_t"] = *f.lambda_t;
  if (f.first_order) j["second_order"] = false;
  if (f.uncentered) j["centered"] = false;
  if (f.test_mode) j["test_mode"] = true;
  for (const std::string& s : f.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw UsageError("--set expects key=value, got '" + s + "'");
    const std::string value = s.substr(eq + 1);
    json parsed = json::parse(value, nullptr, false);
    j[s.substr(0, eq)] = parsed.is_discarded() ? json(value) : parsed;
  }
  return j;
}

RunConfig resolve(const Flags& f) {
  RunConfig config = f.config.empty() ? experiment_defaults() : load_run_config(f.config);
  merge_json(config, flag_overrides(f));
  finalize(config);
  return config;
}

std::string one_line(std::string text) {
  for (char& c : text) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  return text;
}

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::istringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    char* end = nullptr;
    const unsigned long long v = std::strtoull(item.c_str(), &end, 10);
    if (item.empty() || *end != '\0') throw UsageError("invalid seed list '" + text + "'");
    seeds.push_back(v);
  }
  if (seeds.empty()) throw UsageError("invalid seed list '" + text + "'");
  return seeds;
}

}  // namespace

int main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Teacher/student glaucoma classification with a learned teacher and quiz pool"};
  app.require_subcommand(1);
  Flags f;
  std::string manifest, checkpoint, split_name = "test", run_dir, seeds = "1,2,3,4,5";

  CLI::App* synth = app.add_subcommand("synth-data", "generate a synthetic fundus dataset");
  add_common(synth, f);
  add_synth(synth, f);

  CLI::App* baseline = app.add_subcommand("train-baseline", "supervised BCE baseline");
  add_common(baseline, f);
  add_training(baseline, f);

  CLI::App* l2tkt = app.add_subcommand("train-l2tkt", "teacher/student training with a quiz pool");
  add_common(l2tkt, f);
  add_training(l2tkt, f);
  add_l2tkt(l2tkt, f);

  CLI::App* eval = app.add_subcommand("eval", "evaluate a student checkpoint on a manifest");
  eval->add_option("--checkpoint", checkpoint, "checkpoint stem")->required();
  eval->add_option("--manifest", manifest, "manifest CSV")->required();
  eval->add_option("--split", split_name, "split name for the output row");
  eval->add_option("--out", f.out, "also write the CSV to this file");

  CLI::App* inspect = app.add_subcommand("inspect-pool", "per-epoch quiz pool composition");
  inspect->add_option("--run", run_dir, "run directory of a dynamic-pool run")->required();

  CLI::App* experiment =
      app.add_subcommand("experiment", "paired-seed baseline/static/dynamic comparison");
  add_common(experiment, f);
  add_synth(experiment, f);
  experiment->add_option("--epochs", f.epochs, "training epochs");
  experiment->add_option("--baseline-epochs", f.baseline_epochs, "baseline epochs");
  experiment->add_option("--lambda-s", f.lambda_s, "student step size");
  experiment->add_option("--lambda-t", f.lambda_t, "teacher step size");
  experiment->add_flag("--first-order", f.first_order, "finite-difference meta-gradient");
  experiment->add_option("--seeds", seeds, "comma-separated seeds");

  try {
    try {
      app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
      out << app.help();
      return 0;
    } catch (const CLI::CallForAllHelp&) {
      out << app.help("", CLI::AppFormatMode::All);
      return 0;
    } catch (const CLI::ParseError& e) {
      throw UsageError(e.what());
    }

    if (*synth) {
      synth_data(resolve(f), err);
    } else if (*baseline) {
      const RunConfig config = resolve(f);
      train_baseline_run(config, load_data_dir(config.data, false), err);
    } else if (*l2tkt) {
      const RunConfig config = resolve(f);
      train_l2tkt_run(config, load_data_dir(config.data, true), err);
    } else if (*eval) {
      const std::string csv = eval_checkpoint(checkpoint, manifest, split_name);
      out << csv;
      if (f.out) write_text(*f.out, csv);
    } else if (*inspect) {
      out << inspect_pool(run_dir);
    } else if (*experiment) {
      const ExperimentSummary s = run_experiment(resolve(f), parse_seeds(seeds), err);
      out << format_experiment_table(s);
      err << "experiment took " << s.seconds << " s\n";
    }
    return 0;
  } catch (const Error& e) {
    err << "error[" << e.kind() << "]: " << one_line(e.what()) << '\n';
    return e.kind() == "usage" ? 2 : 1;
  } catch (const std::exception& e) {
    err << "error[internal]: " << one_line(e.what()) << '\n';
    return 1;
  }
}

}  // namespace l2tkt::cli
