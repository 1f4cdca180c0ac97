#pragma once

// Command layer behind the l2tkt binary. Every command takes a resolved
// RunConfig; the binary only parses flags.
//
// Run directory layout (version 1):
//   config.json              resolved RunConfig
//   metrics.csv              per-epoch val/test rows
//   checkpoints/final.{json,bin}, checkpoints/best.{json,bin}
//   checkpoints/teacher_final.{json,bin}   (train-l2tkt only)
//   pool_history.csv                         (train-l2tkt with a dynamic pool)

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "l2tkt/data.hpp"
#include "l2tkt/metrics.hpp"
#include "l2tkt/models.hpp"
#include "l2tkt/trainer.hpp"

namespace l2tkt::cli {

inline constexpr int kRunLayoutVersion = 1;

struct RunConfig {
  TrainConfig train;
  EncoderConfig encoder;  // student layout; the teacher adds the mask channels
  SynthConfig synth;
  std::array<double, 3> split{0.60, 0.15, 0.25};
  std::filesystem::path data;           // dataset directory with manifests
  std::filesystem::path out;            // output directory
  std::filesystem::path baseline_ckpt;  // teacher initialization
  std::uint64_t seed = 0;
  int baseline_epochs = -1;  // -1: use train.epochs
};

// Flat JSON: every key is a scalar or array at top level.
nlohmann::json to_json(const RunConfig& config);
// Applies the keys present in `flat`; unknown keys and bad types are usage errors.
void merge_json(RunConfig& config, const nlohmann::json& flat);
RunConfig load_run_config(const std::filesystem::path& path);
// Propagates `seed` into the synth and train sections and validates.
void finalize(RunConfig& config);

// Defaults tuned for the desk-scale experiment (32x32 synthetic images).
RunConfig experiment_defaults();

// --- commands ---------------------------------------------------------------

// Writes images/, masks/, labeled.csv, train.csv, val.csv, test.csv,
// auxiliary.csv and provenance.json under config.out.
void synth_data(const RunConfig& config, std::ostream& log);

struct LoadedData {
  LabeledSet train;
  LabeledSet val;
  LabeledSet test;
  AuxiliarySet auxiliary;
};
LoadedData load_data_dir(const std::filesystem::path& dir, bool with_auxiliary);

struct RunSummary {
  double best_val_auc = kNotApplicable;
  int best_epoch = 0;
  EvalResult test_final;  // test metrics of the final student
  EvalResult test_best;   // test metrics of the best-validation student
  bool has_test = false;
};

RunSummary train_baseline_run(const RunConfig& config, const LoadedData& data, std::ostream& log);
RunSummary train_l2tkt_run(const RunConfig& config, const LoadedData& data, std::ostream& log);

// Evaluates a student checkpoint on one manifest and returns the CSV text
// (header + one row).
inline constexpr const char* kEvalHeader = "split,n,acc,sen,spec,auc,threshold,tp,fp,tn,fn";
std::string eval_checkpoint(const std::filesystem::path& checkpoint,
                            const std::filesystem::path& manifest, const std::string& split_name);

// Per-epoch pool summary of a dynamic run.
inline constexpr const char* kPoolSummaryHeader =
    "epoch,pool_size,positives,positive_fraction,base_rate,mean_psi";
std::string inspect_pool(const std::filesystem::path& run_dir);

// Paired-seed comparison of baseline, static-pool and dynamic-pool runs.
struct SeedOutcome {
  std::uint64_t seed = 0;
  double baseline_auc = 0.0;
  double static_auc = 0.0;
  double dynamic_auc = 0.0;
};
struct ExperimentSummary {
  std::vector<SeedOutcome> seeds;
  double seconds = 0.0;
};
// Each seed gets its own synthetic dataset and directory under config.out.
ExperimentSummary run_experiment(const RunConfig& config, const std::vector<std::uint64_t>& seeds,
                                 std::ostream& log);
std::string format_experiment_table(const ExperimentSummary& summary);

// Full command-line entry point; returns the process exit code. Errors are
// reported on `err` as a single line "error[<kind>]: <message>".
int main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace l2tkt::cli
