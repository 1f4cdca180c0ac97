#pragma once

// The three-stage teacher/student loop and the supervised baseline.
//
// Per iteration:
//   1. student descends the knowledge-transfer loss 1 - CKA(teacher, student)
//      on an auxiliary (image, mask) batch;
//   2. student descends mean BCE on a textbook-pool batch;
//   3. teacher descends the quiz-pool BCE of a virtual student obtained by one
//      knowledge-transfer step from the current student. The virtual student
//      is discarded; the real student is untouched by this stage.
// The quiz pool is refreshed at the configured cadence when it is dynamic.

#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "l2tkt/data.hpp"
#include "l2tkt/diffcore.hpp"
#include "l2tkt/metrics.hpp"
#include "l2tkt/models.hpp"
#include "l2tkt/quizpool.hpp"

namespace l2tkt {

// Optimizer for the student's supervised BCE step (stage 2 and the baseline).
// The knowledge-transfer and teacher steps are always plain gradient descent.
enum class StudentOptimizer { sgd, adam };
std::string to_string(StudentOptimizer optimizer);
StudentOptimizer parse_student_optimizer(const std::string& text);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  ParamSet m;
  ParamSet v;
  long step = 0;
};

// One bias-corrected Adam update; moment buffers are created on first use.
void adam_step(ParamSet& params, const GradSet& grad, AdamState& state, const AdamConfig& cfg);

struct TrainConfig {
  double lambda_s = 3e-4;  // student step size (stages 1 and 2, virtual step)
  double lambda_t = 3e-4;  // teacher step size
  std::size_t batch_size_aux = 16;
  std::size_t batch_size_tp = 32;
  std::size_t batch_size_qp = 16;
  int epochs = 20;
  double bce_epsilon = 1e-7;
  bool second_order = true;
  bool centered = true;
  PoolConfig pool;
  std::uint64_t seed = 0;
  // Checks stage isolation and leakage bit-for-bit every iteration.
  bool test_mode = false;
  StudentOptimizer student_optimizer = StudentOptimizer::sgd;  // sgd uses lambda_s
  AdamConfig adam;

  void validate() const;
};

inline constexpr double kNotApplicable = std::numeric_limits<double>::quiet_NaN();

// -(y log p + (1 - y) log(1 - p)) with p clamped to [eps, 1 - eps].
double bce(int label, double prediction, double eps = 1e-7);

// Mean clamped BCE of sigmoid(logits) against labels.
ad::Var mean_bce(const ad::Var& logits, std::span<const int> labels, double eps);

struct LabeledBatch {
  Tensor inputs;
  std::vector<int> labels;
  std::vector<SampleId> ids;
};

struct AuxBatch {
  Tensor student_inputs;
  Tensor teacher_inputs;
  std::vector<SampleId> ids;
};

LabeledBatch gather(const LabeledSet& set, std::span<const std::size_t> rows);
AuxBatch gather(const AuxiliarySet& set, std::span<const std::size_t> rows);

ad::Var kt_objective(const Architecture& arch, const VarMap& teacher, const VarMap& student,
                     const AuxBatch& batch, bool centered);
ad::Var bce_objective(const Architecture& arch, const VarMap& student, const LabeledBatch& batch,
                      double eps);

// Stage 1. Returns the loss before the step.
double student_kt_step(const Architecture& arch, ParamSet& student, const ParamSet& teacher,
                       const AuxBatch& batch, const TrainConfig& cfg);

// Stage 2. Throws LeakageError if any id in the batch belongs to the quiz pool.
// `adam` is required when cfg selects the Adam optimizer.
double student_bce_step(const Architecture& arch, ParamSet& student, const LabeledBatch& batch,
                        const QuizPool& quiz, const TrainConfig& cfg, AdamState* adam = nullptr);

struct MetaStepReport {
  double kt_loss = 0.0;    // inner objective at the current student
  double quiz_loss = 0.0;  // outer objective at the virtual student
};

// Stage 3. `quiz_batch` ids must all be quiz-pool members.
MetaStepReport teacher_meta_step(const Architecture& arch, const ParamSet& student,
                                 ParamSet& teacher, const AuxBatch& aux_batch,
                                 const LabeledBatch& quiz_batch, const QuizPool& quiz,
                                 const TrainConfig& cfg);

// Probabilities for every row of `inputs`, evaluated in chunks without a graph.
std::vector<double> predict_probabilities(const Architecture& arch, const ParamSet& student,
                                          const Tensor& inputs);

struct MetricRow {
  int epoch = 0;
  std::string split;
  EvalResult eval;
  double loss_kt = kNotApplicable;
  double loss_bce_student = kNotApplicable;
  double loss_bce_teacher = kNotApplicable;
  double pool_mean_difficulty = kNotApplicable;
};

struct PoolLogRow {
  SampleId id = 0;
  int label = 0;
  double psi = 0.0;
  int epoch = 0;
};

struct TrainState {
  ParamSet student;
  ParamSet teacher;
  std::vector<PoolMember> textbook;
  QuizPool quiz;
  int epoch = 0;
  std::mt19937_64 rng;
  std::vector<MetricRow> history;
  AdamState student_adam;
};

struct FitData {
  LabeledSet train;
  AuxiliarySet auxiliary;
  LabeledSet validation;  // may be empty: no metric rows are produced then
  LabeledSet test;        // optional
};

struct IsolationReport {
  std::size_t iterations = 0;
  std::size_t teacher_changed_in_student_stages = 0;
  std::size_t student_changed_in_teacher_stage = 0;
  std::size_t quiz_ids_in_student_batches = 0;
};

struct FitResult {
  TrainState state;
  ParamSet best_student;
  int best_epoch = 0;
  double best_auc = kNotApplicable;
  std::vector<PoolLogRow> pool_log;
  IsolationReport isolation;
};

// Runs the full loop. The teacher must already be initialized (normally from
// a baseline checkpoint); the student normally starts from a random init.
FitResult fit(const Architecture& arch, const TrainConfig& cfg, const FitData& data,
              ParamSet student_init, ParamSet teacher_init);

struct BaselineResult {
  ParamSet final_student;
  ParamSet best_student;
  int best_epoch = 0;
  double best_auc = kNotApplicable;
  std::vector<MetricRow> history;
};

// Plain supervised BCE training on every labeled training sample, using
// lambda_s, batch_size_tp, epochs and seed from cfg.
BaselineResult train_baseline(const Architecture& arch, const TrainConfig& cfg,
                              const LabeledSet& train, const LabeledSet& validation,
                              const LabeledSet& test, ParamSet student_init);

// Metric history CSV:
// epoch,split,acc,sen,spec,auc,loss_kt,loss_bce_student,loss_bce_teacher,pool_mean_difficulty
inline constexpr const char* kMetricsHeader =
    "epoch,split,acc,sen,spec,auc,loss_kt,loss_bce_student,loss_bce_teacher,pool_mean_difficulty";
std::string format_metrics_csv(std::span<const MetricRow> rows);

inline constexpr const char* kPoolLogHeader = "sample_id,label,psi,epoch";
std::string format_pool_log_csv(std::span<const PoolLogRow> rows);

}  // namespace l2tkt
