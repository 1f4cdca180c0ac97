#include "l2tkt/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "l2tkt/cka.hpp"
#include "l2tkt/ops.hpp"

namespace l2tkt {

void TrainConfig::validate() const {
  if (!(lambda_s > 0.0) || !(lambda_t > 0.0)) {
    throw ValidationError("learning rates must be > 0");
  }
  if (!(bce_epsilon > 0.0 && bce_epsilon < 0.01)) {
    throw ValidationError("bce_epsilon must lie in (0, 0.01)");
  }
  if (batch_size_aux < 2) throw ValidationError("batch_size_aux must be >= 2");
  if (batch_size_tp < 1 || batch_size_qp < 1) throw ValidationError("batch sizes must be >= 1");
  if (epochs < 0) throw ValidationError("epochs must be >= 0");
  if (!(adam.lr > 0.0) || !(adam.eps > 0.0) || !(adam.beta1 >= 0.0 && adam.beta1 < 1.0) ||
      !(adam.beta2 >= 0.0 && adam.beta2 < 1.0)) {
    throw ValidationError("adam needs lr > 0, eps > 0 and betas in [0, 1)");
  }
  pool.validate();
}

std::string to_string(StudentOptimizer optimizer) {
  return optimizer == StudentOptimizer::sgd ? "sgd" : "adam";
}

StudentOptimizer parse_student_optimizer(const std::string& text) {
  if (text == "sgd") return StudentOptimizer::sgd;
  if (text == "adam") return StudentOptimizer::adam;
  throw ValidationError("student optimizer must be 'sgd' or 'adam', got '" + text + "'");
}

void adam_step(ParamSet& params, const GradSet& grad, AdamState& state, const AdamConfig& cfg) {
  if (!params.congruent_with(grad)) {
    throw ShapeError("gradient structure does not match parameter structure");
  }
  if (state.step == 0) {
    state.m = ParamSet{};
    state.v = ParamSet{};
    for (const auto& [name, t] : params) {
      state.m.insert(name, Tensor(t.shape()));
      state.v.insert(name, Tensor(t.shape()));
    }
  } else if (!params.congruent_with(state.m)) {
    throw ShapeError("adam state does not match the parameters");
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  ParamSet next, m_next, v_next;
  auto g = grad.begin();
  for (const auto& [name, t] : params) {
    const Tensor& d = g->second;
    Tensor m = state.m.at(name), v = state.v.at(name), p = t;
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * d[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * d[i] * d[i];
      p[i] -= cfg.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.eps);
    }
    next.insert(name, std::move(p));
    m_next.insert(name, std::move(m));
    v_next.insert(name, std::move(v));
    ++g;
  }
  params = std::move(next);
  state.m = std::move(m_next);
  state.v = std::move(v_next);
}

double bce(int label, double prediction, double eps) {
  if (label != 0 && label != 1) throw ValidationError("BCE label must be 0 or 1");
  if (!(prediction >= 0.0 && prediction <= 1.0)) {
    throw ValidationError("BCE prediction must lie in [0, 1]");
  }
  const double p = std::clamp(prediction, eps, 1.0 - eps);
  return label == 1 ? -std::log(p) : -std::log(1.0 - p);
}

ad::Var mean_bce(const ad::Var& logits, std::span<const int> labels, double eps) {
  if (logits.shape() != Shape{labels.size()}) {
    throw ShapeError("BCE: " + std::to_string(labels.size()) + " labels for logits of shape " +
                     to_string(logits.shape()));
  }
  if (labels.empty()) throw ValidationError("BCE over an empty batch");
  Tensor y(Shape{labels.size()});
  for (std::size_t i = 0; i < labels.size(); ++i) y[i] = labels[i];
  Tensor one_minus_y = y;
  for (double& v : one_minus_y.data()) v = 1.0 - v;

  const ad::Var p = ad::clamp(ad::sigmoid(logits), eps, 1.0 - eps);
  const ad::Var log_likelihood =
      ad::add(ad::mul(ad::Var::constant(std::move(y)), ad::log(p)),
              ad::mul(ad::Var::constant(std::move(one_minus_y)),
                      ad::log(ad::add_scalar(ad::neg(p), 1.0))));
  return ad::scale(ad::sum(log_likelihood), -1.0 / static_cast<double>(labels.size()));
}

LabeledBatch gather(const LabeledSet& set, std::span<const std::size_t> rows) {
  LabeledBatch batch{set.inputs.gather_rows(rows), {}, {}};
  for (std::size_t r : rows) {
    batch.labels.push_back(set.labels.at(r));
    batch.ids.push_back(set.ids.at(r));
  }
  return batch;
}

AuxBatch gather(const AuxiliarySet& set, std::span<const std::size_t> rows) {
  AuxBatch batch{set.student_inputs.gather_rows(rows), set.teacher_inputs.gather_rows(rows), {}};
  for (std::size_t r : rows) batch.ids.push_back(set.ids.at(r));
  return batch;
}

ad::Var kt_objective(const Architecture& arch, const VarMap& teacher, const VarMap& student,
                     const AuxBatch& batch, bool centered) {
  const ad::Var t = arch.teacher_features(teacher, ad::Var::constant(batch.teacher_inputs));
  const ad::Var s = arch.student_features(student, ad::Var::constant(batch.student_inputs));
  return kt_loss(t, s, centered);
}

ad::Var bce_objective(const Architecture& arch, const VarMap& student, const LabeledBatch& batch,
                      double eps) {
  return mean_bce(arch.student_logits(student, ad::Var::constant(batch.inputs)), batch.labels,
                  eps);
}

double student_kt_step(const Architecture& arch, ParamSet& student, const ParamSet& teacher,
                       const AuxBatch& batch, const TrainConfig& cfg) {
  const VarMap teacher_vars = make_constants(teacher);
  const ValueAndGrad vg = value_and_grad(
      [&](const VarMap& s) { return kt_objective(arch, teacher_vars, s, batch, cfg.centered); },
      student);
  student = apply_gradient_step(student, vg.grad, cfg.lambda_s);
  return vg.value;
}

double student_bce_step(const Architecture& arch, ParamSet& student, const LabeledBatch& batch,
                        const QuizPool& quiz, const TrainConfig& cfg, AdamState* adam) {
  for (SampleId id : batch.ids) {
    if (quiz.contains(id)) {
      throw LeakageError("quiz-pool sample " + std::to_string(id) +
                         " appeared in a student supervision batch");
    }
  }
  const ValueAndGrad vg = value_and_grad(
      [&](const VarMap& s) { return bce_objective(arch, s, batch, cfg.bce_epsilon); }, student);
  if (cfg.student_optimizer == StudentOptimizer::adam) {
    if (adam == nullptr) throw ValidationError("the adam student optimizer needs an optimizer state");
    adam_step(student, vg.grad, *adam, cfg.adam);
  } else {
    student = apply_gradient_step(student, vg.grad, cfg.lambda_s);
  }
  return vg.value;
}

MetaStepReport teacher_meta_step(const Architecture& arch, const ParamSet& student,
                                 ParamSet& teacher, const AuxBatch& aux_batch,
                                 const LabeledBatch& quiz_batch, const QuizPool& quiz,
                                 const TrainConfig& cfg) {
  if (quiz_batch.ids.empty()) throw ValidationError("quiz batch is empty");
  for (SampleId id : quiz_batch.ids) {
    if (!quiz.contains(id)) {
      throw ValidationError("sample " + std::to_string(id) +
                            " in the quiz batch is not a quiz-pool member");
    }
  }
  const MetaGradient meta = grad_through_update(
      [&](const VarMap& t, const VarMap& s) {
        return kt_objective(arch, t, s, aux_batch, cfg.centered);
      },
      [&](const VarMap& virtual_student) {
        return bce_objective(arch, virtual_student, quiz_batch, cfg.bce_epsilon);
      },
      teacher, student, cfg.lambda_s,
      cfg.second_order ? MetaGradientMode::exact_second_order
                       : MetaGradientMode::first_order_finite_difference);
  teacher = apply_gradient_step(teacher, meta.teacher_grad, cfg.lambda_t);
  return {meta.inner_value, meta.outer_value};
}

std::vector<double> predict_probabilities(const Architecture& arch, const ParamSet& student,
                                          const Tensor& inputs) {
  constexpr std::size_t kChunk = 256;
  ad::NoGradGuard no_grad;
  const VarMap params = make_constants(student);
  const std::size_t n = inputs.rank() == 0 ? 0 : inputs.dim(0);
  std::vector<double> out;
  out.reserve(n);
  std::vector<std::size_t> rows;
  for (std::size_t start = 0; start < n; start += kChunk) {
    rows.resize(std::min(kChunk, n - start));
    std::iota(rows.begin(), rows.end(), start);
    const ad::Var probs =
        ad::sigmoid(arch.student_logits(params, ad::Var::constant(inputs.gather_rows(rows))));
    out.insert(out.end(), probs.value().data().begin(), probs.value().data().end());
  }
  return out;
}

namespace {

bool bit_identical(const ParamSet& a, const ParamSet& b) {
  if (!a.congruent_with(b)) return false;
  auto it = b.begin();
  for (const auto& [_, t] : a) {
    if (std::memcmp(t.raw(), it->second.raw(), t.size() * sizeof(double)) != 0) return false;
    ++it;
  }
  return true;
}

// Shuffled index sequence that reshuffles whenever it wraps.
class Cycler {
 public:
  Cycler(std::size_t n, std::mt19937_64& rng) : order_(n), rng_(rng) {
    std::iota(order_.begin(), order_.end(), 0);
    std::shuffle(order_.begin(), order_.end(), rng_);
  }

  std::vector<std::size_t> next(std::size_t count) {
    count = std::min(count, order_.size());
    std::vector<std::size_t> out;
    out.reserve(count);
    while (out.size() < count) {
      if (pos_ == order_.size()) {
        std::shuffle(order_.begin(), order_.end(), rng_);
        pos_ = 0;
      }
      out.push_back(order_[pos_++]);
    }
    return out;
  }

 private:
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
  std::mt19937_64& rng_;
};

void append_eval_rows(std::vector<MetricRow>& history, const Architecture& arch,
                      const ParamSet& student, int epoch, const LabeledSet& validation,
                      const LabeledSet& test, MetricRow losses, double* val_auc) {
  auto add_row = [&](const LabeledSet& set, const char* split) {
    if (set.size() == 0) return;
    MetricRow row = losses;
    row.epoch = epoch;
    row.split = split;
    row.eval = evaluate(predict_probabilities(arch, student, set.inputs), set.labels);
    history.push_back(row);
    if (std::string(split) == "val" && val_auc) *val_auc = row.eval.auc;
  };
  add_row(validation, "val");
  add_row(test, "test");
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return kNotApplicable;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

FitResult fit(const Architecture& arch, const TrainConfig& cfg, const FitData& data,
              ParamSet student_init, ParamSet teacher_init) {
  cfg.validate();
  if (data.auxiliary.size() < 2) {
    throw ValidationError("the auxiliary set needs at least 2 samples");
  }
  if (data.train.size() != data.train.labels.size() ||
      data.train.inputs.dim(0) != data.train.size()) {
    throw ShapeError("training set inputs, labels and ids disagree in length");
  }

  FitResult result;
  TrainState& state = result.state;
  state.student = std::move(student_init);
  state.teacher = std::move(teacher_init);
  state.rng.seed(cfg.seed);

  PoolSplit pools = static_split(data.train.ids, data.train.labels, cfg.pool, state.rng());
  state.textbook = std::move(pools.textbook);
  state.quiz = std::move(pools.quiz);
  result.best_student = state.student;

  std::unordered_map<SampleId, std::size_t> row_of;
  for (std::size_t r = 0; r < data.train.size(); ++r) {
    if (!row_of.emplace(data.train.ids[r], r).second) {
      throw ValidationError("duplicate training id " + std::to_string(data.train.ids[r]));
    }
  }

  const bool dynamic = cfg.pool.mode == PoolMode::dynamic_pool;
  const std::size_t iterations =
      (state.textbook.size() + cfg.batch_size_tp - 1) / cfg.batch_size_tp;
  Cycler aux_cycle(data.auxiliary.size(), state.rng);

  auto refresh_pool = [&](const std::vector<double>& probs) {
    state.quiz.refresh([&](const PoolMember& m) {
      return difficulty(m.label, probs[row_of.at(m.id)]);
    });
  };

  auto update_dynamic_pool = [&] {
    const std::vector<double> probs =
        predict_probabilities(arch, state.student, data.train.inputs);
    refresh_pool(probs);
    std::vector<PoolMember> candidates = state.textbook;
    for (auto& c : candidates) c.psi = difficulty(c.label, probs[row_of.at(c.id)]);
    std::shuffle(candidates.begin(), candidates.end(), state.rng);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    PoolUpdate update = update_pool(std::move(state.quiz), std::move(candidates), cfg.pool,
                                    [&](double p) { return unit(state.rng) < p; });
    std::sort(update.textbook.begin(), update.textbook.end(),
              [](const PoolMember& a, const PoolMember& b) { return a.id < b.id; });
    state.textbook = std::move(update.textbook);
    state.quiz = std::move(update.pool);
  };

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<SampleId> epoch_order;
    for (const auto& m : state.textbook) epoch_order.push_back(m.id);
    std::shuffle(epoch_order.begin(), epoch_order.end(), state.rng);
    std::size_t cursor = 0;

    std::vector<double> kt_losses, student_losses, teacher_losses;
    for (std::size_t it = 0; it < iterations; ++it) {
      const ParamSet teacher_before = cfg.test_mode ? state.teacher : ParamSet{};

      const std::vector<std::size_t> aux_rows = aux_cycle.next(cfg.batch_size_aux);
      kt_losses.push_back(
          student_kt_step(arch, state.student, state.teacher, gather(data.auxiliary, aux_rows), cfg));

      std::vector<std::size_t> tp_rows;
      while (tp_rows.size() < cfg.batch_size_tp && cursor < epoch_order.size()) {
        const SampleId id = epoch_order[cursor++];
        // A per-iteration pool update may have moved this sample into the quiz.
        if (!state.quiz.contains(id)) tp_rows.push_back(row_of.at(id));
      }
      if (!tp_rows.empty()) {
        const LabeledBatch tp_batch = gather(data.train, tp_rows);
        if (cfg.test_mode) {
          for (SampleId id : tp_batch.ids) {
            if (state.quiz.contains(id)) ++result.isolation.quiz_ids_in_student_batches;
          }
        }
        student_losses.push_back(
            student_bce_step(arch, state.student, tp_batch, state.quiz, cfg, &state.student_adam));
      }
      if (cfg.test_mode && !bit_identical(teacher_before, state.teacher)) {
        ++result.isolation.teacher_changed_in_student_stages;
      }

      const ParamSet student_before = cfg.test_mode ? state.student : ParamSet{};
      std::vector<PoolMember> members = state.quiz.members();
      std::shuffle(members.begin(), members.end(), state.rng);
      members.resize(std::min(members.size(), cfg.batch_size_qp));
      std::vector<std::size_t> quiz_rows;
      for (const auto& m : members) quiz_rows.push_back(row_of.at(m.id));
      const std::vector<std::size_t> meta_aux_rows = aux_cycle.next(cfg.batch_size_aux);
      const MetaStepReport meta =
          teacher_meta_step(arch, state.student, state.teacher, gather(data.auxiliary, meta_aux_rows),
                            gather(data.train, quiz_rows), state.quiz, cfg);
      teacher_losses.push_back(meta.quiz_loss);
      if (cfg.test_mode && !bit_identical(student_before, state.student)) {
        ++result.isolation.student_changed_in_teacher_stage;
      }
      ++result.isolation.iterations;

      if (dynamic && cfg.pool.cadence == UpdateCadence::per_iteration) update_dynamic_pool();
    }

    if (dynamic && cfg.pool.cadence == UpdateCadence::per_epoch) {
      update_dynamic_pool();
    } else {
      refresh_pool(predict_probabilities(arch, state.student, data.train.inputs));
    }
    if (dynamic) {
      for (const auto& m : state.quiz.members()) {
        result.pool_log.push_back({m.id, m.label, m.psi, epoch});
      }
    }

    state.epoch = epoch;
    MetricRow losses;
    losses.loss_kt = mean_of(kt_losses);
    losses.loss_bce_student = mean_of(student_losses);
    losses.loss_bce_teacher = mean_of(teacher_losses);
    losses.pool_mean_difficulty = mean_difficulty(state.quiz);
    double val_auc = kNotApplicable;
    append_eval_rows(state.history, arch, state.student, epoch, data.validation, data.test,
                     losses, &val_auc);
    if (std::isnan(result.best_auc) || val_auc > result.best_auc) {
      result.best_auc = val_auc;
      result.best_epoch = epoch;
      result.best_student = state.student;
    }
  }
  return result;
}

BaselineResult train_baseline(const Architecture& arch, const TrainConfig& cfg,
                              const LabeledSet& train, const LabeledSet& validation,
                              const LabeledSet& test, ParamSet student_init) {
  cfg.validate();
  if (train.size() == 0) throw ValidationError("baseline training set is empty");
  BaselineResult result;
  ParamSet student = std::move(student_init);
  result.best_student = student;
  std::mt19937_64 rng(cfg.seed);
  const QuizPool no_quiz;
  AdamState adam;

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<double> losses;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size_tp) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size_tp);
      const std::span<const std::size_t> rows(order.data() + start, end - start);
      losses.push_back(student_bce_step(arch, student, gather(train, rows), no_quiz, cfg, &adam));
    }
    MetricRow row;
    row.loss_bce_student = mean_of(losses);
    double val_auc = kNotApplicable;
    append_eval_rows(result.history, arch, student, epoch, validation, test, row, &val_auc);
    if (std::isnan(result.best_auc) || val_auc > result.best_auc) {
      result.best_auc = val_auc;
      result.best_epoch = epoch;
      result.best_student = student;
    }
  }
  result.final_student = std::move(student);
  return result;
}

namespace {

std::string fmt(double v) {
  if (std::isnan(v)) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

}  // namespace

std::string format_metrics_csv(std::span<const MetricRow> rows) {
  std::ostringstream out;
  out << kMetricsHeader << '\n';
  for (const auto& r : rows) {
    out << r.epoch << ',' << r.split << ',' << fmt(r.eval.acc) << ',' << fmt(r.eval.sen) << ','
        << fmt(r.eval.spec) << ',' << fmt(r.eval.auc) << ',' << fmt(r.loss_kt) << ','
        << fmt(r.loss_bce_student) << ',' << fmt(r.loss_bce_teacher) << ','
        << fmt(r.pool_mean_difficulty) << '\n';
  }
  return out.str();
}

std::string format_pool_log_csv(std::span<const PoolLogRow> rows) {
  std::ostringstream out;
  out << kPoolLogHeader << '\n';
  for (const auto& r : rows) {
    out << r.id << ',' << r.label << ',' << fmt(r.psi) << ',' << r.epoch << '\n';
  }
  return out.str();
}

}  // namespace l2tkt
