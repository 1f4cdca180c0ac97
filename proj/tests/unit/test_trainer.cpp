#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <set>

#include "diagonal_oracle.hpp"
#include "l2tkt/cka.hpp"
#include "l2tkt/error.hpp"
#include "l2tkt/checkpoint.hpp"
#include "l2tkt/trainer.hpp"
#include "temp_dir.hpp"
#include "test_util.hpp"
#include "toy_models.hpp"

using namespace l2tkt;
using namespace l2tkt::testing;

namespace {

double max_change(const ParamSet& a, const ParamSet& b) {
  double worst = 0.0;
  for (const auto& [name, t] : a) {
    for (std::size_t i = 0; i < t.size(); ++i) worst = std::max(worst, std::abs(t[i] - b.at(name)[i]));
  }
  return worst;
}

double quiz_loss_after_virtual_step(const Architecture& arch, const ParamSet& teacher,
                                    const ParamSet& student, const AuxBatch& aux,
                                    const LabeledBatch& quiz, const TrainConfig& cfg) {
  const GradSet g = grad(
      [&](const VarMap& s) {
        return kt_objective(arch, make_constants(teacher), s, aux, cfg.centered);
      },
      student);
  const ParamSet virtual_student = apply_gradient_step(student, g, cfg.lambda_s);
  ad::NoGradGuard no_grad;
  return bce_objective(arch, make_constants(virtual_student), quiz, cfg.bce_epsilon).item();
}

QuizPool pool_of(const LabeledBatch& quiz) {
  std::vector<PoolMember> members;
  for (std::size_t i = 0; i < quiz.ids.size(); ++i) members.push_back({quiz.ids[i], quiz.labels[i], 0.0});
  return QuizPool(members.size(), members);
}

// Diagonal-architecture data: x ~ N(0,1), labels from the sign of x0 + x1
// with a few flips, mask column correlated with x1.
struct DiagonalData {
  FitData fit;
  std::vector<DiagonalRow> aux_rows;
  std::vector<DiagonalLabeled> train_rows;
};

DiagonalData make_diagonal_data(std::size_t n_train, std::size_t n_aux, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  DiagonalData d;
  Tensor x(Shape{n_train, 2});
  for (std::size_t i = 0; i < n_train; ++i) {
    const double a = g(rng), b = g(rng);
    const int y = (a + b + 0.8 * g(rng)) > 0 ? 1 : 0;
    x[2 * i] = a;
    x[2 * i + 1] = b;
    d.fit.train.labels.push_back(y);
    d.fit.train.ids.push_back(static_cast<SampleId>(100 + i));
    d.train_rows.push_back({a, b, y});
  }
  d.fit.train.inputs = x;
  Tensor xs(Shape{n_aux, 2}), xt(Shape{n_aux, 3});
  for (std::size_t i = 0; i < n_aux; ++i) {
    const double a = g(rng), b = g(rng), m = 0.7 * b + 0.5 * g(rng);
    xs[2 * i] = a;
    xs[2 * i + 1] = b;
    xt[3 * i] = a;
    xt[3 * i + 1] = b;
    xt[3 * i + 2] = m;
    d.fit.auxiliary.ids.push_back(static_cast<SampleId>(i));
    d.aux_rows.push_back({a, b, m});
  }
  d.fit.auxiliary.student_inputs = xs;
  d.fit.auxiliary.teacher_inputs = xt;
  return d;
}

ParamSet diagonal_params(const char* name, double a, double b) {
  ParamSet p;
  p.insert(name, Tensor::vector({a, b}));
  return p;
}

}  // namespace

TEST_CASE("bce examples") {
  CHECK(bce(1, 0.5) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(bce(0, 0.5) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(bce(1, 1.0) == doctest::Approx(-std::log(1.0 - 1e-7)).epsilon(1e-12));
  CHECK(bce(1, 1.0) == doctest::Approx(1e-7).epsilon(1e-6));
  CHECK(bce(0, 0.0) == doctest::Approx(1e-7).epsilon(1e-6));
  CHECK(bce(1, 0.0) == doctest::Approx(-std::log(1e-7)).epsilon(1e-12));
  CHECK_THROWS_AS(bce(2, 0.5), ValidationError);
  CHECK_THROWS_AS(bce(1, 1.5), ValidationError);

  const ad::Var logits = ad::Var::constant(Tensor::vector({0.0, 2.0, -1.0}));
  const std::vector<int> labels{1, 0, 0};
  const double expected = (bce(1, 0.5) + bce(0, 1.0 / (1.0 + std::exp(-2.0))) +
                           bce(0, 1.0 / (1.0 + std::exp(1.0)))) / 3.0;
  CHECK(mean_bce(logits, labels, 1e-7).item() == doctest::Approx(expected).epsilon(1e-14));
}

TEST_CASE("train config validation") {
  TrainConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  CHECK(cfg.lambda_s == 3e-4);
  CHECK(cfg.lambda_t == 3e-4);
  CHECK(cfg.bce_epsilon == 1e-7);
  CHECK(cfg.second_order);
  cfg.lambda_t = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg = TrainConfig{};
  cfg.bce_epsilon = 0.05;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg = TrainConfig{};
  cfg.batch_size_aux = 1;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
}

TEST_CASE("adam config validation and parsing") {
  TrainConfig cfg;
  CHECK(cfg.student_optimizer == StudentOptimizer::sgd);
  cfg.adam.lr = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg = TrainConfig{};
  cfg.adam.beta2 = 1.0;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  CHECK(parse_student_optimizer("adam") == StudentOptimizer::adam);
  CHECK(to_string(StudentOptimizer::sgd) == "sgd");
  CHECK_THROWS_AS(parse_student_optimizer("rmsprop"), ValidationError);
}

TEST_CASE("two adam steps match a hand computation") {
  ParamSet p;
  p.insert("w", Tensor::vector({1.0, -2.0}));
  AdamConfig cfg;
  cfg.lr = 0.1;
  AdamState state;
  GradSet g1, g2;
  g1.insert("w", Tensor::vector({0.5, 0.0}));
  g2.insert("w", Tensor::vector({-1.0, 3.0}));

  adam_step(p, g1, state, cfg);
  // A first step moves each coordinate with nonzero gradient by lr.
  CHECK(p.at("w")[0] == doctest::Approx(0.9).epsilon(1e-7));
  CHECK(p.at("w")[1] == -2.0);

  adam_step(p, g2, state, cfg);
  CHECK(state.step == 2);
  const double c1 = 1.0 - 0.9 * 0.9, c2 = 1.0 - 0.999 * 0.999;
  const double m0 = 0.9 * 0.05 - 0.1, v0 = 0.999 * 0.00025 + 0.001;
  const double m1 = 0.1 * 3.0, v1 = 0.001 * 9.0;
  const double first = 1.0 - 0.1 * 0.5 / (0.5 + 1e-8);
  CHECK(p.at("w")[0] ==
        doctest::Approx(first - 0.1 * (m0 / c1) / (std::sqrt(v0 / c2) + 1e-8)).epsilon(1e-12));
  CHECK(p.at("w")[1] ==
        doctest::Approx(-2.0 - 0.1 * (m1 / c1) / (std::sqrt(v1 / c2) + 1e-8)).epsilon(1e-12));

  GradSet wrong;
  wrong.insert("v", Tensor::vector({1.0, 1.0}));
  CHECK_THROWS_AS(adam_step(p, wrong, state, cfg), ShapeError);
}

TEST_CASE("the adam student step needs optimizer state") {
  const auto setup = make_tiny_conv_setup(5);
  const ConvArchitecture arch(setup.student_config, setup.teacher_config);
  ParamSet s = setup.student;
  TrainConfig cfg;
  cfg.student_optimizer = StudentOptimizer::adam;
  CHECK_THROWS_AS(student_bce_step(arch, s, setup.quiz, QuizPool(), cfg), ValidationError);
  AdamState state;
  student_bce_step(arch, s, setup.quiz, QuizPool(), cfg, &state);
  CHECK(state.step == 1);
  CHECK(max_change(s, setup.student) > 0.0);
}

TEST_CASE("stage 1 is at a fixed point when teacher features equal student features") {
  const auto setup = make_tiny_conv_setup(1);
  const StudentModel student{setup.student_config, setup.student};
  const TeacherModel teacher = init_teacher_from_baseline(student);
  const ConvArchitecture arch(setup.student_config, teacher.config);
  TrainConfig cfg;
  cfg.lambda_s = 0.1;
  ParamSet s = setup.student;
  const double loss = student_kt_step(arch, s, teacher.params, setup.aux, cfg);
  CHECK(std::abs(loss) < 1e-12);
  CHECK(max_change(s, setup.student) < 1e-12);
}

TEST_CASE("stage 1 gradient matches finite differences") {
  const auto setup = make_tiny_conv_setup(2);
  const ConvArchitecture arch(setup.student_config, setup.teacher_config);
  const GradSet g = grad(
      [&](const VarMap& s) { return kt_objective(arch, make_constants(setup.teacher), s, setup.aux, true); },
      setup.student);
  const GradSet fd = finite_difference(
      [&](const ParamSet& s) {
        ad::NoGradGuard no_grad;
        return kt_objective(arch, make_constants(setup.teacher), make_constants(s), setup.aux, true)
            .item();
      },
      setup.student);
  CHECK(max_relative_error(g, fd) < 1e-4);
}

TEST_CASE("each stage descends its own objective at a small step") {
  TrainConfig cfg;
  cfg.lambda_s = 1e-5;
  cfg.lambda_t = 1e-5;
  int violations = 0;
  for (std::uint64_t trial = 0; trial < 100; ++trial) {
    const auto setup = make_tiny_conv_setup(100 + trial);
    const ConvArchitecture arch(setup.student_config, setup.teacher_config);
    ad::NoGradGuard outer_guard;

    ParamSet s = setup.student;
    const double before_kt = student_kt_step(arch, s, setup.teacher, setup.aux, cfg);
    const double after_kt =
        kt_objective(arch, make_constants(setup.teacher), make_constants(s), setup.aux, true).item();
    violations += after_kt > before_kt;

    ParamSet s2 = setup.student;
    const double before_bce = student_bce_step(arch, s2, setup.quiz, QuizPool(), cfg);
    const double after_bce =
        bce_objective(arch, make_constants(s2), setup.quiz, cfg.bce_epsilon).item();
    violations += after_bce > before_bce;

    ParamSet t = setup.teacher;
    const auto report =
        teacher_meta_step(arch, setup.student, t, setup.aux, setup.quiz, pool_of(setup.quiz), cfg);
    const double after_meta =
        quiz_loss_after_virtual_step(arch, t, setup.student, setup.aux, setup.quiz, cfg);
    CHECK(report.quiz_loss ==
          doctest::Approx(quiz_loss_after_virtual_step(arch, setup.teacher, setup.student,
                                                       setup.aux, setup.quiz, cfg))
              .epsilon(1e-12));
    violations += after_meta > report.quiz_loss;
  }
  CHECK(violations == 0);
}

TEST_CASE("saturated correct batch leaves the student unchanged") {
  const auto setup = make_tiny_conv_setup(3);
  const ConvArchitecture arch(setup.student_config, setup.teacher_config);
  ParamSet s = setup.student;
  s.assign("head.bias", Tensor::vector({30.0}));
  const ParamSet before = s;
  LabeledBatch batch = setup.quiz;
  batch.labels = {1, 1, 1, 1};
  TrainConfig cfg;
  cfg.lambda_s = 0.1;
  student_bce_step(arch, s, batch, QuizPool(), cfg);
  CHECK(max_change(s, before) < 1e-9);
}

TEST_CASE("a quiz id in a student batch is a hard error") {
  const auto setup = make_tiny_conv_setup(4);
  const ConvArchitecture arch(setup.student_config, setup.teacher_config);
  ParamSet s = setup.student;
  const QuizPool quiz(2, {{12, 1, 0.0}, {50, 0, 0.0}});
  CHECK_THROWS_AS(student_bce_step(arch, s, setup.quiz, quiz, TrainConfig{}), LeakageError);
  CHECK(s == setup.student);
}

TEST_CASE("the meta step never touches the student") {
  const auto setup = make_tiny_conv_setup(5);
  const ConvArchitecture arch(setup.student_config, setup.teacher_config);
  TrainConfig cfg;
  cfg.lambda_s = 0.5;
  cfg.lambda_t = 0.5;
  const ParamSet student = setup.student;
  ParamSet teacher = setup.teacher;
  teacher_meta_step(arch, student, teacher, setup.aux, setup.quiz, pool_of(setup.quiz), cfg);
  CHECK(student == setup.student);
  CHECK_FALSE(teacher == setup.teacher);

  // Quiz batches must come from the pool.
  CHECK_THROWS_AS(teacher_meta_step(arch, student, teacher, setup.aux, setup.quiz,
                                    QuizPool(1, {{10, 1, 0.0}}), cfg),
                  ValidationError);
}

TEST_CASE("one full iteration matches the hand-derived oracle") {
  for (bool centered : {true, false}) {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
      CAPTURE(centered);
      CAPTURE(seed);
      DiagonalData d = make_diagonal_data(10, 4, seed);
      const DiagonalLinearArchitecture arch;
      TrainConfig cfg;
      cfg.lambda_s = 0.3;
      cfg.lambda_t = 0.7;
      cfg.epochs = 1;
      cfg.batch_size_aux = 4;  // the whole auxiliary set
      cfg.batch_size_tp = 8;   // the whole textbook pool
      cfg.batch_size_qp = 2;   // the whole quiz pool
      cfg.centered = centered;
      cfg.pool.mode = PoolMode::static_pool;
      cfg.seed = seed;
      const Pair<double> w0{0.8, -0.6}, v0{1.1, 0.4};
      const FitResult r =
          fit(arch, cfg, d.fit, diagonal_params("w", w0[0], w0[1]), diagonal_params("v", v0[0], v0[1]));
      REQUIRE(r.isolation.iterations == 1);

      std::vector<DiagonalLabeled> textbook, quiz;
      for (std::size_t i = 0; i < d.train_rows.size(); ++i) {
        (r.state.quiz.contains(d.fit.train.ids[i]) ? quiz : textbook).push_back(d.train_rows[i]);
      }
      REQUIRE(quiz.size() == 2);
      const DiagonalIteration expect = diagonal_iteration(w0, v0, d.aux_rows, textbook, d.aux_rows,
                                                          quiz, cfg.lambda_s, cfg.lambda_t, centered);
      const Tensor& w = r.state.student.at("w");
      const Tensor& v = r.state.teacher.at("v");
      double worst = 0.0;
      for (int j = 0; j < 2; ++j) {
        worst = std::max(worst, std::abs(w[j] - expect.student[j]));
        worst = std::max(worst, std::abs(v[j] - expect.teacher[j]));
      }
      CHECK(worst < 1e-10);
      CHECK(std::abs(w[0] - w0[0]) > 1e-3);
      CHECK(std::abs(v[1] - v0[1]) > 1e-6);
    }
  }
}

TEST_CASE("hand-derived knowledge-transfer gradient agrees with its closed form") {
  const DiagonalData d = make_diagonal_data(4, 6, 9);
  const Moments k = moments(d.aux_rows, true);
  const Pair<double> w{0.3, 1.7}, v{-0.4, 0.9};
  const Pair<double> g = diagonal_kt_grad(w, v, k);
  for (int j = 0; j < 2; ++j) {
    Pair<std::complex<double>> wc{w[0], w[1]};
    wc[j] += std::complex<double>(0.0, 1e-30);
    const Pair<std::complex<double>> vc{v[0], v[1]};
    CHECK(std::abs(g[j] + diagonal_cka(wc, vc, k).imag() / 1e-30) < 1e-13);
  }
  // And the library's CKA agrees with the closed form.
  Tensor s(Shape{6, 2}), t(Shape{6, 2});
  for (std::size_t i = 0; i < 6; ++i) {
    s[2 * i] = w[0] * d.aux_rows[i].x0;
    s[2 * i + 1] = w[1] * d.aux_rows[i].x1;
    t[2 * i] = v[0] * d.aux_rows[i].x0;
    t[2 * i + 1] = v[1] * d.aux_rows[i].m;
  }
  CHECK(std::abs(cka_similarity(t, s) - diagonal_cka(w, v, k)) < 1e-13);
}

TEST_CASE("fit with zero epochs returns the initial state") {
  DiagonalData d = make_diagonal_data(10, 4, 4);
  const DiagonalLinearArchitecture arch;
  TrainConfig cfg;
  cfg.epochs = 0;
  cfg.batch_size_aux = 4;
  const ParamSet w = diagonal_params("w", 0.5, 0.5), v = diagonal_params("v", 1.0, 1.0);
  const FitResult r = fit(arch, cfg, d.fit, w, v);
  CHECK(r.state.student == w);
  CHECK(r.state.teacher == v);
  CHECK(r.state.history.empty());
  CHECK(r.best_student == w);
  CHECK(r.isolation.iterations == 0);
}

TEST_CASE("fit is deterministic, isolated and leak-free") {
  DiagonalData d = make_diagonal_data(60, 12, 5);
  DiagonalData v = make_diagonal_data(30, 2, 6);
  d.fit.validation = v.fit.train;
  d.fit.test = make_diagonal_data(30, 2, 7).fit.train;
  const DiagonalLinearArchitecture arch;
  TrainConfig cfg;
  cfg.lambda_s = 0.2;
  cfg.lambda_t = 0.2;
  cfg.epochs = 4;
  cfg.batch_size_aux = 6;
  cfg.batch_size_tp = 8;
  cfg.batch_size_qp = 4;
  cfg.seed = 17;
  cfg.test_mode = true;
  for (auto cadence : {UpdateCadence::per_epoch, UpdateCadence::per_iteration}) {
    cfg.pool.cadence = cadence;
    const FitResult a = fit(arch, cfg, d.fit, diagonal_params("w", 0.1, -0.2), diagonal_params("v", 1.0, 0.5));
    const FitResult b = fit(arch, cfg, d.fit, diagonal_params("w", 0.1, -0.2), diagonal_params("v", 1.0, 0.5));
    CHECK(format_metrics_csv(a.state.history) == format_metrics_csv(b.state.history));
    CHECK(format_pool_log_csv(a.pool_log) == format_pool_log_csv(b.pool_log));
    CHECK(a.state.history.size() == 8);
    CHECK(a.isolation.iterations == 4 * 6);  // ceil(48 / 8) per epoch
    CHECK(a.isolation.teacher_changed_in_student_stages == 0);
    CHECK(a.isolation.student_changed_in_teacher_stage == 0);
    CHECK(a.isolation.quiz_ids_in_student_batches == 0);
    CHECK(a.pool_log.size() == 4 * 12);
    CHECK(a.state.quiz.size() == 12);
    std::set<SampleId> ids;
    for (const auto& m : a.state.textbook) ids.insert(m.id);
    for (SampleId id : a.state.quiz.ids()) CHECK(ids.insert(id).second);
    CHECK(ids.size() == 60);
    CHECK(a.best_epoch >= 1);
  }
  cfg.seed = 18;
  const FitResult c = fit(arch, cfg, d.fit, diagonal_params("w", 0.1, -0.2), diagonal_params("v", 1.0, 0.5));
  cfg.seed = 17;
  cfg.pool.cadence = UpdateCadence::per_epoch;
  const FitResult a = fit(arch, cfg, d.fit, diagonal_params("w", 0.1, -0.2), diagonal_params("v", 1.0, 0.5));
  CHECK(format_metrics_csv(a.state.history) != format_metrics_csv(c.state.history));

  // Static pools never change membership and log nothing.
  cfg.pool.mode = PoolMode::static_pool;
  const FitResult s = fit(arch, cfg, d.fit, diagonal_params("w", 0.1, -0.2), diagonal_params("v", 1.0, 0.5));
  CHECK(s.pool_log.empty());
}

TEST_CASE("metrics csv layout") {
  MetricRow row;
  row.epoch = 3;
  row.split = "val";
  row.eval.acc = 0.75;
  row.eval.sen = 0.5;
  row.eval.spec = 1.0;
  row.eval.auc = 0.875;
  row.loss_bce_student = 0.25;
  const std::vector<MetricRow> rows{row};
  CHECK(format_metrics_csv(rows) == std::string(kMetricsHeader) + "\n3,val,0.75,0.5,1,0.875,,0.25,,\n");
  const std::vector<PoolLogRow> pool{{7, 1, 0.125, 2}};
  CHECK(format_pool_log_csv(pool) == "sample_id,label,psi,epoch\n7,1,0.125,2\n");
}

TEST_CASE("baseline learns a separable image task") {
  // Label 1 images are brighter in the red channel; the margin is wide.
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(0.0, 0.4);
  const std::size_t n = 160, size = 16;
  EncoderConfig cfg_enc;
  cfg_enc.block_widths = {4, 8};
  cfg_enc.feature_dim = 8;
  cfg_enc.image_size = size;
  auto make_set = [&](std::size_t count, SampleId first) {
    LabeledSet set;
    set.inputs = Tensor(Shape{count, 3, size, size});
    for (std::size_t i = 0; i < count; ++i) {
      const int y = static_cast<int>(i % 2);
      for (std::size_t p = 0; p < 3 * size * size; ++p) {
        const bool red = p < size * size;
        set.inputs[i * 3 * size * size + p] = u(rng) + (red && y == 1 ? 0.6 : 0.0);
      }
      set.labels.push_back(y);
      set.ids.push_back(first + static_cast<SampleId>(i));
    }
    return set;
  };
  const LabeledSet train = make_set(n, 0), val = make_set(40, 1000);
  const ConvArchitecture arch(cfg_enc, cfg_enc);
  TrainConfig cfg;
  cfg.lambda_s = 0.5;
  cfg.batch_size_tp = 16;
  cfg.epochs = 20;
  cfg.seed = 3;
  const StudentModel init = init_student(cfg_enc, 4);
  const BaselineResult r = train_baseline(arch, cfg, train, val, LabeledSet{}, init.params);
  const EvalResult e = evaluate(predict_probabilities(arch, r.final_student, train.inputs), train.labels);
  CHECK(e.acc > 0.95);
  CHECK(r.history.size() == 20);
  CHECK(r.best_auc > 0.9);

  const BaselineResult again = train_baseline(arch, cfg, train, val, LabeledSet{}, init.params);
  CHECK(again.final_student == r.final_student);
  CHECK(format_metrics_csv(again.history) == format_metrics_csv(r.history));

  // Continuing from a reloaded checkpoint matches continuing from the saved weights.
  TempDir dir("resume");
  save_student(dir.path() / "mid", StudentModel{cfg_enc, r.final_student}, 20, cfg.seed, true);
  const StudentModel loaded = load_student(dir.path() / "mid");
  ParamSet saved;
  for (const auto& [name, t] : r.final_student) {
    Tensor q = t;
    for (std::size_t i = 0; i < q.size(); ++i) q[i] = static_cast<float>(q[i]);
    saved.insert(name, std::move(q));
  }
  CHECK(loaded.params == saved);
  cfg.epochs = 3;
  const BaselineResult from_disk = train_baseline(arch, cfg, train, val, LabeledSet{}, loaded.params);
  const BaselineResult from_memory = train_baseline(arch, cfg, train, val, LabeledSet{}, saved);
  CHECK(from_disk.final_student == from_memory.final_student);
  CHECK(format_metrics_csv(from_disk.history) == format_metrics_csv(from_memory.history));

  cfg.epochs = 0;
  const BaselineResult none = train_baseline(arch, cfg, train, val, LabeledSet{}, init.params);
  CHECK(none.final_student == init.params);
  CHECK(none.history.empty());
}
