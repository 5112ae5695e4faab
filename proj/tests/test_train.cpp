#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "virt/checkpoint.hpp"
#include "virt/data.hpp"
#include "virt/error.hpp"
#include "virt/train.hpp"

using namespace virt;

namespace {

NamedParameter scalar_param(const std::string& name, double value, double grad) {
  Tensor t = Tensor::scalar(value).set_requires_grad(true);
  t.grad_buffer()[0] = grad;
  return {name, t};
}

EncoderConfig small_config() {
  EncoderConfig c;
  c.num_layers = 2;
  c.hidden_dim = 8;
  c.num_heads = 2;
  c.ffn_dim = 16;
  c.vocab_size = 16;
  c.max_len_x = 4;
  c.max_len_y = 4;
  return c;
}

Hyper small_hyper(int epochs) {
  Hyper h;
  h.lr = 3e-3;
  h.batch_size = 8;
  h.epochs = epochs;
  h.seed = 3;
  return h;
}

struct SmallTask {
  std::vector<Example> train;
  std::vector<Example> dev;
};

SmallTask small_task() {
  GeneratorOptions o;
  o.max_len_x = 4;
  o.max_len_y = 4;
  o.min_len = 1;
  return {gen_keymatch(96, 16, 1, o), gen_keymatch(40, 16, 2, o)};
}

std::string snapshot(const CrossEncoder& teacher) {
  return serialize_checkpoint(to_checkpoint(teacher));
}

}  // namespace

TEST(Adam, ZeroGradientLeavesParameters) {
  ParameterList params{scalar_param("a", 0.25, 0.0), scalar_param("b", -1.0, 0.0)};
  AdamState state;
  adam_step(params, state, 1, 0.1, Hyper{});
  EXPECT_EQ(params[0].tensor.item(), 0.25);
  EXPECT_EQ(params[1].tensor.item(), -1.0);
}

TEST(Adam, FirstStepAndSymmetry) {
  ParameterList params{scalar_param("a", 0.0, 1.0), scalar_param("b", 0.0, 1.0)};
  AdamState state;
  adam_step(params, state, 1, 0.1, Hyper{});
  EXPECT_NEAR(params[0].tensor.item(), -0.1 / (1.0 + 1e-8), 1e-15);
  EXPECT_EQ(params[0].tensor.item(), params[1].tensor.item());
}

TEST(Adam, NonFiniteGradientNamesParameterAndChangesNothing) {
  ParameterList params{scalar_param("fine", 1.0, 0.5),
                       scalar_param("broken", 2.0, std::numeric_limits<double>::infinity())};
  AdamState state;
  try {
    adam_step(params, state, 1, 0.1, Hyper{});
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("broken"), std::string::npos);
  }
  EXPECT_EQ(params[0].tensor.item(), 1.0);
  EXPECT_THROW(adam_step(params, state, 0, 0.1, Hyper{}), ContractError);
}

TEST(Schedule, WarmupPeakEndpointAndMidpoint) {
  Hyper h;
  h.lr = 0.01;
  EXPECT_EQ(lr_schedule(10, 100, h), 0.01);
  EXPECT_EQ(lr_schedule(100, 100, h), 0.0);
  EXPECT_NEAR(lr_schedule(55, 100, h), 0.005, 1e-12);
  EXPECT_NEAR(lr_schedule(5, 100, h), 0.005, 1e-12);
  EXPECT_THROW(lr_schedule(0, 100, h), ContractError);
  EXPECT_THROW(lr_schedule(101, 100, h), ContractError);
}

TEST(Hyper, Validation) {
  Hyper h;
  EXPECT_NO_THROW(h.validate());
  h.lr = 0;
  EXPECT_THROW(h.validate(), ConfigError);
  h = Hyper{};
  h.warmup_ratio = 1.0;
  EXPECT_THROW(h.validate(), ConfigError);
}

TEST(Clipping, RescalesToMaxNorm) {
  ParameterList params{scalar_param("a", 0, 3.0), scalar_param("b", 0, 4.0)};
  EXPECT_DOUBLE_EQ(clip_gradients(params, 1.0), 5.0);
  EXPECT_NEAR(global_grad_norm(params), 1.0, 1e-15);
  EXPECT_NEAR(params[0].tensor.grad()[0], 0.6, 1e-15);
}

TEST(Auc, WorkedExamples) {
  std::vector<double> separated{0.9, 0.8, 0.2, 0.1};
  std::vector<int> labels{1, 1, 0, 0};
  EXPECT_EQ(auc_roc(separated, labels), 1.0);
  std::vector<double> flat{0.5, 0.5, 0.5, 0.5};
  EXPECT_EQ(auc_roc(flat, labels), 0.5);
  std::vector<double> mixed{0.9, 0.4, 0.6, 0.1};
  EXPECT_EQ(auc_roc(mixed, labels), 0.75);
  std::vector<int> one_class{1, 1, 1, 1};
  EXPECT_THROW(auc_roc(mixed, one_class), UndefinedMetricError);
  std::vector<int> bad{1, 2, 0, 0};
  EXPECT_THROW(auc_roc(mixed, bad), DataError);
}

TEST(Auc, TiesUseMidranks) {
  std::vector<double> scores{0.7, 0.3, 0.7, 0.3};
  std::vector<int> labels{1, 1, 0, 0};
  // Pairs: (0.7,0.7)=½, (0.7,0.3)=1, (0.3,0.7)=0, (0.3,0.3)=½.
  EXPECT_EQ(auc_roc(scores, labels), 0.5);
}

TEST(Metrics, CsvLayoutAndLookup) {
  MetricHistory h;
  h.add(1, "train", "loss", 0.5);
  h.add(1, "dev", "accuracy", 0.75);
  h.add(2, "dev", "accuracy", 0.1);
  EXPECT_EQ(h.to_csv(), "epoch,split,metric,value\n1,train,loss,0.5\n1,dev,accuracy,0.75\n"
                        "2,dev,accuracy,0.1\n");
  EXPECT_EQ(h.last("dev", "accuracy"), 0.1);
  EXPECT_EQ(h.series("dev", "accuracy"), (std::vector<double>{0.75, 0.1}));
  EXPECT_THROW(h.last("dev", "auc"), ContractError);
}

TEST(Arms, NamesAndSwitches) {
  for (Arm a : {Arm::Full, Arm::NoDistill, Arm::NoAdapted, Arm::Neither})
    EXPECT_EQ(parse_arm(arm_name(a)), a);
  EXPECT_TRUE(arm_distills(Arm::Full));
  EXPECT_TRUE(arm_distills(Arm::NoAdapted));
  EXPECT_FALSE(arm_distills(Arm::NoDistill));
  EXPECT_EQ(arm_interaction(Arm::NoAdapted), InteractionMode::Siamese);
  EXPECT_EQ(arm_interaction(Arm::NoDistill), InteractionMode::Adapted);
  EXPECT_THROW(parse_arm("both"), ConfigError);
}

TEST(Training, TeacherReplaysAndBeatsMajority) {
  auto task = small_task();
  auto a = train_teacher(small_config(), task.train, task.dev, small_hyper(2));
  auto b = train_teacher(small_config(), task.train, task.dev, small_hyper(2));
  EXPECT_EQ(snapshot(a.model), snapshot(b.model));
  EXPECT_EQ(a.history, b.history);
  EXPECT_EQ(a.history.series("dev", "accuracy").size(), 2u);
}

TEST(Training, StudentArmsContract) {
  auto task = small_task();
  const auto cfg = small_config();
  auto teacher = train_teacher(cfg, task.train, task.dev, small_hyper(1));
  const std::string before = snapshot(teacher.model);
  DistillConfig distill;

  auto full = train_student(&teacher.model, cfg, {}, task.train, task.dev, distill,
                            small_hyper(3), Arm::Full);
  EXPECT_EQ(snapshot(teacher.model), before);
  EXPECT_EQ(full.teacher_calls, 3 * task.train.size());
  auto virt = full.history.series("train", "virt_loss");
  ASSERT_EQ(virt.size(), 3u);
  EXPECT_LT(virt.back(), virt.front());

  auto neither = train_student(nullptr, cfg, {}, task.train, task.dev, distill, small_hyper(1),
                               Arm::Neither);
  EXPECT_EQ(neither.teacher_calls, 0u);

  auto no_distill = train_student(&teacher.model, cfg, {}, task.train, task.dev, distill,
                                  small_hyper(2), Arm::NoDistill);
  DistillConfig zero = distill;
  zero.alpha = 0.0;
  auto alpha_zero = train_student(&teacher.model, cfg, {}, task.train, task.dev, zero,
                                  small_hyper(2), Arm::Full);
  EXPECT_EQ(no_distill.teacher_calls, 0u);
  EXPECT_EQ(alpha_zero.teacher_calls, 0u);
  EXPECT_EQ(serialize_checkpoint(to_checkpoint(no_distill.model)),
            serialize_checkpoint(to_checkpoint(alpha_zero.model)));
  EXPECT_EQ(parameter_count(full.model.parameters()),
            parameter_count(no_distill.model.parameters()));
  EXPECT_EQ(parameter_count(full.model.parameters()),
            parameter_count(neither.model.parameters()));
}

TEST(Training, IncompatibleTeacherRejected) {
  auto task = small_task();
  auto cfg = small_config();
  auto teacher = train_teacher(cfg, task.train, task.dev, small_hyper(1));
  EncoderConfig wide = cfg;
  wide.hidden_dim = 16;
  EXPECT_THROW(train_student(&teacher.model, wide, {}, task.train, task.dev, {}, small_hyper(1),
                             Arm::Full),
               ConfigError);
  EXPECT_THROW(train_student(nullptr, cfg, {}, task.train, task.dev, {}, small_hyper(1), Arm::Full),
               ContractError);
}

TEST(Evaluate, AccuracyAndAucOnTeacher) {
  auto task = small_task();
  auto teacher = train_teacher(small_config(), task.train, task.dev, small_hyper(1));
  auto r = evaluate(teacher.model, task.dev);
  EXPECT_EQ(r.count, task.dev.size());
  EXPECT_TRUE(r.has_auc);
  EXPECT_GE(r.accuracy, 0.0);
  EXPECT_LE(r.accuracy, 1.0);
  std::vector<Example> positives;
  for (const auto& ex : task.dev)
    if (ex.label == 1) positives.push_back(ex);
  EXPECT_FALSE(evaluate(teacher.model, positives).has_auc);
}
