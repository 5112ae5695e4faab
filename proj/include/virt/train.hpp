#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "virt/cross_encoder.hpp"
#include "virt/data.hpp"
#include "virt/distillation.hpp"
#include "virt/dual_encoder.hpp"

namespace virt {

struct Hyper {
  double lr = 1e-3;
  double warmup_ratio = 0.1;
  int batch_size = 28;
  int epochs = 1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 1.0;  // <= 0 disables clipping
  std::uint64_t seed = 1;

  void validate() const;
};

// Linear ramp from 0 to lr over the first warmup_ratio·total_steps steps,
// then linear decay to 0 at total_steps. Steps are 1-based.
double lr_schedule(std::size_t step, std::size_t total_steps, const Hyper& hyper);

struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

// Bias-corrected Adam update of every parameter from its accumulated gradient
// (a missing gradient counts as zero). Throws NumericError naming the first
// parameter with a non-finite gradient, before anything is modified.
void adam_step(const ParameterList& params, AdamState& state, std::size_t t, double lr,
               const Hyper& hyper);

double global_grad_norm(const ParameterList& params);
// Rescales all gradients so their global norm is at most max_norm. Returns the
// norm before clipping.
double clip_gradients(const ParameterList& params, double max_norm);
void zero_grads(const ParameterList& params);

struct MetricRecord {
  int epoch = 0;
  std::string split;
  std::string metric;
  double value = 0.0;

  bool operator==(const MetricRecord&) const = default;
};

class MetricHistory {
 public:
  void add(int epoch, const std::string& split, const std::string& metric, double value);
  const std::vector<MetricRecord>& records() const { return records_; }
  // Value from the latest epoch for (split, metric); throws ContractError if absent.
  double last(const std::string& split, const std::string& metric) const;
  std::vector<double> series(const std::string& split, const std::string& metric) const;
  // `epoch,split,metric,value` with values printed round-trip exact.
  std::string to_csv() const;
  void save_csv(const std::filesystem::path& path) const;

  bool operator==(const MetricHistory&) const = default;

 private:
  std::vector<MetricRecord> records_;
};

// Mann–Whitney AUC with midranks for ties. Labels are 0/1; throws
// UndefinedMetricError unless both classes are present.
double auc_roc(std::span<const double> scores, std::span<const int> labels);

struct EvalResult {
  double accuracy = 0.0;
  double auc = 0.0;
  bool has_auc = false;
  std::size_t count = 0;
};

// The positive-class probability is the AUC score; AUC is only computed for
// binary models and requires both labels in `data`.
EvalResult evaluate(const CrossEncoder& teacher, std::span<const Example> data);
EvalResult evaluate(const DualEncoder& student, std::span<const Example> data);

enum class Arm { Full, NoDistill, NoAdapted, Neither };

std::string arm_name(Arm arm);
Arm parse_arm(const std::string& name);
bool arm_distills(Arm arm);
InteractionMode arm_interaction(Arm arm);

struct TeacherResult {
  CrossEncoder model;
  MetricHistory history;
};

TeacherResult train_teacher(const EncoderConfig& config, std::span<const Example> train,
                            std::span<const Example> dev, const Hyper& hyper);

struct StudentResult {
  DualEncoder model;
  MetricHistory history;
  std::size_t teacher_calls = 0;
};

// Throws ConfigError unless both encoders agree on layers, heads and width.
void check_compatible(const EncoderConfig& teacher, const EncoderConfig& student);

// `teacher` may be null only for arms that never distill (or alpha == 0).
// The arm decides the interaction mode and whether distillation runs.
StudentResult train_student(const CrossEncoder* teacher, const EncoderConfig& config,
                            const StudentOptions& options, std::span<const Example> train,
                            std::span<const Example> dev, const DistillConfig& distill,
                            const Hyper& hyper, Arm arm);

}  // namespace virt
