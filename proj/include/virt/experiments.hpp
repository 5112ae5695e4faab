#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "virt/config.hpp"
#include "virt/cross_encoder.hpp"
#include "virt/data.hpp"
#include "virt/dual_encoder.hpp"
#include "virt/train.hpp"

namespace virt {

struct DataSplits {
  std::string task;
  std::vector<Example> train;
  std::vector<Example> dev;
};

// Generated splits for `task` (keymatch | overlap), or the TSV files named by
// data.train_path / data.dev_path when both are set.
DataSplits make_datasets(const RunConfig& config, const std::string& task);
// One entry per task listed in data.task.
std::vector<DataSplits> make_all_datasets(const RunConfig& config);

struct RunRecord {
  std::string task;
  std::string name;  // "teacher", an arm name, or "virt-<strategy>"
  std::string layers;
  std::uint64_t seed = 0;
  EvalResult dev;
  MetricHistory history;
  std::size_t teacher_calls = 0;
  double seconds = 0.0;
};

struct RowSummary {
  std::string task;
  std::string name;
  std::string layers;
  std::vector<double> accuracies;  // in seed order
  std::vector<double> aucs;
  double median_accuracy = 0.0;
  double median_auc = 0.0;
};

struct ExperimentReport {
  std::vector<std::uint64_t> seeds;
  std::vector<RunRecord> runs;
  std::vector<RowSummary> rows;      // the comparison table
  std::vector<RowSummary> teachers;  // one per task, reported beside the table

  const RowSummary& row(const std::string& task, const std::string& name) const;
  const RowSummary& teacher(const std::string& task) const;
  // Sum of wall time over runs matching task and any of `names`.
  double seconds(const std::string& task, const std::vector<std::string>& names) const;
  std::string table_csv() const;
  std::string table_text() const;
};

using RunCallback = std::function<void(const RunRecord&)>;

double median(std::vector<double> values);

// Trains one teacher per seed, then the ablation arms (ablate.arms, all four
// by default) followed by the configured layer-strategy grid, per dataset. Strategies that select the
// same layer set as an earlier run reuse its result.
ExperimentReport run_ablation(const RunConfig& config, const std::vector<DataSplits>& datasets,
                              bool include_strategies = true, const RunCallback& on_run = {});

// Trains the full arm at every α of alpha_grid() for every seed.
ExperimentReport run_alpha_sweep(const RunConfig& config, const DataSplits& data,
                                 const RunCallback& on_run = {});

struct LatencyOptions {
  std::size_t candidates = 256;
  std::size_t repetitions = 30;
  bool parallel = false;
  std::uint64_t seed = 1;
};

struct LatencyReport {
  std::vector<double> cross_ms;  // per repetition, N joint forwards
  std::vector<double> dual_ms;   // per repetition, online path only
  double cross_median_ms = 0.0;
  double dual_median_ms = 0.0;
  double precompute_ms = 0.0;  // offline candidate encoding, reported separately
  double speedup = 0.0;
  std::size_t threads = 1;
};

// One query against N candidates of lengths max_len_x / max_len_y. Arm A runs
// N cross-encoder forwards; arm B encodes the candidates once offline and then
// times the query encoding plus N interaction+fusion evaluations.
LatencyReport bench_latency(const EncoderConfig& config, const StudentOptions& options,
                            const LatencyOptions& bench);

struct AttentionDump {
  Tensor teacher;       // [m×n]
  Tensor with_virt;     // [m×n]
  Tensor without_virt;  // [m×n]
  double distance_with = 0.0;
  double distance_without = 0.0;
};

// X→Y cross maps of one (1-based) layer and head for one pair: the teacher's
// target map and the two students' virtual maps.
AttentionDump dump_attention(const CrossEncoder& teacher, const DualEncoder& virt_student,
                             const DualEncoder& plain_student, const Example& pair, int layer,
                             int head, TeacherMapMode mode = TeacherMapMode::Renormalized);

// Per-layer distillation distance (virt_loss restricted to that layer) between
// the student's virtual maps and the teacher targets, for 1-based `layers`.
std::vector<double> layer_distances(const CrossEncoder& teacher, const DualEncoder& student,
                                    const Example& pair, const std::vector<int>& layers,
                                    TeacherMapMode mode = TeacherMapMode::Renormalized);

std::string matrix_csv(const Tensor& m);
// Plain (P2) graymap, `cell` pixels per entry, 0 → black and 1 → white.
std::string matrix_pgm(const Tensor& m, int cell = 16);

// 64-bit FNV-1a.
std::uint64_t fnv1a(std::string_view bytes);
std::string hex64(std::uint64_t value);

/// Output directory plus a manifest of the run: subcommand, seed, full
/// config and an FNV-1a hash for each artifact written through it.
class RunOutput {
 public:
  RunOutput(std::filesystem::path dir, std::string subcommand, std::uint64_t seed,
            const RunConfig& config);

  const std::filesystem::path& dir() const { return dir_; }
  std::filesystem::path path(const std::string& name) const { return dir_ / name; }
  void write(const std::string& name, const std::string& bytes);
  // Records a file that was written by other means.
  void record(const std::string& name);
  void finish() const;

 private:
  std::filesystem::path dir_;
  std::string subcommand_;
  std::uint64_t seed_;
  std::string config_text_;
  std::vector<std::pair<std::string, std::string>> artifacts_;
};

std::string read_file(const std::filesystem::path& path);

}  // namespace virt
