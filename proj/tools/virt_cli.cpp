#include <CLI11.hpp>

#include <charconv>
#include <cstdio>
#include <iostream>
#include <optional>
#include <sstream>

#include "virt/checkpoint.hpp"
#include "virt/config.hpp"
#include "virt/error.hpp"
#include "virt/experiments.hpp"

using namespace virt;

namespace {

struct Options {
  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> overrides;
};

RunConfig load_config(const Options& opts) {
  RunConfig config;
  if (!opts.config_path.empty()) config.apply_file(opts.config_path);
  for (const auto& o : opts.overrides) config.apply_override(o);
  if (opts.seed) config.set("run.seeds", std::to_string(*opts.seed));
  return config;
}

std::uint64_t first_seed(const RunConfig& config) {
  const auto seeds = config.get_list("run.seeds");
  if (seeds.empty()) throw ConfigError("run.seeds is empty");
  std::uint64_t seed = 0;
  const auto& text = seeds.front();
  auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), seed);
  if (ec != std::errc{} || end != text.data() + text.size()) {
    throw ConfigError("run.seeds: cannot parse '" + text + "' as a seed");
  }
  return seed;
}

std::string eval_csv(const EvalResult& r) {
  std::ostringstream out;
  out << "metric,value\naccuracy," << format_double(r.accuracy) << "\n";
  if (r.has_auc) out << "auc," << format_double(r.auc) << "\n";
  out << "count," << r.count << "\n";
  return out.str();
}

void print_eval(const std::string& what, const EvalResult& r) {
  std::printf("%s: accuracy %.4f", what.c_str(), r.accuracy);
  if (r.has_auc) std::printf("  auc %.4f", r.auc);
  std::printf("  (%zu examples)\n", r.count);
}

Checkpoint required_checkpoint(const RunConfig& config, const std::string& key) {
  const auto& path = config.get(key);
  if (path.empty()) throw CheckpointError(key + " is not set");
  return load_checkpoint(path);
}

std::string runs_csv(const ExperimentReport& report) {
  std::ostringstream out;
  out << "task,name,layers,seed,accuracy,auc,teacher_calls,seconds\n";
  for (const auto& r : report.runs) {
    out << r.task << ',' << r.name << ",\"" << r.layers << "\"," << r.seed << ','
        << format_double(r.dev.accuracy) << ',' << (r.dev.has_auc ? format_double(r.dev.auc) : "")
        << ',' << r.teacher_calls << ',' << format_double(r.seconds) << '\n';
  }
  return out.str();
}

void log_run(const RunRecord& r) {
  std::fprintf(stderr, "%s seed %llu %-14s acc %.4f  %.1fs\n", r.task.c_str(),
               static_cast<unsigned long long>(r.seed), r.name.c_str(), r.dev.accuracy, r.seconds);
}

void gen_data(const RunConfig& config, RunOutput& out) {
  const Vocabulary vocab = Vocabulary::numeric(config.get_int("model.vocab_size"));
  for (const auto& splits : make_all_datasets(config)) {
    for (const auto& [split, data] : {std::pair{"train", &splits.train}, {"dev", &splits.dev}}) {
      const std::string name = splits.task + "." + split + ".tsv";
      save_tsv(out.path(name), *data, vocab);
      out.record(name);
      std::printf("%s: %zu examples\n", name.c_str(), data->size());
    }
  }
}

void train_teacher_cmd(const RunConfig& config, RunOutput& out, std::uint64_t seed) {
  const auto data = make_datasets(config, config.get_list("data.task").at(0));
  auto result = train_teacher(encoder_config(config), data.train, data.dev,
                              teacher_hyper(config, seed));
  save_checkpoint(out.path("teacher.ckpt"), to_checkpoint(result.model));
  out.record("teacher.ckpt");
  out.write("metrics.csv", result.history.to_csv());
  print_eval("teacher dev", evaluate(result.model, data.dev));
}

void train_student_cmd(const RunConfig& config, RunOutput& out, std::uint64_t seed) {
  const auto data = make_datasets(config, config.get_list("data.task").at(0));
  const Arm arm = parse_arm(config.get("student.arm"));
  const DistillConfig distill = distill_config(config);
  std::optional<CrossEncoder> teacher;
  if (!config.get("run.teacher_checkpoint").empty() || (arm_distills(arm) && distill.alpha > 0)) {
    teacher.emplace(load_teacher(required_checkpoint(config, "run.teacher_checkpoint")));
  }
  auto result = train_student(teacher ? &*teacher : nullptr, encoder_config(config),
                              student_options(config), data.train, data.dev, distill,
                              student_hyper(config, seed), arm);
  save_checkpoint(out.path("student.ckpt"), to_checkpoint(result.model));
  out.record("student.ckpt");
  out.write("metrics.csv", result.history.to_csv());
  std::printf("teacher calls: %zu\n", result.teacher_calls);
  print_eval("student dev (" + arm_name(arm) + ")", evaluate(result.model, data.dev));
}

void eval_cmd(const RunConfig& config, RunOutput& out) {
  const auto data = make_datasets(config, config.get_list("data.task").at(0));
  const bool has_teacher = !config.get("run.teacher_checkpoint").empty();
  const bool has_student = !config.get("run.student_checkpoint").empty();
  if (!has_teacher && !has_student) {
    throw CheckpointError("set run.teacher_checkpoint or run.student_checkpoint");
  }
  if (has_teacher) {
    auto r = evaluate(load_teacher(required_checkpoint(config, "run.teacher_checkpoint")), data.dev);
    out.write("teacher_eval.csv", eval_csv(r));
    print_eval("teacher dev", r);
  }
  if (has_student) {
    auto r = evaluate(load_student(required_checkpoint(config, "run.student_checkpoint")), data.dev);
    out.write("student_eval.csv", eval_csv(r));
    print_eval("student dev", r);
  }
}

void ablate_cmd(const RunConfig& config, RunOutput& out) {
  auto report = run_ablation(config, make_all_datasets(config), true, log_run);
  out.write("ablation.csv", report.table_csv());
  out.write("ablation.txt", report.table_text());
  out.write("runs.csv", runs_csv(report));
  std::printf("%s", report.table_text().c_str());
}

void sweep_alpha_cmd(const RunConfig& config, RunOutput& out) {
  const auto data = make_datasets(config, config.get_list("data.task").at(0));
  auto report = run_alpha_sweep(config, data, log_run);
  out.write("alpha.csv", report.table_csv());
  out.write("runs.csv", runs_csv(report));
  std::printf("%s", report.table_text().c_str());
}

void bench_cmd(const RunConfig& config, RunOutput& out, std::uint64_t seed) {
  LatencyOptions bench;
  bench.candidates = static_cast<std::size_t>(config.get_int("bench.candidates"));
  bench.repetitions = static_cast<std::size_t>(config.get_int("bench.repetitions"));
  bench.parallel = config.get_bool("bench.parallel");
  bench.seed = seed;
  auto r = bench_latency(encoder_config(config), student_options(config), bench);
  std::ostringstream csv;
  csv << "repetition,cross_ms,dual_ms\n";
  for (std::size_t i = 0; i < r.cross_ms.size(); ++i) {
    csv << i << ',' << format_double(r.cross_ms[i]) << ',' << format_double(r.dual_ms[i]) << '\n';
  }
  out.write("latency.csv", csv.str());
  std::ostringstream summary;
  summary << "candidates " << bench.candidates << "\nrepetitions " << bench.repetitions
          << "\nthreads " << r.threads << "\ncross_median_ms " << format_double(r.cross_median_ms)
          << "\ndual_median_ms " << format_double(r.dual_median_ms) << "\nprecompute_ms "
          << format_double(r.precompute_ms) << "\nspeedup " << format_double(r.speedup) << "\n";
  out.write("latency_summary.txt", summary.str());
  std::printf("cross-encoder %.3f ms  dual-encoder online %.3f ms  speedup %.2fx\n"
              "offline candidate precompute %.3f ms\n",
              r.cross_median_ms, r.dual_median_ms, r.speedup, r.precompute_ms);
}

void dump_cmd(const RunConfig& config, RunOutput& out) {
  auto teacher = load_teacher(required_checkpoint(config, "run.teacher_checkpoint"));
  auto with_virt = load_student(required_checkpoint(config, "run.student_checkpoint"));
  auto without = load_student(required_checkpoint(config, "run.baseline_checkpoint"));
  const auto data = make_datasets(config, config.get_list("data.task").at(0));
  const auto index = static_cast<std::size_t>(config.get_int("dump.example"));
  if (index >= data.dev.size()) throw ConfigError("dump.example is past the end of the dev set");
  const Example& pair = data.dev[index];
  auto dump = dump_attention(teacher, with_virt, without, pair, config.get_int("dump.layer"),
                             config.get_int("dump.head"), distill_config(config).teacher_map_mode);
  const std::pair<const char*, const Tensor*> maps[] = {
      {"teacher", &dump.teacher}, {"with_virt", &dump.with_virt}, {"without_virt", &dump.without_virt}};
  for (const auto& [name, m] : maps) {
    out.write(std::string(name) + ".csv", matrix_csv(*m));
    out.write(std::string(name) + ".pgm", matrix_pgm(*m));
  }
  std::ostringstream dist;
  dist << "with_virt " << format_double(dump.distance_with) << "\nwithout_virt "
       << format_double(dump.distance_without) << "\n";
  out.write("distances.txt", dist.str());
  std::printf("Frobenius distance to teacher: with VIRT %.6f, without VIRT %.6f\n",
              dump.distance_with, dump.distance_without);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"VIRT virtual-interaction distillation"};
  app.require_subcommand(1);
  app.fallthrough();
  Options opts;
  app.add_option("--config", opts.config_path, "key = value configuration file");
  app.add_option("--out", opts.out_dir, "output directory (created, or must be empty)")->required();
  app.add_option("--seed", opts.seed, "single seed; replaces run.seeds");
  app.add_option("--set", opts.overrides, "override one key, key=value (repeatable)");

  const std::vector<std::pair<std::string, std::string>> commands = {
      {"gen-data", "write generated train/dev splits as TSV"},
      {"train-teacher", "train the cross-encoder teacher"},
      {"train-student", "train a dual-encoder student arm"},
      {"eval", "evaluate saved checkpoints on the dev split"},
      {"ablate", "ablation arms and layer-strategy grid over all seeds"},
      {"sweep-alpha", "full arm across the alpha grid"},
      {"bench-latency", "cross-encoder vs cached dual-encoder scoring latency"},
      {"dump-attn", "teacher and student cross maps for one pair"},
  };
  for (const auto& [name, help] : commands) app.add_subcommand(name, help);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::fprintf(stderr, "error[usage]: %s\n", e.what());
    return 2;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    const RunConfig config = load_config(opts);
    const std::uint64_t seed = first_seed(config);
    RunOutput out(opts.out_dir, command, seed, config);
    if (command == "gen-data") gen_data(config, out);
    else if (command == "train-teacher") train_teacher_cmd(config, out, seed);
    else if (command == "train-student") train_student_cmd(config, out, seed);
    else if (command == "eval") eval_cmd(config, out);
    else if (command == "ablate") ablate_cmd(config, out);
    else if (command == "sweep-alpha") sweep_alpha_cmd(config, out);
    else if (command == "bench-latency") bench_cmd(config, out, seed);
    else dump_cmd(config, out);
    out.finish();
  } catch (const Error& e) {
    std::fprintf(stderr, "error[%s]: %s\n", e.category().c_str(), e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error[internal]: %s\n", e.what());
    return 1;
  }
  return 0;
}
