#include "virt/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <thread>

#include "virt/error.hpp"
#include "virt/ops.hpp"

namespace virt {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_seconds(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string join_layers(const std::vector<int>& layers) {
  std::string out;
  for (std::size_t i = 0; i < layers.size(); ++i) out += (i ? "," : "") + std::to_string(layers[i]);
  return out;
}

std::vector<std::uint64_t> parse_seeds(const RunConfig& config) {
  std::vector<std::uint64_t> seeds;
  for (const auto& s : config.get_list("run.seeds")) {
    RunConfig probe;
    probe.set("data.seed", s);
    seeds.push_back(probe.get_u64("data.seed"));
  }
  if (seeds.empty()) throw ConfigError("run.seeds is empty");
  return seeds;
}

RowSummary summarize(const std::string& task, const std::string& name, const std::string& layers,
                     const std::vector<const RunRecord*>& runs) {
  RowSummary row{task, name, layers, {}, {}, 0.0, 0.0};
  for (const auto* r : runs) {
    row.accuracies.push_back(r->dev.accuracy);
    row.aucs.push_back(r->dev.auc);
  }
  row.median_accuracy = median(row.accuracies);
  row.median_auc = median(row.aucs);
  return row;
}

RunRecord teacher_record(const std::string& task, std::uint64_t seed, const TeacherResult& t,
                         std::span<const Example> dev, double seconds) {
  RunRecord r;
  r.task = task;
  r.name = "teacher";
  r.seed = seed;
  r.dev = evaluate(t.model, dev);
  r.history = t.history;
  r.seconds = seconds;
  return r;
}

RunRecord student_record(const std::string& task, const std::string& name,
                         const std::string& layers, std::uint64_t seed, const StudentResult& s,
                         std::span<const Example> dev, double seconds) {
  RunRecord r;
  r.task = task;
  r.name = name;
  r.layers = layers;
  r.seed = seed;
  r.dev = evaluate(s.model, dev);
  r.history = s.history;
  r.teacher_calls = s.teacher_calls;
  r.seconds = seconds;
  return r;
}

}  // namespace

double median(std::vector<double> values) {
  if (values.empty()) throw ContractError("median of an empty list");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : (values[n / 2 - 1] + values[n / 2]) / 2.0;
}

DataSplits make_datasets(const RunConfig& config, const std::string& task) {
  DataSplits splits;
  splits.task = task;
  const auto& train_path = config.get("data.train_path");
  const auto& dev_path = config.get("data.dev_path");
  if (!train_path.empty() || !dev_path.empty()) {
    if (train_path.empty() || dev_path.empty()) {
      throw ConfigError("data.train_path and data.dev_path must be set together");
    }
    const auto& vocab_path = config.get("data.vocab_path");
    const Vocabulary vocab = vocab_path.empty()
                                 ? Vocabulary::numeric(config.get_int("model.vocab_size"))
                                 : Vocabulary::from_file(vocab_path);
    splits.train = load_tsv(train_path, vocab);
    splits.dev = load_tsv(dev_path, vocab);
    return splits;
  }
  const int vocab = config.get_int("model.vocab_size");
  const auto seed = config.get_u64("data.seed");
  const auto n_train = static_cast<std::size_t>(config.get_int("data.train_size"));
  const auto n_dev = static_cast<std::size_t>(config.get_int("data.dev_size"));
  const GeneratorOptions options = generator_options(config);
  if (task == "keymatch") {
    splits.train = gen_keymatch(n_train, vocab, seed, options);
    splits.dev = gen_keymatch(n_dev, vocab, seed + 1000003, options);
  } else if (task == "overlap") {
    splits.train = gen_overlap(n_train, vocab, seed, options);
    splits.dev = gen_overlap(n_dev, vocab, seed + 1000003, options);
  } else {
    throw ConfigError("unknown task '" + task + "' (expected keymatch or overlap)");
  }
  return splits;
}

std::vector<DataSplits> make_all_datasets(const RunConfig& config) {
  std::vector<DataSplits> out;
  for (const auto& task : config.get_list("data.task")) out.push_back(make_datasets(config, task));
  if (out.empty()) throw ConfigError("data.task is empty");
  return out;
}

const RowSummary& ExperimentReport::row(const std::string& task, const std::string& name) const {
  for (const auto& r : rows)
    if (r.task == task && r.name == name) return r;
  throw ContractError("no row " + task + "/" + name);
}

const RowSummary& ExperimentReport::teacher(const std::string& task) const {
  for (const auto& r : teachers)
    if (r.task == task) return r;
  throw ContractError("no teacher row for " + task);
}

double ExperimentReport::seconds(const std::string& task,
                                 const std::vector<std::string>& names) const {
  double total = 0.0;
  for (const auto& r : runs)
    if (r.task == task && std::find(names.begin(), names.end(), r.name) != names.end())
      total += r.seconds;
  return total;
}

std::string ExperimentReport::table_csv() const {
  std::ostringstream out;
  out << "task,row,layers,median_accuracy,median_auc,accuracies\n";
  for (const auto& r : rows) {
    out << r.task << ',' << r.name << ",\"" << r.layers << "\"," << format_double(r.median_accuracy)
        << ',' << format_double(r.median_auc) << ",\"";
    for (std::size_t i = 0; i < r.accuracies.size(); ++i)
      out << (i ? ";" : "") << format_double(r.accuracies[i]);
    out << "\"\n";
  }
  return out.str();
}

std::string ExperimentReport::table_text() const {
  std::ostringstream out;
  auto line = [&](const RowSummary& r) {
    out << std::left << std::setw(10) << r.task << std::setw(18) << r.name << std::setw(8)
        << (r.layers.empty() ? "-" : r.layers) << std::right << std::fixed << std::setprecision(4)
        << std::setw(10) << r.median_accuracy << std::setw(10) << r.median_auc << '\n';
  };
  out << std::left << std::setw(10) << "task" << std::setw(18) << "row" << std::setw(8)
      << "layers" << std::right << std::setw(10) << "acc" << std::setw(10) << "auc" << '\n';
  for (const auto& r : rows) line(r);
  if (!teachers.empty()) {
    out << "reference:\n";
    for (const auto& t : teachers) line(t);
  }
  return out.str();
}

ExperimentReport run_ablation(const RunConfig& config, const std::vector<DataSplits>& datasets,
                              bool include_strategies, const RunCallback& on_run) {
  ExperimentReport report;
  report.seeds = parse_seeds(config);
  const EncoderConfig enc = encoder_config(config);
  const StudentOptions options = student_options(config);
  const DistillConfig base = distill_config(config);
  std::vector<LayerStrategy> grid;
  if (include_strategies) {
    for (const auto& s : config.get_list("ablate.strategies")) grid.push_back(LayerStrategy::parse(s));
  }
  std::vector<Arm> arms;
  for (const auto& a : config.get_list("ablate.arms")) arms.push_back(parse_arm(a));
  if (arms.empty() && grid.empty()) throw ConfigError("ablate.arms and the strategy grid are both empty");
  const std::string base_layers = join_layers(select_layers(base.strategy, enc.num_layers));

  auto push = [&](RunRecord record) {
    if (on_run) on_run(record);
    report.runs.push_back(std::move(record));
  };

  for (const auto& data : datasets) {
    for (std::uint64_t seed : report.seeds) {
      auto start = Clock::now();
      TeacherResult teacher = train_teacher(enc, data.train, data.dev, teacher_hyper(config, seed));
      push(teacher_record(data.task, seed, teacher, data.dev, elapsed_seconds(start)));
      const Hyper hyper = student_hyper(config, seed);

      for (Arm arm : arms) {
        start = Clock::now();
        StudentResult s =
            train_student(&teacher.model, enc, options, data.train, data.dev, base, hyper, arm);
        push(student_record(data.task, arm_name(arm), arm_distills(arm) ? base_layers : "", seed, s,
                            data.dev, elapsed_seconds(start)));
      }
      std::vector<std::pair<std::string, std::size_t>> done;  // layers -> index into runs
      for (const auto& strategy : grid) {
        const std::string layers = join_layers(select_layers(strategy, enc.num_layers));
        const std::string name = "virt-" + strategy.to_string();
        const RunRecord* reuse = nullptr;
        if (layers == base_layers) {
          for (const auto& r : report.runs)
            if (r.task == data.task && r.seed == seed && r.name == "full") reuse = &r;
        }
        for (const auto& [l, index] : done)
          if (l == layers) reuse = &report.runs[index];
        if (reuse) {
          RunRecord copy = *reuse;
          copy.name = name;
          copy.seconds = 0.0;
          push(std::move(copy));
          continue;
        }
        DistillConfig d = base;
        d.strategy = strategy;
        start = Clock::now();
        StudentResult s =
            train_student(&teacher.model, enc, options, data.train, data.dev, d, hyper, Arm::Full);
        push(student_record(data.task, name, layers, seed, s, data.dev, elapsed_seconds(start)));
        done.emplace_back(layers, report.runs.size() - 1);
      }
    }
    std::vector<std::string> names;
    for (Arm arm : arms) names.push_back(arm_name(arm));
    for (const auto& s : grid) names.push_back("virt-" + s.to_string());
    auto collect = [&](const std::string& name) {
      std::vector<const RunRecord*> found;
      for (std::uint64_t seed : report.seeds)
        for (const auto& r : report.runs)
          if (r.task == data.task && r.name == name && r.seed == seed) found.push_back(&r);
      return found;
    };
    report.teachers.push_back(summarize(data.task, "teacher", "", collect("teacher")));
    for (const auto& name : names) {
      auto found = collect(name);
      report.rows.push_back(summarize(data.task, name, found.front()->layers, found));
    }
  }
  return report;
}

ExperimentReport run_alpha_sweep(const RunConfig& config, const DataSplits& data,
                                 const RunCallback& on_run) {
  ExperimentReport report;
  report.seeds = parse_seeds(config);
  const EncoderConfig enc = encoder_config(config);
  const StudentOptions options = student_options(config);
  const DistillConfig base = distill_config(config);
  const std::string layers = join_layers(select_layers(base.strategy, enc.num_layers));
  auto name_of = [](double alpha) { return "alpha=" + format_double(alpha); };
  for (std::uint64_t seed : report.seeds) {
    auto start = Clock::now();
    TeacherResult teacher = train_teacher(enc, data.train, data.dev, teacher_hyper(config, seed));
    report.runs.push_back(teacher_record(data.task, seed, teacher, data.dev, elapsed_seconds(start)));
    if (on_run) on_run(report.runs.back());
    for (double alpha : alpha_grid()) {
      DistillConfig d = base;
      d.alpha = alpha;
      start = Clock::now();
      StudentResult s = train_student(&teacher.model, enc, options, data.train, data.dev, d,
                                      student_hyper(config, seed), Arm::Full);
      report.runs.push_back(student_record(data.task, name_of(alpha), layers, seed, s, data.dev,
                                           elapsed_seconds(start)));
      if (on_run) on_run(report.runs.back());
    }
  }
  auto collect = [&](const std::string& name) {
    std::vector<const RunRecord*> found;
    for (const auto& r : report.runs)
      if (r.name == name) found.push_back(&r);
    return found;
  };
  report.teachers.push_back(summarize(data.task, "teacher", "", collect("teacher")));
  for (double alpha : alpha_grid())
    report.rows.push_back(summarize(data.task, name_of(alpha), layers, collect(name_of(alpha))));
  return report;
}

namespace {

std::vector<int> random_tokens(std::size_t n, int vocab, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> pick(kFirstContentId, vocab - 1);
  std::vector<int> out(n);
  for (auto& t : out) t = pick(rng);
  return out;
}

// Runs body(i) for i in [0, n), split into contiguous chunks over `threads`.
template <typename Body>
void for_each_candidate(std::size_t n, std::size_t threads, Body body) {
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::thread> pool;
  const std::size_t chunk = (n + threads - 1) / threads;
  for (std::size_t t = 0; t < threads; ++t) {
    const std::size_t lo = t * chunk, hi = std::min(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([&, lo, hi] {
      NoGrad no_grad;
      for (std::size_t i = lo; i < hi; ++i) body(i);
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace

LatencyReport bench_latency(const EncoderConfig& config, const StudentOptions& options,
                            const LatencyOptions& bench) {
  if (bench.candidates == 0) throw ConfigError("bench.candidates must be >= 1");
  if (bench.repetitions == 0) throw ConfigError("bench.repetitions must be >= 1");
  std::mt19937_64 rng(bench.seed);
  const CrossEncoder teacher(config, rng);
  StudentOptions opts = options;
  opts.interaction = InteractionMode::Adapted;
  const DualEncoder student(config, opts, rng);
  const auto query = random_tokens(static_cast<std::size_t>(config.max_len_x), config.vocab_size, rng);
  std::vector<std::vector<int>> candidates;
  for (std::size_t i = 0; i < bench.candidates; ++i)
    candidates.push_back(random_tokens(static_cast<std::size_t>(config.max_len_y), config.vocab_size, rng));

  LatencyReport report;
  report.threads = bench.parallel ? std::max(1u, std::thread::hardware_concurrency()) : 1;
  NoGrad no_grad;

  auto start = Clock::now();
  std::vector<EncodedSide> cache(candidates.size());
  for_each_candidate(candidates.size(), report.threads,
                     [&](std::size_t i) { cache[i] = student.encode_side(candidates[i], 1, false); });
  report.precompute_ms = elapsed_seconds(start) * 1e3;

  std::vector<Tensor> sink(candidates.size());
  for (std::size_t rep = 0; rep < bench.repetitions; ++rep) {
    start = Clock::now();
    for_each_candidate(candidates.size(), report.threads, [&](std::size_t i) {
      sink[i] = teacher.forward(query, candidates[i], false).logits;
    });
    report.cross_ms.push_back(elapsed_seconds(start) * 1e3);

    start = Clock::now();
    const EncodedSide q = student.encode_side(query, 0, false);
    for_each_candidate(candidates.size(), report.threads,
                       [&](std::size_t i) { sink[i] = student.score(q, cache[i]).logits; });
    report.dual_ms.push_back(elapsed_seconds(start) * 1e3);
  }
  report.cross_median_ms = median(report.cross_ms);
  report.dual_median_ms = median(report.dual_ms);
  report.speedup = report.cross_median_ms / report.dual_median_ms;
  return report;
}

namespace {

std::vector<CrossMaps> teacher_targets(const CrossEncoder& teacher, const Example& pair,
                                       TeacherMapMode mode) {
  TeacherOutput t = teacher.forward(pair.x, pair.y, true);
  std::vector<CrossMaps> targets;
  for (const auto& part : t.partitions)
    targets.push_back(extract_target_maps(part, pair.x.size(), pair.y.size(), mode));
  return targets;
}

void check_layer_head(const EncoderConfig& config, int layer, int head) {
  if (layer < 1 || layer > config.num_layers) {
    throw ConfigError("layer " + std::to_string(layer) + " outside 1.." +
                      std::to_string(config.num_layers));
  }
  if (head < 0 || head >= config.num_heads) {
    throw ConfigError("head " + std::to_string(head) + " outside 0.." +
                      std::to_string(config.num_heads - 1));
  }
}

}  // namespace

AttentionDump dump_attention(const CrossEncoder& teacher, const DualEncoder& virt_student,
                             const DualEncoder& plain_student, const Example& pair, int layer,
                             int head, TeacherMapMode mode) {
  check_layer_head(teacher.config(), layer, head);
  check_compatible(teacher.config(), virt_student.config());
  check_compatible(teacher.config(), plain_student.config());
  NoGrad no_grad;
  const auto l = static_cast<std::size_t>(layer - 1);
  const auto h = static_cast<std::size_t>(head);
  AttentionDump dump;
  dump.teacher = teacher_targets(teacher, pair, mode)[l].xy[h];
  dump.with_virt = virt_student.forward(pair.x, pair.y, true).virtual_maps[l].xy[h];
  dump.without_virt = plain_student.forward(pair.x, pair.y, true).virtual_maps[l].xy[h];
  dump.distance_with = frobenius_norm(sub(dump.with_virt, dump.teacher)).item();
  dump.distance_without = frobenius_norm(sub(dump.without_virt, dump.teacher)).item();
  return dump;
}

std::vector<double> layer_distances(const CrossEncoder& teacher, const DualEncoder& student,
                                    const Example& pair, const std::vector<int>& layers,
                                    TeacherMapMode mode) {
  check_compatible(teacher.config(), student.config());
  NoGrad no_grad;
  const auto targets = teacher_targets(teacher, pair, mode);
  const auto maps = student.forward(pair.x, pair.y, true).virtual_maps;
  std::vector<double> out;
  for (int l : layers) out.push_back(virt_loss(maps, targets, pair.x.size(), pair.y.size(), {l}).item());
  return out;
}

std::string matrix_csv(const Tensor& m) {
  std::string out;
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = 0; j < m.cols(); ++j) out += (j ? "," : "") + format_double(m(i, j));
    out += '\n';
  }
  return out;
}

std::string matrix_pgm(const Tensor& m, int cell) {
  if (cell < 1) throw ContractError("matrix_pgm: cell size must be >= 1");
  const std::size_t c = static_cast<std::size_t>(cell);
  const std::size_t width = m.cols() * c, height = m.rows() * c;
  std::ostringstream out;
  out << "P2\n" << width << ' ' << height << "\n255\n";
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      const double v = std::clamp(m(y / c, x / c), 0.0, 1.0);
      out << (x ? " " : "") << static_cast<int>(std::lround(v * 255.0));
    }
    out << '\n';
  }
  return out.str();
}

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

RunOutput::RunOutput(std::filesystem::path dir, std::string subcommand, std::uint64_t seed,
                     const RunConfig& config)
    : dir_(std::move(dir)),
      subcommand_(std::move(subcommand)),
      seed_(seed),
      config_text_(config.to_text()) {
  std::error_code ec;
  if (std::filesystem::exists(dir_, ec)) {
    if (!std::filesystem::is_directory(dir_, ec)) {
      throw IoError("output path " + dir_.string() + " is not a directory");
    }
    if (!std::filesystem::is_empty(dir_, ec)) {
      throw IoError("output directory " + dir_.string() + " is not empty");
    }
  } else if (!std::filesystem::create_directories(dir_, ec) || ec) {
    throw IoError("cannot create output directory " + dir_.string());
  }
  std::ofstream probe(dir_ / ".write-test");
  if (!probe) throw IoError("output directory " + dir_.string() + " is not writable");
  probe.close();
  std::filesystem::remove(dir_ / ".write-test", ec);
}

void RunOutput::write(const std::string& name, const std::string& bytes) {
  std::ofstream out(path(name), std::ios::binary);
  if (!out) throw IoError("cannot write " + path(name).string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path(name).string());
  out.close();
  artifacts_.emplace_back(name, hex64(fnv1a(bytes)));
}

void RunOutput::record(const std::string& name) {
  artifacts_.emplace_back(name, hex64(fnv1a(read_file(path(name)))));
}

void RunOutput::finish() const {
  std::ostringstream out;
  out << "subcommand = " << subcommand_ << "\nseed = " << seed_ << "\n\n[config]\n" << config_text_
      << "\n[artifacts]\n";
  for (const auto& [name, hash] : artifacts_) out << "fnv1a64:" << hash << "  " << name << '\n';
  std::ofstream file(path("manifest.txt"), std::ios::binary);
  if (!file) throw IoError("cannot write manifest in " + dir_.string());
  file << out.str();
}

}  // namespace virt
