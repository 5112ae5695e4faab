#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "virt/config.hpp"
#include "virt/error.hpp"
#include "virt/experiments.hpp"

using namespace virt;

namespace {

// A configuration small enough for a whole ablation to run in a second or two.
RunConfig tiny_run() {
  RunConfig c;
  c.apply_text(R"(
model.hidden_dim = 8
model.ffn_dim = 16
model.vocab_size = 16
model.max_len_x = 4
model.max_len_y = 4
data.train_size = 40
data.dev_size = 20
data.min_len = 1
data.max_len_x = 3
data.max_len_y = 3
train.batch_size = 8
train.teacher_epochs = 1
train.student_epochs = 1
run.seeds = 1,2
)");
  return c;
}

std::filesystem::path fresh_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("virt_test_" + name);
  std::filesystem::remove_all(dir);
  return dir;
}

}  // namespace

TEST(RunConfig, ParsesOverridesAndRejectsUnknownKeys) {
  RunConfig c;
  c.apply_text("# comment\n\ntrain.lr = 0.01  \nrun.seeds=3, 4\n");
  EXPECT_EQ(c.get_double("train.lr"), 0.01);
  EXPECT_EQ(c.get_list("run.seeds"), (std::vector<std::string>{"3", "4"}));
  c.apply_override("model.use_segments=false");
  EXPECT_FALSE(c.get_bool("model.use_segments"));
  EXPECT_THROW(c.set("model.depth", "3"), ConfigError);
  EXPECT_THROW(c.apply_override("no_equals_sign"), ConfigError);
  EXPECT_THROW(c.get_int("train.lr"), ConfigError);
  try {
    c.apply_text("train.lr = 1\njust words\n");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
}

TEST(RunConfig, TextRoundTrip) {
  RunConfig a = tiny_run();
  RunConfig b;
  b.apply_text(a.to_text());
  EXPECT_EQ(a.entries(), b.entries());
  EXPECT_EQ(format_double(0.1), "0.1");
  EXPECT_EQ(std::stod(format_double(1.0 / 3.0)), 1.0 / 3.0);
}

TEST(RunConfig, TypedViews) {
  RunConfig c = tiny_run();
  c.apply_override("distill.strategy=last:1");
  c.apply_override("student.arm=no_adapted");
  const auto enc = encoder_config(c);
  EXPECT_EQ(enc.hidden_dim, 8);
  EXPECT_EQ(distill_config(c).strategy, LayerStrategy::parse("last:1"));
  EXPECT_EQ(student_options(c).interaction, InteractionMode::Siamese);
  EXPECT_EQ(teacher_hyper(c, 7).seed, 7u);
  EXPECT_EQ(student_hyper(c, 7).epochs, 1);
  EXPECT_EQ(encoder_from_entries(encoder_entries(enc)), enc);
  c.apply_override("model.num_heads=3");
  EXPECT_THROW(encoder_config(c), ConfigError);
}

TEST(Median, OddEvenAndEmpty) {
  EXPECT_EQ(median({3, 1, 2}), 2.0);
  EXPECT_EQ(median({4, 1, 2, 3}), 2.5);
  EXPECT_THROW(median({}), ContractError);
}

TEST(Hashing, KnownFnvVectors) {
  EXPECT_EQ(hex64(fnv1a("")), "cbf29ce484222325");
  EXPECT_EQ(hex64(fnv1a("a")), "af63dc4c8601ec8c");
}

TEST(MatrixOutput, CsvAndGraymap) {
  Tensor m = Tensor::matrix({{0.0, 1.0}, {0.25, 0.75}});
  EXPECT_EQ(matrix_csv(m), "0,1\n0.25,0.75\n");
  const std::string pgm = matrix_pgm(m, 1);
  EXPECT_EQ(pgm, "P2\n2 2\n255\n0 255\n64 191\n");
}

TEST(RunOutput, RefusesNonEmptyDirAndWritesManifest) {
  auto dir = fresh_dir("runout");
  RunConfig c = tiny_run();
  {
    RunOutput out(dir, "gen-data", 5, c);
    out.write("a.txt", "hello");
    out.finish();
  }
  const std::string manifest = read_file(dir / "manifest.txt");
  EXPECT_NE(manifest.find("gen-data"), std::string::npos);
  EXPECT_NE(manifest.find("seed = 5"), std::string::npos) << manifest;
  EXPECT_NE(manifest.find("fnv1a64:" + hex64(fnv1a("hello")) + "  a.txt"), std::string::npos);
  EXPECT_NE(manifest.find("train.lr = "), std::string::npos);
  EXPECT_THROW(RunOutput(dir, "gen-data", 5, c), IoError);
  std::filesystem::remove_all(dir);
}

TEST(Datasets, GeneratedAndTsvSplits) {
  RunConfig c = tiny_run();
  auto splits = make_datasets(c, "keymatch");
  EXPECT_EQ(splits.train.size(), 40u);
  EXPECT_EQ(splits.dev.size(), 20u);
  EXPECT_NE(splits.train, splits.dev);
  EXPECT_THROW(make_datasets(c, "nli"), ConfigError);

  auto dir = fresh_dir("tsv_splits");
  std::filesystem::create_directories(dir);
  Vocabulary vocab = Vocabulary::numeric(16);
  save_tsv(dir / "train.tsv", splits.train, vocab);
  save_tsv(dir / "dev.tsv", splits.dev, vocab);
  c.apply_override("data.train_path=" + (dir / "train.tsv").string());
  c.apply_override("data.dev_path=" + (dir / "dev.tsv").string());
  auto loaded = make_datasets(c, "keymatch");
  EXPECT_EQ(loaded.train, splits.train);
  EXPECT_EQ(loaded.dev, splits.dev);
  std::filesystem::remove_all(dir);
}

TEST(Ablation, TableHasArmsPlusStrategyGrid) {
  RunConfig c = tiny_run();
  auto datasets = make_all_datasets(c);
  std::size_t callbacks = 0;
  auto report = run_ablation(c, datasets, true, [&](const RunRecord&) { ++callbacks; });
  EXPECT_EQ(report.rows.size(), 4u + 4u);
  EXPECT_EQ(report.teachers.size(), 1u);
  EXPECT_EQ(report.row("keymatch", "virt-all").accuracies,
            report.row("keymatch", "full").accuracies);
  EXPECT_EQ(report.row("keymatch", "virt-skip:2").accuracies,
            report.row("keymatch", "virt-first:1").accuracies);
  for (const auto& run : report.runs) EXPECT_EQ(run.task, "keymatch");
  EXPECT_EQ(report.row("keymatch", "neither").accuracies.size(), 2u);
  EXPECT_GT(callbacks, 0u);
  const std::string csv = report.table_csv();
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 8);
  EXPECT_NE(report.table_text().find("virt-skip:2"), std::string::npos);
  for (const auto& run : report.runs)
    if (run.name == "neither" || run.name == "no_distill") EXPECT_EQ(run.teacher_calls, 0u);
}

TEST(Ablation, ReplaysBitExactly) {
  RunConfig c = tiny_run();
  auto datasets = make_all_datasets(c);
  auto a = run_ablation(c, datasets, false);
  auto b = run_ablation(c, datasets, false);
  ASSERT_EQ(a.runs.size(), b.runs.size());
  for (std::size_t i = 0; i < a.runs.size(); ++i) EXPECT_EQ(a.runs[i].history, b.runs[i].history);
  EXPECT_EQ(a.table_csv(), b.table_csv());
}

TEST(Ablation, ArmSubset) {
  RunConfig c = tiny_run();
  c.apply_override("ablate.arms=full,neither");
  auto report = run_ablation(c, make_all_datasets(c), false);
  ASSERT_EQ(report.rows.size(), 2u);
  EXPECT_EQ(report.rows[1].name, "neither");
  c.apply_override("ablate.arms=all_of_them");
  EXPECT_THROW(run_ablation(c, make_all_datasets(c), false), ConfigError);
}

TEST(AlphaSweep, OneRowPerAlpha) {
  RunConfig c = tiny_run();
  c.apply_override("run.seeds=1");
  auto report = run_alpha_sweep(c, make_datasets(c, "keymatch"));
  EXPECT_EQ(report.rows.size(), alpha_grid().size());
  EXPECT_EQ(report.rows.front().name, "alpha=0");
}

TEST(Latency, SingleCandidateSanity) {
  EncoderConfig enc;
  enc.num_layers = 1;
  enc.hidden_dim = 8;
  enc.ffn_dim = 8;
  enc.max_len_x = 4;
  enc.max_len_y = 4;
  LatencyOptions opts;
  opts.candidates = 1;
  opts.repetitions = 5;
  auto r = bench_latency(enc, {}, opts);
  EXPECT_EQ(r.cross_ms.size(), 5u);
  EXPECT_GT(r.speedup, 0.0);
  EXPECT_GT(r.precompute_ms, 0.0);
  opts.parallel = true;
  opts.candidates = 8;
  EXPECT_GE(bench_latency(enc, {}, opts).threads, 1u);
}

TEST(AttentionDump, MapsAreRowStochastic) {
  EncoderConfig enc;
  enc.num_layers = 2;
  enc.hidden_dim = 8;
  enc.vocab_size = 16;
  enc.max_len_x = 4;
  enc.max_len_y = 4;
  std::mt19937_64 rng(1);
  CrossEncoder teacher(enc, rng);
  DualEncoder a(enc, {}, rng), b(enc, {}, rng);
  Example pair{{2, 3, 4}, {5, 6}, 1};
  auto dump = dump_attention(teacher, a, b, pair, 2, 1);
  for (const Tensor* m : {&dump.teacher, &dump.with_virt, &dump.without_virt}) {
    ASSERT_EQ(m->shape(), (Shape{3, 2}));
    for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR((*m)(i, 0) + (*m)(i, 1), 1.0, 1e-9);
  }
  auto d = layer_distances(teacher, a, pair, {1, 2});
  ASSERT_EQ(d.size(), 2u);
  EXPECT_GE(d[0], 0.0);
  EXPECT_THROW(dump_attention(teacher, a, b, pair, 3, 0), ConfigError);
}
