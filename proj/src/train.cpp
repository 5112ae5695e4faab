#include "virt/train.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "virt/error.hpp"
#include "virt/ops.hpp"

namespace virt {

void Hyper::validate() const {
  if (!(lr > 0.0)) throw ConfigError("train.lr must be > 0");
  if (!(warmup_ratio >= 0.0 && warmup_ratio < 1.0)) {
    throw ConfigError("train.warmup_ratio must be in [0, 1)");
  }
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("Adam betas must be in [0, 1)");
  }
  if (!(eps > 0.0)) throw ConfigError("train.eps must be > 0");
}

double lr_schedule(std::size_t step, std::size_t total_steps, const Hyper& hyper) {
  if (total_steps == 0 || step < 1 || step > total_steps) {
    throw ContractError("lr_schedule: step " + std::to_string(step) + " outside 1.." +
                        std::to_string(total_steps));
  }
  const double total = static_cast<double>(total_steps);
  const double warm = hyper.warmup_ratio * total;
  const double s = static_cast<double>(step);
  if (s < warm) return hyper.lr * s / warm;
  if (total == warm) return hyper.lr;
  return hyper.lr * (total - s) / (total - warm);
}

void adam_step(const ParameterList& params, AdamState& state, std::size_t t, double lr,
               const Hyper& hyper) {
  if (t < 1) throw ContractError("adam_step: t must be >= 1");
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.tensor.numel(), 0.0);
      state.v.emplace_back(p.tensor.numel(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw DimensionError("adam_step: state/parameter count");
  for (const auto& p : params) {
    for (double g : p.tensor.grad()) {
      if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter " + p.name);
    }
  }
  const double c1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor theta = params[i].tensor;
    auto& m = state.m[i];
    auto& v = state.v[i];
    if (m.size() != theta.numel()) {
      throw DimensionError("adam_step: state shape for " + params[i].name);
    }
    auto g = theta.grad();
    auto w = theta.mutable_data();
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = g.empty() ? 0.0 : g[j];
      m[j] = hyper.beta1 * m[j] + (1.0 - hyper.beta1) * gj;
      v[j] = hyper.beta2 * v[j] + (1.0 - hyper.beta2) * gj * gj;
      w[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + hyper.eps);
    }
  }
}

double global_grad_norm(const ParameterList& params) {
  double sq = 0.0;
  for (const auto& p : params)
    for (double g : p.tensor.grad()) sq += g * g;
  return std::sqrt(sq);
}

double clip_gradients(const ParameterList& params, double max_norm) {
  const double norm = global_grad_norm(params);
  if (max_norm > 0.0 && norm > max_norm) {
    const double factor = max_norm / norm;
    for (const auto& p : params) {
      Tensor t = p.tensor;
      if (!t.has_grad()) continue;
      for (auto& g : t.grad_buffer()) g *= factor;
    }
  }
  return norm;
}

void zero_grads(const ParameterList& params) {
  for (const auto& p : params) {
    Tensor t = p.tensor;
    t.zero_grad();
  }
}

void MetricHistory::add(int epoch, const std::string& split, const std::string& metric,
                        double value) {
  records_.push_back({epoch, split, metric, value});
}

double MetricHistory::last(const std::string& split, const std::string& metric) const {
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
    if (it->split == split && it->metric == metric) return it->value;
  }
  throw ContractError("no metric " + split + "/" + metric + " recorded");
}

std::vector<double> MetricHistory::series(const std::string& split,
                                          const std::string& metric) const {
  std::vector<double> out;
  for (const auto& r : records_)
    if (r.split == split && r.metric == metric) out.push_back(r.value);
  return out;
}

std::string MetricHistory::to_csv() const {
  std::string out = "epoch,split,metric,value\n";
  char buf[64];
  for (const auto& r : records_) {
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, r.value);
    out += std::to_string(r.epoch) + "," + r.split + "," + r.metric + "," +
           std::string(buf, end) + "\n";
  }
  return out;
}

void MetricHistory::save_csv(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << to_csv();
}

double auc_roc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw DimensionError("auc_roc: scores/labels size");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  std::size_t positives = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t k = i; k < j; ++k) {
      const int label = labels[order[k]];
      if (label != 0 && label != 1) throw DataError("auc_roc: labels must be 0/1");
      if (label == 1) {
        rank_sum += midrank;
        ++positives;
      }
    }
    i = j;
  }
  const std::size_t negatives = scores.size() - positives;
  if (positives == 0 || negatives == 0) {
    throw UndefinedMetricError("AUC needs both classes; got " + std::to_string(positives) +
                               " positive and " + std::to_string(negatives) + " negative");
  }
  const double p = static_cast<double>(positives);
  return (rank_sum - p * (p + 1.0) / 2.0) / (p * static_cast<double>(negatives));
}

namespace {

template <typename LogitsFn>
EvalResult evaluate_with(std::span<const Example> data, int num_classes, LogitsFn logits_of) {
  NoGrad no_grad;
  EvalResult result;
  result.count = data.size();
  if (data.empty()) return result;
  std::vector<double> scores;
  std::vector<int> labels;
  std::size_t correct = 0;
  for (const auto& ex : data) {
    Tensor logits = logits_of(ex);
    auto values = logits.data();
    const auto pred = std::max_element(values.begin(), values.end()) - values.begin();
    if (pred == ex.label) ++correct;
    if (num_classes == 2) {
      scores.push_back(softmax_values(values)[1]);
      labels.push_back(ex.label);
    }
  }
  result.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
  if (num_classes == 2) {
    const bool both = std::any_of(labels.begin(), labels.end(), [](int l) { return l == 1; }) &&
                      std::any_of(labels.begin(), labels.end(), [](int l) { return l == 0; });
    if (both) {
      result.auc = auc_roc(scores, labels);
      result.has_auc = true;
    }
  }
  return result;
}

void record_eval(MetricHistory& history, int epoch, const EvalResult& r) {
  if (r.count == 0) return;
  history.add(epoch, "dev", "accuracy", r.accuracy);
  if (r.has_auc) history.add(epoch, "dev", "auc", r.auc);
}

std::size_t total_steps(std::size_t n, const Hyper& hyper) {
  const auto b = static_cast<std::size_t>(hyper.batch_size);
  return static_cast<std::size_t>(hyper.epochs) * ((n + b - 1) / b);
}

std::uint64_t epoch_seed(const Hyper& hyper, int epoch) {
  return hyper.seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(epoch);
}

void check_finite(double value, const std::string& what) {
  if (!std::isfinite(value)) throw NumericError("training diverged: " + what + " is non-finite");
}

}  // namespace

EvalResult evaluate(const CrossEncoder& teacher, std::span<const Example> data) {
  return evaluate_with(data, teacher.config().num_classes,
                       [&](const Example& ex) { return teacher.forward(ex.x, ex.y, false).logits; });
}

EvalResult evaluate(const DualEncoder& student, std::span<const Example> data) {
  return evaluate_with(data, student.config().num_classes,
                       [&](const Example& ex) { return student.forward(ex.x, ex.y, false).logits; });
}

std::string arm_name(Arm arm) {
  switch (arm) {
    case Arm::Full:
      return "full";
    case Arm::NoDistill:
      return "no_distill";
    case Arm::NoAdapted:
      return "no_adapted";
    case Arm::Neither:
      return "neither";
  }
  return "full";
}

Arm parse_arm(const std::string& name) {
  for (Arm a : {Arm::Full, Arm::NoDistill, Arm::NoAdapted, Arm::Neither})
    if (arm_name(a) == name) return a;
  throw ConfigError("unknown ablation arm '" + name + "'");
}

bool arm_distills(Arm arm) { return arm == Arm::Full || arm == Arm::NoAdapted; }

InteractionMode arm_interaction(Arm arm) {
  return arm == Arm::Full || arm == Arm::NoDistill ? InteractionMode::Adapted
                                                   : InteractionMode::Siamese;
}

TeacherResult train_teacher(const EncoderConfig& config, std::span<const Example> train,
                            std::span<const Example> dev, const Hyper& hyper) {
  hyper.validate();
  std::mt19937_64 rng(hyper.seed);
  TeacherResult result{CrossEncoder(config, rng), {}};
  const ParameterList params = result.model.parameters();
  AdamState adam;
  const std::size_t steps = total_steps(train.size(), hyper);
  std::size_t step = 0;
  for (int epoch = 1; epoch <= hyper.epochs; ++epoch) {
    double loss_sum = 0.0;
    for (const auto& batch :
         make_batches(train, static_cast<std::size_t>(hyper.batch_size), epoch_seed(hyper, epoch),
                      static_cast<std::size_t>(config.max_len_x),
                      static_cast<std::size_t>(config.max_len_y))) {
      zero_grads(params);
      const double inv = 1.0 / static_cast<double>(batch.size());
      for (std::size_t i = 0; i < batch.size(); ++i) {
        Tape tape;
        TapeRecording recording(tape);
        Tensor loss = cross_entropy(result.model.forward(batch.x(i), batch.y(i), false).logits,
                                    batch.labels[i]);
        check_finite(loss.item(), "teacher loss");
        loss_sum += loss.item();
        tape.backward(scale(loss, inv));
      }
      clip_gradients(params, hyper.clip_norm);
      ++step;
      adam_step(params, adam, step, lr_schedule(step, steps, hyper), hyper);
    }
    zero_grads(params);
    result.history.add(epoch, "train", "loss", loss_sum / static_cast<double>(train.size()));
    record_eval(result.history, epoch, evaluate(result.model, dev));
  }
  return result;
}

void check_compatible(const EncoderConfig& teacher, const EncoderConfig& student) {
  if (teacher.num_layers != student.num_layers || teacher.num_heads != student.num_heads ||
      teacher.hidden_dim != student.hidden_dim) {
    throw ConfigError("teacher (L=" + std::to_string(teacher.num_layers) +
                      ", h=" + std::to_string(teacher.num_heads) +
                      ", d=" + std::to_string(teacher.hidden_dim) + ") and student (L=" +
                      std::to_string(student.num_layers) + ", h=" +
                      std::to_string(student.num_heads) + ", d=" +
                      std::to_string(student.hidden_dim) + ") disagree");
  }
}

StudentResult train_student(const CrossEncoder* teacher, const EncoderConfig& config,
                            const StudentOptions& options, std::span<const Example> train,
                            std::span<const Example> dev, const DistillConfig& distill,
                            const Hyper& hyper, Arm arm) {
  hyper.validate();
  const bool distilling = arm_distills(arm) && distill.alpha != 0.0;
  std::vector<int> selected;
  if (teacher) check_compatible(teacher->config(), config);
  if (distilling) {
    if (!teacher) throw ContractError("train_student: arm " + arm_name(arm) + " needs a teacher");
    selected = select_layers(distill.strategy, config.num_layers);
  }
  StudentOptions opts = options;
  opts.interaction = arm_interaction(arm);
  std::mt19937_64 rng(hyper.seed);
  StudentResult result{DualEncoder(config, opts, rng), {}, 0};
  const ParameterList params = result.model.parameters();
  AdamState adam;
  const std::size_t steps = total_steps(train.size(), hyper);
  std::size_t step = 0;
  for (int epoch = 1; epoch <= hyper.epochs; ++epoch) {
    double task_sum = 0.0, virt_sum = 0.0;
    for (const auto& batch :
         make_batches(train, static_cast<std::size_t>(hyper.batch_size), epoch_seed(hyper, epoch),
                      static_cast<std::size_t>(config.max_len_x),
                      static_cast<std::size_t>(config.max_len_y))) {
      zero_grads(params);
      const double inv = 1.0 / static_cast<double>(batch.size());
      for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto x = batch.x(i);
        const auto y = batch.y(i);
        std::vector<CrossMaps> targets;
        if (distilling) {
          NoGrad no_grad;
          TeacherOutput t = teacher->forward(x, y, true);
          ++result.teacher_calls;
          for (const auto& part : t.partitions)
            targets.push_back(
                extract_target_maps(part, x.size(), y.size(), distill.teacher_map_mode));
        }
        Tape tape;
        TapeRecording recording(tape);
        StudentForward out = result.model.forward(x, y, distilling);
        Tensor task = cross_entropy(out.logits, batch.labels[i]);
        Tensor virt;
        if (distilling) {
          virt = virt_loss(out.virtual_maps, targets, x.size(), y.size(), selected, distill.norm);
          virt_sum += virt.item();
        }
        Tensor loss = combined_loss(task, virt, distill.alpha);
        task_sum += task.item();
        tape.backward(scale(loss, inv));
      }
      clip_gradients(params, hyper.clip_norm);
      ++step;
      adam_step(params, adam, step, lr_schedule(step, steps, hyper), hyper);
    }
    zero_grads(params);
    const double n = static_cast<double>(train.size());
    result.history.add(epoch, "train", "task_loss", task_sum / n);
    if (distilling) result.history.add(epoch, "train", "virt_loss", virt_sum / n);
    record_eval(result.history, epoch, evaluate(result.model, dev));
  }
  return result;
}

}  // namespace virt
