#include "virt/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "virt/error.hpp"

namespace virt {

namespace {

const std::map<std::string, std::string>& defaults() {
  static const std::map<std::string, std::string> table = {
      {"model.num_layers", "2"},
      {"model.hidden_dim", "32"},
      {"model.num_heads", "2"},
      {"model.ffn_dim", "64"},
      {"model.vocab_size", "64"},
      {"model.max_len_x", "12"},
      {"model.max_len_y", "12"},
      {"model.num_classes", "2"},
      {"model.use_segments", "true"},
      {"model.activation", "gelu"},
      {"model.attention_scale", "per_head"},
      {"student.fusion_dim", "0"},
      {"student.arm", "full"},
      {"data.task", "keymatch"},
      {"data.train_size", "8000"},
      {"data.dev_size", "2000"},
      {"data.min_len", "1"},
      {"data.max_len_x", "6"},
      {"data.max_len_y", "6"},
      {"data.seed", "1"},
      {"data.train_path", ""},
      {"data.dev_path", ""},
      {"data.vocab_path", ""},
      {"train.lr", "0.002"},
      {"train.warmup_ratio", "0.1"},
      {"train.batch_size", "28"},
      {"train.teacher_epochs", "30"},
      {"train.student_epochs", "15"},
      {"train.beta1", "0.9"},
      {"train.beta2", "0.999"},
      {"train.eps", "1e-08"},
      {"train.clip_norm", "1"},
      {"distill.alpha", "1"},
      {"distill.strategy", "all"},
      {"distill.teacher_map_mode", "renormalized"},
      {"distill.norm", "frobenius"},
      {"run.seeds", "1,2,3,4,5"},
      {"run.teacher_checkpoint", ""},
      {"run.student_checkpoint", ""},
      {"run.baseline_checkpoint", ""},
      {"ablate.arms", "full,no_distill,no_adapted,neither"},
      {"ablate.strategies", "all,first:1,last:1,skip:2"},
      {"bench.candidates", "256"},
      {"bench.repetitions", "30"},
      {"bench.parallel", "false"},
      {"dump.layer", "1"},
      {"dump.head", "0"},
      {"dump.example", "0"},
  };
  return table;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc{} || ptr != end) {
    throw ConfigError("config key '" + key + "': cannot parse '" + text + "' as a number");
  }
  return value;
}

}  // namespace

RunConfig::RunConfig() : values_(defaults()) {}

void RunConfig::set(const std::string& key, const std::string& value) {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  it->second = value;
}

void RunConfig::apply_text(const std::string& text) {
  std::istringstream in(text);
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("config line needs key = value", line_no);
    set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

void RunConfig::apply_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  apply_text(buffer.str());
}

void RunConfig::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' needs key=value");
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

const std::string& RunConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

int RunConfig::get_int(const std::string& key) const { return parse_number<int>(key, get(key)); }

double RunConfig::get_double(const std::string& key) const {
  return parse_number<double>(key, get(key));
}

std::uint64_t RunConfig::get_u64(const std::string& key) const {
  return parse_number<std::uint64_t>(key, get(key));
}

bool RunConfig::get_bool(const std::string& key) const {
  const auto& v = get(key);
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config key '" + key + "': expected true/false, got '" + v + "'");
}

std::vector<std::string> RunConfig::get_list(const std::string& key) const {
  std::vector<std::string> out;
  std::istringstream in(get(key));
  for (std::string item; std::getline(in, item, ',');) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string RunConfig::to_text() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
  return out;
}

std::string format_double(double value) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, end);
}

std::string to_string(Activation activation) {
  return activation == Activation::Gelu ? "gelu" : "relu";
}

std::string to_string(AttentionScale scale) {
  return scale == AttentionScale::PerHead ? "per_head" : "hidden";
}

std::string to_string(TeacherMapMode mode) {
  return mode == TeacherMapMode::Renormalized ? "renormalized" : "fullrow_subblock";
}

std::string to_string(DistanceNorm norm) {
  return norm == DistanceNorm::Frobenius ? "frobenius" : "squared_frobenius";
}

std::string to_string(InteractionMode mode) {
  return mode == InteractionMode::Adapted ? "adapted" : "siamese";
}

InteractionMode parse_interaction(const std::string& text) {
  if (text == "adapted") return InteractionMode::Adapted;
  if (text == "siamese") return InteractionMode::Siamese;
  throw ConfigError("unknown interaction mode '" + text + "'");
}

std::map<std::string, std::string> encoder_entries(const EncoderConfig& c) {
  return {
      {"model.num_layers", std::to_string(c.num_layers)},
      {"model.hidden_dim", std::to_string(c.hidden_dim)},
      {"model.num_heads", std::to_string(c.num_heads)},
      {"model.ffn_dim", std::to_string(c.ffn_dim)},
      {"model.vocab_size", std::to_string(c.vocab_size)},
      {"model.max_len_x", std::to_string(c.max_len_x)},
      {"model.max_len_y", std::to_string(c.max_len_y)},
      {"model.num_classes", std::to_string(c.num_classes)},
      {"model.use_segments", c.use_segments ? "true" : "false"},
      {"model.activation", to_string(c.activation)},
      {"model.attention_scale", to_string(c.attention_scale)},
  };
}

EncoderConfig encoder_from_entries(const std::map<std::string, std::string>& entries) {
  EncoderConfig c;
  auto text = [&](const std::string& key) -> const std::string* {
    auto it = entries.find(key);
    return it == entries.end() ? nullptr : &it->second;
  };
  auto integer = [&](const std::string& key, int& field) {
    if (const auto* v = text(key)) field = parse_number<int>(key, *v);
  };
  integer("model.num_layers", c.num_layers);
  integer("model.hidden_dim", c.hidden_dim);
  integer("model.num_heads", c.num_heads);
  integer("model.ffn_dim", c.ffn_dim);
  integer("model.vocab_size", c.vocab_size);
  integer("model.max_len_x", c.max_len_x);
  integer("model.max_len_y", c.max_len_y);
  integer("model.num_classes", c.num_classes);
  if (const auto* v = text("model.use_segments")) {
    if (*v != "true" && *v != "false") throw ConfigError("model.use_segments must be true/false");
    c.use_segments = *v == "true";
  }
  if (const auto* v = text("model.activation")) {
    if (*v == "gelu") {
      c.activation = Activation::Gelu;
    } else if (*v == "relu") {
      c.activation = Activation::Relu;
    } else {
      throw ConfigError("model.activation must be gelu or relu");
    }
  }
  if (const auto* v = text("model.attention_scale")) {
    if (*v == "per_head") {
      c.attention_scale = AttentionScale::PerHead;
    } else if (*v == "hidden") {
      c.attention_scale = AttentionScale::Hidden;
    } else {
      throw ConfigError("model.attention_scale must be per_head or hidden");
    }
  }
  c.validate();
  return c;
}

EncoderConfig encoder_config(const RunConfig& config) { return encoder_from_entries(config.entries()); }

StudentOptions student_options(const RunConfig& config) {
  StudentOptions o;
  o.fusion_dim = config.get_int("student.fusion_dim");
  if (o.fusion_dim < 0) throw ConfigError("student.fusion_dim must be >= 0");
  o.interaction = arm_interaction(parse_arm(config.get("student.arm")));
  return o;
}

DistillConfig distill_config(const RunConfig& config) {
  DistillConfig d;
  d.alpha = config.get_double("distill.alpha");
  if (!(d.alpha >= 0.0)) throw ConfigError("distill.alpha must be >= 0");
  d.strategy = LayerStrategy::parse(config.get("distill.strategy"));
  const auto& mode = config.get("distill.teacher_map_mode");
  if (mode == "renormalized") {
    d.teacher_map_mode = TeacherMapMode::Renormalized;
  } else if (mode == "fullrow_subblock") {
    d.teacher_map_mode = TeacherMapMode::FullRowSubblock;
  } else {
    throw ConfigError("distill.teacher_map_mode must be renormalized or fullrow_subblock");
  }
  const auto& norm = config.get("distill.norm");
  if (norm == "frobenius") {
    d.norm = DistanceNorm::Frobenius;
  } else if (norm == "squared_frobenius") {
    d.norm = DistanceNorm::SquaredFrobenius;
  } else {
    throw ConfigError("distill.norm must be frobenius or squared_frobenius");
  }
  return d;
}

GeneratorOptions generator_options(const RunConfig& config) {
  GeneratorOptions g;
  g.min_len = config.get_int("data.min_len");
  g.max_len_x = config.get_int("data.max_len_x");
  g.max_len_y = config.get_int("data.max_len_y");
  return g;
}

namespace {

Hyper base_hyper(const RunConfig& config, std::uint64_t seed, int epochs) {
  Hyper h;
  h.lr = config.get_double("train.lr");
  h.warmup_ratio = config.get_double("train.warmup_ratio");
  h.batch_size = config.get_int("train.batch_size");
  h.epochs = epochs;
  h.beta1 = config.get_double("train.beta1");
  h.beta2 = config.get_double("train.beta2");
  h.eps = config.get_double("train.eps");
  h.clip_norm = config.get_double("train.clip_norm");
  h.seed = seed;
  h.validate();
  return h;
}

}  // namespace

Hyper teacher_hyper(const RunConfig& config, std::uint64_t seed) {
  return base_hyper(config, seed, config.get_int("train.teacher_epochs"));
}

Hyper student_hyper(const RunConfig& config, std::uint64_t seed) {
  return base_hyper(config, seed, config.get_int("train.student_epochs"));
}

}  // namespace virt
