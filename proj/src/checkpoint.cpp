#include "virt/checkpoint.hpp"

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>

#include "virt/config.hpp"
#include "virt/error.hpp"

namespace virt {

namespace {

constexpr std::string_view kMagic = "VIRTCKPT 1";

std::string dims_text(const Shape& shape) {
  std::string out;
  for (std::size_t i = 0; i < shape.size(); ++i) out += (i ? "x" : "") + std::to_string(shape[i]);
  return out;
}

std::size_t parse_size(std::string_view text, const std::string& context) {
  std::size_t value = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || ptr != text.data() + text.size() || text.empty()) {
    throw CheckpointError(context + ": bad number '" + std::string(text) + "'");
  }
  return value;
}

Shape parse_dims(std::string_view text, const std::string& context) {
  Shape shape;
  std::size_t start = 0;
  while (true) {
    const auto x = text.find('x', start);
    shape.push_back(parse_size(text.substr(start, x - start), context));
    if (x == std::string_view::npos) break;
    start = x + 1;
  }
  return shape;
}

void put_le(std::string& out, double value) {
  auto bits = std::bit_cast<std::uint64_t>(value);
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xFF));
}

double get_le(const char* p) {
  std::uint64_t bits = 0;
  for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[b])) << (8 * b);
  return std::bit_cast<double>(bits);
}

void check_token(const std::string& text, const std::string& what) {
  if (text.empty() || text.find_first_of(" \t\n\r") != std::string::npos) {
    throw CheckpointError(what + " '" + text + "' must be non-empty without whitespace");
  }
}

}  // namespace

const std::string& Checkpoint::get(const std::string& key) const {
  auto it = config.find(key);
  if (it == config.end()) throw CheckpointError("checkpoint lacks config key '" + key + "'");
  return it->second;
}

const Tensor& Checkpoint::tensor(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return t.tensor;
  throw CheckpointError("checkpoint lacks tensor '" + name + "'");
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  std::string header(kMagic);
  header += '\n';
  for (const auto& [key, value] : ckpt.config) {
    check_token(key, "config key");
    if (value.find('\n') != std::string::npos) throw CheckpointError("config value has a newline");
    header += "config " + key + "=" + value + "\n";
  }
  std::size_t offset = 0;
  std::string payload;
  for (const auto& [name, tensor] : ckpt.tensors) {
    check_token(name, "tensor name");
    header += "tensor " + name + " " + dims_text(tensor.shape()) + " " + std::to_string(offset) +
              " " + std::to_string(tensor.numel()) + "\n";
    offset += tensor.numel();
    for (double v : tensor.data()) put_le(payload, v);
  }
  header += "end\n";
  return header + payload;
}

Checkpoint parse_checkpoint(std::string_view bytes) {
  Checkpoint ckpt;
  std::size_t pos = 0;
  auto next_line = [&]() -> std::string_view {
    const auto nl = bytes.find('\n', pos);
    if (nl == std::string_view::npos) throw CheckpointError("header is not terminated by 'end'");
    auto line = bytes.substr(pos, nl - pos);
    pos = nl + 1;
    return line;
  };
  if (next_line() != kMagic) throw CheckpointError("not a checkpoint (bad magic line)");

  struct Entry {
    std::string name;
    Shape shape;
    std::size_t offset, count;
  };
  std::vector<Entry> entries;
  std::size_t expected_offset = 0;
  for (std::string_view line = next_line(); line != "end"; line = next_line()) {
    if (line.starts_with("config ")) {
      auto kv = line.substr(7);
      const auto eq = kv.find('=');
      if (eq == std::string_view::npos) throw CheckpointError("malformed config line");
      ckpt.config[std::string(kv.substr(0, eq))] = std::string(kv.substr(eq + 1));
      continue;
    }
    if (!line.starts_with("tensor ")) {
      throw CheckpointError("unexpected header line '" + std::string(line) + "'");
    }
    std::istringstream fields{std::string(line.substr(7))};
    std::string name, dims, offset, count, extra;
    if (!(fields >> name >> dims >> offset >> count) || (fields >> extra)) {
      throw CheckpointError("malformed tensor line '" + std::string(line) + "'");
    }
    const std::string context = "tensor '" + name + "'";
    Entry e{name, parse_dims(dims, context), parse_size(offset, context), parse_size(count, context)};
    if (e.count != shape_numel(e.shape)) {
      throw CheckpointError(context + ": declared count " + std::to_string(e.count) +
                            " does not match shape " + shape_string(e.shape));
    }
    if (e.offset != expected_offset) {
      throw CheckpointError(context + ": offset " + std::to_string(e.offset) + ", expected " +
                            std::to_string(expected_offset));
    }
    for (const auto& prior : entries)
      if (prior.name == name) throw CheckpointError(context + " appears twice");
    expected_offset += e.count;
    entries.push_back(std::move(e));
  }

  const std::size_t available = (bytes.size() - pos) / 8;
  for (const auto& e : entries) {
    if (e.offset + e.count > available) {
      throw CheckpointError("truncated payload: tensor '" + e.name + "' needs elements [" +
                            std::to_string(e.offset) + ", " + std::to_string(e.offset + e.count) +
                            ") but only " + std::to_string(available) + " are present");
    }
  }
  if (bytes.size() - pos != expected_offset * 8) {
    throw CheckpointError("payload has " + std::to_string(bytes.size() - pos) +
                          " bytes, header declares " + std::to_string(expected_offset * 8));
  }
  const char* base = bytes.data() + pos;
  for (const auto& e : entries) {
    std::vector<double> values(e.count);
    for (std::size_t i = 0; i < e.count; ++i) values[i] = get_le(base + 8 * (e.offset + i));
    ckpt.tensors.push_back({e.name, Tensor(e.shape, std::move(values))});
  }
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const std::string bytes = serialize_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("missing checkpoint " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_checkpoint(buffer.str());
}

namespace {

Checkpoint model_checkpoint(const std::string& kind, const EncoderConfig& config,
                            const ParameterList& params) {
  Checkpoint ckpt;
  ckpt.config = encoder_entries(config);
  ckpt.config["kind"] = kind;
  for (const auto& p : params) ckpt.tensors.push_back({p.name, p.tensor.detach()});
  return ckpt;
}

}  // namespace

Checkpoint to_checkpoint(const CrossEncoder& teacher) {
  return model_checkpoint("teacher", teacher.config(), teacher.parameters());
}

Checkpoint to_checkpoint(const DualEncoder& student) {
  Checkpoint ckpt = model_checkpoint("student", student.config(), student.parameters());
  ckpt.config["student.fusion_dim"] = std::to_string(student.options().fusion_dim);
  ckpt.config["student.interaction"] = to_string(student.options().interaction);
  return ckpt;
}

void restore_parameters(const ParameterList& params, const Checkpoint& ckpt) {
  for (const auto& stored : ckpt.tensors) {
    bool known = false;
    for (const auto& p : params) known = known || p.name == stored.name;
    if (!known) throw CheckpointError("unknown tensor name '" + stored.name + "'");
  }
  for (const auto& p : params) {
    const Tensor* found = nullptr;
    for (const auto& stored : ckpt.tensors)
      if (stored.name == p.name) found = &stored.tensor;
    if (!found) throw CheckpointError("checkpoint lacks tensor '" + p.name + "'");
    if (found->shape() != p.tensor.shape()) {
      throw CheckpointError("tensor '" + p.name + "': shape " + shape_string(found->shape()) +
                            " does not match model shape " + shape_string(p.tensor.shape()));
    }
  }
  for (const auto& p : params) {
    Tensor target = p.tensor;
    auto src = ckpt.tensor(p.name).data();
    std::copy(src.begin(), src.end(), target.mutable_data().begin());
  }
}

CrossEncoder load_teacher(const Checkpoint& ckpt) {
  if (ckpt.get("kind") != "teacher") throw CheckpointError("checkpoint is not a teacher");
  std::mt19937_64 rng(0);
  CrossEncoder model(encoder_from_entries(ckpt.config), rng);
  restore_parameters(model.parameters(), ckpt);
  return model;
}

DualEncoder load_student(const Checkpoint& ckpt) {
  if (ckpt.get("kind") != "student") throw CheckpointError("checkpoint is not a student");
  StudentOptions options;
  const auto& fusion = ckpt.get("student.fusion_dim");
  options.fusion_dim = static_cast<int>(parse_size(fusion, "student.fusion_dim"));
  options.interaction = parse_interaction(ckpt.get("student.interaction"));
  std::mt19937_64 rng(0);
  DualEncoder model(encoder_from_entries(ckpt.config), options, rng);
  restore_parameters(model.parameters(), ckpt);
  return model;
}

Checkpoint cache_to_checkpoint(std::span<const EncodedSide> entries) {
  Checkpoint ckpt;
  ckpt.config["kind"] = "embedding-cache";
  ckpt.config["count"] = std::to_string(entries.size());
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    if (e.length != e.hidden.rows()) {
      throw ContractError("embedding cache stores unpadded sides only");
    }
    ckpt.tensors.push_back({"entry" + std::to_string(i), e.hidden.detach()});
  }
  return ckpt;
}

std::vector<EncodedSide> cache_from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.get("kind") != "embedding-cache") throw CheckpointError("not an embedding cache");
  const std::size_t count = parse_size(ckpt.get("count"), "count");
  if (count != ckpt.tensors.size()) throw CheckpointError("embedding cache count mismatch");
  std::vector<EncodedSide> out;
  for (std::size_t i = 0; i < count; ++i) {
    const Tensor& h = ckpt.tensor("entry" + std::to_string(i));
    if (h.rank() != 2) throw CheckpointError("tensor 'entry" + std::to_string(i) + "' is not a matrix");
    out.push_back(EncodedSide{h, h.rows(), {}});
  }
  return out;
}

}  // namespace virt
