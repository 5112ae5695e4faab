#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "virt/data.hpp"
#include "virt/distillation.hpp"
#include "virt/dual_encoder.hpp"
#include "virt/train.hpp"
#include "virt/transformer.hpp"

namespace virt {

/// Flat dotted-key configuration. Every key is known up front with a default;
/// setting an unknown key is a ConfigError.
class RunConfig {
 public:
  RunConfig();

  void set(const std::string& key, const std::string& value);
  // `key = value` lines; blank lines and `#` comments are ignored.
  void apply_text(const std::string& text);
  void apply_file(const std::filesystem::path& path);
  // A single `key=value` override as given on the command line.
  void apply_override(const std::string& assignment);

  const std::string& get(const std::string& key) const;
  int get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;
  // Comma-separated list; empty entries are dropped.
  std::vector<std::string> get_list(const std::string& key) const;

  const std::map<std::string, std::string>& entries() const { return values_; }
  // Sorted `key = value` lines, accepted back by apply_text.
  std::string to_text() const;

 private:
  std::map<std::string, std::string> values_;
};

std::map<std::string, std::string> encoder_entries(const EncoderConfig& config);
// Reads the `model.*` keys; missing keys keep EncoderConfig defaults.
EncoderConfig encoder_from_entries(const std::map<std::string, std::string>& entries);

EncoderConfig encoder_config(const RunConfig& config);
StudentOptions student_options(const RunConfig& config);
DistillConfig distill_config(const RunConfig& config);
GeneratorOptions generator_options(const RunConfig& config);
Hyper teacher_hyper(const RunConfig& config, std::uint64_t seed);
Hyper student_hyper(const RunConfig& config, std::uint64_t seed);

std::string to_string(Activation activation);
std::string to_string(AttentionScale scale);
std::string to_string(TeacherMapMode mode);
std::string to_string(DistanceNorm norm);
std::string to_string(InteractionMode mode);
InteractionMode parse_interaction(const std::string& text);

// Shortest text that parses back to exactly the same double.
std::string format_double(double value);

}  // namespace virt
