#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "virt/cross_encoder.hpp"
#include "virt/dual_encoder.hpp"

namespace virt {

/// Textual header followed by a raw payload:
///
///   VIRTCKPT 1
///   config <key>=<value>
///   tensor <name> <d0>x<d1>... <offset> <count>
///   end
///   <little-endian float64 values, row-major, concatenated>
///
/// Offsets and counts are in elements. Serialization is deterministic, so
/// save → load → save reproduces the file byte for byte.
struct Checkpoint {
  std::map<std::string, std::string> config;
  std::vector<NamedParameter> tensors;

  const std::string& get(const std::string& key) const;
  const Tensor& tensor(const std::string& name) const;
};

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint parse_checkpoint(std::string_view bytes);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

Checkpoint to_checkpoint(const CrossEncoder& teacher);
Checkpoint to_checkpoint(const DualEncoder& student);

// Copies checkpoint values into `params`. Names and shapes must match one to
// one; the first offending tensor is named in the CheckpointError.
void restore_parameters(const ParameterList& params, const Checkpoint& ckpt);

CrossEncoder load_teacher(const Checkpoint& ckpt);
DualEncoder load_student(const Checkpoint& ckpt);

// Offline candidate embeddings: final hidden states of independently encoded
// sides, stored in the checkpoint container.
Checkpoint cache_to_checkpoint(std::span<const EncodedSide> entries);
std::vector<EncodedSide> cache_from_checkpoint(const Checkpoint& ckpt);

}  // namespace virt
