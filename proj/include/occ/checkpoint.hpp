#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "occ/adam.hpp"
#include "occ/config.hpp"
#include "occ/layers.hpp"
#include "occ/models.hpp"

namespace occ {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

struct OptimizerRecord {
  std::string name;
  AdamState state;
};

/// Everything needed to rebuild a trained model: settings (task, model
/// configs, mean pixel, rng and counters) as config text, every parameter
/// and buffer, and the optimizer moments.
struct Checkpoint {
  Config meta;
  std::vector<NamedTensor> tensors;
  std::vector<OptimizerRecord> optimizers;

  std::string task() const { return meta.get_string("task", ""); }
  const Tensor& tensor(const std::string& name) const;
};

// File layout: "DFK1", u32 version, three u64-length-prefixed sections
// (config text, tensor table, optimizer table), trailing CRC-32; all little-endian.
std::string encode_checkpoint(const Checkpoint& checkpoint);
Checkpoint decode_checkpoint(const std::string& bytes, const std::string& origin = "<memory>");
void checkpoint_save(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint checkpoint_load(const std::filesystem::path& path);

// Throws TaskMismatchError unless the checkpoint was written for `task`.
void require_task(const Checkpoint& checkpoint, const std::string& task);

// Copies every store entry (parameters and buffers) as prefix + name.
void export_store(const ParamStore& store, const std::string& prefix, Checkpoint& checkpoint);
// Overwrites every store entry from the checkpoint; missing names or shape changes throw.
void import_store(ParamStore& store, const std::string& prefix, const Checkpoint& checkpoint);

void write_config(Config& meta, const OccNetConfig& c);
void write_config(Config& meta, const GeneratorConfig& c);
void write_config(Config& meta, const DiscriminatorConfig& c);
OccNetConfig read_occnet_config(const Config& meta);
GeneratorConfig read_generator_config(const Config& meta);
DiscriminatorConfig read_discriminator_config(const Config& meta);

// Keys read by the functions above.
const std::vector<std::string>& model_config_keys();

}  // namespace occ
