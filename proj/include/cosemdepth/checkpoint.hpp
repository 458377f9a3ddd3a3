#pragma once

#include <map>
#include <string>

#include "cosemdepth/net.hpp"

namespace cosemdepth {

// Self-describing checkpoint container, format version 1:
//   magic "CSDCKPT1", u32 header length, JSON header (arch config, mode,
//   epoch, metrics, fingerprint, array index), then one raw little-endian
//   float64 blob per parameter in index order.
struct Checkpoint {
  ArchConfig arch;
  ModelMode mode = ModelMode::kJoint;
  int epoch = 0;
  std::map<std::string, double> metrics;  // validation metrics by name
  std::string fingerprint;
  ParamStore params;

  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);
  static Checkpoint from_model(const CoSemDepthModel& model, int epoch,
                               std::map<std::string, double> metrics = {});
  CoSemDepthModel to_model() const;

  // Order-stable content hash of the serialized bytes.
  std::string content_hash() const;
};

}  // namespace cosemdepth
