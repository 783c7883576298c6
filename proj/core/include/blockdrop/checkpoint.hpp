#pragma once

#include <string>

#include "blockdrop/model.hpp"

namespace blockdrop {

struct CheckpointInfo {
  uint8_t version = 0;
  std::string kind;
  std::string descriptor;
};

// File layout: "BDCK" magic, 1-byte version, length-prefixed model kind,
// length-prefixed architecture descriptor, parameter count, then per
// parameter: length-prefixed name, extent list, little-endian float32
// payload; trailing 64-bit FNV-1a checksum of all preceding bytes.
void save_checkpoint(const Model& model, const std::string& path);

// Reads the header only (to decide which model to construct).
CheckpointInfo read_checkpoint_info(const std::string& path);

// Loads into an existing model; kind, descriptor, parameter names and shapes
// must all match. Parameter payloads round-trip bitwise.
void load_checkpoint(Model& model, const std::string& path);

}  // namespace blockdrop
