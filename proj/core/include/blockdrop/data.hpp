#pragma once

#include <string>
#include <vector>

#include "blockdrop/tensor.hpp"

namespace blockdrop {

enum class DifficultyTag { None, Easy, Hard };

struct DatasetRecord {
  Tensor image;  // [C,H,W], values in [0,1]
  int label = 0;
  DifficultyTag tag = DifficultyTag::None;
};

struct Dataset {
  std::vector<DatasetRecord> records;
  int classes = 0;
  int channels = 0, height = 0, width = 0;

  int size() const { return static_cast<int>(records.size()); }
  int input_dim() const { return channels * height * width; }
};

// CIFAR-10 binary batches: 3073-byte records, 1 label byte + 3072 pixel
// bytes (1024 R, 1024 G, 1024 B, row-major), pixels scaled to [0,1].
std::pair<Dataset, Dataset> load_cifar10(const std::string& dir);

// Parses one binary batch file (exposed for format tests).
std::vector<DatasetRecord> parse_cifar_batch(const std::string& path);

// Deterministic 16x16 single-channel set with planted difficulty: 4 template
// classes (horizontal bar, vertical bar, diagonal, disk); easy = clean
// template + sigma 0.05 noise, hard = occluding distractors + sigma 0.2.
// Classes and tags are exactly balanced.
Dataset generate_synthetic(int n, uint64_t seed);

// Stacks records into a batch tensor: [B,C,H,W], or [B,C*H*W] when flattened.
Tensor stack_batch(const Dataset& ds, const std::vector<int>& indices,
                   bool flatten);

std::vector<int> batch_labels(const Dataset& ds,
                              const std::vector<int>& indices);

// Single-record batch of one: [1,C,H,W], or [1,C*H*W] when flattened.
Tensor record_input(const DatasetRecord& rec, bool flatten);

}  // namespace blockdrop
