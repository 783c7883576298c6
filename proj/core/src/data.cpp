#include "blockdrop/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "blockdrop/rng.hpp"

namespace blockdrop {

namespace {
constexpr int kCifarRecordBytes = 3073;
constexpr int kCifarPlane = 1024;
}  // namespace

std::vector<DatasetRecord> parse_cifar_batch(const std::string& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw IoError("cannot open CIFAR batch file: " + path);
  int64_t size = static_cast<int64_t>(in.tellg());
  if (size % kCifarRecordBytes != 0)
    throw IoError("CIFAR format error in " + path + ": file size " +
                  std::to_string(size) + " is not a multiple of " +
                  std::to_string(kCifarRecordBytes) +
                  " (truncated at offset " +
                  std::to_string(size - size % kCifarRecordBytes) + ")");
  in.seekg(0);
  int64_t n = size / kCifarRecordBytes;
  std::vector<DatasetRecord> out;
  out.reserve(n);
  std::vector<unsigned char> buf(kCifarRecordBytes);
  for (int64_t r = 0; r < n; ++r) {
    if (!in.read(reinterpret_cast<char*>(buf.data()), kCifarRecordBytes))
      throw IoError("CIFAR read error in " + path + " at offset " +
                    std::to_string(r * kCifarRecordBytes));
    if (buf[0] > 9)
      throw IoError("CIFAR format error in " + path + ": label byte " +
                    std::to_string(buf[0]) + " at offset " +
                    std::to_string(r * kCifarRecordBytes));
    DatasetRecord rec;
    rec.label = buf[0];
    rec.image = Tensor::zeros({3, 32, 32});
    float* p = rec.image.ptr();
    for (int c = 0; c < 3; ++c)
      for (int i = 0; i < kCifarPlane; ++i)
        p[c * kCifarPlane + i] =
            static_cast<float>(buf[1 + c * kCifarPlane + i]) / 255.0f;
    out.push_back(std::move(rec));
  }
  return out;
}

std::pair<Dataset, Dataset> load_cifar10(const std::string& dir) {
  Dataset train, test;
  train.classes = test.classes = 10;
  train.channels = test.channels = 3;
  train.height = test.height = train.width = test.width = 32;
  for (int i = 1; i <= 5; ++i) {
    auto recs =
        parse_cifar_batch(dir + "/data_batch_" + std::to_string(i) + ".bin");
    for (auto& r : recs) train.records.push_back(std::move(r));
  }
  test.records = parse_cifar_batch(dir + "/test_batch.bin");
  return {std::move(train), std::move(test)};
}

namespace {

void paint_template(float* img, int cls) {
  auto at = [&](int r, int c) -> float& { return img[r * 16 + c]; };
  switch (cls) {
    case 0:  // horizontal bar
      for (int r = 6; r <= 9; ++r)
        for (int c = 1; c < 15; ++c) at(r, c) = 1.0f;
      break;
    case 1:  // vertical bar
      for (int r = 1; r < 15; ++r)
        for (int c = 6; c <= 9; ++c) at(r, c) = 1.0f;
      break;
    case 2:  // diagonal stripe
      for (int r = 0; r < 16; ++r)
        for (int c = 0; c < 16; ++c)
          if (std::abs(r - c) <= 1) at(r, c) = 1.0f;
      break;
    case 3:  // disk
      for (int r = 0; r < 16; ++r)
        for (int c = 0; c < 16; ++c) {
          float dr = r - 7.5f, dc = c - 7.5f;
          if (dr * dr + dc * dc <= 20.0f) at(r, c) = 1.0f;
        }
      break;
  }
}

void paint_distractors(float* img, Rng& rng) {
  auto at = [&](int r, int c) -> float& { return img[r * 16 + c]; };
  // two bright distractor bars at random positions and orientations
  for (int d = 0; d < 2; ++d) {
    bool horiz = rng.bernoulli(0.5);
    int pos = rng.uniform_int(16);
    int start = rng.uniform_int(10);
    int len = 5 + rng.uniform_int(6);
    float v = 0.6f + 0.4f * static_cast<float>(rng.uniform());
    for (int i = start; i < std::min(16, start + len); ++i)
      if (horiz)
        at(pos, i) = v;
      else
        at(i, pos) = v;
  }
  // occluding dark patch
  int pr = rng.uniform_int(11), pc = rng.uniform_int(11);
  for (int r = pr; r < pr + 5; ++r)
    for (int c = pc; c < pc + 5; ++c) at(r, c) = 0.0f;
}

}  // namespace

Dataset generate_synthetic(int n, uint64_t seed) {
  if (n < 8) throw ValueError("synthetic dataset needs n >= 8");
  Dataset ds;
  ds.classes = 4;
  ds.channels = 1;
  ds.height = ds.width = 16;
  Rng root(seed);
  for (int i = 0; i < n; ++i) {
    int cls = i % 4;
    bool easy = (i / 4) % 2 == 0;
    Rng rng = root.fork(static_cast<uint64_t>(i) + 1);
    DatasetRecord rec;
    rec.label = cls;
    rec.tag = easy ? DifficultyTag::Easy : DifficultyTag::Hard;
    rec.image = Tensor::zeros({1, 16, 16});
    float* img = rec.image.ptr();
    double sigma = easy ? 0.05 : 0.2;
    if (easy) {
      paint_template(img, cls);
    } else {
      // random cyclic shift: shape and orientation survive (a conv net with
      // pooled features can still classify) but pixel positions vary, which
      // defeats a linear read-out on raw pixels
      float canon[256] = {0};
      paint_template(canon, cls);
      int dr = rng.uniform_int(16), dc = rng.uniform_int(16);
      for (int r = 0; r < 16; ++r)
        for (int c = 0; c < 16; ++c)
          img[((r + dr) % 16) * 16 + (c + dc) % 16] = canon[r * 16 + c];
      paint_distractors(img, rng);
    }
    for (int j = 0; j < 256; ++j) {
      float v = img[j] + static_cast<float>(rng.normal() * sigma);
      img[j] = std::clamp(v, 0.0f, 1.0f);
    }
    ds.records.push_back(std::move(rec));
  }
  return ds;
}

Tensor stack_batch(const Dataset& ds, const std::vector<int>& indices,
                   bool flatten) {
  int B = static_cast<int>(indices.size());
  int64_t per = ds.input_dim();
  Tensor out = flatten
                   ? Tensor::zeros({B, static_cast<int>(per)})
                   : Tensor::zeros({B, ds.channels, ds.height, ds.width});
  for (int b = 0; b < B; ++b) {
    const Tensor& img = ds.records.at(indices[b]).image;
    std::copy(img.ptr(), img.ptr() + per, out.ptr() + b * per);
  }
  return out;
}

Tensor record_input(const DatasetRecord& rec, bool flatten) {
  const Shape& s = rec.image.shape;
  Tensor out = flatten
                   ? Tensor::zeros({1, static_cast<int>(numel(s))})
                   : Tensor::zeros({1, s[0], s[1], s[2]});
  std::copy(rec.image.ptr(), rec.image.ptr() + numel(s), out.ptr());
  return out;
}

std::vector<int> batch_labels(const Dataset& ds,
                              const std::vector<int>& indices) {
  std::vector<int> out(indices.size());
  for (size_t i = 0; i < indices.size(); ++i)
    out[i] = ds.records.at(indices[i]).label;
  return out;
}

}  // namespace blockdrop
