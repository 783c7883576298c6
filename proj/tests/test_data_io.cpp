#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "blockdrop/checkpoint.hpp"
#include "blockdrop/config.hpp"
#include "blockdrop/data.hpp"
#include "blockdrop/trainer.hpp"

using namespace blockdrop;
namespace fs = std::filesystem;

namespace {

std::string temp_dir() {
  std::string d = (fs::temp_directory_path() / "bd_data_io_test").string();
  fs::create_directories(d);
  return d;
}

std::vector<uint8_t> make_cifar_record(uint8_t label, uint8_t fill) {
  std::vector<uint8_t> rec(3073, fill);
  rec[0] = label;
  return rec;
}

void write_bytes(const std::string& path, const std::vector<uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_CASE("crafted cifar batch parses with expected labels and scaling") {
  std::string dir = temp_dir();
  std::string path = dir + "/two_records.bin";
  std::vector<uint8_t> bytes = make_cifar_record(3, 255);
  std::vector<uint8_t> second = make_cifar_record(9, 0);
  second[1] = 128;  // first red pixel of record 2
  bytes.insert(bytes.end(), second.begin(), second.end());
  write_bytes(path, bytes);

  auto recs = parse_cifar_batch(path);
  REQUIRE(recs.size() == 2);
  CHECK(recs[0].label == 3);
  CHECK(recs[1].label == 9);
  CHECK(recs[0].tag == DifficultyTag::None);
  CHECK(recs[0].image.shape == Shape{3, 32, 32});
  CHECK(recs[0].image[0] == 1.0f);  // byte 255 -> exactly 1.0
  CHECK(recs[1].image[0] == doctest::Approx(128.0f / 255.0f));
  CHECK(recs[1].image[1] == 0.0f);
}

TEST_CASE("truncated cifar batch names the offset") {
  std::string dir = temp_dir();
  std::string path = dir + "/truncated.bin";
  std::vector<uint8_t> bytes = make_cifar_record(1, 7);
  bytes.resize(3073 + 100);  // one full record plus a ragged tail
  write_bytes(path, bytes);
  try {
    parse_cifar_batch(path);
    FAIL("expected IoError");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("3073") != std::string::npos);
  }
}

TEST_CASE("label byte above 9 is a format error") {
  std::string dir = temp_dir();
  std::string path = dir + "/badlabel.bin";
  write_bytes(path, make_cifar_record(10, 0));
  CHECK_THROWS_AS(parse_cifar_batch(path), IoError);
}

TEST_CASE("synthetic data is deterministic and exactly balanced") {
  Dataset a = generate_synthetic(64, 5);
  Dataset b = generate_synthetic(64, 5);
  Dataset c = generate_synthetic(64, 6);
  REQUIRE(a.size() == 64);
  CHECK(a.classes == 4);
  CHECK(a.channels == 1);
  CHECK(a.height == 16);
  CHECK(a.width == 16);

  bool same = true, diff = false;
  for (int i = 0; i < 64; ++i) {
    if (*a.records[i].image.data != *b.records[i].image.data) same = false;
    if (*a.records[i].image.data != *c.records[i].image.data) diff = true;
  }
  CHECK(same);
  CHECK(diff);

  std::vector<int> per_class(4, 0);
  int easy = 0;
  for (const DatasetRecord& r : a.records) {
    REQUIRE(r.label < 4);
    ++per_class[r.label];
    REQUIRE(r.tag != DifficultyTag::None);
    if (r.tag == DifficultyTag::Easy) ++easy;
    for (float v : *r.image.data) {
      CHECK(v >= 0.0f);
      CHECK(v <= 1.0f);
    }
  }
  CHECK(per_class == std::vector<int>{16, 16, 16, 16});
  CHECK(easy == 32);
  CHECK_THROWS_AS(generate_synthetic(4, 1), ValueError);
}

TEST_CASE("a linear classifier separates easy but not hard variants") {
  // Held-out accuracy: with 256 features a probe can memorize any small
  // training set, so the gap only shows on fresh samples.
  Dataset train_pool = generate_synthetic(640, 11);
  Dataset test_pool = generate_synthetic(640, 12);
  auto fit_and_score = [](const Dataset& tr, const Dataset& te) {
    Parameter w{"w", Tensor::zeros({tr.input_dim(), tr.classes})};
    Parameter b{"b", Tensor::zeros({tr.classes})};
    Adam opt(AdamConfig{.lr = 0.05f});
    std::vector<int> idx(tr.size());
    for (int i = 0; i < tr.size(); ++i) idx[i] = i;
    Tensor x = stack_batch(tr, idx, true);
    std::vector<int> y = batch_labels(tr, idx);
    for (int step = 0; step < 150; ++step) {
      Tape tape;
      Tensor logits = linear(x, tape.leaf(w.value, &w), tape.leaf(b.value, &b));
      Tensor loss = softmax_cross_entropy(logits, y);
      tape.backward(loss);
      Gradients g;
      g.accumulate_from(tape, {&w, &b});
      opt.step({&w, &b}, g);
    }
    std::vector<int> tidx(te.size());
    for (int i = 0; i < te.size(); ++i) tidx[i] = i;
    Tensor logits = linear(stack_batch(te, tidx, true), w.value, b.value);
    auto preds = argmax_rows(logits);
    std::vector<int> ty = batch_labels(te, tidx);
    double correct = 0;
    for (size_t i = 0; i < preds.size(); ++i)
      if (preds[i] == ty[i]) ++correct;
    return correct / preds.size();
  };

  auto split_by_tag = [](const Dataset& full) {
    Dataset easy, hard;
    easy.classes = hard.classes = full.classes;
    easy.channels = hard.channels = full.channels;
    easy.height = hard.height = full.height;
    easy.width = hard.width = full.width;
    for (const DatasetRecord& r : full.records)
      (r.tag == DifficultyTag::Easy ? easy : hard).records.push_back(r);
    return std::pair(easy, hard);
  };
  auto [easy_tr, hard_tr] = split_by_tag(train_pool);
  auto [easy_te, hard_te] = split_by_tag(test_pool);

  double easy_acc = fit_and_score(easy_tr, easy_te);
  double hard_acc = fit_and_score(hard_tr, hard_te);
  MESSAGE("linear probe accuracy: easy " << easy_acc << " hard " << hard_acc);
  CHECK(easy_acc >= 0.99);
  CHECK(hard_acc < 0.90);
}

TEST_CASE("checkpoint round-trip is byte-identical") {
  std::string dir = temp_dir();
  BackboneSpec spec;
  spec.family = Family::Mlp;
  spec.input_dim = 6;
  spec.hidden = 5;
  spec.segments = 1;
  spec.blocks_per_segment = 2;
  spec.classes = 3;
  GatedBackbone net(spec, 7);

  std::string p1 = dir + "/a.ckpt", p2 = dir + "/b.ckpt";
  save_checkpoint(net, p1);
  GatedBackbone net2(spec, 8);  // different init, fully overwritten by load
  load_checkpoint(net2, p1);
  auto pa = net.params(), pb = net2.params();
  REQUIRE(pa.size() == pb.size());
  for (size_t i = 0; i < pa.size(); ++i)
    CHECK(*pa[i]->value.data == *pb[i]->value.data);
  save_checkpoint(net2, p2);

  std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
  std::string s1((std::istreambuf_iterator<char>(f1)), {});
  std::string s2((std::istreambuf_iterator<char>(f2)), {});
  CHECK(s1 == s2);

  CheckpointInfo info = read_checkpoint_info(p1);
  CHECK(info.kind == "backbone");
  CHECK(info.descriptor == spec.descriptor());
  CHECK(info.version == 1);
}

TEST_CASE("a flipped payload byte fails the checksum") {
  std::string dir = temp_dir();
  BackboneSpec spec;
  spec.family = Family::Mlp;
  spec.input_dim = 4;
  spec.hidden = 4;
  spec.segments = 1;
  spec.blocks_per_segment = 1;
  spec.classes = 2;
  GatedBackbone net(spec, 3);
  std::string path = dir + "/flip.ckpt";
  save_checkpoint(net, path);

  std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
  f.seekg(0, std::ios::end);
  auto size = static_cast<int64_t>(f.tellg());
  f.seekp(size / 2);
  char c;
  f.seekg(size / 2);
  f.read(&c, 1);
  c ^= 0x01;
  f.seekp(size / 2);
  f.write(&c, 1);
  f.close();

  GatedBackbone other(spec, 4);
  CHECK_THROWS_AS(load_checkpoint(other, path), IoError);
}

TEST_CASE("loading a checkpoint into the wrong model kind is refused") {
  std::string dir = temp_dir();
  BackboneSpec spec;
  spec.family = Family::Mlp;
  spec.input_dim = 4;
  spec.hidden = 4;
  spec.segments = 1;
  spec.blocks_per_segment = 2;
  spec.classes = 2;
  PolicyNetwork pn(spec, 5);
  std::string path = dir + "/policy.ckpt";
  save_checkpoint(pn, path);

  GatedBackbone bb(spec, 6);
  CHECK_THROWS_AS(load_checkpoint(bb, path), IoError);
}

TEST_CASE("stack_batch shapes") {
  Dataset ds = generate_synthetic(8, 3);
  Tensor planar = stack_batch(ds, {0, 1, 2}, false);
  CHECK(planar.shape == Shape{3, 1, 16, 16});
  Tensor flat = stack_batch(ds, {0, 1}, true);
  CHECK(flat.shape == Shape{2, 256});
  Tensor one = record_input(ds.records[0], true);
  CHECK(one.shape == Shape{1, 256});
  for (int i = 0; i < 256; ++i) CHECK(one[i] == flat[i]);
}
