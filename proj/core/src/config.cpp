#include "blockdrop/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace blockdrop {

using nlohmann::json;

void DatasetConfig::validate() const {
  if (kind != "synthetic" && kind != "cifar10")
    throw ValueError("dataset.kind must be synthetic or cifar10, got " + kind);
  if (kind == "synthetic") {
    if (train_n < 8 || test_n < 8)
      throw ValueError("synthetic splits need at least 8 records");
    if (train_n % 8 != 0 || test_n % 8 != 0)
      throw ValueError("synthetic split sizes must be multiples of 8 "
                       "(exact class and difficulty balance)");
  } else if (dir.empty()) {
    throw ValueError("dataset.dir is required for cifar10");
  }
}

void PretrainConfig::validate() const {
  if (epochs < 0) throw ValueError("pretrain.epochs must be >= 0");
  if (!(lr > 0.0f)) throw ValueError("pretrain.lr must be > 0");
  if (batch < 1) throw ValueError("pretrain.batch must be >= 1");
}

void RunConfig::validate() const {
  dataset.validate();
  pretrain.validate();
  reward.validate();
  schedule.validate();
  if (policy.classes != backbone.block_count())
    throw ValueError("policy output dimension " +
                     std::to_string(policy.classes) +
                     " does not match backbone block count " +
                     std::to_string(backbone.block_count()));
  if (workers < 1) throw ValueError("workers must be >= 1");
  if (out.empty()) throw ValueError("output directory must be set");
}

namespace {

json spec_to_json(const BackboneSpec& s) {
  json j;
  j["family"] = family_name(s.family);
  j["in_channels"] = s.in_channels;
  j["height"] = s.height;
  j["width"] = s.width;
  j["base_channels"] = s.base_channels;
  j["input_dim"] = s.input_dim;
  j["hidden"] = s.hidden;
  j["segments"] = s.segments;
  j["blocks_per_segment"] = s.blocks_per_segment;
  j["classes"] = s.classes;
  return j;
}

json config_to_json(const RunConfig& c) {
  json j;
  j["dataset"] = {{"kind", c.dataset.kind},
                  {"train_n", c.dataset.train_n},
                  {"test_n", c.dataset.test_n},
                  {"dir", c.dataset.dir}};
  j["backbone"] = spec_to_json(c.backbone);
  j["policy"] = spec_to_json(c.policy);
  j["pretrain"] = {{"epochs", c.pretrain.epochs},
                   {"lr", c.pretrain.lr},
                   {"batch", c.pretrain.batch}};
  j["reward"] = {{"gamma", c.reward.gamma}};
  j["schedule"] = {{"curriculum_epochs", c.schedule.curriculum_epochs},
                   {"finetune_epochs", c.schedule.finetune_epochs},
                   {"alpha", c.schedule.alpha},
                   {"lr_curriculum", c.schedule.lr_curriculum},
                   {"lr_finetune", c.schedule.lr_finetune},
                   {"batch_curriculum", c.schedule.batch_curriculum},
                   {"batch_finetune", c.schedule.batch_finetune},
                   {"lambda", c.schedule.lambda}};
  j["seed"] = c.seed;
  j["out"] = c.out;
  j["workers"] = c.workers;
  return j;
}

void check_keys(const json& j, const char* where,
                std::initializer_list<const char*> allowed) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : allowed)
      if (it.key() == k) { ok = true; break; }
    if (!ok)
      throw ValueError(std::string("unknown config key ") + where + "." +
                       it.key());
  }
}

template <class T>
void take(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

void spec_from_json(const json& j, const char* where, BackboneSpec& s) {
  check_keys(j, where,
             {"family", "in_channels", "height", "width", "base_channels",
              "input_dim", "hidden", "segments", "blocks_per_segment",
              "classes"});
  if (j.contains("family")) s.family = family_from_name(j.at("family"));
  take(j, "in_channels", s.in_channels);
  take(j, "height", s.height);
  take(j, "width", s.width);
  take(j, "base_channels", s.base_channels);
  take(j, "input_dim", s.input_dim);
  take(j, "hidden", s.hidden);
  take(j, "segments", s.segments);
  take(j, "blocks_per_segment", s.blocks_per_segment);
  take(j, "classes", s.classes);
}

}  // namespace

RunConfig default_desk_config() {
  RunConfig c;
  c.backbone = BackboneSpec{};  // conv, 1x16x16, 3x5 blocks, 4 classes
  c.backbone.base_channels = 8;
  c.dataset.train_n = 256;
  c.dataset.test_n = 256;
  c.pretrain.epochs = 30;
  c.pretrain.batch = 32;
  c.policy.family = Family::Mlp;
  c.policy.in_channels = 1;
  c.policy.height = 16;
  c.policy.width = 16;
  c.policy.input_dim = 256;
  c.policy.hidden = 16;
  c.policy.segments = 1;
  c.policy.blocks_per_segment = 3;
  c.policy.classes = c.backbone.block_count();
  c.schedule.curriculum_epochs = 40;
  c.schedule.finetune_epochs = 15;
  c.schedule.batch_curriculum = 64;
  c.schedule.batch_finetune = 64;
  c.schedule.lr_curriculum = 3e-3f;
  c.schedule.lr_finetune = 3e-4f;
  return c;
}

RunConfig parse_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ValueError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ValueError("config root must be a JSON object");
  check_keys(j, "",
             {"dataset", "backbone", "policy", "pretrain", "reward",
              "schedule", "seed", "out", "workers"});
  RunConfig c = default_desk_config();
  if (j.contains("dataset")) {
    const json& d = j.at("dataset");
    check_keys(d, "dataset", {"kind", "train_n", "test_n", "dir"});
    take(d, "kind", c.dataset.kind);
    take(d, "train_n", c.dataset.train_n);
    take(d, "test_n", c.dataset.test_n);
    take(d, "dir", c.dataset.dir);
  }
  if (j.contains("backbone"))
    spec_from_json(j.at("backbone"), "backbone", c.backbone);
  bool policy_given = j.contains("policy");
  if (policy_given) spec_from_json(j.at("policy"), "policy", c.policy);
  // the policy head always sizes itself to the backbone unless pinned
  if (!policy_given || !j.at("policy").contains("classes"))
    c.policy.classes = c.backbone.block_count();
  if (j.contains("pretrain")) {
    const json& p = j.at("pretrain");
    check_keys(p, "pretrain", {"epochs", "lr", "batch"});
    take(p, "epochs", c.pretrain.epochs);
    take(p, "lr", c.pretrain.lr);
    take(p, "batch", c.pretrain.batch);
  }
  if (j.contains("reward")) {
    const json& r = j.at("reward");
    check_keys(r, "reward", {"gamma"});
    take(r, "gamma", c.reward.gamma);
  }
  if (j.contains("schedule")) {
    const json& s = j.at("schedule");
    check_keys(s, "schedule",
               {"curriculum_epochs", "finetune_epochs", "alpha",
                "lr_curriculum", "lr_finetune", "batch_curriculum",
                "batch_finetune", "lambda"});
    take(s, "curriculum_epochs", c.schedule.curriculum_epochs);
    take(s, "finetune_epochs", c.schedule.finetune_epochs);
    take(s, "alpha", c.schedule.alpha);
    take(s, "lr_curriculum", c.schedule.lr_curriculum);
    take(s, "lr_finetune", c.schedule.lr_finetune);
    take(s, "batch_curriculum", c.schedule.batch_curriculum);
    take(s, "batch_finetune", c.schedule.batch_finetune);
    take(s, "lambda", c.schedule.lambda);
  }
  take(j, "seed", c.seed);
  take(j, "out", c.out);
  take(j, "workers", c.workers);
  return c;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

std::string RunConfig::to_json() const {
  return config_to_json(*this).dump(2) + "\n";
}

std::string RunConfig::run_id() const {
  std::string text = config_to_json(*this).dump();
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(h));
  return std::string(buf);
}

void save_effective_config(const RunConfig& cfg, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write config file: " + path);
  out << cfg.to_json();
}

}  // namespace blockdrop
