#include "rvsa/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

namespace rvsa {

namespace {

constexpr const char* kMagic = "RVSA-CKPT 1";

bool is_pcm_kernel_name(const std::string& name) {
  return name.find(".pcm.conv") != std::string::npos &&
         name.size() > 7 && name.rfind(".weight") == name.size() - 7;
}

bool padding_compatible(const Shape& from, const Shape& to) {
  return from.size() == 4 && to.size() == 4 && from[0] == to[0] && from[1] == to[1] &&
         from[2] == 1 && from[3] == 1 && to[2] == 3 && to[3] == 3;
}

}  // namespace

void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, Tensor*>>& state,
                     ModelMode mode) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  out << kMagic << "\n";
  out << "mode " << (mode == ModelMode::kPretrain ? "pretrain" : "finetune") << "\n";
  out << "tensors " << state.size() << "\n";
  std::size_t offset = 0;
  for (const auto& [name, t] : state) {
    out << name << " " << t->rank();
    for (int d : t->shape()) out << " " << d;
    out << " " << offset << "\n";
    offset += t->numel() * sizeof(double);
  }
  out << "DATA\n";
  for (const auto& [name, t] : state)
    out.write(reinterpret_cast<const char*>(t->data()),
              static_cast<std::streamsize>(t->numel() * sizeof(double)));
  if (!out) throw std::runtime_error("write failed: " + path);
}

namespace {

struct RawCheckpoint {
  ModelMode mode;
  std::vector<std::pair<std::string, Tensor>> tensors;
};

RawCheckpoint read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  std::string line;
  std::getline(in, line);
  if (line != kMagic) throw std::runtime_error("not a checkpoint file: " + path);
  RawCheckpoint ck;
  std::getline(in, line);
  {
    std::istringstream ls(line);
    std::string key, value;
    ls >> key >> value;
    if (key != "mode" || (value != "pretrain" && value != "finetune"))
      throw std::runtime_error("checkpoint: bad mode line");
    ck.mode = value == "pretrain" ? ModelMode::kPretrain : ModelMode::kFinetune;
  }
  std::getline(in, line);
  std::size_t count;
  {
    std::istringstream ls(line);
    std::string key;
    ls >> key >> count;
    if (key != "tensors") throw std::runtime_error("checkpoint: bad tensors line");
  }
  std::vector<std::pair<std::string, Shape>> entries;
  for (std::size_t i = 0; i < count; ++i) {
    std::getline(in, line);
    std::istringstream ls(line);
    std::string name;
    int rank;
    ls >> name >> rank;
    Shape shape(static_cast<std::size_t>(rank));
    for (int d = 0; d < rank; ++d) ls >> shape[static_cast<std::size_t>(d)];
    std::size_t offset;
    ls >> offset;
    if (!ls) throw std::runtime_error("checkpoint: bad manifest entry: " + line);
    entries.emplace_back(name, shape);
  }
  std::getline(in, line);
  if (line != "DATA") throw std::runtime_error("checkpoint: missing DATA marker");
  for (auto& [name, shape] : entries) {
    Tensor t(shape);
    in.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(t.numel() * sizeof(double)));
    if (!in) throw std::runtime_error("checkpoint: truncated data section");
    ck.tensors.emplace_back(name, std::move(t));
  }
  return ck;
}

}  // namespace

CheckpointManifest read_manifest(const std::string& path) {
  RawCheckpoint ck = read_checkpoint(path);
  CheckpointManifest m;
  m.mode = ck.mode;
  for (auto& [name, t] : ck.tensors) m.entries.emplace_back(name, t.shape());
  return m;
}

void load_checkpoint(const std::string& path, Model& model) {
  RawCheckpoint ck = read_checkpoint(path);
  std::unordered_map<std::string, Tensor*> dst;
  for (auto& [name, t] : model.state()) dst[name] = t;
  for (auto& [name, t] : ck.tensors) {
    auto it = dst.find(name);
    if (it == dst.end()) continue;  // e.g. decoder tensors in an encoder model
    Tensor* target = it->second;
    if (t.shape() == target->shape()) {
      *target = t;
    } else if (ck.mode == ModelMode::kPretrain && model.mode == ModelMode::kFinetune &&
               is_pcm_kernel_name(name) && padding_compatible(t.shape(), target->shape())) {
      *target = pad_pcm_kernel(t);
    } else {
      throw std::runtime_error("checkpoint: shape mismatch for " + name + ": file has " +
                               shape_str(t.shape()) + ", model expects " +
                               shape_str(target->shape()));
    }
  }
}

void copy_matching_state(Model& src, Model& dst) {
  std::unordered_map<std::string, Tensor*> index;
  for (auto& [name, t] : dst.state()) index[name] = t;
  for (auto& [name, t] : src.state()) {
    auto it = index.find(name);
    if (it == index.end()) continue;
    if (t->shape() == it->second->shape())
      *it->second = *t;
    else if (is_pcm_kernel_name(name) && padding_compatible(t->shape(), it->second->shape()))
      *it->second = pad_pcm_kernel(*t);
    else
      throw std::runtime_error("copy_matching_state: shape mismatch for " + name);
  }
}

}  // namespace rvsa
