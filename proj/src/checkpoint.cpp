#include "prosynth/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "prosynth/tensor_io.hpp"

namespace ps {

void Checkpoint::put(const std::string& name, Mat tensor) {
  for (auto& [n, t] : tensors_)
    if (n == name) {
      t = std::move(tensor);
      return;
    }
  tensors_.emplace_back(name, std::move(tensor));
}

bool Checkpoint::has(const std::string& name) const {
  for (const auto& [n, t] : tensors_)
    if (n == name) return true;
  return false;
}

const Mat& Checkpoint::get(const std::string& name) const {
  for (const auto& [n, t] : tensors_)
    if (n == name) return t;
  throw StateError("checkpoint: missing tensor " + name);
}

void Checkpoint::save(const std::string& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ArgumentError("checkpoint: cannot open for write: " + path);
  os.write("PSCK", 4);
  const std::uint32_t schema = kSchemaVersion;
  os.write(reinterpret_cast<const char*>(&schema), 4);
  const std::string meta = metadata.dump();
  const std::uint64_t meta_len = meta.size();
  os.write(reinterpret_cast<const char*>(&meta_len), 8);
  os.write(meta.data(), static_cast<std::streamsize>(meta.size()));
  const std::uint32_t count = static_cast<std::uint32_t>(tensors_.size());
  os.write(reinterpret_cast<const char*>(&count), 4);
  for (const auto& [name, tensor] : tensors_) {
    const std::uint32_t len = static_cast<std::uint32_t>(name.size());
    os.write(reinterpret_cast<const char*>(&len), 4);
    os.write(name.data(), len);
    write_tensor(os, tensor);
  }
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ArgumentError("checkpoint: cannot open for read: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "PSCK", 4) != 0)
    throw ParseError("checkpoint: bad magic in " + path);
  std::uint32_t schema = 0;
  is.read(reinterpret_cast<char*>(&schema), 4);
  if (schema != kSchemaVersion)
    throw ParseError("checkpoint: unsupported schema version " +
                     std::to_string(schema));
  std::uint64_t meta_len = 0;
  is.read(reinterpret_cast<char*>(&meta_len), 8);
  std::string meta(meta_len, '\0');
  is.read(meta.data(), static_cast<std::streamsize>(meta_len));
  Checkpoint ckpt;
  ckpt.metadata = nlohmann::ordered_json::parse(meta);
  std::uint32_t count = 0;
  is.read(reinterpret_cast<char*>(&count), 4);
  for (std::uint32_t i = 0; i < count; ++i) {
    std::uint32_t len = 0;
    is.read(reinterpret_cast<char*>(&len), 4);
    std::string name(len, '\0');
    is.read(name.data(), len);
    Mat tensor = read_tensor(is);
    if (!is) throw ParseError("checkpoint: truncated tensor section");
    ckpt.tensors_.emplace_back(std::move(name), std::move(tensor));
  }
  return ckpt;
}

void Checkpoint::put_registry(const std::string& prefix,
                              const nn::ParamRegistry& reg, bool with_optimizer) {
  for (const nn::Parameter* p : reg.all()) {
    put(prefix + "." + p->name, p->value);
    if (with_optimizer && p->trainable) {
      put(prefix + "." + p->name + ".adam_m", p->adam_m);
      put(prefix + "." + p->name + ".adam_v", p->adam_v);
    }
  }
}

void Checkpoint::load_registry(const std::string& prefix,
                               nn::ParamRegistry& reg) const {
  for (nn::Parameter* p : reg.all()) {
    const Mat& v = get(prefix + "." + p->name);
    if (v.rows() != p->value.rows() || v.cols() != p->value.cols())
      throw StateError("checkpoint: shape mismatch for " + prefix + "." + p->name);
    p->value = v;
    if (has(prefix + "." + p->name + ".adam_m")) {
      p->adam_m = get(prefix + "." + p->name + ".adam_m");
      p->adam_v = get(prefix + "." + p->name + ".adam_v");
    }
  }
}

}  // namespace ps
