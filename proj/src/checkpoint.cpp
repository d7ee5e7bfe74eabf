#include "latte/checkpoint.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>

namespace fs = std::filesystem;

namespace latte {

using nlohmann::json;

namespace {

void write_f32_file(const std::string& path, const Tensor& t) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path);
  std::vector<float> buf(static_cast<size_t>(t.numel()));
  auto d = t.data();
  for (size_t i = 0; i < buf.size(); ++i) buf[i] = static_cast<float>(d[static_cast<int64_t>(i)]);
  f.write(reinterpret_cast<const char*>(buf.data()),
          static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (!f) throw IoError("short write to " + path);
}

Tensor read_f32_file(const std::string& path, const Shape& shape) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read " + path);
  Tensor t = Tensor::zeros(shape);
  std::vector<float> buf(static_cast<size_t>(t.numel()));
  f.read(reinterpret_cast<char*>(buf.data()),
         static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (!f || f.gcount() != static_cast<std::streamsize>(buf.size() * sizeof(float))) {
    throw IoError("truncated array file " + path);
  }
  auto d = t.data();
  for (size_t i = 0; i < buf.size(); ++i) d[static_cast<int64_t>(i)] = buf[i];
  return t;
}

}  // namespace

void save_checkpoint(const std::string& dir, json manifest,
                     const std::vector<std::pair<std::string, Tensor>>& arrays) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create checkpoint dir " + dir + ": " + ec.message());
  json index = json::array();
  for (const auto& [name, t] : arrays) {
    json entry;
    entry["name"] = name;
    entry["shape"] = t.shape();
    index.push_back(entry);
    write_f32_file((fs::path(dir) / (name + ".f32")).string(), t);
  }
  manifest["format"] = 1;
  manifest["arrays"] = std::move(index);
  std::ofstream f((fs::path(dir) / "manifest.json").string());
  if (!f) throw IoError("cannot write manifest in " + dir);
  f << manifest.dump(2) << "\n";
  if (!f) throw IoError("short manifest write in " + dir);
}

CheckpointData load_checkpoint(const std::string& dir) {
  std::ifstream f((fs::path(dir) / "manifest.json").string());
  if (!f) throw IoError("no manifest.json in " + dir);
  CheckpointData out;
  try {
    f >> out.manifest;
  } catch (const json::exception& e) {
    throw IoError("bad manifest in " + dir + ": " + e.what());
  }
  if (!out.manifest.contains("arrays")) throw IoError("manifest lacks array index: " + dir);
  for (const auto& entry : out.manifest["arrays"]) {
    const std::string name = entry.at("name").get<std::string>();
    Shape shape = entry.at("shape").get<Shape>();
    out.arrays.emplace(name, read_f32_file((fs::path(dir) / (name + ".f32")).string(), shape));
  }
  return out;
}

void restore_arrays(const CheckpointData& ckpt,
                    const std::vector<std::pair<std::string, Tensor>>& dst) {
  for (const auto& [name, t] : dst) {
    auto it = ckpt.arrays.find(name);
    if (it == ckpt.arrays.end()) throw IoError("checkpoint is missing array '" + name + "'");
    if (it->second.shape() != t.shape()) {
      throw IoError("checkpoint array '" + name + "' has shape " +
                    shape_str(it->second.shape()) + ", expected " + shape_str(t.shape()));
    }
    Tensor dst_t = t;
    std::copy(it->second.data().begin(), it->second.data().end(), dst_t.data().begin());
  }
}

}  // namespace latte
