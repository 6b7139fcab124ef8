#include "nona/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>

#include "nona/errors.hpp"

namespace nona {

namespace {

using nlohmann::json;

const char* const kManifest = "manifest.json";

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("failed writing " + path.string());
}

}  // namespace

void write_tensor_blob(const std::filesystem::path& path, const Tensor& t) {
  std::string bytes(t.size() * 8, '\0');
  for (std::size_t i = 0; i < t.size(); ++i) {
    const auto bits = std::bit_cast<std::uint64_t>(t[i]);
    for (std::size_t b = 0; b < 8; ++b) bytes[i * 8 + b] = static_cast<char>((bits >> (8 * b)) & 0xFF);
  }
  write_text(path, bytes);
}

Tensor read_tensor_blob(const std::filesystem::path& path, const Shape& shape) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("checkpoint tensor file missing: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string bytes = ss.str();
  const std::size_t n = shape_size(shape);
  if (bytes.size() != n * 8) {
    throw ConfigError("checkpoint tensor " + path.string() + " holds " + std::to_string(bytes.size()) +
                      " bytes, expected " + std::to_string(n * 8));
  }
  std::vector<double> data(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::uint64_t bits = 0;
    for (std::size_t b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[i * 8 + b])) << (8 * b);
    data[i] = std::bit_cast<double>(bits);
  }
  return Tensor(shape, std::move(data));
}

void save_checkpoint(const std::filesystem::path& dir, const Model& model, const ExperimentConfig& config,
                     const CheckpointMeta& meta) {
  std::filesystem::create_directories(dir);
  json tensors = json::array();
  const auto add = [&](const std::string& name, const Tensor& t) {
    const std::string file = name + ".bin";
    write_tensor_blob(dir / file, t);
    tensors.push_back({{"name", name}, {"shape", t.shape()}, {"file", file}});
  };
  for (const Parameter* p : model.parameters()) add(p->name, p->value);
  if (model.config().head == HeadKind::Nona && model.nona().has_neighbor_bank()) {
    add("bank.embeddings", model.nona().neighbor_bank().embeddings);
    add("bank.labels", model.nona().neighbor_bank().labels);
  }
  const json manifest{{"format_version", kFormatVersion},
                      {"config", config_to_json(config)},
                      {"best_epoch", meta.best_epoch},
                      {"best_val_mse", meta.best_val_mse},
                      {"tensors", tensors}};
  write_text(dir / kManifest, manifest.dump(2) + "\n");
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream in(dir / kManifest, std::ios::binary);
  if (!in) throw ConfigError("no checkpoint manifest in " + dir.string());
  json manifest;
  try {
    manifest = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("checkpoint manifest is not valid JSON: " + std::string(e.what()));
  }
  try {
    if (manifest.at("format_version").get<int>() != kFormatVersion) {
      throw ConfigError("unsupported checkpoint format_version");
    }
    ExperimentConfig config = config_from_json(manifest.at("config"));
    CheckpointMeta meta{manifest.at("best_epoch").get<std::size_t>(), manifest.at("best_val_mse").get<double>()};

    std::map<std::string, Tensor> stored;
    for (const json& entry : manifest.at("tensors")) {
      const Shape shape = entry.at("shape").get<Shape>();
      stored.emplace(entry.at("name").get<std::string>(), read_tensor_blob(dir / entry.at("file").get<std::string>(), shape));
    }

    Model model(config.model, 0);
    for (Parameter* p : model.parameters()) {
      const auto it = stored.find(p->name);
      if (it == stored.end()) throw ConfigError("checkpoint lacks tensor " + p->name);
      if (!it->second.same_shape(p->value)) throw ConfigError("checkpoint tensor " + p->name + " has the wrong shape");
      p->value = it->second;
    }
    if (config.model.head == HeadKind::Nona) {
      const auto e = stored.find("bank.embeddings");
      const auto l = stored.find("bank.labels");
      if (e != stored.end() && l != stored.end()) model.nona().set_neighbor_bank(e->second, l->second);
    }
    return LoadedCheckpoint{std::move(config), std::move(model), meta};
  } catch (const json::exception& e) {
    throw ConfigError("malformed checkpoint manifest: " + std::string(e.what()));
  }
}

}  // namespace nona
