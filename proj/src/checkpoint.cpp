#include "cirtf/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>

namespace cirtf {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are raw little-endian floats");

using nlohmann::json;

namespace {

constexpr char kMagic[7] = {'C', 'I', 'R', 'T', 'F', '0', '1'};

void write_u32(std::ofstream& f, uint32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); }
void write_u64(std::ofstream& f, uint64_t v) { f.write(reinterpret_cast<const char*>(&v), 8); }

void read_exact(std::ifstream& f, void* dst, size_t bytes, const char* what) {
  f.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(bytes));
  if (static_cast<size_t>(f.gcount()) != bytes) {
    throw Error(Errc::truncated_file, std::string("checkpoint: truncated ") + what);
  }
}

}  // namespace

json model_config_to_json(const ModelConfig& cfg) {
  return json{{"d_model", cfg.d_model}, {"n_blocks", cfg.n_blocks}, {"n_heads", cfg.n_heads},
              {"d_ff", cfg.d_ff},       {"p_drop", cfg.p_drop},     {"l_s", cfg.l_s},
              {"n_an", cfg.n_an},       {"conv_kernel", cfg.conv_kernel}};
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig cfg;
  try {
    cfg.d_model = j.at("d_model").get<int>();
    cfg.n_blocks = j.at("n_blocks").get<int>();
    cfg.n_heads = j.at("n_heads").get<int>();
    cfg.d_ff = j.at("d_ff").get<int>();
    cfg.p_drop = j.at("p_drop").get<double>();
    cfg.l_s = j.at("l_s").get<int>();
    cfg.n_an = j.at("n_an").get<int>();
    cfg.conv_kernel = j.at("conv_kernel").get<int>();
  } catch (const json::exception& e) {
    throw Error(Errc::config, std::string("model config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary);
    if (!f) throw Error(Errc::runtime, "cannot write " + path);
    f.write(kMagic, sizeof(kMagic));

    json blob{{"model", model_config_to_json(ckpt.cfg)}, {"meta", ckpt.meta}};
    const std::string js = blob.dump();
    write_u32(f, static_cast<uint32_t>(js.size()));
    f.write(js.data(), static_cast<std::streamsize>(js.size()));

    write_u64(f, ckpt.tensors.size());
    for (const auto& [name, data] : ckpt.tensors) {
      write_u32(f, static_cast<uint32_t>(name.size()));
      f.write(name.data(), static_cast<std::streamsize>(name.size()));
      write_u64(f, data.size());
    }
    for (const auto& [name, data] : ckpt.tensors) {
      f.write(reinterpret_cast<const char*>(data.data()),
              static_cast<std::streamsize>(data.size() * sizeof(float)));
    }
    if (!f) throw Error(Errc::runtime, "write failed for " + path);
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::string& path) {
  if (!std::filesystem::exists(path)) throw Error(Errc::not_found, "no checkpoint at " + path);
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(Errc::not_found, "cannot open " + path);

  char magic[sizeof(kMagic)] = {};
  f.read(magic, sizeof(kMagic));
  if (!f || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw Error(Errc::bad_magic, "checkpoint: bad magic");
  }

  uint32_t json_len = 0;
  read_exact(f, &json_len, 4, "header");
  std::string js(json_len, '\0');
  read_exact(f, js.data(), json_len, "config blob");

  Checkpoint ckpt;
  json blob = json::parse(js, nullptr, false);
  if (blob.is_discarded() || !blob.contains("model")) {
    throw Error(Errc::config, "checkpoint: malformed config blob");
  }
  ckpt.cfg = model_config_from_json(blob.at("model"));
  ckpt.meta = blob.value("meta", json::object());

  uint64_t count = 0;
  read_exact(f, &count, 8, "tensor count");
  ckpt.tensors.resize(count);
  for (auto& [name, data] : ckpt.tensors) {
    uint32_t name_len = 0;
    read_exact(f, &name_len, 4, "name table");
    name.resize(name_len);
    read_exact(f, name.data(), name_len, "name table");
    uint64_t size = 0;
    read_exact(f, &size, 8, "name table");
    data.resize(size);
  }
  for (auto& [name, data] : ckpt.tensors) {
    read_exact(f, data.data(), data.size() * sizeof(float), "tensor payload");
  }
  return ckpt;
}

Checkpoint checkpoint_from_params(ParamSet<float>& params, json meta) {
  Checkpoint ckpt;
  ckpt.cfg = params.cfg;
  ckpt.meta = std::move(meta);
  for (const auto& t : params.tensors()) {
    ckpt.tensors.emplace_back(t.name, std::vector<float>(t.data, t.data + t.size));
  }
  return ckpt;
}

ParamSet<float> params_from_checkpoint(const Checkpoint& ckpt) {
  auto params = ParamSet<float>::zeros(ckpt.cfg);
  for (auto& t : params.tensors()) {
    const std::vector<float>* src = ckpt.find(t.name);
    if (src == nullptr) {
      throw Error(Errc::not_found, "checkpoint: missing tensor " + t.name);
    }
    if (static_cast<Eigen::Index>(src->size()) != t.size) {
      throw Error(Errc::shape_mismatch, "checkpoint: wrong size for tensor " + t.name);
    }
    std::memcpy(t.data, src->data(), src->size() * sizeof(float));
  }
  return params;
}

}  // namespace cirtf
