#include "cosemdepth/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

namespace cosemdepth {

using nlohmann::json;

namespace {
constexpr char kMagic[8] = {'C', 'S', 'D', 'C', 'K', 'P', 'T', '1'};

std::string serialize(const Checkpoint& ckpt) {
  json header;
  header["format_version"] = 1;
  header["arch"] = json::parse(ckpt.arch.to_json());
  header["mode"] = mode_name(ckpt.mode);
  header["epoch"] = ckpt.epoch;
  header["metrics"] = ckpt.metrics;
  header["fingerprint"] = ckpt.fingerprint;
  json index = json::array();
  for (const auto& [name, t] : ckpt.params.tensors)
    index.push_back({{"name", name}, {"shape", t.shape()}});
  header["params"] = index;
  const std::string htext = header.dump();

  std::string out;
  out.append(kMagic, sizeof(kMagic));
  const std::uint32_t hlen = static_cast<std::uint32_t>(htext.size());
  out.append(reinterpret_cast<const char*>(&hlen), 4);
  out.append(htext);
  for (const auto& [name, t] : ckpt.params.tensors)
    out.append(reinterpret_cast<const char*>(t.data()),
               static_cast<size_t>(t.size()) * sizeof(double));
  return out;
}
}  // namespace

void Checkpoint::save(const std::string& path) const {
  std::ofstream os(path, std::ios::binary);
  require(os.good(), "checkpoint: cannot open " + path + " for writing");
  const std::string bytes = serialize(*this);
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  require(os.good(), "checkpoint: write failed for " + path);
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  require(is.good(), "checkpoint: cannot open " + path);
  char magic[8];
  is.read(magic, 8);
  require(is.good() && std::memcmp(magic, kMagic, 8) == 0,
          "checkpoint: bad magic in " + path);
  std::uint32_t hlen = 0;
  is.read(reinterpret_cast<char*>(&hlen), 4);
  std::string htext(hlen, '\0');
  is.read(htext.data(), hlen);
  require(is.good(), "checkpoint: truncated header in " + path);
  const json header = json::parse(htext);
  require(header.at("format_version").get<int>() == 1,
          "checkpoint: unsupported format version in " + path);

  Checkpoint ckpt;
  ckpt.arch = ArchConfig::from_json(header.at("arch").dump());
  ckpt.mode = mode_from_name(header.at("mode").get<std::string>());
  ckpt.epoch = header.at("epoch").get<int>();
  ckpt.metrics = header.at("metrics").get<std::map<std::string, double>>();
  ckpt.fingerprint = header.at("fingerprint").get<std::string>();
  for (const json& entry : header.at("params")) {
    const std::string name = entry.at("name").get<std::string>();
    const std::vector<int> shape = entry.at("shape").get<std::vector<int>>();
    Tensor t(shape);
    is.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(t.size() * sizeof(double)));
    require(is.good(), "checkpoint: truncated parameter '" + name + "' in " + path);
    ckpt.params.tensors[name] = std::move(t);
  }
  return ckpt;
}

Checkpoint Checkpoint::from_model(const CoSemDepthModel& model, int epoch,
                                  std::map<std::string, double> metrics) {
  Checkpoint ckpt;
  ckpt.arch = model.config();
  ckpt.mode = model.mode();
  ckpt.epoch = epoch;
  ckpt.metrics = std::move(metrics);
  ckpt.fingerprint = model.fingerprint();
  ckpt.params = model.params();
  return ckpt;
}

CoSemDepthModel Checkpoint::to_model() const {
  CoSemDepthModel model(arch, mode);
  require(model.fingerprint() == fingerprint,
          "checkpoint: fingerprint mismatch (config drifted since training)");
  for (auto& [name, t] : model.params().tensors) {
    auto it = params.tensors.find(name);
    require(it != params.tensors.end(), "checkpoint: missing parameter '" + name + "'");
    require(it->second.shape() == t.shape(), "checkpoint: shape mismatch for '" + name + "'");
    t = it->second;
  }
  return model;
}

std::string Checkpoint::content_hash() const {
  const std::string bytes = serialize(*this);
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (char c : bytes) {
    h ^= static_cast<std::uint8_t>(c);
    h *= 0x100000001b3ull;
  }
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace cosemdepth
