#include "eanet/checkpoint.hpp"

#include <zlib.h>

#include <fstream>
#include <ios>
#include <iterator>
#include <map>
#include <sstream>

#include "eanet/eatf.hpp"

namespace eanet {

namespace archive {

namespace {

constexpr std::uint32_t kLocalSig = 0x04034b50;
constexpr std::uint32_t kCentralSig = 0x02014b50;
constexpr std::uint32_t kEndSig = 0x06054b50;
constexpr std::uint16_t kVersionNeeded = 20;
constexpr std::uint16_t kDosDate = (0 << 9) | (1 << 5) | 1;  // 1980-01-01

std::uint16_t le16(const std::vector<std::uint8_t>& b, std::size_t at) {
  if (at + 2 > b.size()) throw FormatError("archive: truncated");
  return static_cast<std::uint16_t>(b[at] | (b[at + 1] << 8));
}

std::uint32_t le32(const std::vector<std::uint8_t>& b, std::size_t at) {
  if (at + 4 > b.size()) throw FormatError("archive: truncated");
  return static_cast<std::uint32_t>(b[at]) | (static_cast<std::uint32_t>(b[at + 1]) << 8) |
         (static_cast<std::uint32_t>(b[at + 2]) << 16) |
         (static_cast<std::uint32_t>(b[at + 3]) << 24);
}

}  // namespace

std::uint32_t crc32(const std::vector<std::uint8_t>& bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  return static_cast<std::uint32_t>(
      ::crc32(crc, bytes.data(), static_cast<uInt>(bytes.size())));
}

void write(const std::filesystem::path& path, const Entries& entries) {
  std::ostringstream out(std::ios::binary);
  std::vector<std::uint32_t> offsets, crcs;
  for (const auto& [name, data] : entries) {
    if (data.size() > 0xffffffffu) throw FormatError("archive: entry too large: " + name);
    offsets.push_back(static_cast<std::uint32_t>(out.tellp()));
    crcs.push_back(crc32(data));
    eatf::put_u32(out, kLocalSig);
    eatf::put_u16(out, kVersionNeeded);
    eatf::put_u16(out, 0);  // flags
    eatf::put_u16(out, 0);  // stored
    eatf::put_u16(out, 0);  // time
    eatf::put_u16(out, kDosDate);
    eatf::put_u32(out, crcs.back());
    eatf::put_u32(out, static_cast<std::uint32_t>(data.size()));
    eatf::put_u32(out, static_cast<std::uint32_t>(data.size()));
    eatf::put_u16(out, static_cast<std::uint16_t>(name.size()));
    eatf::put_u16(out, 0);
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
  }
  const auto central = static_cast<std::uint32_t>(out.tellp());
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& [name, data] = entries[i];
    eatf::put_u32(out, kCentralSig);
    eatf::put_u16(out, kVersionNeeded);  // made by
    eatf::put_u16(out, kVersionNeeded);
    eatf::put_u16(out, 0);
    eatf::put_u16(out, 0);
    eatf::put_u16(out, 0);
    eatf::put_u16(out, kDosDate);
    eatf::put_u32(out, crcs[i]);
    eatf::put_u32(out, static_cast<std::uint32_t>(data.size()));
    eatf::put_u32(out, static_cast<std::uint32_t>(data.size()));
    eatf::put_u16(out, static_cast<std::uint16_t>(name.size()));
    eatf::put_u16(out, 0);  // extra
    eatf::put_u16(out, 0);  // comment
    eatf::put_u16(out, 0);  // disk
    eatf::put_u16(out, 0);  // internal attributes
    eatf::put_u32(out, 0);  // external attributes
    eatf::put_u32(out, offsets[i]);
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
  }
  const auto end = static_cast<std::uint32_t>(out.tellp());
  eatf::put_u32(out, kEndSig);
  eatf::put_u16(out, 0);
  eatf::put_u16(out, 0);
  eatf::put_u16(out, static_cast<std::uint16_t>(entries.size()));
  eatf::put_u16(out, static_cast<std::uint16_t>(entries.size()));
  eatf::put_u32(out, end - central);
  eatf::put_u32(out, central);
  eatf::put_u16(out, 0);

  std::ofstream file(path, std::ios::binary);
  if (!file) throw std::ios_base::failure("cannot open " + path.string());
  const std::string bytes = out.str();
  file.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!file) throw std::ios_base::failure("write failed for " + path.string());
}

Entries read(const std::filesystem::path& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw std::ios_base::failure("cannot open " + path.string());
  const std::vector<std::uint8_t> b((std::istreambuf_iterator<char>(file)),
                                    std::istreambuf_iterator<char>());
  if (b.size() < 22) throw FormatError("archive: too short");
  std::size_t eocd = b.size() - 22;
  while (le32(b, eocd) != kEndSig) {
    if (eocd == 0 || b.size() - eocd > 22 + 0xffff) throw FormatError("archive: no end record");
    --eocd;
  }
  const std::size_t count = le16(b, eocd + 10);
  std::size_t at = le32(b, eocd + 16);
  Entries entries;
  for (std::size_t i = 0; i < count; ++i) {
    if (le32(b, at) != kCentralSig) throw FormatError("archive: bad central header");
    const std::uint16_t method = le16(b, at + 10);
    const std::uint32_t crc = le32(b, at + 16);
    const std::uint32_t csize = le32(b, at + 20);
    const std::uint32_t usize = le32(b, at + 24);
    const std::size_t name_len = le16(b, at + 28);
    const std::size_t extra_len = le16(b, at + 30);
    const std::size_t comment_len = le16(b, at + 32);
    const std::size_t local = le32(b, at + 42);
    if (at + 46 + name_len > b.size()) throw FormatError("archive: truncated");
    std::string name(b.begin() + static_cast<std::ptrdiff_t>(at + 46),
                     b.begin() + static_cast<std::ptrdiff_t>(at + 46 + name_len));
    if (method != 0 || csize != usize) {
      throw FormatError("archive: unsupported compression for " + name);
    }
    if (le32(b, local) != kLocalSig) throw FormatError("archive: bad local header");
    const std::size_t data_at = local + 30 + le16(b, local + 26) + le16(b, local + 28);
    if (data_at + usize > b.size()) throw FormatError("archive: truncated entry " + name);
    std::vector<std::uint8_t> data(b.begin() + static_cast<std::ptrdiff_t>(data_at),
                                   b.begin() + static_cast<std::ptrdiff_t>(data_at + usize));
    if (crc32(data) != crc) throw FormatError("archive: CRC mismatch in " + name);
    entries.emplace_back(std::move(name), std::move(data));
    at += 46 + name_len + extra_len + comment_len;
  }
  return entries;
}

}  // namespace archive

namespace checkpoint {

namespace {

using config::Json;

std::vector<std::uint8_t> text_bytes(const std::string& s) { return {s.begin(), s.end()}; }

Tensor buffer_tensor(const std::vector<double>& v, const Shape& shape) { return Tensor(shape, v); }

const std::vector<std::uint8_t>& entry(const std::map<std::string, std::vector<std::uint8_t>>& m,
                                       const std::string& name) {
  auto it = m.find(name);
  if (it == m.end()) throw FormatError("checkpoint: missing entry " + name);
  return it->second;
}

}  // namespace

void save(const std::filesystem::path& path, const model::EANet& net,
          const config::RunConfig& config, const AdamState* adam, const TrainState* train) {
  const auto& params = net.parameters().entries();
  archive::Entries entries;
  Json list = Json::array();
  for (const auto& [name, t] : params) {
    list.push_back({{"name", name}, {"file", "params/" + name + ".eatf"}, {"shape", t.shape()}});
  }
  Json manifest{{"format", "eanet-checkpoint"},
                {"version", kVersion},
                {"model_seed", net.seed()},
                {"config", config::to_json(config)},
                {"parameters", list}};
  if (adam) {
    if (adam->m.size() != params.size() || adam->v.size() != params.size()) {
      throw UsageError("checkpoint: optimizer state does not match the parameters");
    }
    manifest["optimizer"] = {{"step", adam->step},
                             {"lr", adam->config.lr},
                             {"beta1", adam->config.beta1},
                             {"beta2", adam->config.beta2},
                             {"eps", adam->config.eps}};
  }
  if (train) {
    // Doubles are written in shortest round-trip form, so the histories reload exactly.
    manifest["train"] = {{"step", train->step},
                         {"best_epoch", train->best_epoch},
                         {"step_losses", train->step_losses},
                         {"epoch_losses", train->epoch_losses}};
  }
  entries.emplace_back("manifest.json", text_bytes(manifest.dump(2) + "\n"));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& [name, t] = params[i];
    entries.emplace_back("params/" + name + ".eatf", eatf::encode(t));
    if (adam) {
      entries.emplace_back("adam/m/" + name + ".eatf", eatf::encode(buffer_tensor(adam->m[i], t.shape())));
      entries.emplace_back("adam/v/" + name + ".eatf", eatf::encode(buffer_tensor(adam->v[i], t.shape())));
    }
  }
  archive::write(path, entries);
}

Checkpoint load(const std::filesystem::path& path) {
  std::map<std::string, std::vector<std::uint8_t>> files;
  for (auto& [name, data] : archive::read(path)) files.emplace(name, std::move(data));
  const auto& raw = entry(files, "manifest.json");
  Json manifest;
  try {
    manifest = Json::parse(raw.begin(), raw.end());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: bad manifest: ") + e.what());
  }
  Checkpoint ckpt;
  try {
    if (manifest.at("format") != "eanet-checkpoint") throw FormatError("checkpoint: wrong format tag");
    if (manifest.at("version").get<int>() != kVersion) {
      throw FormatError("checkpoint: unsupported version");
    }
    ckpt.model_seed = manifest.at("model_seed").get<std::uint64_t>();
    ckpt.config = config::run_from_json(manifest.at("config"));
    const bool has_adam = manifest.contains("optimizer");
    if (has_adam) {
      const Json& o = manifest.at("optimizer");
      AdamState st;
      st.step = o.at("step").get<std::uint64_t>();
      st.config = {o.at("lr").get<double>(), o.at("beta1").get<double>(),
                   o.at("beta2").get<double>(), o.at("eps").get<double>()};
      ckpt.adam = std::move(st);
    }
    for (const Json& p : manifest.at("parameters")) {
      const auto name = p.at("name").get<std::string>();
      Tensor t = eatf::decode(entry(files, p.at("file").get<std::string>()));
      if (t.shape() != p.at("shape").get<Shape>()) {
        throw FormatError("checkpoint: shape of " + name + " disagrees with the manifest");
      }
      if (has_adam) {
        ckpt.adam->m.push_back(eatf::decode(entry(files, "adam/m/" + name + ".eatf")).to_vector());
        ckpt.adam->v.push_back(eatf::decode(entry(files, "adam/v/" + name + ".eatf")).to_vector());
      }
      ckpt.parameters.emplace_back(name, std::move(t));
    }
    if (manifest.contains("train")) {
      const Json& tr = manifest.at("train");
      ckpt.train.step = tr.at("step").get<std::uint64_t>();
      ckpt.train.best_epoch = tr.at("best_epoch").get<std::int64_t>();
      ckpt.train.step_losses = tr.at("step_losses").get<std::vector<double>>();
      ckpt.train.epoch_losses = tr.at("epoch_losses").get<std::vector<double>>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: bad manifest: ") + e.what());
  }
  return ckpt;
}

void copy_parameters(model::EANet& net, const Checkpoint& ckpt) {
  const auto& entries = net.parameters().entries();
  if (entries.size() != ckpt.parameters.size()) {
    for (const auto& [name, t] : entries) {
      bool found = false;
      for (const auto& p : ckpt.parameters) found = found || p.first == name;
      if (!found) throw ConfigError("checkpoint: missing parameter " + name);
    }
    throw ConfigError("checkpoint: unexpected extra parameters");
  }
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& [name, t] = entries[i];
    const auto& [cname, ct] = ckpt.parameters[i];
    if (name != cname) throw ConfigError("checkpoint: expected parameter " + name + ", found " + cname);
    if (t.shape() != ct.shape()) {
      throw ConfigError("checkpoint: parameter " + name + " has shape " + shape_str(ct.shape()) +
                        ", expected " + shape_str(t.shape()));
    }
  }
  for (std::size_t i = 0; i < entries.size(); ++i) {
    Tensor t = entries[i].second;
    auto dst = t.data_mut();
    auto src = ckpt.parameters[i].second.data();
    std::copy(src.begin(), src.end(), dst.begin());
  }
}

std::unique_ptr<model::EANet> restore_model(const Checkpoint& ckpt) {
  auto net = std::make_unique<model::EANet>(ckpt.config.model, ckpt.model_seed);
  copy_parameters(*net, ckpt);
  return net;
}

}  // namespace checkpoint

}  // namespace eanet
