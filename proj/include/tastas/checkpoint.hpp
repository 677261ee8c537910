// Copyright 2026 The tastas Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Versioned model container and per-component content digests.
//
// Layout: 8-byte magic "TASTASCK", uint32 version, uint64 header length,
// JSON header, then every parameter's values as little-endian float64 in
// column-major order, components and parameters in header order.

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "tastas/model.hpp"

namespace tastas {

static_assert(std::endian::native == std::endian::little, "checkpoint blobs assume little-endian hosts");

inline constexpr char kCheckpointMagic[8] = {'T', 'A', 'S', 'T', 'A', 'S', 'C', 'K'};
inline constexpr uint32_t kCheckpointVersion = 1;

namespace internal {

inline void AppendParamBytes(std::string *out, const ad::Parameter &p) {
  out->append(reinterpret_cast<const char *>(p.value.data()), size_t(p.value.size()) * sizeof(double));
}

inline std::string Sha256Hex(const std::string &bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw Error("sha256 failed");
  static const char *hex = "0123456789abcdef";
  std::string s;
  for (unsigned int i = 0; i < len; ++i) {
    s += hex[md[i] >> 4];
    s += hex[md[i] & 15];
  }
  return s;
}

}  // namespace internal

inline std::string FileSha256(const std::string &path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw MissingFileError("cannot read: " + path);
  return internal::Sha256Hex(std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>()));
}

// SHA-256 over parameter names, shapes and raw values. Independent of the
// frozen flag and of training metadata.
inline std::string ComponentDigest(const Component &c) {
  std::string bytes;
  for (const auto &p : c.params) {
    bytes += p.name;
    bytes.push_back('\0');
    int64_t shape[2] = {p.value.rows(), p.value.cols()};
    bytes.append(reinterpret_cast<const char *>(shape), sizeof shape);
    internal::AppendParamBytes(&bytes, p);
  }
  return internal::Sha256Hex(bytes);
}

struct Checkpoint {
  Model model;
  nlohmann::json meta = nlohmann::json::object();  // trainer state, free-form

  // Components in pipeline order: idnet first when present.
  std::vector<const Component *> Components() const {
    std::vector<const Component *> v;
    if (model.idnet) v.push_back(&*model.idnet);
    for (const auto &s : model.stages) v.push_back(&s);
    return v;
  }
};

inline nlohmann::json DimsToJson(const ModelDims &d) {
  return {{"enc_basis", d.enc_basis}, {"kernel", d.kernel}, {"feature", d.feature}, {"chunk", d.chunk},
          {"hidden", d.hidden},       {"embed", d.embed},   {"id_hidden", d.id_hidden}};
}

inline ModelDims DimsFromJson(const nlohmann::json &j) {
  ModelDims d;
  d.enc_basis = j.at("enc_basis");
  d.kernel = j.at("kernel");
  d.feature = j.at("feature");
  d.chunk = j.at("chunk");
  d.hidden = j.at("hidden");
  d.embed = j.at("embed");
  d.id_hidden = j.at("id_hidden");
  return d;
}

inline void SaveCheckpoint(const std::string &path, const Checkpoint &ck) {
  ck.model.spec.Validate();
  nlohmann::ordered_json header;
  header["spec"] = ck.model.spec.Text();
  header["num_sources"] = ck.model.spec.num_sources;
  header["sample_rate"] = ck.model.spec.sample_rate;
  header["dims"] = DimsToJson(ck.model.spec.dims);
  header["init_seed"] = ck.model.init_seed;
  header["components"] = nlohmann::json::array();
  std::string blob;
  for (const Component *c : ck.Components()) {
    nlohmann::ordered_json jc;
    jc["name"] = c->name;
    jc["trained_by"] = c->trained_by;
    jc["frozen"] = c->frozen;
    jc["digest"] = ComponentDigest(*c);
    jc["params"] = nlohmann::json::array();
    for (const auto &p : c->params) {
      if (!p.value.allFinite()) throw NumericError("non-finite parameter " + c->name + "/" + p.name);
      jc["params"].push_back({{"name", p.name}, {"rows", p.value.rows()}, {"cols", p.value.cols()}});
      internal::AppendParamBytes(&blob, p);
    }
    header["components"].push_back(jc);
  }
  header["meta"] = ck.meta;
  const std::string h = header.dump();

  std::string out(kCheckpointMagic, 8);
  uint32_t version = kCheckpointVersion;
  uint64_t hlen = h.size();
  out.append(reinterpret_cast<const char *>(&version), 4);
  out.append(reinterpret_cast<const char *>(&hlen), 8);
  out += h;
  out += blob;

  // write-then-rename so an interrupted save never clobbers the last good file
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write checkpoint: " + path);
    os.write(out.data(), std::streamsize(out.size()));
    if (!os) throw IoError("checkpoint write failed: " + path);
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint LoadCheckpoint(const std::string &path) {
  if (!std::filesystem::exists(path)) throw MissingFileError("no such checkpoint: " + path);
  std::ifstream is(path, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (bytes.size() < 20 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0)
    throw FormatError("not a tastas checkpoint: " + path);
  uint32_t version;
  uint64_t hlen;
  std::memcpy(&version, bytes.data() + 8, 4);
  std::memcpy(&hlen, bytes.data() + 12, 8);
  if (version != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(version) + ": " + path);
  if (20 + hlen > bytes.size()) throw FormatError("truncated checkpoint header: " + path);

  Checkpoint ck;
  size_t pos = 20 + hlen;
  try {
    auto header = nlohmann::json::parse(bytes.substr(20, hlen));
    ModelSpec spec = ParseModelSpec(header.at("spec").get<std::string>());
    spec.num_sources = header.at("num_sources");
    spec.sample_rate = header.at("sample_rate");
    spec.dims = DimsFromJson(header.at("dims"));
    spec.Validate();
    ck.model.spec = spec;
    ck.model.init_seed = header.at("init_seed");
    if (header.contains("meta")) ck.meta = header["meta"];
    for (const auto &jc : header.at("components")) {
      Component c;
      c.name = jc.at("name");
      c.trained_by = jc.at("trained_by");
      c.frozen = jc.at("frozen");
      for (const auto &jp : jc.at("params")) {
        ad::Parameter p;
        p.name = jp.at("name");
        Eigen::Index rows = jp.at("rows"), cols = jp.at("cols");
        if (rows < 0 || cols < 0) throw FormatError("negative parameter shape");
        const size_t nbytes = size_t(rows * cols) * sizeof(double);
        if (pos + nbytes > bytes.size()) throw FormatError("truncated parameter blob: " + path);
        p.value.resize(rows, cols);
        std::memcpy(p.value.data(), bytes.data() + pos, nbytes);
        pos += nbytes;
        c.params.push_back(std::move(p));
      }
      if (ComponentDigest(c) != jc.at("digest").get<std::string>())
        throw FormatError("digest mismatch for component " + c.name + ": " + path);
      if (c.name == "idnet")
        ck.model.idnet = std::move(c);
      else
        ck.model.stages.push_back(std::move(c));
    }
  } catch (const nlohmann::json::exception &e) {
    throw FormatError("bad checkpoint header in " + path + ": " + e.what());
  }
  if (pos != bytes.size()) throw FormatError("trailing bytes in checkpoint: " + path);
  return ck;
}

}  // namespace tastas
