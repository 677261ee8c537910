// Copyright 2026 The tastas Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Training configuration. Every key can come from a flat "key = value"
// file, from the environment as TASTAS_<KEY>, or from a command-line flag;
// precedence is flag > env > file > default.

#pragma once

#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "tastas/model.hpp"

namespace tastas {

struct TrainConfig {
  std::string model_spec = "TasTas(I, 2, 2)";
  double lr = 1e-3;
  double lr_decay = 0.5;  // applied after an epoch without validation improvement
  double clip_norm = 5.0;
  size_t batch_size = 4;
  size_t segment = 4000;  // training segment length in samples
  size_t max_epochs = 20;
  size_t patience = 3;
  double tolerance = 1e-3;
  double lambda_id = 0.1;
  bool online_remix = false;
  uint64_t seed = 0;
  ModelDims dims;
  std::string data_dir;  // holds train.jsonl / valid.jsonl
  std::string out_dir;

  void Validate() const {
    ParseModelSpec(model_spec);
    if (!(lr > 0)) throw InvalidArgument("lr must be positive");
    if (!(lr_decay > 0 && lr_decay <= 1)) throw InvalidArgument("lr_decay must lie in (0, 1]");
    if (!(clip_norm > 0)) throw InvalidArgument("clip_norm must be positive");
    if (batch_size < 1) throw InvalidArgument("batch_size must be >= 1");
    if (max_epochs < 1) throw InvalidArgument("max_epochs must be >= 1");
    if (patience < 1) throw InvalidArgument("patience must be >= 1");
    if (!(tolerance >= 0)) throw InvalidArgument("tolerance must be >= 0");
    if (!(lambda_id >= 0)) throw InvalidArgument("lambda_id must be >= 0");
    if (segment < dims.kernel) throw InvalidArgument("segment shorter than the encoder kernel");
    ModelSpec s;
    s.stage_blocks = {1};
    s.dims = dims;
    s.Validate();
  }
};

namespace internal {

struct ConfigField {
  std::function<void(TrainConfig *, const std::string &)> set;
  std::function<std::string(const TrainConfig &)> get;
};

inline double ParseDouble(const std::string &key, const std::string &v) {
  size_t used = 0;
  double x;
  try {
    x = std::stod(v, &used);
  } catch (const std::exception &) {
    throw InvalidArgument("config key " + key + ": '" + v + "' is not a number");
  }
  if (used != v.size()) throw InvalidArgument("config key " + key + ": '" + v + "' is not a number");
  return x;
}

inline uint64_t ParseUnsigned(const std::string &key, const std::string &v) {
  if (v.empty() || !std::all_of(v.begin(), v.end(), ::isdigit))
    throw InvalidArgument("config key " + key + ": '" + v + "' is not a non-negative integer");
  try {
    return std::stoull(v);
  } catch (const std::exception &) {
    throw InvalidArgument("config key " + key + ": '" + v + "' is out of range");
  }
}

inline bool ParseBool(const std::string &key, const std::string &v) {
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw InvalidArgument("config key " + key + ": '" + v + "' is not a boolean");
}

inline std::string FormatDouble(double x) {
  std::ostringstream os;
  os.precision(17);
  os << x;
  return os.str();
}

inline const std::map<std::string, ConfigField> &ConfigFields() {
  using C = TrainConfig;
  static const std::map<std::string, ConfigField> fields = [] {
    std::map<std::string, ConfigField> f;
    auto str = [&](const char *k, std::string C::*m) {
      f[k] = {[m](C *c, const std::string &v) { c->*m = v; }, [m](const C &c) { return c.*m; }};
    };
    auto dbl = [&](const char *k, double C::*m) {
      std::string key = k;
      f[k] = {[m, key](C *c, const std::string &v) { c->*m = ParseDouble(key, v); },
              [m](const C &c) { return FormatDouble(c.*m); }};
    };
    auto num = [&](const char *k, size_t C::*m) {
      std::string key = k;
      f[k] = {[m, key](C *c, const std::string &v) { c->*m = size_t(ParseUnsigned(key, v)); },
              [m](const C &c) { return std::to_string(c.*m); }};
    };
    auto dim = [&](const char *k, size_t ModelDims::*m) {
      std::string key = k;
      f[k] = {[m, key](C *c, const std::string &v) { c->dims.*m = size_t(ParseUnsigned(key, v)); },
              [m](const C &c) { return std::to_string(c.dims.*m); }};
    };
    str("model_spec", &C::model_spec);
    dbl("lr", &C::lr);
    dbl("lr_decay", &C::lr_decay);
    dbl("clip_norm", &C::clip_norm);
    num("batch_size", &C::batch_size);
    num("segment", &C::segment);
    num("max_epochs", &C::max_epochs);
    num("patience", &C::patience);
    dbl("tolerance", &C::tolerance);
    dbl("lambda_id", &C::lambda_id);
    f["online_remix"] = {[](C *c, const std::string &v) { c->online_remix = ParseBool("online_remix", v); },
                         [](const C &c) { return std::string(c.online_remix ? "true" : "false"); }};
    f["seed"] = {[](C *c, const std::string &v) { c->seed = ParseUnsigned("seed", v); },
                 [](const C &c) { return std::to_string(c.seed); }};
    dim("enc_basis", &ModelDims::enc_basis);
    dim("kernel", &ModelDims::kernel);
    dim("feature", &ModelDims::feature);
    dim("chunk", &ModelDims::chunk);
    dim("hidden", &ModelDims::hidden);
    dim("embed", &ModelDims::embed);
    dim("id_hidden", &ModelDims::id_hidden);
    str("data_dir", &C::data_dir);
    str("out_dir", &C::out_dir);
    return f;
  }();
  return fields;
}

inline std::string Trim(const std::string &s) {
  size_t b = s.find_first_not_of(" \t\r"), e = s.find_last_not_of(" \t\r");
  return b == std::string::npos ? "" : s.substr(b, e - b + 1);
}

}  // namespace internal

inline std::vector<std::string> ConfigKeys() {
  std::vector<std::string> keys;
  for (const auto &[k, f] : internal::ConfigFields()) keys.push_back(k);
  return keys;
}

inline std::string EnvName(const std::string &key) {
  std::string s = "TASTAS_";
  for (char c : key) s += char(std::toupper(static_cast<unsigned char>(c)));
  return s;
}

inline void SetConfigValue(TrainConfig *c, const std::string &key, const std::string &value) {
  auto it = internal::ConfigFields().find(key);
  if (it == internal::ConfigFields().end()) throw InvalidArgument("unknown config key: " + key);
  it->second.set(c, value);
}

inline std::string GetConfigValue(const TrainConfig &c, const std::string &key) {
  auto it = internal::ConfigFields().find(key);
  if (it == internal::ConfigFields().end()) throw InvalidArgument("unknown config key: " + key);
  return it->second.get(c);
}

// "key = value" lines; '#' starts a comment. Unknown keys are errors.
inline std::map<std::string, std::string> ParseConfigText(const std::string &text) {
  std::map<std::string, std::string> kv;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (auto h = line.find('#'); h != std::string::npos) line.resize(h);
    line = internal::Trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) throw InvalidArgument("config line " + std::to_string(lineno) + ": expected key = value");
    std::string key = internal::Trim(line.substr(0, eq)), value = internal::Trim(line.substr(eq + 1));
    if (!internal::ConfigFields().count(key)) throw InvalidArgument("unknown config key: " + key);
    kv[key] = value;
  }
  return kv;
}

inline std::string ConfigToText(const TrainConfig &c) {
  std::string out;
  for (const auto &[k, f] : internal::ConfigFields()) out += k + " = " + f.get(c) + "\n";
  return out;
}

using EnvLookup = std::function<const char *(const char *)>;

// Layers defaults, file, environment and flags. `file` may be empty.
inline TrainConfig ResolveConfig(const std::string &file, const std::map<std::string, std::string> &flags,
                                 const EnvLookup &env = [](const char *n) { return std::getenv(n); }) {
  TrainConfig c;
  if (!file.empty()) {
    std::ifstream is(file);
    if (!is) throw MissingFileError("cannot read config file: " + file);
    std::stringstream ss;
    ss << is.rdbuf();
    for (const auto &[k, v] : ParseConfigText(ss.str())) SetConfigValue(&c, k, v);
  }
  for (const auto &k : ConfigKeys())
    if (const char *v = env(EnvName(k).c_str())) SetConfigValue(&c, k, v);
  for (const auto &[k, v] : flags) SetConfigValue(&c, k, v);
  c.Validate();
  return c;
}

}  // namespace tastas
