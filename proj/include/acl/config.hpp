#pragma once

#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "acl/adaptation.hpp"
#include "acl/continual.hpp"
#include "acl/data.hpp"
#include "acl/errors.hpp"
#include "acl/metrics.hpp"
#include "acl/model.hpp"

namespace acl {

// A run variant: one adaptation setting compared against the others on the
// same data and pretrained backbone.
struct Variant {
  std::string name;
  AdaptMode mode = AdaptMode::acl;
  bool first_task_only = false;
};

inline Variant parse_variant(const std::string& name) {
  if (name == "first_task_only") return {name, AdaptMode::acl, true};
  return {name, parse_adapt_mode(name), false};
}

// Every knob of an experiment. The on-disk form is a flat text file of
// `section.key = value` lines; `#` starts a comment.
struct RunConfig {
  SyntheticSpec data;
  ModelConfig model;
  bool use_adapter = true;
  PretrainConfig pretrain;
  AdaptConfig adapt;
  CoreConfig core;
  PlasticityMode plasticity = PlasticityMode::best_over_history;
  std::vector<Variant> variants;
  std::vector<std::uint64_t> seeds = {1993, 1994, 1995, 1996, 1997};
  std::string out_dir = "out";
  std::size_t workers = 1;
  std::string source_text;  // verbatim file contents, echoed into the manifest

  void validate() const {
    data.validate();
    model.validate();
    adapt.validate();
    if (model.input_dim != data.input_dim) throw InvalidConfig("model input dim must equal data.input_dim");
    if (variants.empty()) throw InvalidConfig("run.modes must name at least one mode");
    if (seeds.empty()) throw InvalidConfig("run.seeds must not be empty");
    if (workers < 1) throw InvalidConfig("run.workers must be >= 1");
    if (pretrain.batch_size < 1 || core.batch_size < 1) throw InvalidConfig("batch sizes must be >= 1");
    for (const auto& v : variants) {
      if (v.mode == AdaptMode::lightweight_only && !use_adapter) {
        throw InvalidConfig("mode lightweight_only needs model.use_adapter = true");
      }
    }
  }
};

inline const std::vector<std::string>& required_config_keys() {
  static const std::vector<std::string> keys = {"core.strategy", "run.modes"};
  return keys;
}

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

inline double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used == v.size()) return d;
  } catch (const std::logic_error&) {
  }
  throw InvalidConfig(key + ": '" + v + "' is not a number");
}

inline std::uint64_t to_uint(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    if (!v.empty() && v[0] != '-') {
      const unsigned long long u = std::stoull(v, &used);
      if (used == v.size()) return u;
    }
  } catch (const std::logic_error&) {
  }
  throw InvalidConfig(key + ": '" + v + "' is not a non-negative integer");
}

inline bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw InvalidConfig(key + ": '" + v + "' is not a boolean");
}

}  // namespace detail

// Parses `section.key = value` text. Unknown or duplicate keys and missing
// required keys are configuration errors.
inline RunConfig parse_run_config(const std::string& text) {
  using Setter = std::function<void(RunConfig&, const std::string&, const std::string&)>;
  static const std::map<std::string, Setter> setters = {
      {"data.input_dim", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.data.input_dim = detail::to_uint(k, v);
         c.model.input_dim = c.data.input_dim;
       }},
      {"data.signal_dim", [](RunConfig& c, const std::string& k, const std::string& v) { c.data.signal_dim = detail::to_uint(k, v); }},
      {"data.pretrain_classes", [](RunConfig& c, const std::string& k, const std::string& v) { c.data.pretrain_classes = detail::to_uint(k, v); }},
      {"data.incremental_classes", [](RunConfig& c, const std::string& k, const std::string& v) { c.data.incremental_classes = detail::to_uint(k, v); }},
      {"data.tasks", [](RunConfig& c, const std::string& k, const std::string& v) { c.data.tasks = detail::to_uint(k, v); }},
      {"data.train_per_class", [](RunConfig& c, const std::string& k, const std::string& v) { c.data.train_per_class = detail::to_uint(k, v); }},
      {"data.test_per_class", [](RunConfig& c, const std::string& k, const std::string& v) { c.data.test_per_class = detail::to_uint(k, v); }},
      {"data.spread", [](RunConfig& c, const std::string& k, const std::string& v) { c.data.spread = detail::to_double(k, v); }},
      {"data.shift", [](RunConfig& c, const std::string& k, const std::string& v) { c.data.shift = detail::to_double(k, v); }},
      {"data.rotation_rate", [](RunConfig& c, const std::string& k, const std::string& v) { c.data.rotation_rate = detail::to_double(k, v); }},
      {"model.embed_dim", [](RunConfig& c, const std::string& k, const std::string& v) { c.model.embed_dim = detail::to_uint(k, v); }},
      {"model.hidden", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.model.hidden.clear();
         for (const auto& w : detail::split_list(v)) c.model.hidden.push_back(detail::to_uint(k, w));
       }},
      {"model.activation", [](RunConfig& c, const std::string&, const std::string& v) { c.model.activation = parse_activation(v); }},
      {"model.adapter_rank", [](RunConfig& c, const std::string& k, const std::string& v) { c.model.adapter_rank = detail::to_uint(k, v); }},
      {"model.use_adapter", [](RunConfig& c, const std::string& k, const std::string& v) { c.use_adapter = detail::to_bool(k, v); }},
      {"pretrain.epochs", [](RunConfig& c, const std::string& k, const std::string& v) { c.pretrain.epochs = detail::to_uint(k, v); }},
      {"pretrain.lr", [](RunConfig& c, const std::string& k, const std::string& v) { c.pretrain.learning_rate = detail::to_double(k, v); }},
      {"pretrain.momentum", [](RunConfig& c, const std::string& k, const std::string& v) { c.pretrain.momentum = detail::to_double(k, v); }},
      {"pretrain.batch_size", [](RunConfig& c, const std::string& k, const std::string& v) { c.pretrain.batch_size = detail::to_uint(k, v); }},
      {"adapt.temperature", [](RunConfig& c, const std::string& k, const std::string& v) { c.adapt.temperature = detail::to_double(k, v); }},
      {"adapt.epochs", [](RunConfig& c, const std::string& k, const std::string& v) { c.adapt.epochs = detail::to_uint(k, v); }},
      {"adapt.lr", [](RunConfig& c, const std::string& k, const std::string& v) { c.adapt.learning_rate = detail::to_double(k, v); }},
      {"adapt.momentum", [](RunConfig& c, const std::string& k, const std::string& v) { c.adapt.momentum = detail::to_double(k, v); }},
      {"adapt.batch_size", [](RunConfig& c, const std::string& k, const std::string& v) { c.adapt.batch_size = detail::to_uint(k, v); }},
      {"core.strategy", [](RunConfig& c, const std::string&, const std::string& v) { c.core.strategy = parse_core_strategy(v); }},
      {"core.epochs", [](RunConfig& c, const std::string& k, const std::string& v) { c.core.epochs = detail::to_uint(k, v); }},
      {"core.lr", [](RunConfig& c, const std::string& k, const std::string& v) { c.core.learning_rate = detail::to_double(k, v); }},
      {"core.momentum", [](RunConfig& c, const std::string& k, const std::string& v) { c.core.momentum = detail::to_double(k, v); }},
      {"core.batch_size", [](RunConfig& c, const std::string& k, const std::string& v) { c.core.batch_size = detail::to_uint(k, v); }},
      {"core.tune_adapter", [](RunConfig& c, const std::string& k, const std::string& v) { c.core.tune_adapter = detail::to_bool(k, v); }},
      {"metrics.plasticity", [](RunConfig& c, const std::string&, const std::string& v) {
         if (v == "best") {
           c.plasticity = PlasticityMode::best_over_history;
         } else if (v == "just_learned") {
           c.plasticity = PlasticityMode::just_learned;
         } else {
           throw InvalidConfig("metrics.plasticity must be best or just_learned");
         }
       }},
      {"run.modes", [](RunConfig& c, const std::string&, const std::string& v) {
         c.variants.clear();
         for (const auto& m : detail::split_list(v)) c.variants.push_back(parse_variant(m));
       }},
      {"run.seeds", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.seeds.clear();
         for (const auto& s : detail::split_list(v)) c.seeds.push_back(detail::to_uint(k, s));
       }},
      {"run.out", [](RunConfig& c, const std::string&, const std::string& v) { c.out_dir = v; }},
      {"run.workers", [](RunConfig& c, const std::string& k, const std::string& v) { c.workers = detail::to_uint(k, v); }},
  };

  RunConfig config;
  config.source_text = text;
  std::map<std::string, std::string> seen;
  std::stringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw InvalidConfig("line " + std::to_string(line_no) + ": expected 'key = value'");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    auto it = setters.find(key);
    if (it == setters.end()) throw InvalidConfig("line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    if (!seen.emplace(key, value).second) {
      throw InvalidConfig("line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
    }
    it->second(config, key, value);
  }
  for (const auto& k : required_config_keys()) {
    if (!seen.count(k)) throw InvalidConfig("missing required key '" + k + "'");
  }
  config.validate();
  return config;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidConfig("cannot read config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

}  // namespace acl
