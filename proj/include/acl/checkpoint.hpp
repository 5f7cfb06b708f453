#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>

#include "acl/data.hpp"
#include "acl/errors.hpp"
#include "acl/model.hpp"

namespace acl {

// Text checkpoint:
//   # acl checkpoint v1
//   meta <key> <value>        (model config, data spec, seed, mode)
//   tensor <name> <rows> <cols>
//   <rows lines of cols %.17g values>
//   end
struct Checkpoint {
  std::uint64_t seed = 0;
  std::string mode;
  SyntheticSpec data;
  Model model;
};

inline constexpr const char* kCheckpointHeader = "# acl checkpoint v1";

namespace detail {

inline void write_tensor(std::ostream& os, const Tensor& t) {
  os << "tensor " << t.name << ' ' << t.rows << ' ' << t.cols << '\n';
  char buf[32];
  for (std::size_t r = 0; r < t.rows; ++r) {
    for (std::size_t c = 0; c < t.cols; ++c) {
      std::snprintf(buf, sizeof buf, "%.17g", t.at(r, c));
      os << (c ? " " : "") << buf;
    }
    os << '\n';
  }
}

inline std::string g17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

inline void write_checkpoint(const Checkpoint& ck, std::ostream& os) {
  const ModelConfig& m = ck.model.backbone.config;
  os << kCheckpointHeader << '\n';
  os << "meta seed " << ck.seed << '\n';
  os << "meta mode " << (ck.mode.empty() ? "-" : ck.mode) << '\n';
  os << "meta model.input_dim " << m.input_dim << '\n';
  os << "meta model.embed_dim " << m.embed_dim << '\n';
  os << "meta model.hidden ";
  for (std::size_t i = 0; i < m.hidden.size(); ++i) os << (i ? "," : "") << m.hidden[i];
  os << '\n';
  os << "meta model.activation " << to_string(m.activation) << '\n';
  os << "meta model.adapter_rank " << m.adapter_rank << '\n';
  os << "meta model.use_adapter " << (ck.model.adapter ? "true" : "false") << '\n';
  const SyntheticSpec& d = ck.data;
  os << "meta data.input_dim " << d.input_dim << '\n';
  os << "meta data.signal_dim " << d.signal_dim << '\n';
  os << "meta data.pretrain_classes " << d.pretrain_classes << '\n';
  os << "meta data.incremental_classes " << d.incremental_classes << '\n';
  os << "meta data.tasks " << d.tasks << '\n';
  os << "meta data.train_per_class " << d.train_per_class << '\n';
  os << "meta data.test_per_class " << d.test_per_class << '\n';
  os << "meta data.spread " << detail::g17(d.spread) << '\n';
  os << "meta data.shift " << detail::g17(d.shift) << '\n';
  os << "meta data.rotation_rate " << detail::g17(d.rotation_rate) << '\n';
  os << "meta data.seed " << d.seed << '\n';
  const auto& bp = ck.model.backbone.params;
  for (std::size_t i = 0; i < bp.size(); ++i) detail::write_tensor(os, bp[i]);
  if (ck.model.adapter) {
    const auto& ap = ck.model.adapter->params;
    for (std::size_t i = 0; i < ap.size(); ++i) detail::write_tensor(os, ap[i]);
  }
  os << "end\n";
}

inline void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError(0, "cannot write checkpoint " + path);
  write_checkpoint(ck, out);
}

inline Checkpoint read_checkpoint(std::istream& is) {
  std::string line;
  std::size_t line_no = 0;
  auto next = [&](std::string& out) {
    while (std::getline(is, out)) {
      ++line_no;
      if (!out.empty() && out.back() == '\r') out.pop_back();
      if (!out.empty()) return true;
    }
    return false;
  };
  if (!next(line) || line != kCheckpointHeader) throw ParseError(line_no, "missing checkpoint header");

  std::map<std::string, std::string> meta;
  std::map<std::string, Tensor> tensors;
  bool ended = false;
  auto fail = [&](const std::string& what) -> ParseError { return ParseError(line_no, what); };
  auto to_u = [&](const std::string& v) -> std::uint64_t {
    try {
      std::size_t used = 0;
      const unsigned long long u = std::stoull(v, &used);
      if (used == v.size() && v[0] != '-') return u;
    } catch (const std::logic_error&) {
    }
    throw fail("bad integer '" + v + "'");
  };
  auto to_d = [&](const std::string& v) -> double {
    try {
      std::size_t used = 0;
      const double d = std::stod(v, &used);
      if (used == v.size() && std::isfinite(d)) return d;
    } catch (const std::logic_error&) {
    }
    throw fail("bad number '" + v + "'");
  };

  while (next(line)) {
    std::istringstream ss(line);
    std::string kind;
    ss >> kind;
    if (kind == "end") {
      ended = true;
      break;
    }
    if (kind == "meta") {
      std::string key, value;
      if (!(ss >> key >> value)) throw fail("meta line needs key and value");
      if (!meta.emplace(key, value).second) throw fail("duplicate meta key " + key);
    } else if (kind == "tensor") {
      std::string name, rows_s, cols_s;
      if (!(ss >> name >> rows_s >> cols_s)) throw fail("tensor line needs name rows cols");
      Tensor t{name, to_u(rows_s), to_u(cols_s), {}};
      t.data.reserve(t.rows * t.cols);
      for (std::size_t r = 0; r < t.rows; ++r) {
        if (!next(line)) throw fail("truncated tensor " + name);
        std::istringstream row(line);
        std::string cell;
        std::size_t count = 0;
        while (row >> cell) {
          t.data.push_back(to_d(cell));
          ++count;
        }
        if (count != t.cols) throw fail("tensor " + name + ": expected " + std::to_string(t.cols) + " values");
      }
      if (tensors.count(name)) throw fail("duplicate tensor " + name);
      tensors.emplace(name, std::move(t));
    } else {
      throw fail("unexpected line '" + line + "'");
    }
  }
  if (!ended) throw fail("missing end marker");

  auto get = [&](const std::string& key) -> const std::string& {
    auto it = meta.find(key);
    if (it == meta.end()) throw ParseError(line_no, "missing meta " + key);
    return it->second;
  };

  Checkpoint ck;
  ck.seed = to_u(get("seed"));
  ck.mode = get("mode") == "-" ? "" : get("mode");
  ModelConfig mc;
  mc.input_dim = to_u(get("model.input_dim"));
  mc.embed_dim = to_u(get("model.embed_dim"));
  mc.hidden.clear();
  {
    std::stringstream hs(get("model.hidden"));
    std::string w;
    while (std::getline(hs, w, ',')) mc.hidden.push_back(to_u(w));
  }
  mc.adapter_rank = to_u(get("model.adapter_rank"));
  try {
    mc.activation = parse_activation(get("model.activation"));
    mc.validate();
  } catch (const Error& e) {
    throw ParseError(line_no, e.what());
  }
  const bool has_adapter = get("model.use_adapter") == "true";

  SyntheticSpec& d = ck.data;
  d.input_dim = to_u(get("data.input_dim"));
  d.signal_dim = to_u(get("data.signal_dim"));
  d.pretrain_classes = to_u(get("data.pretrain_classes"));
  d.incremental_classes = to_u(get("data.incremental_classes"));
  d.tasks = to_u(get("data.tasks"));
  d.train_per_class = to_u(get("data.train_per_class"));
  d.test_per_class = to_u(get("data.test_per_class"));
  d.spread = to_d(get("data.spread"));
  d.shift = to_d(get("data.shift"));
  d.rotation_rate = to_d(get("data.rotation_rate"));
  d.seed = to_u(get("data.seed"));

  // Rebuild the expected layout, then fill it from the file.
  Rng scratch(0);
  ck.model.backbone = init_backbone(mc, scratch);
  if (has_adapter) ck.model.adapter = init_adapter(mc, scratch);
  std::size_t used = 0;
  auto fill = [&](ParamSet& ps) {
    for (std::size_t i = 0; i < ps.size(); ++i) {
      auto it = tensors.find(ps[i].name);
      if (it == tensors.end()) throw ParseError(line_no, "missing tensor " + ps[i].name);
      if (it->second.rows != ps[i].rows || it->second.cols != ps[i].cols) {
        throw ParseError(line_no, "tensor " + ps[i].name + " has the wrong shape");
      }
      ps[i].data = it->second.data;
      ++used;
    }
  };
  fill(ck.model.backbone.params);
  if (ck.model.adapter) fill(ck.model.adapter->params);
  if (used != tensors.size()) throw ParseError(line_no, "checkpoint has unexpected tensors");
  return ck;
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(0, "cannot open checkpoint " + path);
  return read_checkpoint(in);
}

}  // namespace acl
