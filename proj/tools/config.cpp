#include "config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

namespace lmbcli {

namespace {

const std::set<std::string> shape_keys = {"csv",         "points",      "dim",          "synth",
                                          "landmarks",   "seed",        "radius",       "semi_axis_x",
                                          "semi_axis_y", "perturbation", "harmonics"};

const std::map<std::string, std::set<std::string>>& schema() {
  static const std::map<std::string, std::set<std::string>> s = {
      {"run", {"seed", "threads", "mode"}},
      {"process", {"kind", "variance", "lengthscale"}},
      {"grid", {"t0", "t1", "steps"}},
      {"start", shape_keys},
      {"end", shape_keys},
      {"frozen", shape_keys},
      {"init", shape_keys},
      {"sampler", {"samples"}},
      {"bridge", {"proposal", "score_model", "include_divergence", "guard_steps", "paths"}},
      {"train",
       {"iterations", "paths_per_batch", "learning_rate", "final_learning_rate_factor", "guard_band", "widths",
        "embed_dim", "variance_min", "variance_max", "validation_paths", "validation_every"}},
      {"sweep", {"values", "v_min", "v_max", "points", "spacing"}},
      {"optimizer",
       {"init_variance", "max_iterations", "tolerance", "initial_step", "shrink", "sufficient_increase",
        "fresh_noise"}},
      {"simulate", {"paths"}},
      {"observations", {"files", "count"}},
      {"align", {"reference", "targets"}},
      {"resample", {"outline", "landmarks"}},
  };
  return s;
}

std::string where(const std::string& section, const std::string& key) { return "[" + section + "] " + key; }

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b == std::string::npos) throw ConfigError("empty list item");
    out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

double to_double(const std::string& text, const std::string& at) {
  double v = 0.0;
  const char* end = text.data() + text.size();
  auto [p, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || p != end) throw ConfigError(at + ": '" + text + "' is not a number");
  return v;
}

}  // namespace

std::string format_double(double value) {
  char buffer[64];
  auto r = std::to_chars(buffer, buffer + sizeof(buffer), value);
  return std::string(buffer, r.ptr);
}

Config Config::load(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot open config '" + file.string() + "'");
  std::ostringstream text;
  text << in.rdbuf();
  return parse(text.str(), std::filesystem::absolute(file).parent_path());
}

Config Config::parse(const std::string& text, const std::filesystem::path& base_dir) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("malformed config: ") + e.message() + " (line " + std::to_string(e.line()) + ")");
  }
  Config c;
  c.base_dir_ = std::filesystem::absolute(base_dir);
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw ConfigError("key '" + section + "' must be inside a section");
    const auto known = schema().find(section);
    if (known == schema().end()) throw ConfigError("unknown config section [" + section + "]");
    for (const auto& [key, value] : body) {
      if (!known->second.count(key)) throw ConfigError("unknown config key " + where(section, key));
      c.values_[section][key] = value.get_value<std::string>();
    }
  }
  return c;
}

bool Config::has(const std::string& section, const std::string& key) const { return raw(section, key).has_value(); }

bool Config::has_section(const std::string& section) const { return values_.count(section) > 0; }

std::optional<std::string> Config::raw(const std::string& section, const std::string& key) const {
  const auto known = schema().find(section);
  if (known == schema().end() || !known->second.count(key)) throw ConfigError("unknown config key " + where(section, key));
  auto s = values_.find(section);
  if (s == values_.end()) return std::nullopt;
  auto k = s->second.find(key);
  if (k == s->second.end()) return std::nullopt;
  return k->second;
}

void Config::set(const std::string& section, const std::string& key, const std::string& value) {
  const auto known = schema().find(section);
  if (known == schema().end() || !known->second.count(key)) throw ConfigError("unknown config key " + where(section, key));
  values_[section][key] = value;
}

void Config::record(const std::string& section, const std::string& key, const std::string& value) {
  auto s = std::find_if(resolved_.begin(), resolved_.end(), [&](const auto& e) { return e.first == section; });
  if (s == resolved_.end()) {
    resolved_.push_back({section, {}});
    s = resolved_.end() - 1;
  }
  auto k = std::find_if(s->second.begin(), s->second.end(), [&](const auto& e) { return e.first == key; });
  if (k == s->second.end())
    s->second.push_back({key, value});
  else
    k->second = value;
}

std::string Config::get_string(const std::string& section, const std::string& key,
                               const std::optional<std::string>& fallback) {
  auto v = raw(section, key);
  if (!v) {
    if (!fallback) throw ConfigError("missing required config key " + where(section, key));
    v = fallback;
  }
  record(section, key, *v);
  return *v;
}

double Config::get_double(const std::string& section, const std::string& key, const std::optional<double>& fallback) {
  auto v = raw(section, key);
  double out;
  if (v) {
    out = to_double(*v, where(section, key));
  } else {
    if (!fallback) throw ConfigError("missing required config key " + where(section, key));
    out = *fallback;
  }
  record(section, key, format_double(out));
  return out;
}

std::uint64_t Config::get_uint(const std::string& section, const std::string& key,
                               const std::optional<std::uint64_t>& fallback) {
  auto v = raw(section, key);
  std::uint64_t out = 0;
  if (v) {
    const char* end = v->data() + v->size();
    auto [p, ec] = std::from_chars(v->data(), end, out);
    if (ec != std::errc() || p != end)
      throw ConfigError(where(section, key) + ": '" + *v + "' is not a non-negative integer");
  } else {
    if (!fallback) throw ConfigError("missing required config key " + where(section, key));
    out = *fallback;
  }
  record(section, key, std::to_string(out));
  return out;
}

bool Config::get_bool(const std::string& section, const std::string& key, const std::optional<bool>& fallback) {
  auto v = raw(section, key);
  bool out;
  if (v) {
    if (*v == "true" || *v == "1")
      out = true;
    else if (*v == "false" || *v == "0")
      out = false;
    else
      throw ConfigError(where(section, key) + ": expected true or false, got '" + *v + "'");
  } else {
    if (!fallback) throw ConfigError("missing required config key " + where(section, key));
    out = *fallback;
  }
  record(section, key, out ? "true" : "false");
  return out;
}

std::filesystem::path Config::get_path(const std::string& section, const std::string& key) {
  auto v = raw(section, key);
  if (!v || v->empty()) throw ConfigError("missing required config key " + where(section, key));
  std::filesystem::path p(*v);
  if (p.is_relative()) p = base_dir_ / p;
  p = p.lexically_normal();
  record(section, key, p.string());
  return p;
}

std::vector<std::filesystem::path> Config::get_path_list(const std::string& section, const std::string& key) {
  auto v = raw(section, key);
  if (!v || v->empty()) throw ConfigError("missing required config key " + where(section, key));
  std::vector<std::filesystem::path> out;
  std::string joined;
  try {
    for (const auto& item : split_list(*v)) {
      std::filesystem::path p(item);
      if (p.is_relative()) p = base_dir_ / p;
      out.push_back(p.lexically_normal());
      joined += (joined.empty() ? "" : ",") + out.back().string();
    }
  } catch (const ConfigError& e) {
    throw ConfigError(where(section, key) + ": " + e.what());
  }
  record(section, key, joined);
  return out;
}

std::vector<double> Config::get_double_list(const std::string& section, const std::string& key,
                                            const std::optional<std::vector<double>>& fallback) {
  auto v = raw(section, key);
  std::vector<double> out;
  if (v) {
    try {
      for (const auto& item : split_list(*v)) out.push_back(to_double(item, where(section, key)));
    } catch (const ConfigError& e) {
      throw ConfigError(where(section, key) + ": " + e.what());
    }
  } else {
    if (!fallback) throw ConfigError("missing required config key " + where(section, key));
    out = *fallback;
  }
  std::string joined;
  for (double d : out) joined += (joined.empty() ? "" : ",") + format_double(d);
  record(section, key, joined);
  return out;
}

std::string Config::resolved_ini() const {
  std::ostringstream out;
  bool first = true;
  for (const auto& [section, entries] : resolved_) {
    if (!first) out << '\n';
    first = false;
    out << '[' << section << "]\n";
    for (const auto& [key, value] : entries) out << key << " = " << value << '\n';
  }
  return out.str();
}

}  // namespace lmbcli
