// Copyright 2026 The miletune Authors
// SPDX-License-Identifier: Apache-2.0

#include "mile/config.hpp"

#include <algorithm>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <fstream>
#include <sstream>

#include "mile/errors.hpp"

namespace mile {
namespace {

using Section = std::map<std::string, std::string>;
using Sections = std::map<std::string, Section>;

const std::vector<std::string>& known_sections() {
  static const std::vector<std::string> s = {"model", "plan", "train", "data"};
  return s;
}

template <typename N>
N parse_number(const std::string& where, const std::string& text) {
  N value{};
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc{} || ptr != end) {
    throw ConfigError(where + ": expected a number, got '" + text + "'");
  }
  return value;
}

bool parse_flag(const std::string& where, std::string text) {
  std::transform(text.begin(), text.end(), text.begin(), [](unsigned char c) { return std::tolower(c); });
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw ConfigError(where + ": expected true or false, got '" + text + "'");
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& value) {
  if (value.empty()) return {};
  const std::filesystem::path p(value);
  return p.is_absolute() ? p : (base / p).lexically_normal();
}

void apply_override(Sections& sections, const std::string& text) {
  const auto eq = text.find('=');
  const auto dot = text.find('.');
  if (eq == std::string::npos || dot == std::string::npos || dot > eq || dot == 0 || dot + 1 == eq) {
    throw ConfigError("override '" + text + "' is not of the form section.key=value");
  }
  const auto section = text.substr(0, dot);
  if (std::find(known_sections().begin(), known_sections().end(), section) == known_sections().end()) {
    throw ConfigError("override '" + text + "': unknown section [" + section + "]");
  }
  sections[section][text.substr(dot + 1, eq - dot - 1)] = text.substr(eq + 1);
}

ModelConfig model_section(Section s) {
  ModelConfig base;
  if (auto it = s.find("preset"); it != s.end()) {
    if (it->second == "paper") {
      base = ModelConfig::paper();
    } else if (it->second == "toy") {
      base = ModelConfig::toy();
    } else if (it->second == "micro") {
      base = ModelConfig::micro();
    } else {
      throw ConfigError("[model] preset: expected paper, toy or micro, got '" + it->second + "'");
    }
    s.erase(it);
  }
  return ModelConfig::from_fields(s, base);
}

void plan_section(const Section& s, TrainConfig& train, Ia3Sites& ia3) {
  if (s.count("plan") && (s.count("vit") || s.count("jtm") || s.count("dec"))) {
    throw ConfigError("[plan]: give either 'plan' or the per-component keys, not both");
  }
  TuningPlan plan = train.plan;
  for (const auto& [key, value] : s) {
    if (key == "plan") {
      plan = TuningPlan::parse(value);
    } else if (key == "vit") {
      plan.vit = TuneMode::parse(value);
    } else if (key == "jtm") {
      plan.jtm = TuneMode::parse(value);
    } else if (key == "dec") {
      plan.dec = TuneMode::parse(value);
    } else if (key == "ia3_cross_attention") {
      ia3.cross_attention = parse_flag("[plan] " + key, value);
    } else {
      throw ConfigError("[plan]: unknown key '" + key + "'");
    }
  }
  train.plan = plan;
}

void train_section(const Section& s, const std::filesystem::path& base, TrainConfig& t) {
  const std::map<std::string, double TrainConfig::*> reals = {
      {"base_lr", &TrainConfig::base_lr}, {"weight_decay", &TrainConfig::weight_decay}, {"min_lr", &TrainConfig::min_lr}};
  const std::map<std::string, std::size_t TrainConfig::*> counts = {
      {"epochs", &TrainConfig::epochs},         {"stage2_epochs", &TrainConfig::stage2_epochs},
      {"batch_size", &TrainConfig::batch_size}, {"max_steps", &TrainConfig::max_steps},
      {"checkpoint_every", &TrainConfig::checkpoint_every}, {"max_answer_len", &TrainConfig::max_answer_len}};
  for (const auto& [key, value] : s) {
    const std::string where = "[train] " + key;
    if (auto it = reals.find(key); it != reals.end()) {
      t.*(it->second) = parse_number<double>(where, value);
    } else if (auto jt = counts.find(key); jt != counts.end()) {
      t.*(jt->second) = parse_number<std::size_t>(where, value);
    } else if (key == "seed") {
      t.seed = parse_number<std::uint64_t>(where, value);
    } else if (key == "paradigm") {
      t.paradigm = parse_paradigm(value);
    } else if (key == "out_dir") {
      t.out_dir = resolve(base, value);
    } else {
      throw ConfigError("[train]: unknown key '" + key + "'");
    }
  }
}

void data_section(const Section& s, const std::filesystem::path& base, DataConfig& d) {
  const std::map<std::string, std::filesystem::path DataConfig::*> paths = {
      {"origin_path", &DataConfig::origin_path}, {"instruct_path", &DataConfig::instruct_path},
      {"eval_path", &DataConfig::eval_path},     {"templates", &DataConfig::templates},
      {"attribute_rules", &DataConfig::attribute_rules}};
  for (const auto& [key, value] : s) {
    auto it = paths.find(key);
    if (it == paths.end()) throw ConfigError("[data]: unknown key '" + key + "'");
    d.*(it->second) = resolve(base, value);
  }
}

}  // namespace

void RunConfig::validate() const {
  model.validate();
  train.validate();
  switch (train.paradigm) {
    case Paradigm::kOrigin:
      break;
    case Paradigm::kInstruct:
      if (data.instruct_path.empty()) throw ConfigError("paradigm instruct needs [data] instruct_path");
      break;
    case Paradigm::kOriginThenInstruct:
      if (data.origin_path.empty() || data.instruct_path.empty()) {
        throw ConfigError("paradigm origin_then_instruct needs both [data] origin_path and instruct_path");
      }
      break;
  }
}

RunConfig parse_run_config(const std::string& text, const std::filesystem::path& base_dir,
                           const std::vector<std::string>& overrides) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    std::istringstream is(text);
    pt::ini_parser::read_ini(is, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  Sections sections;
  for (const auto& [name, section] : tree) {
    if (std::find(known_sections().begin(), known_sections().end(), name) == known_sections().end()) {
      throw ConfigError(section.empty() ? "key '" + name + "' outside any section"
                                        : "unknown section [" + name + "]");
    }
    for (const auto& [key, value] : section) sections[name][key] = value.get_value<std::string>();
  }
  for (const auto& o : overrides) apply_override(sections, o);

  RunConfig c;
  c.model = model_section(sections["model"]);
  plan_section(sections["plan"], c.train, c.ia3);
  c.train.out_dir = resolve(base_dir, c.train.out_dir.string());
  train_section(sections["train"], base_dir, c.train);
  data_section(sections["data"], base_dir, c.data);
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config '" + path.string() + "'");
  std::stringstream buffer;
  buffer << is.rdbuf();
  const auto base = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");
  return parse_run_config(buffer.str(), base, overrides);
}

}  // namespace mile
