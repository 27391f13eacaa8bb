// Copyright 2026 The miletune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "mile/model_config.hpp"
#include "mile/peft.hpp"
#include "mile/train.hpp"

namespace mile {

/// Dataset locations; relative paths resolve against the config file's
/// directory. Images resolve against the directory of the file naming them.
struct DataConfig {
  std::filesystem::path origin_path;
  std::filesystem::path instruct_path;
  std::filesystem::path eval_path;
  std::filesystem::path templates;
  std::filesystem::path attribute_rules;  // empty = built-in rules
};

/// Everything an INI run config can say.
///
///   [model]  preset = paper|toy|micro, then any ModelConfig field
///   [plan]   plan = F,LoRA4,LoRA4  (or vit / jtm / dec separately),
///            ia3_cross_attention = true|false
///   [train]  any TrainConfig field except plan
///   [data]   origin_path, instruct_path, eval_path, templates, attribute_rules
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  Ia3Sites ia3;
  DataConfig data;

  // Cross-section checks (model, plan, train, and the dataset paths the
  // paradigm needs).
  void validate() const;
};

/// Parses `path`, then applies `overrides` of the form "section.key=value"
/// in order. Unknown sections or keys, malformed values and unreadable files
/// raise ConfigError.
RunConfig load_run_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

/// Same, from INI text; relative paths resolve against `base_dir`.
RunConfig parse_run_config(const std::string& text, const std::filesystem::path& base_dir,
                           const std::vector<std::string>& overrides = {});

}  // namespace mile
