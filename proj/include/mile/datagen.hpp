// Copyright 2026 The miletune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace mile {

enum class Attribute { kModality, kPlane, kShape, kSize, kOrgan, kLocation, kPathology, kOther };

inline constexpr std::array<Attribute, 8> kAttributes = {
    Attribute::kModality, Attribute::kPlane,    Attribute::kShape,     Attribute::kSize,
    Attribute::kOrgan,    Attribute::kLocation, Attribute::kPathology, Attribute::kOther};

std::string_view attribute_name(Attribute a);
Attribute parse_attribute(std::string_view name);

enum class AnswerType { kOpen, kClosed };

std::string_view answer_type_name(AnswerType t);
AnswerType parse_answer_type(std::string_view name);

/// One raw question/answer pair about an image.
struct QARecord {
  std::string image;
  std::string question;
  std::string answer;
  AnswerType answer_type = AnswerType::kOpen;
  Attribute attribute = Attribute::kOther;
};

/// Ordered keyword rules; the first attribute with a matching keyword wins.
struct AttributeRules {
  std::vector<std::pair<Attribute, std::vector<std::string>>> rules;

  static AttributeRules defaults();
  // JSON: {"rules": [{"attribute": "modality", "keywords": ["mri", ...]}, ...]}
  static AttributeRules load(const std::filesystem::path& path);
  std::string to_json() const;

  // Keywords match whole words (or whole word sequences) of the lowercased
  // question; returns kOther when nothing matches.
  Attribute classify(std::string_view question, std::string_view answer = {}) const;
};

// Line-delimited JSON {image, question, answer, answer_type, attribute?}; a
// missing attribute is classified with `rules`.
std::vector<QARecord> read_qa_records(const std::filesystem::path& path, const AttributeRules& rules);
void write_qa_records(const std::filesystem::path& path, const std::vector<QARecord>& records);

/// Attribute -> sorted, deduplicated answers of the open records.
using AttributePool = std::map<Attribute, std::vector<std::string>>;

AttributePool build_pools(const std::vector<QARecord>& records);

// Uniform integer in [0, n) from raw engine output (rejection sampling), so
// generated files do not depend on the standard library's distributions.
std::size_t uniform_index(std::mt19937_64& rng, std::size_t n);

/// k distinct same-attribute answers different from the record's answer. If
/// the pool is too small, all of it is used and the rest comes from the
/// `other` pool; the result is shorter than k only when both run out.
std::vector<std::string> sample_distractors(const QARecord& record, const AttributePool& pools, int k,
                                            std::mt19937_64& rng);

struct Template {
  std::string id;
  std::string text;  // contains {question}; opened templates also {options}
};

struct TemplateSet {
  std::vector<Template> closed;
  std::vector<Template> opened;

  // JSON: {"closed": [{"id", "text"}...], "opened": [...]}
  static TemplateSet load(const std::filesystem::path& path);
  const Template* find(std::string_view id) const;
  void validate() const;
};

struct InstructionRecord {
  std::string image;
  std::string question;  // original question, kept for validation/evaluation
  std::string instruction;
  std::string answer;
  AnswerType answer_type = AnswerType::kOpen;
  Attribute attribute = Attribute::kOther;
  std::string template_id;
  std::vector<std::string> options;  // rendered order; empty for closed records
};

// "A) first B) second ..."
std::string render_options(const std::vector<std::string>& options);

InstructionRecord render_instruction(const QARecord& record, const std::vector<std::string>& distractors,
                                     const TemplateSet& templates, std::mt19937_64& rng);

// Per-record generator seeded from (seed, index) so records are independent.
std::mt19937_64 record_rng(std::uint64_t seed, std::size_t index);

std::vector<InstructionRecord> generate_instructions(const std::vector<QARecord>& records,
                                                     const TemplateSet& templates, std::uint64_t seed,
                                                     int k);

std::string instruction_to_json_line(const InstructionRecord& r);
InstructionRecord instruction_from_json_line(std::string_view line);

struct DatagenManifest {
  std::uint64_t seed = 0;
  int k = 0;
  std::string templates_sha256;
  std::size_t n_records = 0;
  std::size_t n_open = 0;
  std::size_t n_closed = 0;
  std::map<std::string, std::size_t> per_attribute;
};

std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

/// Writes `out` (one JSON record per line) and `<out>.manifest.json`.
DatagenManifest generate_dataset(const std::vector<QARecord>& records,
                                 const std::filesystem::path& templates_path, std::uint64_t seed, int k,
                                 const std::filesystem::path& out);

std::vector<InstructionRecord> read_instruction_records(const std::filesystem::path& path);

struct ValidationReport {
  std::size_t checked = 0;
  std::size_t passed = 0;
  std::vector<std::string> failures;  // "record <i>: <reason>"

  bool ok() const { return checked > 0 && failures.empty(); }
};

/// Re-checks generated records against their sources: answers unchanged,
/// open records list the answer exactly once among distinct options whose
/// other entries are same-attribute pool members (or `other`-pool padding when
/// the attribute pool is too small), closed records carry no options, and the
/// instruction is the named template rendered with this record's fields.
ValidationReport validate_instructions(const std::vector<QARecord>& sources,
                                       const std::vector<InstructionRecord>& generated,
                                       const TemplateSet& templates, int k);

}  // namespace mile
