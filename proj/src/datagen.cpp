// Copyright 2026 The miletune Authors
// SPDX-License-Identifier: Apache-2.0

#include "mile/datagen.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cctype>
#include <fstream>
#include <iomanip>
#include <limits>
#include <set>
#include <sstream>

#include "json.hpp"
#include "mile/errors.hpp"

namespace mile {
namespace {

using Json = nlohmann::ordered_json;

constexpr std::array<std::string_view, 8> kAttributeNames = {
    "modality", "plane", "shape", "size", "organ", "location", "pathology", "other"};

// Lowercases and turns every character outside [a-z0-9-] into a space, then
// pads with spaces so " keyword " finds whole words.
std::string word_text(std::string_view s) {
  std::string out = " ";
  for (char ch : s) {
    const auto c = static_cast<unsigned char>(ch);
    out.push_back(std::isalnum(c) || ch == '-' ? static_cast<char>(std::tolower(c)) : ' ');
  }
  out.push_back(' ');
  return out;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InputError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

Json parse_json(std::string_view text, const std::string& context) {
  try {
    return Json::parse(text);
  } catch (const Json::exception& e) {
    throw InputError(context + ": " + e.what());
  }
}

std::string required_string(const Json& j, const char* key, const std::string& context) {
  if (!j.contains(key) || !j[key].is_string()) {
    throw InputError(context + ": missing string field '" + key + "'");
  }
  return j[key].get<std::string>();
}

std::string fill_template(const Template& t, const std::string& question, const std::string& options) {
  // Substitute into a copy in one pass so placeholder-like text inside the
  // question is never re-expanded.
  std::string out;
  const std::string& s = t.text;
  for (std::size_t i = 0; i < s.size();) {
    if (s.compare(i, 10, "{question}") == 0) {
      out += question;
      i += 10;
    } else if (s.compare(i, 9, "{options}") == 0) {
      out += options;
      i += 9;
    } else {
      out.push_back(s[i++]);
    }
  }
  return out;
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> lines;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    lines.push_back(line);
  }
  return lines;
}

std::vector<std::string> candidates_excluding(const AttributePool& pools, Attribute a,
                                              const std::set<std::string>& exclude) {
  std::vector<std::string> out;
  if (auto it = pools.find(a); it != pools.end()) {
    for (const auto& s : it->second) {
      if (!exclude.count(s)) out.push_back(s);
    }
  }
  return out;
}

}  // namespace

std::string_view attribute_name(Attribute a) { return kAttributeNames[static_cast<std::size_t>(a)]; }

Attribute parse_attribute(std::string_view name) {
  for (std::size_t i = 0; i < kAttributeNames.size(); ++i) {
    if (kAttributeNames[i] == name) return kAttributes[i];
  }
  throw InputError("unknown attribute '" + std::string(name) + "'");
}

std::string_view answer_type_name(AnswerType t) { return t == AnswerType::kOpen ? "open" : "closed"; }

AnswerType parse_answer_type(std::string_view name) {
  std::string s;
  for (char ch : name) s.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
  if (s == "open" || s == "opened") return AnswerType::kOpen;
  if (s == "closed") return AnswerType::kClosed;
  throw InputError("unknown answer_type '" + std::string(name) + "' (expected open or closed)");
}

AttributeRules AttributeRules::defaults() {
  AttributeRules r;
  r.rules = {
      {Attribute::kModality,
       {"modality", "mri", "ct", "x-ray", "xray", "ultrasound", "t1", "t2", "flair", "pet",
        "imaging", "scan", "how was this image taken", "what kind of image", "type of image"}},
      {Attribute::kPlane, {"plane", "axial", "coronal", "sagittal", "view", "orientation", "slice"}},
      {Attribute::kShape, {"shape", "shaped", "round", "oval", "irregular", "contour", "outline"}},
      {Attribute::kSize, {"size", "how big", "how large", "large", "small", "big", "larger", "smaller",
                          "diameter", "enlarged", "width", "area"}},
      {Attribute::kOrgan, {"organ", "organs", "liver", "lung", "lungs", "heart", "kidney", "kidneys",
                           "brain", "spleen", "stomach", "bladder", "colon", "pancreas", "body part",
                           "part of the body", "tissue", "texture"}},
      {Attribute::kLocation, {"where", "location", "located", "position", "left", "right", "upper",
                              "lower", "side", "quadrant", "region", "corner", "center"}},
      {Attribute::kPathology, {"abnormal", "abnormality", "abnormalities", "disease", "diseases",
                               "lesion", "tumor", "mass", "nodule", "pathology", "diagnosis",
                               "fracture", "effusion", "pneumonia", "edema", "normal", "healthy"}},
  };
  return r;
}

AttributeRules AttributeRules::load(const std::filesystem::path& path) {
  const auto j = parse_json(read_text(path), path.string());
  AttributeRules r;
  if (!j.contains("rules") || !j["rules"].is_array()) {
    throw InputError(path.string() + ": expected a 'rules' array");
  }
  for (const auto& rule : j["rules"]) {
    const auto attr = parse_attribute(required_string(rule, "attribute", path.string()));
    std::vector<std::string> kws;
    for (const auto& kw : rule.at("keywords")) kws.push_back(kw.get<std::string>());
    r.rules.emplace_back(attr, std::move(kws));
  }
  return r;
}

std::string AttributeRules::to_json() const {
  Json rules = Json::array();
  for (const auto& [a, kws] : this->rules) {
    rules.push_back(Json{{"attribute", attribute_name(a)}, {"keywords", kws}});
  }
  return Json{{"rules", rules}}.dump(2) + "\n";
}

Attribute AttributeRules::classify(std::string_view question, std::string_view /*answer*/) const {
  const auto text = word_text(question);
  for (const auto& [attr, keywords] : rules) {
    for (const auto& kw : keywords) {
      if (text.find(word_text(kw)) != std::string::npos) return attr;
    }
  }
  return Attribute::kOther;
}

std::vector<QARecord> read_qa_records(const std::filesystem::path& path, const AttributeRules& rules) {
  std::vector<QARecord> out;
  std::size_t lineno = 0;
  for (const auto& line : lines_of(read_text(path))) {
    ++lineno;
    const auto ctx = path.string() + " record " + std::to_string(lineno);
    const auto j = parse_json(line, ctx);
    QARecord r;
    r.image = required_string(j, "image", ctx);
    r.question = required_string(j, "question", ctx);
    r.answer = required_string(j, "answer", ctx);
    if (r.question.empty()) throw InputError(ctx + ": empty question");
    r.answer_type = parse_answer_type(required_string(j, "answer_type", ctx));
    if (j.contains("attribute") && !j["attribute"].is_null()) {
      r.attribute = parse_attribute(required_string(j, "attribute", ctx));
    } else {
      r.attribute = rules.classify(r.question, r.answer);
    }
    out.push_back(std::move(r));
  }
  return out;
}

void write_qa_records(const std::filesystem::path& path, const std::vector<QARecord>& records) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot open '" + path.string() + "' for writing");
  for (const auto& r : records) {
    os << Json{{"image", r.image},
               {"question", r.question},
               {"answer", r.answer},
               {"answer_type", answer_type_name(r.answer_type)},
               {"attribute", attribute_name(r.attribute)}}
              .dump()
       << '\n';
  }
  if (!os) throw Error("write failed for '" + path.string() + "'");
}

AttributePool build_pools(const std::vector<QARecord>& records) {
  if (records.empty()) throw InputError("build_pools needs at least one record");
  std::map<Attribute, std::set<std::string>> sets;
  for (const auto& r : records) {
    if (r.answer_type == AnswerType::kOpen) sets[r.attribute].insert(r.answer);
  }
  AttributePool pools;
  for (auto& [a, s] : sets) pools[a] = std::vector<std::string>(s.begin(), s.end());
  return pools;
}

std::size_t uniform_index(std::mt19937_64& rng, std::size_t n) {
  if (n == 0) throw InputError("uniform_index: empty range");
  const std::uint64_t range = static_cast<std::uint64_t>(n);
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % range;
  std::uint64_t x = 0;
  do {
    x = rng();
  } while (x >= limit);
  return static_cast<std::size_t>(x % range);
}

namespace {

// Draws `count` entries uniformly without replacement (partial Fisher-Yates).
std::vector<std::string> draw(std::vector<std::string> pool, std::size_t count, std::mt19937_64& rng) {
  count = std::min(count, pool.size());
  for (std::size_t i = 0; i < count; ++i) {
    const auto j = i + uniform_index(rng, pool.size() - i);
    std::swap(pool[i], pool[j]);
  }
  pool.resize(count);
  return pool;
}

}  // namespace

std::vector<std::string> sample_distractors(const QARecord& record, const AttributePool& pools, int k,
                                            std::mt19937_64& rng) {
  if (k < 0) throw InputError("distractor count k must be non-negative, got " + std::to_string(k));
  const auto want = static_cast<std::size_t>(k);
  std::set<std::string> exclude = {record.answer};
  auto own = candidates_excluding(pools, record.attribute, exclude);
  auto picked = draw(std::move(own), want, rng);
  if (picked.size() < want && record.attribute != Attribute::kOther) {
    exclude.insert(picked.begin(), picked.end());
    auto pad = draw(candidates_excluding(pools, Attribute::kOther, exclude), want - picked.size(), rng);
    picked.insert(picked.end(), pad.begin(), pad.end());
  }
  return picked;
}

TemplateSet TemplateSet::load(const std::filesystem::path& path) {
  const auto j = parse_json(read_text(path), path.string());
  TemplateSet set;
  auto family = [&](const char* key, std::vector<Template>& out) {
    if (!j.contains(key) || !j[key].is_array()) {
      throw ConfigError(path.string() + ": expected a '" + key + "' template array");
    }
    for (const auto& t : j[key]) {
      out.push_back({required_string(t, "id", path.string()), required_string(t, "text", path.string())});
    }
  };
  family("closed", set.closed);
  family("opened", set.opened);
  set.validate();
  return set;
}

const Template* TemplateSet::find(std::string_view id) const {
  for (const auto* fam : {&closed, &opened}) {
    for (const auto& t : *fam) {
      if (t.id == id) return &t;
    }
  }
  return nullptr;
}

void TemplateSet::validate() const {
  if (closed.empty()) throw ConfigError("template set has no closed templates");
  if (opened.empty()) throw ConfigError("template set has no opened templates");
  std::set<std::string> ids;
  for (const auto& t : closed) {
    if (t.text.find("{question}") == std::string::npos) {
      throw ConfigError("closed template '" + t.id + "' lacks {question}");
    }
    if (t.text.find("{options}") != std::string::npos) {
      throw ConfigError("closed template '" + t.id + "' must not contain {options}");
    }
    if (!ids.insert(t.id).second) throw ConfigError("duplicate template id '" + t.id + "'");
  }
  for (const auto& t : opened) {
    if (t.text.find("{question}") == std::string::npos || t.text.find("{options}") == std::string::npos) {
      throw ConfigError("opened template '" + t.id + "' needs {question} and {options}");
    }
    if (!ids.insert(t.id).second) throw ConfigError("duplicate template id '" + t.id + "'");
  }
}

std::string render_options(const std::vector<std::string>& options) {
  std::string out;
  for (std::size_t i = 0; i < options.size(); ++i) {
    if (i >= 26) throw InputError("at most 26 options can be lettered");
    if (i > 0) out.push_back(' ');
    out.push_back(static_cast<char>('A' + i));
    out += ") " + options[i];
  }
  return out;
}

InstructionRecord render_instruction(const QARecord& record, const std::vector<std::string>& distractors,
                                     const TemplateSet& templates, std::mt19937_64& rng) {
  InstructionRecord out;
  out.image = record.image;
  out.question = record.question;
  out.answer = record.answer;
  out.answer_type = record.answer_type;
  out.attribute = record.attribute;
  const bool open = record.answer_type == AnswerType::kOpen;
  const auto& family = open ? templates.opened : templates.closed;
  if (family.empty()) {
    throw ConfigError(std::string("no ") + (open ? "opened" : "closed") + " templates available");
  }
  const auto& tmpl = family[uniform_index(rng, family.size())];
  out.template_id = tmpl.id;
  if (open) {
    out.options = distractors;
    out.options.push_back(record.answer);
    for (std::size_t i = out.options.size(); i > 1; --i) {
      std::swap(out.options[i - 1], out.options[uniform_index(rng, i)]);
    }
  }
  out.instruction = fill_template(tmpl, record.question, render_options(out.options));
  return out;
}

std::mt19937_64 record_rng(std::uint64_t seed, std::size_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(std::uint64_t(index) >> 32)};
  return std::mt19937_64(seq);
}

std::vector<InstructionRecord> generate_instructions(const std::vector<QARecord>& records,
                                                     const TemplateSet& templates, std::uint64_t seed,
                                                     int k) {
  templates.validate();
  const auto pools = build_pools(records);
  std::vector<InstructionRecord> out;
  out.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    auto rng = record_rng(seed, i);
    const auto& r = records[i];
    std::vector<std::string> distractors;
    if (r.answer_type == AnswerType::kOpen) distractors = sample_distractors(r, pools, k, rng);
    out.push_back(render_instruction(r, distractors, templates, rng));
  }
  return out;
}

std::string instruction_to_json_line(const InstructionRecord& r) {
  return Json{{"image", r.image},
              {"instruction", r.instruction},
              {"answer", r.answer},
              {"template_id", r.template_id},
              {"options", r.options},
              {"question", r.question},
              {"answer_type", answer_type_name(r.answer_type)},
              {"attribute", attribute_name(r.attribute)}}
      .dump();
}

InstructionRecord instruction_from_json_line(std::string_view line) {
  const auto j = parse_json(line, "instruction record");
  const std::string ctx = "instruction record";
  InstructionRecord r;
  r.image = required_string(j, "image", ctx);
  r.instruction = required_string(j, "instruction", ctx);
  r.answer = required_string(j, "answer", ctx);
  r.template_id = required_string(j, "template_id", ctx);
  r.question = required_string(j, "question", ctx);
  r.answer_type = parse_answer_type(required_string(j, "answer_type", ctx));
  r.attribute = parse_attribute(required_string(j, "attribute", ctx));
  if (!j.contains("options") || !j["options"].is_array()) throw InputError(ctx + ": missing options array");
  for (const auto& o : j["options"]) r.options.push_back(o.get<std::string>());
  return r;
}

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error("SHA-256 computation failed");
  }
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
  return os.str();
}

std::string sha256_file(const std::filesystem::path& path) { return sha256_hex(read_text(path)); }

DatagenManifest generate_dataset(const std::vector<QARecord>& records,
                                 const std::filesystem::path& templates_path, std::uint64_t seed, int k,
                                 const std::filesystem::path& out) {
  const auto templates = TemplateSet::load(templates_path);
  const auto generated = generate_instructions(records, templates, seed, k);
  DatagenManifest m;
  m.seed = seed;
  m.k = k;
  m.templates_sha256 = sha256_file(templates_path);
  m.n_records = generated.size();
  for (const auto& r : generated) {
    (r.answer_type == AnswerType::kOpen ? m.n_open : m.n_closed) += 1;
    m.per_attribute[std::string(attribute_name(r.attribute))] += 1;
  }
  if (out.has_parent_path()) std::filesystem::create_directories(out.parent_path());
  {
    std::ofstream os(out, std::ios::binary | std::ios::trunc);
    if (!os) throw Error("cannot open '" + out.string() + "' for writing");
    for (const auto& r : generated) os << instruction_to_json_line(r) << '\n';
    if (!os) throw Error("write failed for '" + out.string() + "'");
  }
  auto manifest_path = out;
  manifest_path += ".manifest.json";
  std::ofstream ms(manifest_path, std::ios::binary | std::ios::trunc);
  if (!ms) throw Error("cannot open '" + manifest_path.string() + "' for writing");
  Json per_attr = Json::object();
  for (const auto& [a, n] : m.per_attribute) per_attr[a] = n;
  ms << Json{{"format_version", 1},
             {"seed", m.seed},
             {"distractors", m.k},
             {"templates_sha256", m.templates_sha256},
             {"n_records", m.n_records},
             {"n_open", m.n_open},
             {"n_closed", m.n_closed},
             {"per_attribute", per_attr}}
            .dump(2)
     << '\n';
  if (!ms) throw Error("write failed for '" + manifest_path.string() + "'");
  return m;
}

std::vector<InstructionRecord> read_instruction_records(const std::filesystem::path& path) {
  std::vector<InstructionRecord> out;
  std::size_t lineno = 0;
  for (const auto& line : lines_of(read_text(path))) {
    ++lineno;
    try {
      out.push_back(instruction_from_json_line(line));
    } catch (const InputError& e) {
      throw InputError(path.string() + " record " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

ValidationReport validate_instructions(const std::vector<QARecord>& sources,
                                       const std::vector<InstructionRecord>& generated,
                                       const TemplateSet& templates, int k) {
  ValidationReport report;
  if (sources.size() != generated.size()) {
    report.failures.push_back("record count " + std::to_string(generated.size()) + " != source count " +
                              std::to_string(sources.size()));
    return report;
  }
  const auto pools = build_pools(sources);
  auto in_pool = [&pools](Attribute a, const std::string& s) {
    auto it = pools.find(a);
    return it != pools.end() && std::binary_search(it->second.begin(), it->second.end(), s);
  };
  for (std::size_t i = 0; i < generated.size(); ++i) {
    const auto& src = sources[i];
    const auto& g = generated[i];
    std::vector<std::string> why;
    if (g.answer != src.answer) why.push_back("answer differs from source");
    if (g.question != src.question) why.push_back("question differs from source");
    if (g.image != src.image) why.push_back("image differs from source");
    if (g.answer_type != src.answer_type) why.push_back("answer_type differs from source");
    if (g.attribute != src.attribute) why.push_back("attribute differs from source");
    const Template* t = templates.find(g.template_id);
    const bool open = src.answer_type == AnswerType::kOpen;
    if (t == nullptr) {
      why.push_back("unknown template '" + g.template_id + "'");
    } else {
      const auto& fam = open ? templates.opened : templates.closed;
      if (std::none_of(fam.begin(), fam.end(), [&](const Template& x) { return x.id == t->id; })) {
        why.push_back("template '" + g.template_id + "' is from the wrong family");
      }
      if (g.instruction != fill_template(*t, src.question, render_options(g.options))) {
        why.push_back("instruction is not the template rendered with this record");
      }
    }
    if (!open) {
      if (!g.options.empty()) why.push_back("closed record carries options");
    } else {
      const auto hits = std::count(g.options.begin(), g.options.end(), src.answer);
      if (hits != 1) why.push_back("answer appears " + std::to_string(hits) + " times among options");
      std::set<std::string> distinct(g.options.begin(), g.options.end());
      if (distinct.size() != g.options.size()) why.push_back("duplicate options");
      const auto own = candidates_excluding(pools, src.attribute, {src.answer});
      const std::size_t want = static_cast<std::size_t>(std::max(k, 0));
      const bool padded = own.size() < want;
      std::size_t expected = std::min(want, own.size());
      if (padded && src.attribute != Attribute::kOther) {
        std::set<std::string> excl(own.begin(), own.end());
        excl.insert(src.answer);
        expected += std::min(want - own.size(), candidates_excluding(pools, Attribute::kOther, excl).size());
      }
      if (g.options.size() != expected + 1) {
        why.push_back("expected " + std::to_string(expected + 1) + " options, found " +
                      std::to_string(g.options.size()));
      }
      for (const auto& o : g.options) {
        if (o == src.answer) continue;
        const bool ok = in_pool(src.attribute, o) || (padded && in_pool(Attribute::kOther, o));
        if (!ok) why.push_back("distractor '" + o + "' is not a same-attribute pool answer");
      }
    }
    ++report.checked;
    if (why.empty()) {
      ++report.passed;
    } else {
      std::string msg = "record " + std::to_string(i) + ":";
      for (const auto& w : why) msg += " " + w + ";";
      report.failures.push_back(msg);
    }
  }
  return report;
}

}  // namespace mile
