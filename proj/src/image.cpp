// Copyright 2026 The miletune Authors
// SPDX-License-Identifier: Apache-2.0

#include "mile/image.hpp"

#include <algorithm>
#include <cmath>
#include <array>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "mile/errors.hpp"

namespace mile {
namespace {

// Reads the next whitespace-separated header token, skipping # comments.
std::string ppm_token(std::istream& is, const std::string& context) {
  std::string tok;
  while (is) {
    const int ch = is.get();
    if (ch == EOF) break;
    if (ch == '#') {
      std::string ignored;
      std::getline(is, ignored);
      continue;
    }
    if (std::isspace(ch)) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok.push_back(static_cast<char>(ch));
  }
  if (tok.empty()) throw InputError(context + ": truncated PPM header");
  return tok;
}

std::size_t ppm_number(std::istream& is, const std::string& context) {
  const auto tok = ppm_token(is, context);
  try {
    std::size_t used = 0;
    const auto v = std::stoul(tok, &used);
    if (used != tok.size()) throw std::invalid_argument(tok);
    return v;
  } catch (const std::exception&) {
    throw InputError(context + ": bad PPM header field '" + tok + "'");
  }
}

const std::string& pick(const std::vector<std::string>& values, std::mt19937_64& rng) {
  return values[uniform_index(rng, values.size())];
}

std::size_t index_of(const std::vector<std::string>& values, const std::string& v) {
  const auto it = std::find(values.begin(), values.end(), v);
  if (it == values.end()) throw InputError("unknown toy attribute value '" + v + "'");
  return static_cast<std::size_t>(it - values.begin());
}

struct Palette {
  double background;
  double lesion;
  double tint[3];
};

}  // namespace

Image read_ppm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InputError("cannot open image '" + path.string() + "'");
  const auto ctx = "image '" + path.string() + "'";
  if (ppm_token(is, ctx) != "P6") throw InputError(ctx + ": not a binary PPM (P6)");
  Image img;
  img.width = ppm_number(is, ctx);
  img.height = ppm_number(is, ctx);
  const auto maxval = ppm_number(is, ctx);
  if (maxval != 255) throw InputError(ctx + ": only 8-bit PPM is supported");
  if (img.width == 0 || img.height == 0) throw InputError(ctx + ": empty image");
  img.pixels.resize(img.width * img.height * Image::kChannels);
  is.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (static_cast<std::size_t>(is.gcount()) != img.pixels.size()) throw InputError(ctx + ": truncated pixel data");
  return img;
}

void write_ppm(const std::filesystem::path& path, const Image& image) {
  if (image.pixels.size() != image.width * image.height * Image::kChannels) {
    throw DimensionError("write_ppm: pixel buffer does not match " + std::to_string(image.height) + "x" +
                         std::to_string(image.width) + "x3");
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot open '" + path.string() + "' for writing");
  os << "P6\n" << image.width << ' ' << image.height << "\n255\n";
  os.write(reinterpret_cast<const char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
  if (!os) throw Error("write failed for '" + path.string() + "'");
}

template <typename T>
Tensor<T> image_tensor(const Image& image) {
  std::vector<T> v(image.pixels.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<T>(image.pixels[i]) / T(255);
  return Tensor<T>::from({image.height, image.width, Image::kChannels}, std::move(v));
}

template Tensor<float> image_tensor(const Image&);
template Tensor<double> image_tensor(const Image&);

const std::vector<std::string>& ToyVocabulary::shapes() {
  static const std::vector<std::string> v = {"circle", "square", "triangle", "diamond", "cross"};
  return v;
}
const std::vector<std::string>& ToyVocabulary::sizes() {
  static const std::vector<std::string> v = {"small", "medium", "large"};
  return v;
}
const std::vector<std::string>& ToyVocabulary::locations() {
  static const std::vector<std::string> v = {"upper left", "upper right", "lower left", "lower right", "center"};
  return v;
}
const std::vector<std::string>& ToyVocabulary::organs() {
  static const std::vector<std::string> v = {"liver", "lung", "brain", "kidney", "heart"};
  return v;
}
const std::vector<std::string>& ToyVocabulary::modalities() {
  static const std::vector<std::string> v = {"ct", "mri", "x-ray", "ultrasound"};
  return v;
}

const std::vector<std::string>& ToyVocabulary::lesion_types() {
  static const std::vector<std::string> v = {"cyst", "mass", "nodule", "abscess", "hematoma"};
  return v;
}

std::string toy_finding(const ToyScene& scene) {
  return scene.organ + " " + scene.lesion_type;
}

ToyScene random_scene(std::mt19937_64& rng) {
  ToyScene s;
  s.shape = pick(ToyVocabulary::shapes(), rng);
  s.size = pick(ToyVocabulary::sizes(), rng);
  s.location = pick(ToyVocabulary::locations(), rng);
  s.organ = pick(ToyVocabulary::organs(), rng);
  s.modality = pick(ToyVocabulary::modalities(), rng);
  s.lesion_type = pick(ToyVocabulary::lesion_types(), rng);
  return s;
}

Image render_scene(const ToyScene& scene, std::size_t image_size, std::mt19937_64& rng) {
  if (image_size < 16) throw ConfigError("toy images need at least 16 pixels per side");
  static const Palette kPalettes[] = {
      {0.35, 0.95, {1.0, 1.0, 1.0}},  // ct: grey body, bright lesion
      {0.12, 0.75, {0.7, 0.8, 1.0}},  // mri: dark, blue tint
      {0.80, 0.15, {1.0, 1.0, 1.0}},  // x-ray: light body, dark lesion
      {0.20, 0.60, {1.0, 0.8, 0.5}},  // ultrasound: amber tint
  };
  const auto& pal = kPalettes[index_of(ToyVocabulary::modalities(), scene.modality)];
  const auto organ = index_of(ToyVocabulary::organs(), scene.organ);
  const double n = static_cast<double>(image_size);
  const double quarter = n / 4, three = 3 * n / 4 - 1, mid = n / 2 - 0.5;
  static const double kCenters[5][2] = {{0, 0}, {0, 1}, {1, 0}, {1, 1}, {0.5, 0.5}};
  const auto loc = index_of(ToyVocabulary::locations(), scene.location);
  const double cy = loc == 4 ? mid : (kCenters[loc][0] == 0 ? quarter : three);
  const double cx = loc == 4 ? mid : (kCenters[loc][1] == 0 ? quarter : three);
  const double radius = n * std::array<double, 3>{0.09, 0.15, 0.22}[index_of(ToyVocabulary::sizes(), scene.size)];
  const auto shape = index_of(ToyVocabulary::shapes(), scene.shape);

  // The lesion type only shifts lesion brightness slightly: a subtle finding.
  const double subtle =
      0.025 * (static_cast<double>(index_of(ToyVocabulary::lesion_types(), scene.lesion_type)) - 2.0) *
      (pal.lesion > pal.background ? 1.0 : -1.0);
  std::uniform_real_distribution<double> noise(-0.03, 0.03);
  Image img;
  img.height = img.width = image_size;
  img.pixels.resize(image_size * image_size * Image::kChannels);
  for (std::size_t y = 0; y < image_size; ++y) {
    for (std::size_t x = 0; x < image_size; ++x) {
      double texture = 0;
      switch (organ) {
        case 0: texture = (y / 2) % 2 ? 0.08 : -0.08; break;               // liver: horizontal bands
        case 1: texture = (x / 2) % 2 ? 0.08 : -0.08; break;               // lung: vertical bands
        case 2: texture = ((x / 4) + (y / 4)) % 2 ? 0.08 : -0.08; break;   // brain: checkerboard
        case 3: texture = ((x + y) / 3) % 2 ? 0.08 : -0.08; break;         // kidney: diagonal bands
        default: texture = (x % 4 == 1 && y % 4 == 1) ? 0.16 : 0.0; break;  // heart: dots
      }
      const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
      bool inside = false;
      switch (shape) {
        case 0: inside = dx * dx + dy * dy <= radius * radius; break;
        case 1: inside = std::max(std::abs(dx), std::abs(dy)) <= radius * 0.85; break;
        case 2: inside = dy >= -radius && dy <= radius && std::abs(dx) <= (dy + radius) / 2; break;
        case 3: inside = std::abs(dx) + std::abs(dy) <= radius; break;
        default:
          inside = std::max(std::abs(dx), std::abs(dy)) <= radius &&
                   (std::abs(dx) <= radius / 3 || std::abs(dy) <= radius / 3);
          break;
      }
      const double base = inside ? pal.lesion + subtle : pal.background + texture;
      const double eps = noise(rng);
      for (std::size_t c = 0; c < Image::kChannels; ++c) {
        const double v = std::clamp((base + eps) * pal.tint[c], 0.0, 1.0);
        img.pixels[(y * image_size + x) * Image::kChannels + c] = static_cast<std::uint8_t>(std::lround(v * 255));
      }
    }
  }
  return img;
}

std::vector<QARecord> scene_questions(const ToyScene& scene, const std::string& image, std::mt19937_64& rng) {
  auto open = [&](std::vector<std::string> phrasings, std::string answer, Attribute a) {
    return QARecord{image, pick(phrasings, rng), std::move(answer), AnswerType::kOpen, a};
  };
  auto closed = [&](std::string question, bool yes, Attribute a) {
    return QARecord{image, std::move(question), yes ? "yes" : "no", AnswerType::kClosed, a};
  };
  auto maybe_other = [&](const std::vector<std::string>& values, const std::string& truth) {
    // Half the closed questions ask about the true value.
    if (uniform_index(rng, 2) == 0) return truth;
    std::string v = truth;
    while (v == truth) v = pick(values, rng);
    return v;
  };
  std::vector<QARecord> out;
  out.push_back(open({"What shape is the lesion?", "What is the shape of the lesion?"}, scene.shape,
                     Attribute::kShape));
  out.push_back(open({"What size is the lesion?", "How large is the lesion?"}, scene.size, Attribute::kSize));
  out.push_back(open({"Where is the lesion located?", "Where is the lesion?"}, scene.location,
                     Attribute::kLocation));
  out.push_back(open({"Which organ is shown in the image?", "What organ is this?"}, scene.organ,
                     Attribute::kOrgan));
  out.push_back(open({"What modality is used to take this image?", "What imaging modality is this?"},
                     scene.modality, Attribute::kModality));
  out.push_back(open({"What abnormality is seen in the image?", "What is the abnormality?"}, toy_finding(scene),
                     Attribute::kPathology));
  const auto m = maybe_other(ToyVocabulary::modalities(), scene.modality);
  out.push_back(closed(std::string(m[0] == 'u' ? "Is this an " : "Is this a ") + m + " image?", m == scene.modality, Attribute::kModality));
  const auto s = maybe_other(ToyVocabulary::shapes(), scene.shape);
  out.push_back(closed("Is the lesion a " + s + "?", s == scene.shape, Attribute::kShape));
  const auto o = maybe_other(ToyVocabulary::organs(), scene.organ);
  out.push_back(closed("Does the image show the " + o + "?", o == scene.organ, Attribute::kOrgan));
  const bool left = scene.location.find("left") != std::string::npos;
  const bool right = scene.location.find("right") != std::string::npos;
  if (uniform_index(rng, 2) == 0) {
    out.push_back(closed("Is the lesion on the left side?", left, Attribute::kLocation));
  } else {
    out.push_back(closed("Is the lesion on the right side?", right, Attribute::kLocation));
  }
  out.push_back(closed("Is the lesion large?", scene.size == "large", Attribute::kSize));
  return out;
}

std::vector<QARecord> write_toy_corpus(const std::filesystem::path& dir, const std::string& name,
                                       const ToyCorpusOptions& options) {
  std::filesystem::create_directories(dir / "images");
  std::mt19937_64 rng(options.seed);
  std::vector<QARecord> records;
  for (std::size_t i = 0; i < options.num_images; ++i) {
    const auto scene = random_scene(rng);
    std::ostringstream file;
    file << "images/" << name.substr(0, name.find('.')) << "_" << std::setw(4) << std::setfill('0') << i << ".ppm";
    write_ppm(dir / file.str(), render_scene(scene, options.image_size, rng));
    auto qs = scene_questions(scene, file.str(), rng);
    if (!options.attributes.empty()) {
      std::erase_if(qs, [&](const QARecord& r) {
        return std::find(options.attributes.begin(), options.attributes.end(), r.attribute) ==
               options.attributes.end();
      });
    }
    if (options.questions_per_image > 0 && options.questions_per_image < qs.size()) {
      for (std::size_t j = 0; j < options.questions_per_image; ++j) {
        std::swap(qs[j], qs[j + uniform_index(rng, qs.size() - j)]);
      }
      qs.resize(options.questions_per_image);
    }
    records.insert(records.end(), qs.begin(), qs.end());
  }
  write_qa_records(dir / name, records);
  return records;
}

}  // namespace mile
