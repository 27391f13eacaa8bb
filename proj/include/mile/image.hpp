// Copyright 2026 The miletune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "mile/datagen.hpp"
#include "mile/tensor.hpp"

namespace mile {

/// 8-bit RGB image, row-major height × width × 3.
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> pixels;

  static constexpr std::size_t kChannels = 3;
};

// Binary PPM (P6, maxval 255).
Image read_ppm(const std::filesystem::path& path);
void write_ppm(const std::filesystem::path& path, const Image& image);

// Pixels scaled to [0, 1] as an [H × W × 3] tensor.
template <typename T>
Tensor<T> image_tensor(const Image& image);

/// Attribute values drawn into one synthetic scan: a lesion of some shape,
/// size and location over an organ-specific texture, with a modality-specific
/// palette.
struct ToyScene {
  std::string shape;
  std::string size;
  std::string location;
  std::string organ;
  std::string modality;
  // Drawn only as a faint brightness shift of the lesion.
  std::string lesion_type;
};

struct ToyVocabulary {
  static const std::vector<std::string>& shapes();
  static const std::vector<std::string>& sizes();
  static const std::vector<std::string>& locations();
  static const std::vector<std::string>& organs();
  static const std::vector<std::string>& modalities();
  static const std::vector<std::string>& lesion_types();
};

// Finding label "<organ> <lesion type>", e.g. "liver cyst": 25 values, a
// long-tail answer vocabulary whose second half is hard to see.
std::string toy_finding(const ToyScene& scene);

ToyScene random_scene(std::mt19937_64& rng);
Image render_scene(const ToyScene& scene, std::size_t image_size, std::mt19937_64& rng);

/// Open and closed questions about a scene; `image` is the record's image
/// reference. Attributes are set explicitly.
std::vector<QARecord> scene_questions(const ToyScene& scene, const std::string& image,
                                      std::mt19937_64& rng);

struct ToyCorpusOptions {
  std::size_t num_images = 64;
  // Questions kept per image, sampled from scene_questions (0 = all).
  std::size_t questions_per_image = 0;
  std::size_t image_size = 32;
  std::uint64_t seed = 0;
  // Keep only questions about these attributes (empty = all).
  std::vector<Attribute> attributes;
};

/// Writes `<dir>/images/<n>.ppm` and `<dir>/<name>` (QA records, image paths
/// relative to `dir`). Returns the records.
std::vector<QARecord> write_toy_corpus(const std::filesystem::path& dir, const std::string& name,
                                       const ToyCorpusOptions& options);

}  // namespace mile
