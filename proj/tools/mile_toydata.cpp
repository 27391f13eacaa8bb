// Copyright 2026 The miletune Authors
// SPDX-License-Identifier: Apache-2.0

// Writes a synthetic toy VQA corpus: PPM scans of geometric lesions plus
// line-delimited QA records about their attributes.

#include <CLI11.hpp>
#include <iostream>

#include "mile/cli.hpp"
#include "mile/image.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Generate a synthetic toy VQA corpus"};
  std::string dir, name = "qa.jsonl";
  mile::ToyCorpusOptions options;
  app.add_option("--out-dir", dir, "Output directory (images/ and the records file)")->required();
  app.add_option("--name", name, "Records file name inside --out-dir");
  app.add_option("--images", options.num_images, "Number of scans");
  app.add_option("--questions-per-image", options.questions_per_image, "Questions kept per scan (0 = all 11)");
  app.add_option("--image-size", options.image_size, "Side length in pixels");
  app.add_option("--seed", options.seed, "Generator seed");
  std::vector<std::string> attributes;
  app.add_option("--attributes", attributes, "Keep only questions about these attributes")->delimiter(',');
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : mile::kExitUsage;
  }
  try {
    for (const auto& a : attributes) options.attributes.push_back(mile::parse_attribute(a));
    const auto records = mile::write_toy_corpus(dir, name, options);
    std::cout << "wrote " << records.size() << " records about " << options.num_images << " scans to "
              << dir << "/" << name << "\n";
  } catch (const std::exception& e) {
    std::cerr << "mile-toydata: " << e.what() << "\n";
    return mile::kExitFailure;
  }
  return mile::kExitOk;
}
