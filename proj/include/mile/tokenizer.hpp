// Copyright 2026 The miletune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "mile/ops.hpp"

namespace mile {

/// Byte-level vocabulary: ids 0-255 are raw bytes, followed by four specials.
struct ByteTokenizer {
  static constexpr TokenId kPad = 256;
  static constexpr TokenId kBos = 257;
  static constexpr TokenId kEos = 258;
  static constexpr TokenId kSep = 259;
  static constexpr std::size_t kVocabSize = 260;

  static std::vector<TokenId> encode(std::string_view text);
  // JTM input: BOS, question bytes, SEP.
  static std::vector<TokenId> encode_question(std::string_view question);
  // Decoder targets: answer bytes, EOS.
  static std::vector<TokenId> encode_answer(std::string_view answer);
  // Drops special tokens and stops at the first EOS.
  static std::string decode(const std::vector<TokenId>& ids);
};

}  // namespace mile
