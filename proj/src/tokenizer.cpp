// Copyright 2026 The miletune Authors
// SPDX-License-Identifier: Apache-2.0

#include "mile/tokenizer.hpp"

namespace mile {

std::vector<TokenId> ByteTokenizer::encode(std::string_view text) {
  std::vector<TokenId> ids;
  ids.reserve(text.size());
  for (unsigned char c : text) ids.push_back(static_cast<TokenId>(c));
  return ids;
}

std::vector<TokenId> ByteTokenizer::encode_question(std::string_view question) {
  std::vector<TokenId> ids;
  ids.reserve(question.size() + 2);
  ids.push_back(kBos);
  for (unsigned char c : question) ids.push_back(static_cast<TokenId>(c));
  ids.push_back(kSep);
  return ids;
}

std::vector<TokenId> ByteTokenizer::encode_answer(std::string_view answer) {
  auto ids = encode(answer);
  ids.push_back(kEos);
  return ids;
}

std::string ByteTokenizer::decode(const std::vector<TokenId>& ids) {
  std::string out;
  for (auto id : ids) {
    if (id == kEos) break;
    if (id >= 0 && id < 256) out.push_back(static_cast<char>(id));
  }
  return out;
}

}  // namespace mile
