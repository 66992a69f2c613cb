// Copyright 2026 The retinavl Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Byte-level byte-pair tokenizer.
//
// Text is split into chunks (an optional leading space followed by a run of
// letters or digits, or any single other byte), every chunk starts as its raw
// bytes, and ranked merges are applied until none applies. Ids 0..255 are the
// bytes themselves, 256 + k is merge k, and the start and end markers follow.

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace retinavl::encoders {

using TokenIds = std::vector<int>;

class Tokenizer {
 public:
  /// Byte-only vocabulary (no merges).
  Tokenizer() : Tokenizer(std::vector<std::pair<std::string, std::string>>{}) {}
  /// Merges are pairs of byte strings, highest priority first.
  explicit Tokenizer(std::vector<std::pair<std::string, std::string>> merges);

  /// Reads a merges file: optional "#" header lines, then one "left right" pair per line in the
  /// printable byte alphabet (a space is written as U+0120).
  static Tokenizer load(const std::string& path);
  void save(const std::string& path) const;

  /// Learns up to n_merges merges from a corpus by repeated most-frequent-pair counting.
  /// Ties are broken by the lexicographically smallest pair so the result is deterministic.
  static Tokenizer learn(const std::vector<std::string>& corpus, int n_merges);

  /// [start, ...pieces..., end]; when longer than max_tokens the prefix is kept and the end marker
  /// re-appended, so the result has exactly max_tokens entries.
  TokenIds tokenize(const std::string& text, int max_tokens) const;
  /// Byte-exact inverse of tokenize for untruncated sequences; markers are skipped.
  std::string detokenize(const TokenIds& ids) const;

  int start_id() const { return 256 + static_cast<int>(merges_.size()); }
  int end_id() const { return start_id() + 1; }
  int vocab_size() const { return end_id() + 1; }
  const std::vector<std::pair<std::string, std::string>>& merges() const { return merges_; }

  /// Chunks the pre-tokenizer produces (exposed for tests and for learning merges).
  static std::vector<std::string> split_chunks(const std::string& text);
  /// The printable stand-in used for a byte in merge files.
  static std::string byte_to_printable(unsigned char b);

 private:
  TokenIds encode_chunk(const std::string& chunk) const;

  std::vector<std::pair<std::string, std::string>> merges_;
  std::map<std::pair<std::string, std::string>, int> rank_;
  std::map<std::string, int> piece_id_;
  std::vector<std::string> id_piece_;
};

}  // namespace retinavl::encoders
