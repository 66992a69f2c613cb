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

#include "retinavl/encoders/tokenizer.hpp"

#include "retinavl/core/error.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <limits>
#include <sstream>

namespace retinavl::encoders {

namespace {

// Printable code point for each byte, following the usual byte-level BPE table.
std::vector<std::uint32_t> byte_code_points() {
  std::vector<std::uint32_t> cp(256, 0);
  std::vector<bool> direct(256, false);
  for (int b = '!'; b <= '~'; ++b) direct[static_cast<std::size_t>(b)] = true;
  for (int b = 0xA1; b <= 0xAC; ++b) direct[static_cast<std::size_t>(b)] = true;
  for (int b = 0xAE; b <= 0xFF; ++b) direct[static_cast<std::size_t>(b)] = true;
  std::uint32_t next = 256;
  for (int b = 0; b < 256; ++b) cp[static_cast<std::size_t>(b)] = direct[static_cast<std::size_t>(b)] ? static_cast<std::uint32_t>(b) : next++;
  return cp;
}

std::string utf8(std::uint32_t c) {
  std::string s;
  if (c < 0x80) {
    s += static_cast<char>(c);
  } else if (c < 0x800) {
    s += static_cast<char>(0xC0 | (c >> 6));
    s += static_cast<char>(0x80 | (c & 0x3F));
  } else {
    s += static_cast<char>(0xE0 | (c >> 12));
    s += static_cast<char>(0x80 | ((c >> 6) & 0x3F));
    s += static_cast<char>(0x80 | (c & 0x3F));
  }
  return s;
}

const std::vector<std::string>& printable_table() {
  static const std::vector<std::string> table = [] {
    std::vector<std::string> t;
    for (std::uint32_t c : byte_code_points()) t.push_back(utf8(c));
    return t;
  }();
  return table;
}

// Converts a printable-alphabet string back to raw bytes.
std::string from_printable(const std::string& s, int line) {
  static const std::map<std::string, char> inverse = [] {
    std::map<std::string, char> m;
    const auto& t = printable_table();
    for (int b = 0; b < 256; ++b) m.emplace(t[static_cast<std::size_t>(b)], static_cast<char>(b));
    return m;
  }();
  std::string out;
  std::size_t i = 0;
  while (i < s.size()) {
    const auto lead = static_cast<unsigned char>(s[i]);
    const std::size_t len = lead < 0x80 ? 1 : (lead >> 5) == 0x6 ? 2 : (lead >> 4) == 0xE ? 3 : 0;
    if (len == 0 || i + len > s.size()) throw ParseError("merges: invalid UTF-8", line);
    auto it = inverse.find(s.substr(i, len));
    if (it == inverse.end()) throw ParseError("merges: symbol outside the byte alphabet", line);
    out += it->second;
    i += len;
  }
  return out;
}

std::string to_printable(const std::string& bytes) {
  std::string out;
  for (unsigned char b : bytes) out += printable_table()[b];
  return out;
}

bool is_word_byte(unsigned char c) { return std::isalnum(c) != 0 || c >= 0x80; }

}  // namespace

std::string Tokenizer::byte_to_printable(unsigned char b) { return printable_table()[b]; }

Tokenizer::Tokenizer(std::vector<std::pair<std::string, std::string>> merges) : merges_(std::move(merges)) {
  for (int b = 0; b < 256; ++b) {
    const std::string piece(1, static_cast<char>(b));
    piece_id_.emplace(piece, b);
    id_piece_.push_back(piece);
  }
  for (std::size_t k = 0; k < merges_.size(); ++k) {
    const auto& [a, b] = merges_[k];
    RVL_CHECK(!a.empty() && !b.empty(), ConfigError, "empty merge operand at rank " + std::to_string(k));
    RVL_CHECK(piece_id_.count(a) && piece_id_.count(b), ConfigError,
              "merge rank " + std::to_string(k) + " uses a piece not produced by earlier merges");
    rank_.emplace(merges_[k], static_cast<int>(k));
    const int id = 256 + static_cast<int>(k);
    piece_id_.emplace(a + b, id);
    id_piece_.push_back(a + b);
  }
}

Tokenizer Tokenizer::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open merges file " + path);
  std::vector<std::pair<std::string, std::string>> merges;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto space = line.find(' ');
    if (space == std::string::npos || line.find(' ', space + 1) != std::string::npos)
      throw ParseError("merges: expected two space-separated symbols", line_no);
    merges.emplace_back(from_printable(line.substr(0, space), line_no), from_printable(line.substr(space + 1), line_no));
  }
  return Tokenizer(std::move(merges));
}

void Tokenizer::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write merges file " + path);
  out << "#version: 0.2\n";
  for (const auto& [a, b] : merges_) out << to_printable(a) << ' ' << to_printable(b) << '\n';
}

std::vector<std::string> Tokenizer::split_chunks(const std::string& text) {
  std::vector<std::string> chunks;
  std::size_t i = 0;
  const auto at = [&](std::size_t k) { return static_cast<unsigned char>(text[k]); };
  while (i < text.size()) {
    std::size_t j = i;
    if (at(j) == ' ' && j + 1 < text.size() && is_word_byte(at(j + 1))) ++j;
    if (is_word_byte(at(j))) {
      const bool alpha = std::isdigit(at(j)) == 0;
      while (j < text.size() && is_word_byte(at(j)) && (std::isdigit(at(j)) == 0) == alpha) ++j;
    } else {
      ++j;
    }
    chunks.push_back(text.substr(i, j - i));
    i = j;
  }
  return chunks;
}

TokenIds Tokenizer::encode_chunk(const std::string& chunk) const {
  std::vector<std::string> parts;
  for (char c : chunk) parts.emplace_back(1, c);
  while (parts.size() > 1) {
    int best = std::numeric_limits<int>::max();
    for (std::size_t k = 0; k + 1 < parts.size(); ++k) {
      auto it = rank_.find({parts[k], parts[k + 1]});
      if (it != rank_.end() && it->second < best) best = it->second;
    }
    if (best == std::numeric_limits<int>::max()) break;
    // Apply the chosen merge at every position, left to right.
    const auto& pair = merges_[static_cast<std::size_t>(best)];
    std::vector<std::string> next;
    for (std::size_t k = 0; k < parts.size();) {
      if (k + 1 < parts.size() && parts[k] == pair.first && parts[k + 1] == pair.second) {
        next.push_back(parts[k] + parts[k + 1]);
        k += 2;
      } else {
        next.push_back(parts[k]);
        ++k;
      }
    }
    parts = std::move(next);
  }
  TokenIds ids;
  ids.reserve(parts.size());
  for (const auto& p : parts) ids.push_back(piece_id_.at(p));
  return ids;
}

TokenIds Tokenizer::tokenize(const std::string& text, int max_tokens) const {
  RVL_CHECK(max_tokens >= 2, ConfigError, "max_tokens must be >= 2");
  TokenIds ids{start_id()};
  for (const auto& chunk : split_chunks(text)) {
    const TokenIds piece = encode_chunk(chunk);
    ids.insert(ids.end(), piece.begin(), piece.end());
    if (static_cast<int>(ids.size()) >= max_tokens) break;
  }
  if (static_cast<int>(ids.size()) > max_tokens - 1) ids.resize(static_cast<std::size_t>(max_tokens - 1));
  ids.push_back(end_id());
  return ids;
}

std::string Tokenizer::detokenize(const TokenIds& ids) const {
  std::string out;
  for (int id : ids) {
    if (id == start_id() || id == end_id()) continue;
    RVL_CHECK(id >= 0 && id < start_id(), ValidationError, "token id " + std::to_string(id) + " outside the vocabulary");
    out += id_piece_[static_cast<std::size_t>(id)];
  }
  return out;
}

Tokenizer Tokenizer::learn(const std::vector<std::string>& corpus, int n_merges) {
  // Word frequencies over pre-tokenized chunks.
  std::map<std::string, long> freq;
  for (const auto& text : corpus)
    for (const auto& chunk : split_chunks(text)) ++freq[chunk];
  std::vector<std::pair<std::vector<std::string>, long>> words;
  for (const auto& [w, n] : freq) {
    std::vector<std::string> parts;
    for (char c : w) parts.emplace_back(1, c);
    words.emplace_back(std::move(parts), n);
  }
  std::vector<std::pair<std::string, std::string>> merges;
  for (int k = 0; k < n_merges; ++k) {
    std::map<std::pair<std::string, std::string>, long> counts;
    for (const auto& [parts, n] : words)
      for (std::size_t i = 0; i + 1 < parts.size(); ++i) counts[{parts[i], parts[i + 1]}] += n;
    if (counts.empty()) break;
    auto best = counts.begin();
    for (auto it = counts.begin(); it != counts.end(); ++it)
      if (it->second > best->second) best = it;
    if (best->second < 2) break;
    const auto pair = best->first;
    merges.push_back(pair);
    for (auto& [parts, n] : words) {
      std::vector<std::string> next;
      for (std::size_t i = 0; i < parts.size();) {
        if (i + 1 < parts.size() && parts[i] == pair.first && parts[i + 1] == pair.second) {
          next.push_back(parts[i] + parts[i + 1]);
          i += 2;
        } else {
          next.push_back(parts[i++]);
        }
      }
      parts = std::move(next);
    }
  }
  return Tokenizer(std::move(merges));
}

}  // namespace retinavl::encoders
