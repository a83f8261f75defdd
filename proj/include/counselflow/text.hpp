// Copyright 2026 The Counselflow Authors.
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

#ifndef COUNSELFLOW_TEXT_HPP_
#define COUNSELFLOW_TEXT_HPP_

#include <cctype>
#include <cstddef>
#include <string>
#include <string_view>

namespace counselflow::text {

inline bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

inline std::string trim_copy(std::string_view s) { return std::string(trim(s)); }

/// Number of UTF-8 code points. Continuation bytes are not counted.
inline std::size_t codepoint_count(std::string_view s) {
  std::size_t n = 0;
  for (unsigned char c : s) {
    if ((c & 0xC0) != 0x80) ++n;
  }
  return n;
}

/// Code points that are not ASCII whitespace or U+3000.
inline std::size_t visible_char_count(std::string_view s) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const auto c = static_cast<unsigned char>(s[i]);
    if ((c & 0xC0) == 0x80) continue;
    if (c < 0x80 && is_space(static_cast<char>(c))) continue;
    if (s.compare(i, 3, "\xE3\x80\x80") == 0) continue;
    ++n;
  }
  return n;
}

inline std::size_t word_count(std::string_view s) {
  std::size_t n = 0;
  bool in_word = false;
  for (char c : s) {
    if (is_space(c)) {
      in_word = false;
    } else if (!in_word) {
      in_word = true;
      ++n;
    }
  }
  return n;
}

/// Sentences delimited by . ! ? and their CJK fullwidth forms; a run of
/// terminators counts once and trailing text without a terminator counts as
/// a sentence. Decimal points ("3.5") do not end a sentence.
inline std::size_t sentence_count(std::string_view s) {
  static constexpr std::string_view kWide[] = {"\xE3\x80\x82", "\xEF\xBC\x81", "\xEF\xBC\x9F",
                                               "\xE2\x80\xA6"};
  // Closing quotes and brackets that may trail a terminator.
  static constexpr std::string_view kClosers[] = {"\"", "'", ")", "\xE3\x80\x8D", "\xE3\x80\x8F",
                                                  "\xEF\xBC\x89", "\xE2\x80\x9D", "\xE2\x80\x99"};
  std::size_t n = 0;
  bool pending = false;  // content seen since the last terminator
  std::size_t i = 0;
  while (i < s.size()) {
    std::size_t width = 0;
    const char c = s[i];
    if (c == '.' || c == '!' || c == '?') {
      const bool decimal = c == '.' && i > 0 && i + 1 < s.size() &&
                           std::isdigit(static_cast<unsigned char>(s[i - 1])) &&
                           std::isdigit(static_cast<unsigned char>(s[i + 1]));
      if (!decimal) width = 1;
    } else {
      for (auto w : kWide) {
        if (s.compare(i, w.size(), w) == 0) {
          width = w.size();
          break;
        }
      }
    }
    if (width > 0) {
      if (pending) ++n;
      pending = false;
      i += width;
      continue;
    }
    std::size_t closer = 0;
    for (auto w : kClosers) {
      if (s.compare(i, w.size(), w) == 0) {
        closer = w.size();
        break;
      }
    }
    if (closer > 0) {
      i += closer;
      continue;
    }
    if (!is_space(c)) pending = true;
    ++i;
  }
  if (pending) ++n;
  return n;
}

inline std::string ascii_lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  }
  return out;
}

inline bool starts_with(std::string_view s, std::string_view prefix) {
  return s.substr(0, prefix.size()) == prefix;
}

}  // namespace counselflow::text

#endif  // COUNSELFLOW_TEXT_HPP_
