// Copyright 2026 The Blockcast Authors
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

#pragma once

#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <istream>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <system_error>
#include <vector>

#include "blockcast/error.hpp"

namespace blockcast::detail {

// Little-endian payload helpers. Byte-swaps on big-endian hosts.
template <typename T>
void write_le(std::ostream& out, std::span<const T> values) {
  static_assert(std::is_trivially_copyable_v<T>);
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(values.data()),
              static_cast<std::streamsize>(values.size_bytes()));
  } else {
    for (const T& v : values) {
      char bytes[sizeof(T)];
      std::memcpy(bytes, &v, sizeof(T));
      for (std::size_t b = 0; b < sizeof(T); ++b) out.put(bytes[sizeof(T) - 1 - b]);
    }
  }
}

/// Reads exactly values.size() elements; returns false on a short read.
template <typename T>
bool read_le(std::istream& in, std::span<T> values) {
  in.read(reinterpret_cast<char*>(values.data()),
          static_cast<std::streamsize>(values.size_bytes()));
  if (static_cast<std::size_t>(in.gcount()) != values.size_bytes()) return false;
  if constexpr (std::endian::native != std::endian::little) {
    for (T& v : values) {
      char bytes[sizeof(T)];
      std::memcpy(bytes, &v, sizeof(T));
      for (std::size_t b = 0; b < sizeof(T) / 2; ++b) std::swap(bytes[b], bytes[sizeof(T) - 1 - b]);
      std::memcpy(&v, bytes, sizeof(T));
    }
  }
  return true;
}

inline bool at_eof(std::istream& in) {
  return in.peek() == std::char_traits<char>::eof();
}

/// Shortest decimal form that parses back to the same double.
inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

template <typename T>
T parse_number(const std::string& text, const std::string& what) {
  T value{};
  const char* first = text.data();
  const char* last = text.data() + text.size();
  auto res = std::from_chars(first, last, value);
  if (res.ec != std::errc{} || res.ptr != last) {
    throw HeaderError("cannot parse " + what + " from '" + text + "'");
  }
  return value;
}

/// Reads `key value` lines up to a line reading `end`.
inline std::map<std::string, std::string> read_header_block(std::istream& in,
                                                            const std::string& context) {
  std::map<std::string, std::string> fields;
  std::string line;
  while (true) {
    if (!std::getline(in, line)) throw HeaderError(context + ": header not terminated");
    if (line == "end") return fields;
    auto space = line.find(' ');
    if (space == std::string::npos || space == 0) {
      throw HeaderError(context + ": malformed header line '" + line + "'");
    }
    fields[line.substr(0, space)] = line.substr(space + 1);
  }
}

inline const std::string& require_field(const std::map<std::string, std::string>& fields,
                                        const std::string& key, const std::string& context) {
  auto it = fields.find(key);
  if (it == fields.end()) throw HeaderError(context + ": missing header field '" + key + "'");
  return it->second;
}

}  // namespace blockcast::detail
