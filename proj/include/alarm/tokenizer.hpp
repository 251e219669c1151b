#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace alm::tokenizer {

// Byte-level vocabulary: ids 0..255 are raw bytes, followed by three specials.
inline constexpr int kBos = 256;
inline constexpr int kEos = 257;
inline constexpr int kPad = 258;
inline constexpr int kVocabSize = 259;

inline std::vector<int> encode(std::string_view text) {
    std::vector<int> ids;
    ids.reserve(text.size());
    for (unsigned char c : text) ids.push_back(c);
    return ids;
}

/// Specials are dropped.
inline std::string decode(const std::vector<int>& ids) {
    std::string out;
    for (int id : ids)
        if (id >= 0 && id < 256) out.push_back(static_cast<char>(id));
    return out;
}

} // namespace alm::tokenizer
