#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "omnict/errors.hpp"

namespace omnict {

// Byte-level vocabulary: ids 0..255 are raw bytes, then BOS, EOS, PAD.
inline constexpr int kBos = 256;
inline constexpr int kEos = 257;
inline constexpr int kPad = 258;
inline constexpr int kVocabSize = 259;

inline std::vector<int> encode_text(std::string_view s) {
    std::vector<int> ids;
    ids.reserve(s.size() + 2);
    ids.push_back(kBos);
    for (unsigned char c : s) ids.push_back(static_cast<int>(c));
    ids.push_back(kEos);
    return ids;
}

inline std::string decode_text(const std::vector<int>& ids) {
    std::string out;
    for (int id : ids) {
        if (id < 0 || id >= kVocabSize) throw ValidationError("decode_text: id out of vocab range");
        if (id < 256) out.push_back(static_cast<char>(id));
    }
    return out;
}

}  // namespace omnict
