#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "alarm/parameter.hpp"

namespace alm {

struct NamedArray {
    std::string name;
    Matrix value;
    bool readonly = false;
};

/// Named-array archive: one JSON manifest line ({"format", "meta", "arrays": [{name, shape, dtype, offset,
/// readonly}]}) followed by the little-endian float64 row-major payloads back to back.
struct Archive {
    nlohmann::json meta = nlohmann::json::object();
    std::vector<NamedArray> arrays;

    const NamedArray* find(const std::string& name) const;
};

void write_archive(const std::filesystem::path& path, const Archive& archive);
Archive read_archive(const std::filesystem::path& path);

} // namespace alm
