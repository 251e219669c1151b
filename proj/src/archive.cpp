#include "alarm/archive.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "alarm/error.hpp"

namespace alm {

namespace {

constexpr const char* kFormat = "alarm-archive";

std::uint64_t to_le(std::uint64_t bits) {
    if constexpr (std::endian::native == std::endian::big) return __builtin_bswap64(bits);
    return bits;
}

} // namespace

const NamedArray* Archive::find(const std::string& name) const {
    for (const auto& a : arrays)
        if (a.name == name) return &a;
    return nullptr;
}

void write_archive(const std::filesystem::path& path, const Archive& archive) {
    nlohmann::json manifest;
    manifest["format"] = kFormat;
    manifest["version"] = 1;
    manifest["meta"] = archive.meta;
    nlohmann::json arrays = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const auto& a : archive.arrays) {
        const std::uint64_t bytes = static_cast<std::uint64_t>(a.value.size()) * 8;
        arrays.push_back({{"name", a.name},
                          {"shape", {a.value.rows(), a.value.cols()}},
                          {"dtype", "float64"},
                          {"offset", offset},
                          {"readonly", a.readonly}});
        offset += bytes;
    }
    manifest["arrays"] = arrays;

    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw Error(ErrorKind::IoError, "cannot write " + path.string());
        out << manifest.dump() << '\n';
        for (const auto& a : archive.arrays)
            for (Eigen::Index r = 0; r < a.value.rows(); ++r)
                for (Eigen::Index c = 0; c < a.value.cols(); ++c) {
                    std::uint64_t bits;
                    const double v = a.value(r, c);
                    std::memcpy(&bits, &v, 8);
                    bits = to_le(bits);
                    out.write(reinterpret_cast<const char*>(&bits), 8);
                }
        if (!out) throw Error(ErrorKind::IoError, "short write to " + path.string());
    }
    std::filesystem::rename(tmp, path);
}

Archive read_archive(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::IoError, "cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw Error(ErrorKind::FormatError, path.string() + ": missing manifest");
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::FormatError, path.string() + ": bad manifest: " + e.what());
    }
    if (manifest.value("format", "") != kFormat) throw Error(ErrorKind::FormatError, path.string() + ": not an archive");

    Archive archive;
    archive.meta = manifest.value("meta", nlohmann::json::object());
    const auto payload_start = in.tellg();
    for (const auto& entry : manifest.at("arrays")) {
        NamedArray a;
        a.name = entry.at("name").get<std::string>();
        a.readonly = entry.value("readonly", false);
        if (entry.value("dtype", "") != "float64") throw Error(ErrorKind::FormatError, a.name + ": dtype must be float64");
        const auto shape = entry.at("shape").get<std::vector<std::int64_t>>();
        if (shape.size() != 2 || shape[0] < 0 || shape[1] < 0) throw Error(ErrorKind::FormatError, a.name + ": bad shape");
        const auto offset = entry.at("offset").get<std::uint64_t>();
        in.seekg(payload_start + static_cast<std::streamoff>(offset));
        a.value.resize(shape[0], shape[1]);
        for (std::int64_t r = 0; r < shape[0]; ++r)
            for (std::int64_t c = 0; c < shape[1]; ++c) {
                std::uint64_t bits = 0;
                in.read(reinterpret_cast<char*>(&bits), 8);
                if (in.gcount() != 8) throw Error(ErrorKind::FormatError, path.string() + ": truncated payload");
                bits = to_le(bits);
                double v;
                std::memcpy(&v, &bits, 8);
                a.value(r, c) = v;
            }
        archive.arrays.push_back(std::move(a));
    }
    return archive;
}

} // namespace alm
