#include "glss/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "glss/common.hpp"

namespace glss::checkpoint {

namespace {

constexpr char kMagic[8] = {'G', 'L', 'S', 'S', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ostream& os, std::uint32_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

void write_u64(std::ostream& os, std::uint64_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

void write_string(std::ostream& os, const std::string& s) {
    write_u32(os, static_cast<std::uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::uint32_t read_u32(std::istream& is, const std::string& path) {
    std::uint32_t v = 0;
    if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) {
        throw InvalidInputError("checkpoint truncated: " + path);
    }
    return v;
}

std::uint64_t read_u64(std::istream& is, const std::string& path) {
    std::uint64_t v = 0;
    if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) {
        throw InvalidInputError("checkpoint truncated: " + path);
    }
    return v;
}

std::string read_string(std::istream& is, const std::string& path) {
    const std::uint32_t len = read_u32(is, path);
    if (len > (1u << 28)) throw InvalidInputError("checkpoint field too large: " + path);
    std::string s(len, '\0');
    if (len > 0 && !is.read(s.data(), len)) {
        throw InvalidInputError("checkpoint truncated: " + path);
    }
    return s;
}

template <typename T>
void write_array(std::ostream& os, const std::pair<std::string, std::vector<T>>& a) {
    write_string(os, a.first);
    write_u64(os, a.second.size());
    os.write(reinterpret_cast<const char*>(a.second.data()),
             static_cast<std::streamsize>(a.second.size() * sizeof(T)));
}

template <typename T>
std::pair<std::string, std::vector<T>> read_array(std::istream& is, const std::string& path) {
    std::string name = read_string(is, path);
    const std::uint64_t count = read_u64(is, path);
    if (count > (1ull << 32)) throw InvalidInputError("checkpoint array too large: " + path);
    std::vector<T> data(count);
    if (count > 0 &&
        !is.read(reinterpret_cast<char*>(data.data()),
                 static_cast<std::streamsize>(count * sizeof(T)))) {
        throw InvalidInputError("checkpoint truncated: " + path);
    }
    return {std::move(name), std::move(data)};
}

}  // namespace

const std::vector<float>& Archive::f32(const std::string& name) const {
    for (const auto& a : f32_arrays) {
        if (a.first == name) return a.second;
    }
    throw InvalidInputError("checkpoint has no float array named '" + name + "'");
}

const std::vector<double>& Archive::f64(const std::string& name) const {
    for (const auto& a : f64_arrays) {
        if (a.first == name) return a.second;
    }
    throw InvalidInputError("checkpoint has no double array named '" + name + "'");
}

bool Archive::has_f64(const std::string& name) const {
    for (const auto& a : f64_arrays) {
        if (a.first == name) return true;
    }
    return false;
}

void save(const std::filesystem::path& path, const Archive& archive) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw InvalidInputError("cannot open checkpoint for writing: " + path.string());
    os.write(kMagic, sizeof kMagic);
    write_u32(os, kVersion);
    write_string(os, archive.format);
    write_string(os, archive.meta_json);
    write_u32(os, static_cast<std::uint32_t>(archive.f32_arrays.size()));
    for (const auto& a : archive.f32_arrays) write_array(os, a);
    write_u32(os, static_cast<std::uint32_t>(archive.f64_arrays.size()));
    for (const auto& a : archive.f64_arrays) write_array(os, a);
    os.flush();
    if (!os) throw InvalidInputError("failed writing checkpoint: " + path.string());
}

Archive load(const std::filesystem::path& path, const std::string& expected_format) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw InvalidInputError("checkpoint not found: " + path.string());
    char magic[8];
    if (!is.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
        throw InvalidInputError("not a checkpoint file: " + path.string());
    }
    const std::uint32_t version = read_u32(is, path.string());
    if (version != kVersion) {
        throw InvalidInputError("unsupported checkpoint version " + std::to_string(version) +
                                ": " + path.string());
    }
    Archive archive;
    archive.format = read_string(is, path.string());
    if (!expected_format.empty() && archive.format != expected_format) {
        throw InvalidInputError("checkpoint format '" + archive.format + "' does not match '" +
                                expected_format + "': " + path.string());
    }
    archive.meta_json = read_string(is, path.string());
    const std::uint32_t n32 = read_u32(is, path.string());
    archive.f32_arrays.reserve(n32);
    for (std::uint32_t i = 0; i < n32; ++i) {
        archive.f32_arrays.push_back(read_array<float>(is, path.string()));
    }
    const std::uint32_t n64 = read_u32(is, path.string());
    archive.f64_arrays.reserve(n64);
    for (std::uint32_t i = 0; i < n64; ++i) {
        archive.f64_arrays.push_back(read_array<double>(is, path.string()));
    }
    return archive;
}

}  // namespace glss::checkpoint
