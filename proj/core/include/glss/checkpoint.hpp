#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace glss::checkpoint {

// A model archive: a format tag, a JSON metadata document (architecture
// descriptor and configuration, serialized as text by the owning module), and
// named numeric arrays. Parameters are stored as raw 32-bit floats and
// history series as raw 64-bit doubles, so a save/load cycle reproduces every
// value bit-exactly.
struct Archive {
    std::string format;
    std::string meta_json;
    std::vector<std::pair<std::string, std::vector<float>>> f32_arrays;
    std::vector<std::pair<std::string, std::vector<double>>> f64_arrays;

    const std::vector<float>& f32(const std::string& name) const;
    const std::vector<double>& f64(const std::string& name) const;
    bool has_f64(const std::string& name) const;
};

// Writes the archive to `path`, creating parent directories as needed.
void save(const std::filesystem::path& path, const Archive& archive);

// Reads an archive back. Throws InvalidInputError when the file is missing,
// is not a checkpoint, or (if `expected_format` is non-empty) carries a
// different format tag.
Archive load(const std::filesystem::path& path, const std::string& expected_format = "");

}  // namespace glss::checkpoint
