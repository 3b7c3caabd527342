#pragma once

#include "hiermask/volume.hpp"

#include <filesystem>
#include <string>

namespace hiermask {

/// Case files: a line-oriented text header terminated by "end\n", followed by
/// the raw little-endian payload (float32 volumes, uint8 label maps).
inline constexpr int kCaseFormatVersion = 1;

struct CaseHeader {
    int version = kCaseFormatVersion;
    std::string kind;   // "volume" or "labelmap"
    Dims dims{0, 0, 0};
    Spacing spacing{1.0, 1.0, 1.0};
    std::string dtype;  // "float32" or "uint8"
    std::string space;  // label maps only
    std::string taxonomy_hash = "-";
};

void save_volume(const std::filesystem::path& path, const Volume& volume, const std::string& taxonomy_hash = "-");
void save_labelmap(const std::filesystem::path& path, const LabelMap& map, const std::string& taxonomy_hash = "-");

Volume load_volume(const std::filesystem::path& path, CaseHeader* header = nullptr);
LabelMap load_labelmap(const std::filesystem::path& path, CaseHeader* header = nullptr);

struct Case {
    Volume volume;
    LabelMap labels;
};

void save_case(const std::filesystem::path& volume_path, const std::filesystem::path& labels_path, const Case& c,
               const std::string& taxonomy_hash = "-");
/// Loads both files and checks that their geometry agrees.
Case load_case(const std::filesystem::path& volume_path, const std::filesystem::path& labels_path);

/// Header parsing and validation, exposed for corrupt-file tests.
CaseHeader parse_case_header(const std::string& text);

} // namespace hiermask
