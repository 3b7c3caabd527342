#include "hiermask/case_io.hpp"

#include "hiermask/error.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace hiermask {

static_assert(std::endian::native == std::endian::little, "case payloads are written in host byte order");

namespace {

constexpr const char* kMagic = "hiermask-case";

std::string format_double(double v)
{
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

std::string render_header(const CaseHeader& h)
{
    std::ostringstream os;
    os << kMagic << "\n";
    os << "version " << h.version << "\n";
    os << "kind " << h.kind << "\n";
    os << "dims " << h.dims[0] << " " << h.dims[1] << " " << h.dims[2] << "\n";
    os << "spacing " << format_double(h.spacing[0]) << " " << format_double(h.spacing[1]) << " "
       << format_double(h.spacing[2]) << "\n";
    os << "dtype " << h.dtype << "\n";
    if (!h.space.empty()) os << "space " << h.space << "\n";
    os << "taxonomy " << h.taxonomy_hash << "\n";
    os << "end\n";
    return os.str();
}

void write_file(const std::filesystem::path& path, const CaseHeader& h, const void* payload, std::size_t bytes)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
    const std::string head = render_header(h);
    out.write(head.data(), static_cast<std::streamsize>(head.size()));
    out.write(static_cast<const char*>(payload), static_cast<std::streamsize>(bytes));
    if (!out) throw DataError("write failed for '" + path.string() + "'");
}

struct RawFile {
    CaseHeader header;
    std::string payload;
};

RawFile read_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open '" + path.string() + "'");
    std::string text;
    std::string line;
    bool terminated = false;
    for (int i = 0; i < 32 && std::getline(in, line); ++i) {
        text += line + "\n";
        if (line == "end") {
            terminated = true;
            break;
        }
    }
    if (!terminated) throw DataError("corrupt header in '" + path.string() + "'");
    RawFile f;
    f.header = parse_case_header(text);
    std::ostringstream rest;
    rest << in.rdbuf();
    f.payload = rest.str();
    return f;
}

std::size_t element_size(const std::string& dtype) { return dtype == "float32" ? 4 : 1; }

void check_payload(const RawFile& f, const std::filesystem::path& path)
{
    const auto expected = static_cast<std::size_t>(voxel_count(f.header.dims)) * element_size(f.header.dtype);
    if (f.payload.size() != expected)
        throw DataError("size mismatch in '" + path.string() + "': header declares " + std::to_string(expected) +
                        " payload bytes, found " + std::to_string(f.payload.size()));
}

} // namespace

CaseHeader parse_case_header(const std::string& text)
{
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != kMagic) throw DataError("corrupt header: missing magic line");
    CaseHeader h;
    h.version = -1;
    bool have_dims = false;
    bool have_spacing = false;
    while (std::getline(in, line)) {
        if (line == "end") break;
        std::istringstream ls(line);
        std::string key;
        ls >> key;
        if (key == "version") {
            ls >> h.version;
        } else if (key == "kind") {
            ls >> h.kind;
        } else if (key == "dims") {
            ls >> h.dims[0] >> h.dims[1] >> h.dims[2];
            have_dims = !ls.fail();
        } else if (key == "spacing") {
            ls >> h.spacing[0] >> h.spacing[1] >> h.spacing[2];
            have_spacing = !ls.fail();
        } else if (key == "dtype") {
            ls >> h.dtype;
        } else if (key == "space") {
            ls >> h.space;
        } else if (key == "taxonomy") {
            ls >> h.taxonomy_hash;
        } else {
            throw DataError("corrupt header: unknown field '" + key + "'");
        }
        if (ls.fail()) throw DataError("corrupt header: bad value for '" + key + "'");
    }
    if (h.version != kCaseFormatVersion) throw DataError("unknown case format version " + std::to_string(h.version));
    if (h.kind != "volume" && h.kind != "labelmap") throw DataError("corrupt header: unknown kind '" + h.kind + "'");
    if (!have_dims || !have_spacing) throw DataError("corrupt header: dims and spacing are required");
    for (int a = 0; a < 3; ++a) {
        if (h.dims[a] <= 0) throw DataError("invalid header dims: every axis must be positive");
        if (!(h.spacing[a] > 0.0) || !std::isfinite(h.spacing[a]))
            throw DataError("invalid header spacing: every axis must be positive");
    }
    const std::string want = h.kind == "volume" ? "float32" : "uint8";
    if (h.dtype != want) throw DataError("corrupt header: " + h.kind + " requires dtype " + want);
    if (h.kind == "labelmap") label_space_from_string(h.space);
    return h;
}

void save_volume(const std::filesystem::path& path, const Volume& volume, const std::string& taxonomy_hash)
{
    CaseHeader h;
    h.kind = "volume";
    h.dims = volume.dims;
    h.spacing = volume.spacing;
    h.dtype = "float32";
    h.taxonomy_hash = taxonomy_hash;
    write_file(path, h, volume.data.data(), volume.data.size() * sizeof(float));
}

void save_labelmap(const std::filesystem::path& path, const LabelMap& map, const std::string& taxonomy_hash)
{
    CaseHeader h;
    h.kind = "labelmap";
    h.dims = map.dims;
    h.spacing = map.spacing;
    h.dtype = "uint8";
    h.space = to_string(map.space);
    h.taxonomy_hash = taxonomy_hash;
    write_file(path, h, map.data.data(), map.data.size());
}

Volume load_volume(const std::filesystem::path& path, CaseHeader* header)
{
    RawFile f = read_file(path);
    if (f.header.kind != "volume") throw DataError("'" + path.string() + "' is not a volume file");
    check_payload(f, path);
    Volume v(f.header.dims, f.header.spacing);
    std::memcpy(v.data.data(), f.payload.data(), f.payload.size());
    for (float x : v.data)
        if (!std::isfinite(x)) throw DataError("non-finite intensity in '" + path.string() + "'");
    if (header) *header = f.header;
    return v;
}

LabelMap load_labelmap(const std::filesystem::path& path, CaseHeader* header)
{
    RawFile f = read_file(path);
    if (f.header.kind != "labelmap") throw DataError("'" + path.string() + "' is not a label map file");
    check_payload(f, path);
    LabelMap m(f.header.dims, f.header.spacing, label_space_from_string(f.header.space));
    std::memcpy(m.data.data(), f.payload.data(), f.payload.size());
    if (header) *header = f.header;
    return m;
}

void save_case(const std::filesystem::path& volume_path, const std::filesystem::path& labels_path, const Case& c,
               const std::string& taxonomy_hash)
{
    save_volume(volume_path, c.volume, taxonomy_hash);
    save_labelmap(labels_path, c.labels, taxonomy_hash);
}

Case load_case(const std::filesystem::path& volume_path, const std::filesystem::path& labels_path)
{
    Case c;
    c.volume = load_volume(volume_path);
    c.labels = load_labelmap(labels_path);
    if (c.volume.dims != c.labels.dims || c.volume.spacing != c.labels.spacing)
        throw DataError("volume and label map geometry differ for '" + volume_path.string() + "'");
    return c;
}

} // namespace hiermask
