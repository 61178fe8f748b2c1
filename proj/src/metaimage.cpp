#include "bodygps/metaimage.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <iterator>
#include <map>
#include <optional>
#include <sstream>

namespace bodygps {
namespace {

constexpr std::string_view kRequiredKeys[] = {"ObjectType", "NDims", "DimSize", "ElementSpacing", "Offset",
                                              "ElementType", "ElementDataFile"};

// Standard MetaImage keys that carry nothing we need.
constexpr std::string_view kIgnoredKeys[] = {"CenterOfRotation", "AnatomicalOrientation", "ElementSize",
                                             "ElementMin", "ElementMax", "Comment", "Modality"};

std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string_view> split_ws(std::string_view s) {
    std::vector<std::string_view> out;
    std::size_t pos = 0;
    while (pos < s.size()) {
        while (pos < s.size() && (s[pos] == ' ' || s[pos] == '\t')) ++pos;
        if (pos >= s.size()) break;
        std::size_t end = pos;
        while (end < s.size() && s[end] != ' ' && s[end] != '\t') ++end;
        out.push_back(s.substr(pos, end - pos));
        pos = end;
    }
    return out;
}

template <typename T>
T parse_number(std::string_view key, std::string_view token) {
    T value{};
    const auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
    if (ec != std::errc{} || ptr != token.data() + token.size())
        throw ParseError(std::string(key), "cannot parse '" + std::string(token) + "' as a number");
    return value;
}

template <typename T>
std::vector<T> parse_numbers(std::string_view key, std::string_view value, std::size_t expected) {
    const auto tokens = split_ws(value);
    if (tokens.size() != expected)
        throw ParseError(std::string(key), "expected " + std::to_string(expected) + " values, got " +
                                                std::to_string(tokens.size()));
    std::vector<T> out;
    for (auto t : tokens) out.push_back(parse_number<T>(key, t));
    return out;
}

bool parse_bool(std::string_view key, std::string_view value) {
    if (value == "True" || value == "true" || value == "1") return true;
    if (value == "False" || value == "false" || value == "0") return false;
    throw ParseError(std::string(key), "expected True or False, got '" + std::string(value) + "'");
}

std::size_t element_size(ElementType t) {
    switch (t) {
        case ElementType::Short: return 2;
        case ElementType::UChar: return 1;
        case ElementType::Float: return 4;
    }
    return 0;
}

ElementType parse_element_type(std::string_view value) {
    if (value == "MET_SHORT") return ElementType::Short;
    if (value == "MET_UCHAR") return ElementType::UChar;
    if (value == "MET_FLOAT") return ElementType::Float;
    throw UnsupportedTypeError("unsupported ElementType '" + std::string(value) +
                               "' (supported: MET_SHORT, MET_UCHAR, MET_FLOAT)");
}

template <typename U>
U byteswap(U u) {
    U out{};
    for (std::size_t b = 0; b < sizeof(U); ++b) out |= static_cast<U>(((u >> (8 * b)) & 0xffu) << (8 * (sizeof(U) - 1 - b)));
    return out;
}

template <typename T>
T load_le(const char* p) {
    using U = std::conditional_t<sizeof(T) == 2, std::uint16_t, std::uint32_t>;
    U u;
    std::memcpy(&u, p, sizeof(U));
    if constexpr (std::endian::native == std::endian::big) u = byteswap(u);
    return std::bit_cast<T>(u);
}

template <typename T>
void store_le(std::string& out, T value) {
    using U = std::conditional_t<sizeof(T) == 2, std::uint16_t, std::uint32_t>;
    U u = std::bit_cast<U>(value);
    if constexpr (std::endian::native == std::endian::big) u = byteswap(u);
    char buf[sizeof(U)];
    std::memcpy(buf, &u, sizeof(U));
    out.append(buf, sizeof(U));
}

std::vector<float> decode_payload(std::string_view payload, ElementType type, std::size_t count) {
    const std::size_t esize = element_size(type);
    if (payload.size() != count * esize) {
        std::ostringstream msg;
        msg << "raw payload holds " << payload.size() << " bytes (" << payload.size() / esize << " "
            << element_type_name(type) << " elements) but DimSize requires " << count << " elements";
        throw TruncationError(msg.str());
    }
    std::vector<float> out(count);
    const char* p = payload.data();
    for (std::size_t n = 0; n < count; ++n, p += esize) {
        switch (type) {
            case ElementType::Short: out[n] = static_cast<float>(load_le<std::int16_t>(p)); break;
            case ElementType::UChar: out[n] = static_cast<float>(static_cast<unsigned char>(*p)); break;
            case ElementType::Float: out[n] = load_le<float>(p); break;
        }
    }
    return out;
}

std::string encode_payload(const std::vector<float>& voxels, ElementType type) {
    std::string out;
    out.reserve(voxels.size() * element_size(type));
    for (float v : voxels) {
        switch (type) {
            case ElementType::Short: {
                const float c = std::clamp(std::round(v), -32768.0f, 32767.0f);
                store_le(out, static_cast<std::int16_t>(c));
                break;
            }
            case ElementType::UChar: {
                const float c = std::clamp(std::round(v), 0.0f, 255.0f);
                out.push_back(static_cast<char>(static_cast<unsigned char>(c)));
                break;
            }
            case ElementType::Float: store_le(out, v); break;
        }
    }
    return out;
}

std::string format_double(double v) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

std::string format_triple(const Vec3& v) {
    return format_double(v.x) + " " + format_double(v.y) + " " + format_double(v.z);
}

std::string encode_header(const MetaImage& image, std::string_view data_file) {
    const auto& g = image.geometry;
    std::ostringstream h;
    h << "ObjectType = Image\n"
      << "NDims = 3\n"
      << "BinaryData = True\n"
      << "BinaryDataByteOrderMSB = False\n"
      << "CompressedData = False\n"
      << "TransformMatrix = 1 0 0 0 1 0 0 0 1\n"
      << "Offset = " << format_triple(g.origin) << "\n"
      << "ElementSpacing = " << format_triple(g.spacing) << "\n"
      << "DimSize = " << g.dims.i << " " << g.dims.j << " " << g.dims.k << "\n"
      << "ElementType = " << element_type_name(image.element_type) << "\n"
      << "ElementDataFile = " << data_file << "\n";
    return h.str();
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    return std::string(std::istreambuf_iterator<char>(in), {});
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("short write to " + path.string());
}

}  // namespace

std::string_view element_type_name(ElementType t) {
    switch (t) {
        case ElementType::Short: return "MET_SHORT";
        case ElementType::UChar: return "MET_UCHAR";
        case ElementType::Float: return "MET_FLOAT";
    }
    return "?";
}

MetaImage parse_metaimage(std::string_view bytes, const std::filesystem::path& base_dir) {
    std::map<std::string, std::string, std::less<>> header;
    std::size_t pos = 0;
    std::optional<std::size_t> payload_start;

    while (pos < bytes.size()) {
        auto eol = bytes.find('\n', pos);
        if (eol == std::string_view::npos) eol = bytes.size();
        const std::string_view line = trim(bytes.substr(pos, eol - pos));
        pos = std::min(eol + 1, bytes.size());
        if (line.empty()) continue;

        const auto eq = line.find('=');
        if (eq == std::string_view::npos)
            throw ParseError(std::string(line.substr(0, 32)), "expected 'Key = Value' header line");
        const std::string key(trim(line.substr(0, eq)));
        const std::string value(trim(line.substr(eq + 1)));
        if (key.empty()) throw ParseError("", "header line with empty key");
        header[key] = value;
        if (key == "ElementDataFile") {
            payload_start = pos;
            break;
        }
    }

    for (auto key : kRequiredKeys)
        if (!header.contains(key)) throw ParseError(std::string(key), "missing required key");

    for (const auto& [key, value] : header) {
        const bool known = std::ranges::find(kRequiredKeys, key) != std::end(kRequiredKeys) ||
                           std::ranges::find(kIgnoredKeys, key) != std::end(kIgnoredKeys) || key == "BinaryData" ||
                           key == "BinaryDataByteOrderMSB" || key == "ElementByteOrderMSB" ||
                           key == "CompressedData" || key == "TransformMatrix" || key == "ElementNumberOfChannels" ||
                           key == "HeaderSize";
        if (!known) std::clog << "warning: ignoring unknown MetaImage key '" << key << "'\n";
    }

    if (header.at("ObjectType") != "Image")
        throw ParseError("ObjectType", "expected Image, got '" + header.at("ObjectType") + "'");
    if (const int ndims = parse_number<int>("NDims", header.at("NDims")); ndims != 3)
        throw ParseError("NDims", "expected 3, got " + std::to_string(ndims));

    MetaImage image;
    const auto dims = parse_numbers<std::int64_t>("DimSize", header.at("DimSize"), 3);
    for (auto d : dims)
        if (d < 1) throw ParseError("DimSize", "dimensions must be positive");
    image.geometry.dims = {dims[0], dims[1], dims[2]};
    const auto spacing = parse_numbers<double>("ElementSpacing", header.at("ElementSpacing"), 3);
    for (auto s : spacing)
        if (!(s > 0.0) || !std::isfinite(s)) throw ParseError("ElementSpacing", "spacing must be positive");
    image.geometry.spacing = {spacing[0], spacing[1], spacing[2]};
    const auto origin = parse_numbers<double>("Offset", header.at("Offset"), 3);
    image.geometry.origin = {origin[0], origin[1], origin[2]};

    if (auto it = header.find("TransformMatrix"); it != header.end()) {
        const auto m = parse_numbers<double>("TransformMatrix", it->second, 9);
        const double identity[9] = {1, 0, 0, 0, 1, 0, 0, 0, 1};
        if (!std::equal(m.begin(), m.end(), identity))
            throw ParseError("TransformMatrix", "only axis-aligned (identity) orientation is supported");
    }
    if (auto it = header.find("BinaryData"); it != header.end() && !parse_bool("BinaryData", it->second))
        throw UnsupportedTypeError("ASCII (BinaryData = False) payloads are not supported");
    for (const char* key : {"BinaryDataByteOrderMSB", "ElementByteOrderMSB"})
        if (auto it = header.find(key); it != header.end() && parse_bool(key, it->second))
            throw UnsupportedTypeError("big-endian payloads are not supported");
    if (auto it = header.find("CompressedData"); it != header.end() && parse_bool("CompressedData", it->second))
        throw UnsupportedTypeError("compressed payloads are not supported");
    if (auto it = header.find("ElementNumberOfChannels"); it != header.end()) {
        if (parse_number<int>("ElementNumberOfChannels", it->second) != 1)
            throw UnsupportedTypeError("only single-channel images are supported");
    }
    if (auto it = header.find("HeaderSize"); it != header.end() && parse_number<long>("HeaderSize", it->second) != 0)
        throw UnsupportedTypeError("HeaderSize != 0 is not supported");

    image.element_type = parse_element_type(header.at("ElementType"));

    const std::string& data_file = header.at("ElementDataFile");
    const std::size_t count = image.geometry.voxel_count();
    if (data_file == "LOCAL") {
        image.voxels = decode_payload(bytes.substr(*payload_start), image.element_type, count);
    } else {
        if (base_dir.empty())
            throw UnsupportedTypeError("ElementDataFile '" + data_file + "' needs a base directory; only LOCAL data is accepted here");
        const std::string raw = read_file(base_dir / data_file);
        image.voxels = decode_payload(raw, image.element_type, count);
    }
    return image;
}

std::string encode_metaimage(const MetaImage& image) {
    image.geometry.validate();
    if (image.voxels.size() != image.geometry.voxel_count()) throw ShapeError("voxel count does not match dims");
    return encode_header(image, "LOCAL") + encode_payload(image.voxels, image.element_type);
}

MetaImage read_metaimage(const std::filesystem::path& path) {
    const auto dir = path.parent_path();
    return parse_metaimage(read_file(path), dir.empty() ? std::filesystem::path(".") : dir);
}

void write_metaimage(const MetaImage& image, const std::filesystem::path& path) {
    if (path.extension() == ".mhd") {
        image.geometry.validate();
        if (image.voxels.size() != image.geometry.voxel_count()) throw ShapeError("voxel count does not match dims");
        std::filesystem::path raw = path;
        raw.replace_extension(".raw");
        write_file(path, encode_header(image, raw.filename().string()));
        write_file(raw, encode_payload(image.voxels, image.element_type));
    } else {
        write_file(path, encode_metaimage(image));
    }
}

Volume to_volume(MetaImage image) {
    const float background =
        image.voxels.empty() ? 0.0f : *std::min_element(image.voxels.begin(), image.voxels.end());
    return Volume(image.geometry, std::move(image.voxels), background);
}

Volume load_volume(const std::filesystem::path& path) { return to_volume(read_metaimage(path)); }

LabelVolume load_label_volume(const std::filesystem::path& path) {
    MetaImage image = read_metaimage(path);
    std::vector<std::uint8_t> labels(image.voxels.size());
    for (std::size_t n = 0; n < labels.size(); ++n) {
        const float v = image.voxels[n];
        if (!(v >= 0.0f && v <= 255.0f) || v != std::floor(v))
            throw ParseError("ElementType", "label volume holds non-label value " + std::to_string(v));
        labels[n] = static_cast<std::uint8_t>(v);
    }
    return LabelVolume(image.geometry, std::move(labels), 0);
}

void save_volume(const Volume& v, const std::filesystem::path& path, ElementType type) {
    MetaImage image{v.geometry(), type, std::vector<float>(v.voxels().begin(), v.voxels().end())};
    write_metaimage(image, path);
}

void save_volume(const LabelVolume& v, const std::filesystem::path& path) {
    MetaImage image{v.geometry(), ElementType::UChar, {}};
    image.voxels.assign(v.voxels().begin(), v.voxels().end());
    write_metaimage(image, path);
}

}  // namespace bodygps
