#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "bodygps/volume.hpp"

namespace bodygps {

enum class ElementType { Short, UChar, Float };

std::string_view element_type_name(ElementType t);

/// Decoded MetaImage: geometry, the on-disk element type, and voxel values
/// widened to float (exact for all supported types).
struct MetaImage {
    ImageGeometry geometry;
    ElementType element_type = ElementType::Float;
    std::vector<float> voxels;
};

/// Parses a single-file image (`ElementDataFile = LOCAL`). When the header
/// names an external data file it is resolved relative to `base_dir`.
MetaImage parse_metaimage(std::string_view bytes, const std::filesystem::path& base_dir = {});

/// Encodes a single-file image. Values are narrowed to `type`; integer types
/// round to nearest.
std::string encode_metaimage(const MetaImage& image);

MetaImage read_metaimage(const std::filesystem::path& path);

/// `.mha` writes a single file; `.mhd` writes the header plus a sibling `.raw`.
void write_metaimage(const MetaImage& image, const std::filesystem::path& path);

/// Background defaults to the minimum intensity present in the data.
Volume load_volume(const std::filesystem::path& path);
Volume to_volume(MetaImage image);
/// Label payloads must hold integers in [0, 255].
LabelVolume load_label_volume(const std::filesystem::path& path);

void save_volume(const Volume& v, const std::filesystem::path& path, ElementType type = ElementType::Float);
void save_volume(const LabelVolume& v, const std::filesystem::path& path);

}  // namespace bodygps
