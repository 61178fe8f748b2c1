#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <utility>

#include "bodygps/volume.hpp"

namespace bodygps {

/// Atlas position relative to the reference point (the carina for thoracic
/// atlases), divided by the atlas scale. Dimensionless.
struct NormalizedCoord {
    double cx = 0.0;
    double cy = 0.0;
    double cz = 0.0;

    Vec3 as_vec() const { return {cx, cy, cz}; }
    static NormalizedCoord from_vec(const Vec3& v) { return {v.x, v.y, v.z}; }
    friend bool operator==(const NormalizedCoord&, const NormalizedCoord&) = default;
};

struct ReferencePoint {
    std::string name = "carina";
    WorldPoint world_mm;
};

struct LabelHit {
    int label = 0;
    std::string name;
};

class Atlas {
public:
    Atlas(Volume image, LabelVolume mask, ReferencePoint reference, double scale_mm,
          std::map<std::string, WorldPoint> landmarks, std::map<int, std::string> label_names);

    const Volume& image() const { return image_; }
    const LabelVolume& mask() const { return mask_; }
    const ReferencePoint& reference() const { return reference_; }
    double scale_mm() const { return scale_mm_; }
    /// Includes the reference point under its own name.
    const std::map<std::string, WorldPoint>& landmarks() const { return landmarks_; }
    const std::map<int, std::string>& label_names() const { return label_names_; }
    std::string label_name(int label) const;

    NormalizedCoord to_normalized(const WorldPoint& p) const {
        return NormalizedCoord::from_vec((p - reference_.world_mm) / scale_mm_);
    }
    WorldPoint from_normalized(const NormalizedCoord& c) const { return reference_.world_mm + c.as_vec() * scale_mm_; }

    /// Nearest mask voxel of from_normalized(c); background outside the mask.
    LabelHit label_at(const NormalizedCoord& c) const;
    /// Throws MissingLandmarkError listing the available names.
    NormalizedCoord landmark_normalized(const std::string& name) const;

private:
    Volume image_;
    LabelVolume mask_;
    ReferencePoint reference_;
    double scale_mm_;
    std::map<std::string, WorldPoint> landmarks_;
    std::map<int, std::string> label_names_;
};

/// Bundle directory: image.mha, mask.mha, atlas.json.
void save_atlas(const Atlas& atlas, const std::filesystem::path& dir);
Atlas load_atlas(const std::filesystem::path& dir);

/// The atlas.json document (reference point, scale, landmarks, labels).
std::string atlas_json(const Atlas& atlas);

}  // namespace bodygps
