#include "bodygps/atlas.hpp"

#include <fstream>
#include <iterator>

#include <json.hpp>

#include "bodygps/metaimage.hpp"

namespace bodygps {
namespace {

using nlohmann::json;

json point_json(const WorldPoint& p) { return json::array({p.x, p.y, p.z}); }

WorldPoint parse_point(const json& j, const std::string& key) {
    if (!j.is_array() || j.size() != 3) throw ParseError(key, "expected [x, y, z]");
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

}  // namespace

Atlas::Atlas(Volume image, LabelVolume mask, ReferencePoint reference, double scale_mm,
             std::map<std::string, WorldPoint> landmarks, std::map<int, std::string> label_names)
    : image_(std::move(image)), mask_(std::move(mask)), reference_(std::move(reference)), scale_mm_(scale_mm),
      landmarks_(std::move(landmarks)), label_names_(std::move(label_names)) {
    if (!(mask_.geometry() == image_.geometry()))
        throw GeometryMismatchError("atlas mask geometry differs from atlas image geometry");
    if (!(scale_mm_ > 0.0) || !std::isfinite(scale_mm_)) throw ConfigError("atlas scale_mm must be positive");
    if (!image_.geometry().bounds().contains(reference_.world_mm))
        throw ConfigError("reference point '" + reference_.name + "' lies outside the atlas image");
    landmarks_[reference_.name] = reference_.world_mm;
    label_names_.try_emplace(0, "background");
}

std::string Atlas::label_name(int label) const {
    const auto it = label_names_.find(label);
    return it == label_names_.end() ? "label_" + std::to_string(label) : it->second;
}

LabelHit Atlas::label_at(const NormalizedCoord& c) const {
    const int label = mask_.sample_nearest(from_normalized(c));
    return {label, label_name(label)};
}

NormalizedCoord Atlas::landmark_normalized(const std::string& name) const {
    const auto it = landmarks_.find(name);
    if (it == landmarks_.end()) {
        std::string available;
        for (const auto& [n, p] : landmarks_) available += (available.empty() ? "" : ", ") + n;
        throw MissingLandmarkError("unknown landmark '" + name + "'; available: " + available);
    }
    return to_normalized(it->second);
}

std::string atlas_json(const Atlas& atlas) {
    json doc;
    doc["reference_point"] = {{"name", atlas.reference().name}, {"world_mm", point_json(atlas.reference().world_mm)}};
    doc["scale_mm"] = atlas.scale_mm();
    json landmarks = json::object();
    for (const auto& [name, p] : atlas.landmarks()) landmarks[name] = point_json(p);
    doc["landmarks"] = landmarks;
    json labels = json::object();
    for (const auto& [label, name] : atlas.label_names()) labels[std::to_string(label)] = name;
    doc["labels"] = labels;
    return doc.dump(2);
}

void save_atlas(const Atlas& atlas, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    save_volume(atlas.image(), dir / "image.mha", ElementType::Short);
    save_volume(atlas.mask(), dir / "mask.mha");
    std::ofstream out(dir / "atlas.json", std::ios::trunc);
    if (!out) throw Error("cannot write " + (dir / "atlas.json").string());
    out << atlas_json(atlas) << "\n";
}

Atlas load_atlas(const std::filesystem::path& dir) {
    Volume image = load_volume(dir / "image.mha");
    LabelVolume mask = load_label_volume(dir / "mask.mha");

    std::ifstream in(dir / "atlas.json");
    if (!in) throw Error("cannot open " + (dir / "atlas.json").string());
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ParseError("atlas.json", e.what());
    }
    try {
        ReferencePoint ref{doc.at("reference_point").at("name").get<std::string>(),
                           parse_point(doc.at("reference_point").at("world_mm"), "reference_point.world_mm")};
        const double scale = doc.value("scale_mm", 256.0);
        std::map<std::string, WorldPoint> landmarks;
        const json landmark_doc = doc.value("landmarks", json::object());
        for (const auto& [name, p] : landmark_doc.items())
            landmarks[name] = parse_point(p, "landmarks." + name);
        std::map<int, std::string> labels;
        const json label_doc = doc.value("labels", json::object());
        for (const auto& [key, name] : label_doc.items())
            labels[std::stoi(key)] = name.get<std::string>();
        return Atlas(std::move(image), std::move(mask), std::move(ref), scale, std::move(landmarks),
                     std::move(labels));
    } catch (const json::exception& e) {
        throw ParseError("atlas.json", e.what());
    }
}

}  // namespace bodygps
