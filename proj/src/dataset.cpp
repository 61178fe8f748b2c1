#include "bodygps/dataset.hpp"

#include <fstream>

#include "bodygps/metaimage.hpp"
#include "bodygps/rng.hpp"

namespace bodygps {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string subject_id(int index) {
    char id[32];
    std::snprintf(id, sizeof id, "subject_%03d", index);
    return id;
}

json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << text;
}

}  // namespace

SyntheticDataset generate_dataset(const PhantomSpec& spec, int n_subjects, int n_heldout, std::uint64_t seed) {
    if (n_subjects < 0 || n_heldout < 0 || n_heldout > n_subjects)
        throw ConfigError("need 0 <= heldout <= subjects");
    spec.validate();
    SyntheticDataset data;
    data.spec = spec;
    data.seed = seed;
    data.atlas = std::make_shared<const Atlas>(make_atlas_phantom(spec, derive_seed(seed, 0)));
    const Box domain = data.atlas->image().geometry().bounds();
    for (int i = 0; i < n_subjects; ++i) {
        const auto index = static_cast<std::uint64_t>(i);
        DeformationField field = make_deformation(derive_seed(seed, 1000 + index), spec.deformation, domain);
        SubjectSample s = warp_subject(*data.atlas, field, derive_seed(seed, 2000 + index), spec.subject_noise_sd,
                                       subject_id(i));
        (i < n_subjects - n_heldout ? data.train : data.heldout).push_back(std::move(s));
    }
    return data;
}

json write_dataset(const SyntheticDataset& data, const fs::path& dir) {
    fs::create_directories(dir / "subjects");
    save_atlas(*data.atlas, dir / "atlas");
    json subjects = json::array();
    auto add = [&](const SubjectSample& s, const char* split) {
        const std::string volume = "subjects/" + s.id + ".mha";
        const std::string mask = "subjects/" + s.id + "_mask.mha";
        save_volume(s.volume, dir / volume, ElementType::Short);
        save_volume(warp_mask(*data.atlas, s.field, s.volume.geometry()), dir / mask);
        subjects.push_back({{"id", s.id}, {"volume", volume}, {"mask", mask}, {"split", split}, {"field", to_json(s.field)}});
    };
    for (const auto& s : data.train) add(s, "train");
    for (const auto& s : data.heldout) add(s, "heldout");
    const json manifest{{"atlas", "atlas"}, {"phantom", to_json(data.spec)}, {"seed", data.seed}, {"subjects", subjects}};
    write_text(dir / "manifest.json", manifest.dump(2) + "\n");
    return manifest;
}

SyntheticDataset load_dataset(const fs::path& manifest_path) {
    const json m = read_json(manifest_path);
    const fs::path root = manifest_path.parent_path().empty() ? fs::path(".") : manifest_path.parent_path();
    SyntheticDataset data;
    try {
        data.spec = phantom_spec_from_json(m.at("phantom"));
        data.seed = m.value("seed", std::uint64_t{0});
        const fs::path atlas_dir = root / m.at("atlas").get<std::string>();
        if (!fs::is_directory(atlas_dir)) throw ConfigError("atlas directory not found: " + atlas_dir.string());
        data.atlas = std::make_shared<const Atlas>(load_atlas(atlas_dir));
        for (const auto& r : m.at("subjects")) {
            const fs::path volume = root / r.at("volume").get<std::string>();
            if (!fs::exists(volume)) throw ConfigError("subject volume not found: " + volume.string());
            SubjectSample s{r.at("id").get<std::string>(), load_volume(volume), deformation_from_json(r.at("field"))};
            const std::string split = r.value("split", "train");
            if (split == "train")
                data.train.push_back(std::move(s));
            else if (split == "heldout")
                data.heldout.push_back(std::move(s));
            else
                throw ConfigError("unknown split '" + split + "'");
        }
    } catch (const json::exception& e) {
        throw ConfigError(manifest_path.string() + ": " + e.what());
    }
    return data;
}

PhantomSpec load_phantom_spec(const std::string& name_or_path) {
    if (name_or_path == "thorax") return thorax_phantom_spec();
    if (name_or_path == "ankle") return ankle_phantom_spec();
    try {
        PhantomSpec spec = phantom_spec_from_json(read_json(name_or_path));
        spec.validate();
        return spec;
    } catch (const ConfigError&) {
        throw;
    } catch (const Error& e) {
        throw ConfigError(e.what());
    }
}

}  // namespace bodygps
