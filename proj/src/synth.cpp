#include "bodygps/synth.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <set>

#include "bodygps/rng.hpp"

namespace bodygps {
namespace {

using nlohmann::json;

json vec_json(const Vec3& v) { return json::array({v.x, v.y, v.z}); }

Vec3 vec_from(const json& j, const char* key) {
    if (!j.is_array() || j.size() != 3) throw ParseError(key, "expected [x, y, z]");
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

Vec3 random_direction(Xoshiro256& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    for (;;) {
        const Vec3 v{normal(rng), normal(rng), normal(rng)};
        const double n = norm(v);
        if (n > 1e-12) return v / n;
    }
}

Vec3 uniform_in(const Box& box, Xoshiro256& rng) {
    return {rng.uniform(box.lo.x, box.hi.x), rng.uniform(box.lo.y, box.hi.y), rng.uniform(box.lo.z, box.hi.z)};
}

}  // namespace

bool OrganSpec::contains(const WorldPoint& p) const {
    const Vec3 d = p - center;
    const double theta = rotation_z_deg * std::numbers::pi / 180.0;
    const double c = std::cos(theta), s = std::sin(theta);
    // Rotate into the organ frame (inverse rotation about z).
    const double lx = c * d.x + s * d.y;
    const double ly = -s * d.x + c * d.y;
    const double lz = d.z;
    const double r = (lx * lx) / (semi_axes.x * semi_axes.x) + (ly * ly) / (semi_axes.y * semi_axes.y) +
                     (lz * lz) / (semi_axes.z * semi_axes.z);
    return r <= 1.0;
}

void PhantomSpec::validate() const {
    geometry.validate();
    std::set<int> labels;
    for (const auto& organ : organs) {
        if (organ.label < 1 || organ.label > 255)
            throw ConfigError("organ '" + organ.name + "' label must be in [1, 255]");
        if (!labels.insert(organ.label).second)
            throw ConfigError("organ label " + std::to_string(organ.label) + " is used more than once");
        for (int a = 0; a < 3; ++a)
            if (!(organ.semi_axes[a] > 0.0)) throw ConfigError("organ '" + organ.name + "' semi-axes must be positive");
    }
    if (!geometry.bounds().contains(reference.world_mm))
        throw ConfigError("reference point '" + reference.name + "' lies outside the phantom bounds");
    if (!(scale_mm > 0.0)) throw ConfigError("scale_mm must be positive");
    if (noise_sd < 0.0 || subject_noise_sd < 0.0) throw ConfigError("noise standard deviation must be >= 0");
}

PhantomSpec thorax_phantom_spec() {
    PhantomSpec s;
    s.name = "thorax";
    s.geometry = {{96, 96, 96}, {2.0, 2.0, 2.0}, {-95.0, -95.0, -95.0}};
    s.background = -1024.0;
    s.noise_sd = 10.0;
    s.subject_noise_sd = 10.0;
    // x: right->left, y: anterior->posterior, z: inferior->superior.
    s.organs = {
        {1, "body", {0, 0, 0}, {85, 62, 200}, 40, 0},
        {2, "lung_left", {-40, 2, 40}, {30, 42, 55}, -800, 0},
        {3, "lung_right", {40, 2, 38}, {32, 44, 58}, -830, 0},
        {4, "airway", {0, -8, 72}, {8, 8, 46}, -1000, 0},
        {5, "heart", {12, -24, 0}, {34, 28, 28}, 120, 25},
        {6, "aorta", {-12, 22, 10}, {9, 9, 85}, 220, 0},
        {7, "liver", {30, -4, -55}, {46, 40, 32}, 85, 20},
        {8, "spleen", {-48, 18, -48}, {18, 24, 26}, 105, -15},
        {9, "stomach", {-26, -26, -42}, {24, 18, 20}, -350, 10},
        {10, "kidney_left", {-42, 36, -74}, {14, 12, 24}, 150, 0},
        {11, "kidney_right", {42, 36, -80}, {14, 12, 24}, 160, 0},
        {12, "sternum", {0, -56, 12}, {9, 5, 45}, 500, 0},
        {13, "vertebra_T6", {0, 46, 85}, {15, 13, 9}, 680, 0},
        {14, "vertebra_T8", {0, 46, 60}, {15, 13, 9}, 700, 0},
        {15, "vertebra_T10", {0, 46, 35}, {15, 13, 9}, 720, 0},
        {16, "vertebra_T12", {0, 46, 10}, {15, 13, 9}, 740, 0},
        {17, "vertebra_L1", {0, 46, -15}, {16, 14, 9}, 760, 0},
        {18, "vertebra_L2", {0, 46, -40}, {16, 14, 9}, 780, 0},
        {19, "vertebra_L3", {0, 46, -65}, {17, 14, 9}, 800, 0},
        {20, "vertebra_L4", {0, 46, -90}, {17, 14, 9}, 820, 0},
    };
    s.reference = {"carina", {0, -8, 30}};
    s.landmarks = {{"L1", {0, 46, -15}}, {"heart_center", {12, -24, 0}}, {"liver_dome", {30, -4, -23}}};
    return s;
}

PhantomSpec ankle_phantom_spec() {
    PhantomSpec s;
    s.name = "ankle";
    s.geometry = {{96, 96, 96}, {2.0, 2.0, 2.0}, {-95.0, -95.0, -95.0}};
    s.background = -1024.0;
    s.noise_sd = 10.0;
    s.subject_noise_sd = 10.0;
    // x: medial->lateral, y: anterior->posterior, z: inferior->superior.
    s.organs = {
        {1, "leg", {0, 5, 40}, {45, 40, 110}, 40, 0},
        {2, "foot", {0, -30, -62}, {42, 80, 30}, 40, 0},
        {3, "tibia", {-10, 5, 40}, {14, 14, 80}, 900, 0},
        {4, "fibula", {25, 12, 37}, {6, 6, 75}, 850, 0},
        {5, "talus", {0, 0, -50}, {18, 22, 13}, 600, 0},
        {6, "calcaneus", {2, 30, -72}, {17, 30, 14}, 650, 0},
        {7, "navicular", {-5, -28, -55}, {12, 8, 10}, 550, 0},
        {8, "cuboid", {18, -28, -70}, {10, 10, 9}, 560, 0},
        {9, "metatarsal_1", {-15, -70, -70}, {6, 22, 6}, 720, 15},
        {10, "metatarsal_5", {22, -65, -78}, {5, 20, 5}, 700, -15},
        {11, "achilles_tendon", {0, 42, -20}, {6, 4, 35}, 100, 0},
    };
    s.reference = {"ankle_center", {0, 0, -50}};
    s.landmarks = {{"fibula_tip", {25, 12, -37}}, {"tibia_plafond", {-10, 5, -38}}};
    return s;
}

json to_json(const PhantomSpec& s) {
    json organs = json::array();
    for (const auto& o : s.organs)
        organs.push_back({{"label", o.label},
                          {"name", o.name},
                          {"center_mm", vec_json(o.center)},
                          {"semi_axes_mm", vec_json(o.semi_axes)},
                          {"intensity", o.intensity},
                          {"rotation_z_deg", o.rotation_z_deg}});
    json landmarks = json::object();
    for (const auto& [name, p] : s.landmarks) landmarks[name] = vec_json(p);
    return {{"name", s.name},
            {"dims", {s.geometry.dims.i, s.geometry.dims.j, s.geometry.dims.k}},
            {"spacing_mm", vec_json(s.geometry.spacing)},
            {"origin_mm", vec_json(s.geometry.origin)},
            {"background", s.background},
            {"noise_sd", s.noise_sd},
            {"subject_noise_sd", s.subject_noise_sd},
            {"scale_mm", s.scale_mm},
            {"reference_point", {{"name", s.reference.name}, {"world_mm", vec_json(s.reference.world_mm)}}},
            {"landmarks", landmarks},
            {"organs", organs},
            {"deformation",
             {{"n_bumps", s.deformation.n_bumps},
              {"amp_max_mm", s.deformation.amp_max_mm},
              {"sigma_range_mm", {s.deformation.sigma_min_mm, s.deformation.sigma_max_mm}},
              {"lipschitz_limit", s.deformation.lipschitz_limit}}}};
}

PhantomSpec phantom_spec_from_json(const json& j) {
    try {
        PhantomSpec s;
        s.name = j.value("name", "phantom");
        const auto& dims = j.at("dims");
        if (!dims.is_array() || dims.size() != 3) throw ParseError("dims", "expected [nx, ny, nz]");
        s.geometry.dims = {dims[0].get<std::int64_t>(), dims[1].get<std::int64_t>(), dims[2].get<std::int64_t>()};
        s.geometry.spacing = vec_from(j.at("spacing_mm"), "spacing_mm");
        s.geometry.origin = vec_from(j.at("origin_mm"), "origin_mm");
        s.background = j.value("background", -1024.0);
        s.noise_sd = j.value("noise_sd", 0.0);
        s.subject_noise_sd = j.value("subject_noise_sd", s.noise_sd);
        s.scale_mm = j.value("scale_mm", 256.0);
        s.reference.name = j.at("reference_point").at("name").get<std::string>();
        s.reference.world_mm = vec_from(j.at("reference_point").at("world_mm"), "reference_point.world_mm");
        const json landmarks = j.value("landmarks", json::object());
        for (const auto& [name, p] : landmarks.items()) s.landmarks[name] = vec_from(p, "landmarks");
        for (const auto& o : j.at("organs"))
            s.organs.push_back({o.at("label").get<int>(), o.at("name").get<std::string>(),
                                vec_from(o.at("center_mm"), "center_mm"), vec_from(o.at("semi_axes_mm"), "semi_axes_mm"),
                                o.at("intensity").get<double>(), o.value("rotation_z_deg", 0.0)});
        if (j.contains("deformation")) {
            const auto& d = j.at("deformation");
            s.deformation.n_bumps = d.value("n_bumps", s.deformation.n_bumps);
            s.deformation.amp_max_mm = d.value("amp_max_mm", s.deformation.amp_max_mm);
            if (d.contains("sigma_range_mm")) {
                s.deformation.sigma_min_mm = d.at("sigma_range_mm").at(0).get<double>();
                s.deformation.sigma_max_mm = d.at("sigma_range_mm").at(1).get<double>();
            }
            s.deformation.lipschitz_limit = d.value("lipschitz_limit", s.deformation.lipschitz_limit);
        }
        s.validate();
        return s;
    } catch (const json::exception& e) {
        throw ParseError("phantom spec", e.what());
    }
}

Atlas make_atlas_phantom(const PhantomSpec& spec, std::uint64_t seed) {
    spec.validate();
    const ImageGeometry& g = spec.geometry;
    std::vector<float> image(g.voxel_count());
    std::vector<std::uint8_t> mask(g.voxel_count(), 0);
    Xoshiro256 rng(seed);
    std::normal_distribution<double> noise(0.0, 1.0);

    for (std::int64_t k = 0; k < g.dims.k; ++k)
        for (std::int64_t j = 0; j < g.dims.j; ++j)
            for (std::int64_t i = 0; i < g.dims.i; ++i) {
                const WorldPoint p = g.voxel_to_world(i, j, k);
                double value = spec.background;
                int label = 0;
                for (const auto& organ : spec.organs)
                    if (organ.contains(p)) {
                        value = organ.intensity;
                        label = organ.label;
                    }
                if (spec.noise_sd > 0.0) value += spec.noise_sd * noise(rng);
                const std::size_t n = g.flat_index(i, j, k);
                image[n] = static_cast<float>(std::round(value));
                mask[n] = static_cast<std::uint8_t>(label);
            }

    std::map<int, std::string> names;
    for (const auto& organ : spec.organs) names[organ.label] = organ.name;
    return Atlas(Volume(g, std::move(image), static_cast<float>(spec.background)), LabelVolume(g, std::move(mask), 0),
                 spec.reference, spec.scale_mm, spec.landmarks, std::move(names));
}

Vec3 DeformationField::displacement(const WorldPoint& y) const {
    Vec3 d;
    for (const auto& b : bumps_) {
        const Vec3 r = y - b.center;
        d += b.amplitude * std::exp(-dot(r, r) / (2.0 * b.sigma * b.sigma));
    }
    return d;
}

std::array<Vec3, 3> DeformationField::jacobian(const WorldPoint& y) const {
    std::array<Vec3, 3> jac{};
    for (const auto& b : bumps_) {
        const Vec3 r = y - b.center;
        const double s2 = b.sigma * b.sigma;
        const double g = std::exp(-dot(r, r) / (2.0 * s2));
        const Vec3 grad = r * (-g / s2);
        for (int row = 0; row < 3; ++row) jac[row] += grad * b.amplitude[row];
    }
    return jac;
}

double DeformationField::lipschitz_bound() const {
    double total = 0.0;
    for (const auto& b : bumps_) total += norm(b.amplitude) / (b.sigma * std::exp(-0.5));
    return total;
}

WorldPoint DeformationField::inverse(const WorldPoint& x, double tol_mm, int max_iters) const {
    WorldPoint y = x;
    for (int it = 0; it < max_iters; ++it) {
        const WorldPoint next = x - displacement(y);
        if (distance(next, y) < tol_mm) return next;
        y = next;
    }
    throw GenerationError("deformation inverse did not converge");
}

json to_json(const DeformationField& field) {
    json bumps = json::array();
    for (const auto& b : field.bumps())
        bumps.push_back({{"center_mm", vec_json(b.center)}, {"amplitude_mm", vec_json(b.amplitude)}, {"sigma_mm", b.sigma}});
    return {{"bumps", bumps}, {"field_lipschitz", field.lipschitz_bound()}};
}

DeformationField deformation_from_json(const json& j) {
    std::vector<GaussianBump> bumps;
    for (const auto& b : j.at("bumps"))
        bumps.push_back({vec_from(b.at("center_mm"), "center_mm"), vec_from(b.at("amplitude_mm"), "amplitude_mm"),
                         b.at("sigma_mm").get<double>()});
    return DeformationField(std::move(bumps));
}

DeformationField make_deformation(std::uint64_t seed, int n_bumps, double amp_max_mm, double sigma_min_mm,
                                  double sigma_max_mm, const Box& domain, double lipschitz_limit) {
    if (n_bumps < 0) throw ConfigError("n_bumps must be >= 0");
    if (!(amp_max_mm > 0.0) || !(sigma_min_mm > 0.0) || sigma_max_mm < sigma_min_mm)
        throw ConfigError("deformation needs amp_max > 0 and 0 < sigma_min <= sigma_max");
    Xoshiro256 rng(seed);
    std::vector<GaussianBump> bumps;
    for (int n = 0; n < n_bumps; ++n) {
        GaussianBump b;
        b.center = uniform_in(domain, rng);
        b.amplitude = random_direction(rng) * rng.uniform(0.0, amp_max_mm);
        b.sigma = rng.uniform(sigma_min_mm, sigma_max_mm);
        bumps.push_back(b);
    }
    DeformationField field(bumps);
    for (int rescale = 0; field.lipschitz_bound() >= lipschitz_limit; ++rescale) {
        if (rescale == 100)
            throw GenerationError("cannot reach field_lipschitz < " + std::to_string(lipschitz_limit) +
                                  " with amp_max " + std::to_string(amp_max_mm) + " mm after 100 rescales");
        for (auto& b : bumps) b.amplitude *= 0.9;
        field = DeformationField(bumps);
    }
    return field;
}

DeformationField make_deformation(std::uint64_t seed, const DeformationSpec& spec, const Box& domain) {
    return make_deformation(seed, spec.n_bumps, spec.amp_max_mm, spec.sigma_min_mm, spec.sigma_max_mm, domain,
                            spec.lipschitz_limit);
}

SubjectSample warp_subject(const Atlas& atlas, const DeformationField& field, std::uint64_t seed, double noise_sd,
                           std::string id) {
    const ImageGeometry& g = atlas.image().geometry();
    std::vector<float> voxels(g.voxel_count());
    Xoshiro256 rng(seed);
    std::normal_distribution<double> noise(0.0, 1.0);
    for (std::int64_t k = 0; k < g.dims.k; ++k)
        for (std::int64_t j = 0; j < g.dims.j; ++j)
            for (std::int64_t i = 0; i < g.dims.i; ++i) {
                double value = sample_trilinear(atlas.image(), field.map(g.voxel_to_world(i, j, k)));
                if (noise_sd > 0.0) value += noise_sd * noise(rng);
                voxels[g.flat_index(i, j, k)] = static_cast<float>(std::round(value));
            }
    return {std::move(id), Volume(g, std::move(voxels), atlas.image().background()), field};
}

LabelVolume warp_mask(const Atlas& atlas, const DeformationField& field, const ImageGeometry& g) {
    std::vector<std::uint8_t> labels(g.voxel_count());
    for (std::int64_t k = 0; k < g.dims.k; ++k)
        for (std::int64_t j = 0; j < g.dims.j; ++j)
            for (std::int64_t i = 0; i < g.dims.i; ++i)
                labels[g.flat_index(i, j, k)] = atlas.mask().sample_nearest(field.map(g.voxel_to_world(i, j, k)));
    return LabelVolume(g, std::move(labels), 0);
}

std::vector<TrainingPoint> sample_training_points(const SubjectSample& subject, const Atlas& atlas,
                                                  const PointSamplingParams& params, std::uint64_t seed) {
    if (params.n_base < 1) throw ConfigError("n_base must be >= 1");
    if (params.n_perturb < 0 || params.perturb_mm < 0.0) throw ConfigError("perturbation settings must be >= 0");
    if (params.body_fraction < 0.0 || params.body_fraction > 1.0 || params.focus_fraction < 0.0 ||
        params.focus_fraction > 1.0)
        throw ConfigError("sampling fractions must lie in [0, 1]");

    const Box box = subject.volume.geometry().bounds();
    const DeformationField& field = subject.field;
    Xoshiro256 rng(seed);
    auto truth = [&](const WorldPoint& p) { return atlas.to_normalized(field.map(p)); };
    auto in_body = [&](const WorldPoint& p) { return atlas.mask().sample_nearest(field.map(p)) != 0; };

    const int n_focus = static_cast<int>(std::lround(params.focus_fraction * params.n_base));
    const int n_rest = params.n_base - n_focus;
    const int n_body = static_cast<int>(std::lround(params.body_fraction * n_rest));

    std::vector<TrainingPoint> points;
    points.reserve(static_cast<std::size_t>(params.n_base + params.n_perturb));

    if (n_focus > 0) {
        const auto it = atlas.landmarks().find(params.focus_landmark);
        if (it == atlas.landmarks().end())
            throw MissingLandmarkError("focus landmark '" + params.focus_landmark + "' is not in the atlas");
        const WorldPoint center = field.inverse(it->second);
        const double r = params.focus_radius_mm;
        while (static_cast<int>(points.size()) < n_focus) {
            const Vec3 o{rng.uniform(-r, r), rng.uniform(-r, r), rng.uniform(-r, r)};
            if (norm(o) > r) continue;
            const WorldPoint p = box.clamp(center + o);
            points.push_back({p, truth(p)});
        }
    }
    for (int n = 0; n < n_body; ++n) {
        WorldPoint p;
        int attempts = 0;
        do {
            if (++attempts > 100000) throw GenerationError("subject contains no body voxels to sample");
            p = uniform_in(box, rng);
        } while (!in_body(p));
        points.push_back({p, truth(p)});
    }
    while (static_cast<int>(points.size()) < params.n_base) {
        const WorldPoint p = uniform_in(box, rng);
        points.push_back({p, truth(p)});
    }
    for (int n = 0; n < params.n_perturb; ++n) {
        const int base = n % params.n_base;
        const double r = params.perturb_mm;
        const WorldPoint p = points[base].point + Vec3{rng.uniform(-r, r), rng.uniform(-r, r), rng.uniform(-r, r)};
        points.push_back({p, truth(p), base});
    }
    return points;
}

}  // namespace bodygps
