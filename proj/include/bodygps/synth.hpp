#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "bodygps/atlas.hpp"
#include "bodygps/volume.hpp"

namespace bodygps {

struct OrganSpec {
    int label = 1;
    std::string name;
    Vec3 center;
    Vec3 semi_axes{10.0, 10.0, 10.0};
    double intensity = 0.0;
    double rotation_z_deg = 0.0;

    bool contains(const WorldPoint& p) const;
};

/// Gaussian-bump deformation generator settings.
struct DeformationSpec {
    int n_bumps = 4;
    double amp_max_mm = 15.0;
    double sigma_min_mm = 60.0;
    double sigma_max_mm = 100.0;
    double lipschitz_limit = 0.5;
};

/// Ellipsoid phantom. Organs later in the list are drawn over earlier ones.
struct PhantomSpec {
    std::string name = "phantom";
    ImageGeometry geometry;
    double background = -1024.0;
    std::vector<OrganSpec> organs;
    ReferencePoint reference;
    std::map<std::string, WorldPoint> landmarks;
    double noise_sd = 0.0;
    double subject_noise_sd = 0.0;
    double scale_mm = 256.0;
    DeformationSpec deformation;

    void validate() const;
};

/// Thoracic-abdominal phantom on a 96^3, 2 mm grid with the carina as reference.
PhantomSpec thorax_phantom_spec();
/// Ankle-like phantom with a "fibula_tip" landmark.
PhantomSpec ankle_phantom_spec();

nlohmann::json to_json(const PhantomSpec& spec);
PhantomSpec phantom_spec_from_json(const nlohmann::json& j);

/// Integer-valued image (CT-like), seeded Gaussian noise.
Atlas make_atlas_phantom(const PhantomSpec& spec, std::uint64_t seed);

struct GaussianBump {
    Vec3 center;
    Vec3 amplitude;
    double sigma = 1.0;
};

/// Backward displacement d(y) = sum_i a_i exp(-|y - c_i|^2 / (2 sigma_i^2));
/// map(y) = y + d(y) takes subject world mm to atlas world mm.
class DeformationField {
public:
    DeformationField() = default;
    explicit DeformationField(std::vector<GaussianBump> bumps) : bumps_(std::move(bumps)) {}

    const std::vector<GaussianBump>& bumps() const { return bumps_; }
    Vec3 displacement(const WorldPoint& y) const;
    WorldPoint map(const WorldPoint& y) const { return y + displacement(y); }
    /// Jacobian of the displacement, row r = d(d_r)/d(y).
    std::array<Vec3, 3> jacobian(const WorldPoint& y) const;
    /// sum_i |a_i| / (sigma_i e^{-1/2}); an upper bound on the Lipschitz constant of d.
    double lipschitz_bound() const;
    /// Solves map(y) = x by fixed-point iteration y <- x - d(y); needs a bound < 1.
    WorldPoint inverse(const WorldPoint& x, double tol_mm = 1e-10, int max_iters = 500) const;

private:
    std::vector<GaussianBump> bumps_;
};

nlohmann::json to_json(const DeformationField& field);
DeformationField deformation_from_json(const nlohmann::json& j);

/// Seeded bumps with centers inside `domain`; amplitudes are rescaled by 0.9
/// until the bound is below the limit, failing after 100 rescales.
DeformationField make_deformation(std::uint64_t seed, int n_bumps, double amp_max_mm, double sigma_min_mm,
                                  double sigma_max_mm, const Box& domain, double lipschitz_limit = 0.5);
DeformationField make_deformation(std::uint64_t seed, const DeformationSpec& spec, const Box& domain);

struct SubjectSample {
    std::string id;
    Volume volume;
    DeformationField field;
};

/// subject(y) = trilinear atlas image at map(y) plus noise, rounded to integers.
SubjectSample warp_subject(const Atlas& atlas, const DeformationField& field, std::uint64_t seed, double noise_sd,
                           std::string id = "subject");
/// Ground-truth subject labels: atlas mask at map(y), nearest neighbor.
LabelVolume warp_mask(const Atlas& atlas, const DeformationField& field, const ImageGeometry& geometry);

struct PointSamplingParams {
    int n_base = 1500;
    int n_perturb = 1500;
    double perturb_mm = 5.0;
    double body_fraction = 0.8;
    /// Fraction of base points drawn within focus_radius_mm of the subject-space
    /// position of `focus_landmark` (landmark training only).
    double focus_fraction = 0.0;
    double focus_radius_mm = 30.0;
    std::string focus_landmark;
};

struct TrainingPoint {
    WorldPoint point;
    NormalizedCoord truth;
    int base_index = -1;  // for perturbed points, the base point they derive from
};

/// Base points over the subject box (body_fraction of them inside the body),
/// then perturbed copies cycling through the base points.
std::vector<TrainingPoint> sample_training_points(const SubjectSample& subject, const Atlas& atlas,
                                                  const PointSamplingParams& params, std::uint64_t seed);

}  // namespace bodygps
