#pragma once

#include <memory>
#include <span>
#include <vector>

#include "bodygps/atlas.hpp"
#include "bodygps/model.hpp"
#include "bodygps/sampler.hpp"
#include "bodygps/synth.hpp"

namespace bodygps {

/// Anything that maps (volume, world point) to a 3-vector: normalized atlas
/// coordinates in AtlasCoord mode, a world-mm displacement in DisplacementMm
/// mode. Implementations are immutable and safe to share across threads.
class PointEstimator {
public:
    virtual ~PointEstimator() = default;
    virtual OutputMode mode() const = 0;
    virtual Vec3 estimate(const Volume& v, const WorldPoint& p) const = 0;
    virtual std::vector<Vec3> estimate_batch(const Volume& v, std::span<const WorldPoint> points) const;
};

/// The trained regressor behind descriptor extraction, 32-bit inference.
class RegressorEstimator final : public PointEstimator {
public:
    /// Throws IncompatibleError when the params were trained for another layout.
    RegressorEstimator(RegressorParams params, DescriptorSampler sampler);

    OutputMode mode() const override { return params_.output_mode; }
    Vec3 estimate(const Volume& v, const WorldPoint& p) const override;
    std::vector<Vec3> estimate_batch(const Volume& v, std::span<const WorldPoint> points) const override;

    const RegressorParams& params() const { return params_; }
    const DescriptorSampler& sampler() const { return sampler_; }

private:
    RegressorParams params_;
    DescriptorSampler sampler_;
};

/// Ground-truth coordinates from a known deformation; ignores the image.
class FieldOracle final : public PointEstimator {
public:
    FieldOracle(std::shared_ptr<const Atlas> atlas, DeformationField field)
        : atlas_(std::move(atlas)), field_(std::move(field)) {}
    OutputMode mode() const override { return OutputMode::AtlasCoord; }
    Vec3 estimate(const Volume&, const WorldPoint& p) const override {
        return atlas_->to_normalized(field_.map(p)).as_vec();
    }

private:
    std::shared_ptr<const Atlas> atlas_;
    DeformationField field_;
};

/// Treats subject world space as atlas space (no deformation model).
class IdentityEstimator final : public PointEstimator {
public:
    explicit IdentityEstimator(std::shared_ptr<const Atlas> atlas) : atlas_(std::move(atlas)) {}
    OutputMode mode() const override { return OutputMode::AtlasCoord; }
    Vec3 estimate(const Volume&, const WorldPoint& p) const override { return atlas_->to_normalized(p).as_vec(); }

private:
    std::shared_ptr<const Atlas> atlas_;
};

/// Returns the constant zero vector, i.e. the untrained zero-head model.
class ConstantEstimator final : public PointEstimator {
public:
    explicit ConstantEstimator(OutputMode mode, Vec3 value = {}) : mode_(mode), value_(value) {}
    OutputMode mode() const override { return mode_; }
    Vec3 estimate(const Volume&, const WorldPoint&) const override { return value_; }

private:
    OutputMode mode_;
    Vec3 value_;
};

/// Exact displacement to a known landmark, optionally damped.
class DisplacementOracle final : public PointEstimator {
public:
    explicit DisplacementOracle(WorldPoint landmark, double damping = 1.0) : landmark_(landmark), damping_(damping) {}
    OutputMode mode() const override { return OutputMode::DisplacementMm; }
    Vec3 estimate(const Volume&, const WorldPoint& p) const override { return (landmark_ - p) * damping_; }

private:
    WorldPoint landmark_;
    double damping_;
};

}  // namespace bodygps
