#include "bodygps/tasks.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <set>

#include "bodygps/rng.hpp"
#include "flush_denormals.hpp"

namespace bodygps {

// ---- estimators ------------------------------------------------------------

std::vector<Vec3> PointEstimator::estimate_batch(const Volume& v, std::span<const WorldPoint> points) const {
    std::vector<Vec3> out;
    out.reserve(points.size());
    for (const auto& p : points) out.push_back(estimate(v, p));
    return out;
}

RegressorEstimator::RegressorEstimator(RegressorParams params, DescriptorSampler sampler)
    : params_(std::move(params)), sampler_(std::move(sampler)) {
    if (params_.layout_hash != sampler_.layout().fingerprint())
        throw IncompatibleError("model layout fingerprint does not match the descriptor layout");
    if (params_.arch().input_len != sampler_.size())
        throw IncompatibleError("model input length " + std::to_string(params_.arch().input_len) +
                                " does not match descriptor length " + std::to_string(sampler_.size()));
}

Vec3 RegressorEstimator::estimate(const Volume& v, const WorldPoint& p) const {
    const FlushDenormalsScope ftz;
    thread_local std::vector<float> descriptor;
    descriptor.resize(sampler_.size());
    sampler_.extract_into(v, p, descriptor);
    const auto out = forward(params_.weights, std::span<const float>(descriptor));
    return {out[0], out[1], out[2]};
}

std::vector<Vec3> RegressorEstimator::estimate_batch(const Volume& v, std::span<const WorldPoint> points) const {
    const FlushDenormalsScope ftz;
    constexpr std::size_t kChunk = 512;
    std::vector<Vec3> out;
    out.reserve(points.size());
    ColMatrix<float> inputs(static_cast<Eigen::Index>(sampler_.size()), 0);
    for (std::size_t first = 0; first < points.size(); first += kChunk) {
        const std::size_t count = std::min(kChunk, points.size() - first);
        inputs.resize(static_cast<Eigen::Index>(sampler_.size()), static_cast<Eigen::Index>(count));
        for (std::size_t n = 0; n < count; ++n)
            sampler_.extract_into(v, points[first + n],
                                  std::span<float>(inputs.col(static_cast<Eigen::Index>(n)).data(), sampler_.size()));
        const ColMatrix<float> pred = forward_batch<float>(params_.weights, inputs);
        for (Eigen::Index c = 0; c < pred.cols(); ++c) out.push_back({pred(0, c), pred(1, c), pred(2, c)});
    }
    return out;
}

// ---- engine ----------------------------------------------------------------

Engine::Engine(std::shared_ptr<const PointEstimator> estimator, std::shared_ptr<const Atlas> atlas)
    : estimator_(std::move(estimator)), atlas_(std::move(atlas)) {
    if (!estimator_ || !atlas_) throw ConfigError("engine needs an estimator and an atlas");
    if (estimator_->mode() != OutputMode::AtlasCoord)
        throw ModeError("engine requires an atlas_coord estimator");
}

QueryResult Engine::query(const Volume& v, const WorldPoint& p) const {
    const auto t0 = std::chrono::steady_clock::now();
    const Vec3 raw = estimator_->estimate(v, p);
    const auto t1 = std::chrono::steady_clock::now();
    QueryResult r;
    r.coord = NormalizedCoord::from_vec(raw);
    r.atlas_point = atlas_->from_normalized(r.coord);
    const LabelHit hit = atlas_->label_at(r.coord);
    r.label = hit.label;
    r.label_name = hit.name;
    r.latency_us = std::chrono::duration<double, std::micro>(t1 - t0).count();
    return r;
}

Engine make_regressor_engine(const RegressorParams& params, std::shared_ptr<const Atlas> atlas,
                             const IntensityWindow& window) {
    return Engine(std::make_shared<RegressorEstimator>(params, DescriptorSampler(default_layout(), window)),
                  std::move(atlas));
}

// ---- segmentation ----------------------------------------------------------

LabelVolume segment(const Engine& engine, const Volume& v, double grid_mm) {
    if (!(grid_mm > 0.0)) throw ConfigError("grid_mm must be positive");
    const ImageGeometry& g = v.geometry();

    struct AxisGrid {
        bool direct;
        std::int64_t count;
        std::vector<std::int64_t> voxel_to_grid;
    };
    std::array<AxisGrid, 3> axes;
    for (int a = 0; a < 3; ++a) {
        const std::int64_t dim = g.dims[a];
        AxisGrid& ax = axes[a];
        ax.direct = grid_mm <= g.spacing[a];
        ax.voxel_to_grid.resize(static_cast<std::size_t>(dim));
        if (ax.direct) {
            ax.count = dim;
            for (std::int64_t i = 0; i < dim; ++i) ax.voxel_to_grid[i] = i;
        } else {
            const double extent = static_cast<double>(dim - 1) * g.spacing[a];
            ax.count = static_cast<std::int64_t>(std::ceil(extent / grid_mm)) + 1;
            for (std::int64_t i = 0; i < dim; ++i) {
                const auto m = static_cast<std::int64_t>(std::round(static_cast<double>(i) * g.spacing[a] / grid_mm));
                ax.voxel_to_grid[i] = std::clamp<std::int64_t>(m, 0, ax.count - 1);
            }
        }
    }
    // The last grid point may overshoot the final voxel center; keep it on the volume.
    const Box bounds = g.bounds();
    auto grid_coord = [&](int a, std::int64_t m) {
        return axes[a].direct ? g.origin[a] + static_cast<double>(m) * g.spacing[a]
                              : std::min(g.origin[a] + static_cast<double>(m) * grid_mm, bounds.hi[a]);
    };

    std::vector<WorldPoint> points;
    points.reserve(static_cast<std::size_t>(axes[0].count * axes[1].count * axes[2].count));
    for (std::int64_t k = 0; k < axes[2].count; ++k)
        for (std::int64_t j = 0; j < axes[1].count; ++j)
            for (std::int64_t i = 0; i < axes[0].count; ++i)
                points.push_back({grid_coord(0, i), grid_coord(1, j), grid_coord(2, k)});

    const std::vector<Vec3> coords = engine.estimator().estimate_batch(v, points);
    std::vector<std::uint8_t> grid_labels(coords.size());
    for (std::size_t n = 0; n < coords.size(); ++n)
        grid_labels[n] = static_cast<std::uint8_t>(engine.atlas().label_at(NormalizedCoord::from_vec(coords[n])).label);

    std::vector<std::uint8_t> out(g.voxel_count());
    for (std::int64_t k = 0; k < g.dims.k; ++k)
        for (std::int64_t j = 0; j < g.dims.j; ++j)
            for (std::int64_t i = 0; i < g.dims.i; ++i) {
                const std::int64_t gi = axes[0].voxel_to_grid[i];
                const std::int64_t gj = axes[1].voxel_to_grid[j];
                const std::int64_t gk = axes[2].voxel_to_grid[k];
                out[g.flat_index(i, j, k)] =
                    grid_labels[static_cast<std::size_t>(gi + axes[0].count * (gj + axes[1].count * gk))];
            }
    return LabelVolume(g, std::move(out), 0);
}

double dice_micro(const LabelVolume& pred, const LabelVolume& gt, const std::vector<int>& labels) {
    if (!(pred.geometry() == gt.geometry())) throw GeometryMismatchError("dice_micro needs identical geometry");
    std::array<std::int64_t, 256> tp{}, np{}, ng{};
    const auto p = pred.voxels();
    const auto t = gt.voxels();
    for (std::size_t n = 0; n < p.size(); ++n) {
        ++np[p[n]];
        ++ng[t[n]];
        if (p[n] == t[n]) ++tp[p[n]];
    }
    const std::set<int> wanted(labels.begin(), labels.end());
    std::int64_t num = 0, den = 0;
    for (int l = 1; l < 256; ++l) {
        if (ng[l] == 0) continue;
        if (!wanted.empty() && !wanted.contains(l)) continue;
        num += 2 * tp[l];
        den += np[l] + ng[l];
    }
    return den == 0 ? 1.0 : static_cast<double>(num) / static_cast<double>(den);
}

// ---- navigation ------------------------------------------------------------

namespace {

template <typename StepFn>
NavigationResult iterate(const Volume& v, const WorldPoint& start, const NavigationConfig& config, StepFn step_at) {
    if (config.max_iters < 1) throw ConfigError("max_iters must be >= 1");
    const Box bounds = v.geometry().bounds();
    NavigationResult r;
    WorldPoint p = bounds.clamp(start);
    r.path.push_back(p);
    // Each step is preceded by a convergence check, including one after the
    // last allowed step, so `iterations` counts steps actually taken.
    while (true) {
        const Vec3 step = step_at(p) * config.damping;
        if (norm(step) < config.tol_mm) {
            r.converged = true;
            break;
        }
        if (r.iterations == config.max_iters) break;
        p = bounds.clamp(p + step);
        r.path.push_back(p);
        ++r.iterations;
    }
    r.final_point = p;
    return r;
}

}  // namespace

NavigationResult navigate(const Engine& engine, const Volume& v, const NormalizedCoord& target, const WorldPoint& start,
                          const NavigationConfig& config) {
    const double scale = engine.atlas().scale_mm();
    const Vec3 goal = target.as_vec();
    return iterate(v, start, config, [&](const WorldPoint& p) {
        return (goal - engine.estimator().estimate(v, p)) * scale;
    });
}

NavigationResult match_point(const Engine& engine, const Volume& source, const WorldPoint& source_point,
                             const Volume& target, const NavigationConfig& config) {
    const NormalizedCoord c = engine.coordinate(source, source_point);
    return navigate(engine, target, c, target.geometry().center(), config);
}

std::vector<ThresholdPoint> sensitivity_at_thresholds(const std::vector<double>& errors_mm,
                                                      const std::vector<double>& thresholds_mm) {
    if (errors_mm.empty()) throw ConfigError("sensitivity needs at least one error value");
    std::vector<double> sorted = errors_mm;
    std::sort(sorted.begin(), sorted.end());
    std::vector<ThresholdPoint> out;
    for (double t : thresholds_mm) {
        const auto hits = std::upper_bound(sorted.begin(), sorted.end(), t) - sorted.begin();
        out.push_back({t, static_cast<double>(hits) / static_cast<double>(sorted.size())});
    }
    return out;
}

NavigationResult navigate_landmark(const PointEstimator& estimator, const Volume& v, const WorldPoint& start,
                                   const NavigationConfig& config) {
    if (estimator.mode() != OutputMode::DisplacementMm)
        throw ModeError("landmark navigation needs a displacement_mm model, got " +
                        std::string(output_mode_name(estimator.mode())));
    return iterate(v, start, config, [&](const WorldPoint& p) { return estimator.estimate(v, p); });
}

NavigationResult navigate_landmark(const PointEstimator& estimator, const Volume& v, const NavigationConfig& config) {
    return navigate_landmark(estimator, v, v.geometry().center(), config);
}

std::vector<WorldPoint> default_agent_starts(const Volume& v, double offset_mm) {
    const Box bounds = v.geometry().bounds();
    const WorldPoint c = bounds.center();
    std::vector<WorldPoint> starts{c};
    for (int a = 0; a < 3; ++a)
        for (double sign : {-1.0, 1.0}) {
            WorldPoint p = c;
            p[a] += sign * offset_mm;
            starts.push_back(bounds.clamp(p));
        }
    return starts;
}

WorldPoint coordinate_median(const std::vector<WorldPoint>& points) {
    if (points.empty()) throw ConfigError("median of an empty point set");
    WorldPoint out;
    std::vector<double> values(points.size());
    for (int a = 0; a < 3; ++a) {
        for (std::size_t n = 0; n < points.size(); ++n) values[n] = points[n][a];
        std::sort(values.begin(), values.end());
        const std::size_t mid = values.size() / 2;
        out[a] = values.size() % 2 ? values[mid] : 0.5 * (values[mid - 1] + values[mid]);
    }
    return out;
}

MultiAgentResult multi_agent_landmark(const PointEstimator& estimator, const Volume& v,
                                      const std::vector<WorldPoint>& starts, const NavigationConfig& config) {
    if (starts.empty()) throw ConfigError("multi-agent navigation needs at least one start");
    MultiAgentResult r;
    std::vector<WorldPoint> finals;
    for (const auto& s : starts) {
        r.agents.push_back(navigate_landmark(estimator, v, s, config));
        finals.push_back(r.agents.back().final_point);
    }
    r.point = coordinate_median(finals);
    return r;
}

FrocCurve froc_curve(const std::vector<double>& errors_mm, std::vector<double> thresholds_mm) {
    thresholds_mm.push_back(5.0);
    thresholds_mm.push_back(10.0);
    std::sort(thresholds_mm.begin(), thresholds_mm.end());
    thresholds_mm.erase(std::unique(thresholds_mm.begin(), thresholds_mm.end()), thresholds_mm.end());
    FrocCurve curve;
    curve.points = sensitivity_at_thresholds(errors_mm, thresholds_mm);
    for (const auto& pt : curve.points) {
        if (pt.threshold_mm == 5.0) curve.sensitivity_5mm = pt.sensitivity;
        if (pt.threshold_mm == 10.0) curve.sensitivity_10mm = pt.sensitivity;
    }
    return curve;
}

// ---- latency ---------------------------------------------------------------

double percentile(std::vector<double> values, double q) {
    if (values.empty()) return 0.0;
    std::sort(values.begin(), values.end());
    const auto rank = static_cast<std::size_t>(std::ceil(std::clamp(q, 0.0, 1.0) * static_cast<double>(values.size())));
    return values[std::max<std::size_t>(rank, 1) - 1];
}

LatencyStats benchmark_latency(const PointEstimator& estimator, const Volume& v, int n_queries, std::uint64_t seed,
                               double body_threshold) {
    if (n_queries < 1) throw ConfigError("benchmark needs at least one query");
    const auto& g = v.geometry();
    Xoshiro256 rng(seed);
    std::vector<WorldPoint> points;
    points.reserve(static_cast<std::size_t>(n_queries));
    const std::size_t max_tries = static_cast<std::size_t>(n_queries) * 100000;
    for (std::size_t tries = 0; points.size() < static_cast<std::size_t>(n_queries); ++tries) {
        if (tries >= max_tries) throw ConfigError("volume has too few voxels above the body threshold");
        const auto i = static_cast<std::int64_t>(rng.uniform() * static_cast<double>(g.dims.i));
        const auto j = static_cast<std::int64_t>(rng.uniform() * static_cast<double>(g.dims.j));
        const auto k = static_cast<std::int64_t>(rng.uniform() * static_cast<double>(g.dims.k));
        if (v.at(i, j, k) > body_threshold) points.push_back(g.voxel_to_world(i, j, k));
    }

    estimator.estimate(v, points.front());  // warm caches and thread-local buffers
    std::vector<double> times;
    times.reserve(points.size());
    double sum = 0.0;
    for (const auto& p : points) {
        const auto t0 = std::chrono::steady_clock::now();
        const Vec3 out = estimator.estimate(v, p);
        const auto t1 = std::chrono::steady_clock::now();
        asm volatile("" : : "g"(&out) : "memory");
        times.push_back(std::chrono::duration<double, std::micro>(t1 - t0).count());
        sum += times.back();
    }
    LatencyStats s;
    s.queries = times.size();
    s.mean_us = sum / static_cast<double>(times.size());
    s.p50_us = percentile(times, 0.50);
    s.p95_us = percentile(times, 0.95);
    s.p99_us = percentile(times, 0.99);
    return s;
}

}  // namespace bodygps
