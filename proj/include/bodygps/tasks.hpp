#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "bodygps/atlas.hpp"
#include "bodygps/estimator.hpp"

namespace bodygps {

struct QueryResult {
    NormalizedCoord coord;
    WorldPoint atlas_point;
    int label = 0;
    std::string label_name;
    double latency_us = 0.0;  // estimator only (extract + forward for the regressor)
};

/// Coordinate estimator bound to its atlas. Shareable and read-only.
class Engine {
public:
    Engine(std::shared_ptr<const PointEstimator> estimator, std::shared_ptr<const Atlas> atlas);

    const PointEstimator& estimator() const { return *estimator_; }
    const Atlas& atlas() const { return *atlas_; }
    std::shared_ptr<const Atlas> atlas_ptr() const { return atlas_; }

    NormalizedCoord coordinate(const Volume& v, const WorldPoint& p) const {
        return NormalizedCoord::from_vec(estimator_->estimate(v, p));
    }
    QueryResult query(const Volume& v, const WorldPoint& p) const;

private:
    std::shared_ptr<const PointEstimator> estimator_;
    std::shared_ptr<const Atlas> atlas_;
};

/// Loads a model file and binds it to the atlas with the default layout.
Engine make_regressor_engine(const RegressorParams& params, std::shared_ptr<const Atlas> atlas,
                             const IntensityWindow& window = {});

/// Label transfer: query a world-mm grid over v, look labels up in the atlas
/// mask, fill every voxel from its nearest grid point. Along any axis where
/// grid_mm <= spacing every voxel is queried directly.
LabelVolume segment(const Engine& engine, const Volume& v, double grid_mm = 3.0);

/// 2 sum_l TP_l / sum_l (|pred_l| + |gt_l|) over nonzero labels present in gt
/// (restricted to `labels` when non-empty). 1.0 when no label is counted.
double dice_micro(const LabelVolume& pred, const LabelVolume& gt, const std::vector<int>& labels = {});

struct NavigationConfig {
    int max_iters = 50;
    double tol_mm = 0.1;
    double damping = 1.0;
};

struct NavigationResult {
    WorldPoint final_point;
    std::vector<WorldPoint> path;  // start first; at most max_iters + 1 points
    int iterations = 0;            // steps taken (path.size() - 1)
    bool converged = false;
};

/// Fixed-point search for the point whose estimated coordinate equals
/// `target`: p <- clamp(p + damping * scale * (target - f(p))). Stops once a
/// step would move less than tol_mm (that step is not taken).
NavigationResult navigate(const Engine& engine, const Volume& v, const NormalizedCoord& target, const WorldPoint& start,
                          const NavigationConfig& config = {});

/// Estimates the source point's coordinate, then navigates the target volume
/// toward it from the target volume center.
NavigationResult match_point(const Engine& engine, const Volume& source, const WorldPoint& source_point,
                             const Volume& target, const NavigationConfig& config = {});

struct ThresholdPoint {
    double threshold_mm = 0.0;
    double sensitivity = 0.0;
};

/// Empirical CDF of errors at each threshold (fraction <= threshold).
std::vector<ThresholdPoint> sensitivity_at_thresholds(const std::vector<double>& errors_mm,
                                                      const std::vector<double>& thresholds_mm);

/// Follows predicted displacements: p <- clamp(p + damping * g(p)). Requires a
/// DisplacementMm estimator; throws ModeError otherwise.
NavigationResult navigate_landmark(const PointEstimator& estimator, const Volume& v, const WorldPoint& start,
                                   const NavigationConfig& config = {});
NavigationResult navigate_landmark(const PointEstimator& estimator, const Volume& v,
                                   const NavigationConfig& config = {});

struct MultiAgentResult {
    WorldPoint point;  // coordinate-wise median of agent finals
    std::vector<NavigationResult> agents;
};

/// Volume center plus +-offset_mm along each axis (7 starts), clamped to bounds.
std::vector<WorldPoint> default_agent_starts(const Volume& v, double offset_mm = 25.0);

MultiAgentResult multi_agent_landmark(const PointEstimator& estimator, const Volume& v,
                                      const std::vector<WorldPoint>& starts, const NavigationConfig& config = {});

/// Coordinate-wise median; even counts average the middle pair.
WorldPoint coordinate_median(const std::vector<WorldPoint>& points);

struct FrocCurve {
    std::vector<ThresholdPoint> points;
    double sensitivity_5mm = 0.0;
    double sensitivity_10mm = 0.0;
};

/// Sensitivity-vs-threshold table; 5 mm and 10 mm are always included.
FrocCurve froc_curve(const std::vector<double>& errors_mm, std::vector<double> thresholds_mm);

struct LatencyStats {
    double p50_us = 0.0;
    double p95_us = 0.0;
    double p99_us = 0.0;
    double mean_us = 0.0;
    std::size_t queries = 0;
};

/// Times single queries (extract + forward) at `n_queries` random voxel
/// centers whose intensity exceeds `body_threshold`.
LatencyStats benchmark_latency(const PointEstimator& estimator, const Volume& v, int n_queries, std::uint64_t seed,
                               double body_threshold = -500.0);

/// Nearest-rank percentile of `values` (q in [0, 1]); 0 when empty.
double percentile(std::vector<double> values, double q);

}  // namespace bodygps
