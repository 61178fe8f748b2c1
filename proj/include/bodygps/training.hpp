#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "bodygps/estimator.hpp"
#include "bodygps/model.hpp"
#include "bodygps/sampler.hpp"
#include "bodygps/synth.hpp"
#include "bodygps/tasks.hpp"

namespace bodygps {

enum class Precision { Float32, Float64 };

struct TrainConfig {
    int epochs = 1000;
    int batch_size = 256;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_epsilon = 1e-8;
    double loss_epsilon = 1e-8;
    std::uint64_t seed = 0;
    Precision precision = Precision::Float64;

    void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

/// What the regressor is trained to output.
struct TargetSpec {
    OutputMode mode = OutputMode::AtlasCoord;
    std::string landmark;  // DisplacementMm only
};

/// Rows are stored column-wise: descriptors is total_len x n, targets 3 x n.
struct TrainingSet {
    ColMatrix<float> descriptors;
    ColMatrix<double> targets;
    std::vector<std::string> provenance;  // subject id per row
    std::uint64_t layout_hash = 0;
    IntensityWindow window;

    std::size_t rows() const { return static_cast<std::size_t>(targets.cols()); }
    /// Throws ConfigError when layout or window differ.
    void append(const TrainingSet& other);
};

/// Per subject: sample_training_points, then descriptors. Point seeds derive
/// from `seed` and the subject index.
TrainingSet build_dataset(std::span<const SubjectSample> subjects, const Atlas& atlas, const DescriptorSampler& sampler,
                          const PointSamplingParams& points, const TargetSpec& target, std::uint64_t seed);

/// Host-side logMSE over n x 3 style inputs (one sample per column).
double logmse(const ColMatrix<double>& pred, const ColMatrix<double>& target, double epsilon = 1e-8);

struct TrainResult {
    RegressorParams params;
    std::vector<double> loss_history;  // one epoch-mean minibatch loss per epoch
};

struct TrainingDiverged : Error {
    TrainingDiverged(int epoch, int last_good)
        : Error("training diverged at epoch " + std::to_string(epoch) + " (last good epoch " +
                std::to_string(last_good) + ")"),
          last_good_epoch(last_good) {}
    int last_good_epoch;
};

using EpochCallback = std::function<void(int epoch, double loss)>;

/// Adam on logMSE over seeded per-epoch shuffles. Deterministic for a fixed
/// config on a given platform.
TrainResult train(const TrainConfig& config, const TrainingSet& set, const RegressorParams& init,
                  const EpochCallback& on_epoch = {});

struct EvalStats {
    double mean_mm = 0.0;
    double median_mm = 0.0;
    double p95_mm = 0.0;
    std::vector<double> errors_mm;
};

EvalStats summarize_errors(std::vector<double> errors_mm);

/// Samples n_eval points spread over the held-out subjects (body-biased, no
/// perturbation) and reports |from_normalized(pred) - from_normalized(truth)|.
EvalStats evaluate(const PointEstimator& estimator, std::span<const SubjectSample> subjects, const Atlas& atlas,
                   int n_eval = 2000, std::uint64_t seed = 0);

/// Landmark detection on held-out subjects: single-agent navigation from the
/// volume center and the 7-start multi-agent median, each scored against the
/// subject-space landmark position.
struct LandmarkEval {
    std::vector<double> single_errors_mm;
    std::vector<double> multi_errors_mm;
    FrocCurve single;
    FrocCurve multi;
    double single_median_mm = 0.0;
    double multi_median_mm = 0.0;
};

LandmarkEval evaluate_landmark(const PointEstimator& estimator, std::span<const SubjectSample> subjects,
                               const Atlas& atlas, const std::string& landmark, const NavigationConfig& config = {},
                               double agent_offset_mm = 25.0);

}  // namespace bodygps
