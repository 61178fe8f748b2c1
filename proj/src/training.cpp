#include "bodygps/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "bodygps/rng.hpp"
#include "flush_denormals.hpp"

namespace bodygps {
namespace {

using nlohmann::json;

template <typename Scalar>
TrainResult train_impl(const TrainConfig& config, const TrainingSet& set, const RegressorParams& init,
                       const EpochCallback& on_epoch) {
    const FlushDenormalsScope ftz;
    const Architecture& arch = init.arch();
    const auto n = static_cast<Eigen::Index>(set.rows());
    const auto dim = static_cast<Eigen::Index>(arch.input_len);

    Weights<Scalar> weights = init.weights.cast<Scalar>();
    std::vector<Scalar> m(weights.size(), Scalar(0)), v(weights.size(), Scalar(0));
    const Scalar lr = static_cast<Scalar>(config.learning_rate);
    const Scalar b1 = static_cast<Scalar>(config.beta1), b2 = static_cast<Scalar>(config.beta2);
    const Scalar eps = static_cast<Scalar>(config.adam_epsilon);
    const Scalar loss_eps = static_cast<Scalar>(config.loss_epsilon);

    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Eigen::Index{0});

    TrainResult result;
    ColMatrix<Scalar> inputs, targets;
    std::int64_t step = 0;
    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        Xoshiro256 shuffle_rng(derive_seed(config.seed, static_cast<std::uint64_t>(epoch)));
        std::shuffle(order.begin(), order.end(), shuffle_rng);

        double loss_sum = 0.0;
        int batches = 0;
        for (Eigen::Index first = 0; first < n; first += config.batch_size) {
            const Eigen::Index count = std::min<Eigen::Index>(config.batch_size, n - first);
            inputs.resize(dim, count);
            targets.resize(3, count);
            for (Eigen::Index c = 0; c < count; ++c) {
                const Eigen::Index row = order[static_cast<std::size_t>(first + c)];
                inputs.col(c) = set.descriptors.col(row).template cast<Scalar>();
                targets.col(c) = set.targets.col(row).template cast<Scalar>();
            }
            const auto lg = loss_and_gradient<Scalar>(weights, inputs, targets, loss_eps);
            if (!std::isfinite(static_cast<double>(lg.loss))) throw TrainingDiverged(epoch, epoch - 1);

            ++step;
            const Scalar c1 = Scalar(1) - static_cast<Scalar>(std::pow(config.beta1, static_cast<double>(step)));
            const Scalar c2 = Scalar(1) - static_cast<Scalar>(std::pow(config.beta2, static_cast<double>(step)));
            auto w = weights.data();
            const auto g = lg.grad.data();
            for (std::size_t k = 0; k < w.size(); ++k) {
                m[k] = b1 * m[k] + (Scalar(1) - b1) * g[k];
                v[k] = b2 * v[k] + (Scalar(1) - b2) * g[k] * g[k];
                w[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + eps);
            }
            loss_sum += static_cast<double>(lg.loss);
            ++batches;
        }
        const double epoch_loss = loss_sum / batches;
        if (!std::isfinite(epoch_loss)) throw TrainingDiverged(epoch, epoch - 1);
        result.loss_history.push_back(epoch_loss);
        if (on_epoch) on_epoch(epoch, epoch_loss);
    }
    for (float w : weights.template cast<float>().data())
        if (!std::isfinite(w)) throw TrainingDiverged(config.epochs, config.epochs - 1);
    result.params = RegressorParams{weights.template cast<float>(), init.layout_hash, init.output_mode};
    return result;
}

}  // namespace

void TrainConfig::validate() const {
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(learning_rate >= 0.0)) throw ConfigError("learning_rate must be >= 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("Adam betas must lie in [0, 1)");
    if (!(adam_epsilon > 0.0) || !(loss_epsilon > 0.0)) throw ConfigError("epsilons must be positive");
}

json to_json(const TrainConfig& c) {
    return {{"epochs", c.epochs},
            {"batch_size", c.batch_size},
            {"learning_rate", c.learning_rate},
            {"optimizer", {{"name", "adam"}, {"beta1", c.beta1}, {"beta2", c.beta2}, {"epsilon", c.adam_epsilon}}},
            {"loss_epsilon", c.loss_epsilon},
            {"seed", c.seed},
            {"precision", c.precision == Precision::Float64 ? "float64" : "float32"}};
}

TrainConfig train_config_from_json(const json& j) {
    try {
        TrainConfig c;
        c.epochs = j.value("epochs", c.epochs);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.learning_rate = j.value("learning_rate", c.learning_rate);
        if (j.contains("optimizer")) {
            const auto& o = j.at("optimizer");
            if (o.value("name", "adam") != "adam") throw ConfigError("only the adam optimizer is supported");
            c.beta1 = o.value("beta1", c.beta1);
            c.beta2 = o.value("beta2", c.beta2);
            c.adam_epsilon = o.value("epsilon", c.adam_epsilon);
        }
        c.loss_epsilon = j.value("loss_epsilon", c.loss_epsilon);
        c.seed = j.value("seed", c.seed);
        const std::string precision = j.value("precision", "float64");
        if (precision == "float64")
            c.precision = Precision::Float64;
        else if (precision == "float32")
            c.precision = Precision::Float32;
        else
            throw ConfigError("precision must be float32 or float64");
        c.validate();
        return c;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("train config: ") + e.what());
    }
}

void TrainingSet::append(const TrainingSet& other) {
    if (rows() == 0 && provenance.empty() && descriptors.rows() == 0) {
        *this = other;
        return;
    }
    if (other.layout_hash != layout_hash || !(other.window == window) || other.descriptors.rows() != descriptors.rows())
        throw ConfigError("cannot mix training rows built with different descriptor layouts or intensity windows");
    const Eigen::Index old = descriptors.cols();
    descriptors.conservativeResize(Eigen::NoChange, old + other.descriptors.cols());
    descriptors.rightCols(other.descriptors.cols()) = other.descriptors;
    targets.conservativeResize(Eigen::NoChange, old + other.targets.cols());
    targets.rightCols(other.targets.cols()) = other.targets;
    provenance.insert(provenance.end(), other.provenance.begin(), other.provenance.end());
}

TrainingSet build_dataset(std::span<const SubjectSample> subjects, const Atlas& atlas, const DescriptorSampler& sampler,
                          const PointSamplingParams& point_params, const TargetSpec& target, std::uint64_t seed) {
    if (subjects.empty()) throw ConfigError("build_dataset needs at least one subject");
    const auto per_subject = static_cast<Eigen::Index>(point_params.n_base + point_params.n_perturb);
    const auto total = per_subject * static_cast<Eigen::Index>(subjects.size());

    TrainingSet set;
    set.layout_hash = sampler.layout().fingerprint();
    set.window = sampler.window();
    set.descriptors.resize(static_cast<Eigen::Index>(sampler.size()), total);
    set.targets.resize(3, total);
    set.provenance.reserve(static_cast<std::size_t>(total));

    WorldPoint landmark_atlas;
    if (target.mode == OutputMode::DisplacementMm) {
        const auto it = atlas.landmarks().find(target.landmark);
        if (it == atlas.landmarks().end())
            throw MissingLandmarkError("target landmark '" + target.landmark + "' is not in the atlas");
        landmark_atlas = it->second;
    }

    Eigen::Index row = 0;
    for (std::size_t s = 0; s < subjects.size(); ++s) {
        const SubjectSample& subject = subjects[s];
        const auto points = sample_training_points(subject, atlas, point_params, derive_seed(seed, s));
        const WorldPoint landmark_subject =
            target.mode == OutputMode::DisplacementMm ? subject.field.inverse(landmark_atlas) : WorldPoint{};
        for (const auto& tp : points) {
            sampler.extract_into(subject.volume, tp.point,
                                 std::span<float>(set.descriptors.col(row).data(), sampler.size()));
            const Vec3 t = target.mode == OutputMode::AtlasCoord ? tp.truth.as_vec() : landmark_subject - tp.point;
            set.targets.col(row) << t.x, t.y, t.z;
            set.provenance.push_back(subject.id);
            ++row;
        }
    }
    return set;
}

double logmse(const ColMatrix<double>& pred, const ColMatrix<double>& target, double epsilon) {
    return logmse<double>(pred, target, epsilon);
}

TrainResult train(const TrainConfig& config, const TrainingSet& set, const RegressorParams& init,
                  const EpochCallback& on_epoch) {
    config.validate();
    if (set.rows() == 0) throw ConfigError("training set is empty");
    if (static_cast<std::size_t>(set.descriptors.rows()) != init.arch().input_len)
        throw ShapeError("training descriptors have length " + std::to_string(set.descriptors.rows()) +
                         ", model expects " + std::to_string(init.arch().input_len));
    if (set.layout_hash != init.layout_hash)
        throw IncompatibleError("training set and model were built for different descriptor layouts");
    if (!set.targets.allFinite()) throw ConfigError("training targets must be finite");
    return config.precision == Precision::Float64 ? train_impl<double>(config, set, init, on_epoch)
                                                  : train_impl<float>(config, set, init, on_epoch);
}

EvalStats summarize_errors(std::vector<double> errors_mm) {
    EvalStats s;
    s.errors_mm = errors_mm;
    if (errors_mm.empty()) return s;
    std::sort(errors_mm.begin(), errors_mm.end());
    s.mean_mm = std::accumulate(errors_mm.begin(), errors_mm.end(), 0.0) / static_cast<double>(errors_mm.size());
    const std::size_t n = errors_mm.size();
    s.median_mm = n % 2 ? errors_mm[n / 2] : 0.5 * (errors_mm[n / 2 - 1] + errors_mm[n / 2]);
    // Nearest-rank percentile.
    const auto rank = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(n)));
    s.p95_mm = errors_mm[std::max<std::size_t>(rank, 1) - 1];
    return s;
}

EvalStats evaluate(const PointEstimator& estimator, std::span<const SubjectSample> subjects, const Atlas& atlas,
                   int n_eval, std::uint64_t seed) {
    if (subjects.empty() || n_eval < 1) throw ConfigError("evaluate needs subjects and n_eval >= 1");
    if (estimator.mode() != OutputMode::AtlasCoord) throw ModeError("evaluate expects an atlas_coord estimator");
    std::vector<double> errors;
    const int count = static_cast<int>(subjects.size());
    for (int s = 0; s < count; ++s) {
        PointSamplingParams params;
        params.n_base = n_eval / count + (s < n_eval % count ? 1 : 0);
        params.n_perturb = 0;
        if (params.n_base == 0) continue;
        const auto points = sample_training_points(subjects[s], atlas, params, derive_seed(seed, 1000 + s));
        std::vector<WorldPoint> where;
        for (const auto& tp : points) where.push_back(tp.point);
        const auto pred = estimator.estimate_batch(subjects[s].volume, where);
        for (std::size_t n = 0; n < points.size(); ++n)
            errors.push_back(distance(atlas.from_normalized(NormalizedCoord::from_vec(pred[n])),
                                      atlas.from_normalized(points[n].truth)));
    }
    return summarize_errors(std::move(errors));
}

LandmarkEval evaluate_landmark(const PointEstimator& estimator, std::span<const SubjectSample> subjects,
                               const Atlas& atlas, const std::string& landmark, const NavigationConfig& config,
                               double agent_offset_mm) {
    if (estimator.mode() != OutputMode::DisplacementMm) throw ModeError("landmark evaluation needs a displacement_mm estimator");
    const auto it = atlas.landmarks().find(landmark);
    if (it == atlas.landmarks().end()) throw MissingLandmarkError("landmark '" + landmark + "' is not in the atlas");
    LandmarkEval out;
    for (const auto& s : subjects) {
        const WorldPoint truth = s.field.inverse(it->second);
        const NavigationResult single = navigate_landmark(estimator, s.volume, config);
        const MultiAgentResult multi =
            multi_agent_landmark(estimator, s.volume, default_agent_starts(s.volume, agent_offset_mm), config);
        out.single_errors_mm.push_back(distance(single.final_point, truth));
        out.multi_errors_mm.push_back(distance(multi.point, truth));
    }
    const std::vector<double> thresholds{1.0, 2.0, 3.0, 5.0, 7.5, 10.0, 15.0, 20.0};
    out.single = froc_curve(out.single_errors_mm, thresholds);
    out.multi = froc_curve(out.multi_errors_mm, thresholds);
    out.single_median_mm = summarize_errors(out.single_errors_mm).median_mm;
    out.multi_median_mm = summarize_errors(out.multi_errors_mm).median_mm;
    return out;
}

}  // namespace bodygps
