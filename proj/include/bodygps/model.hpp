#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "bodygps/errors.hpp"

namespace bodygps {

enum class OutputMode : std::uint8_t {
    AtlasCoord = 0,      // normalized atlas coordinates
    DisplacementMm = 1,  // world-mm displacement to a landmark
};

std::string_view output_mode_name(OutputMode m);
OutputMode parse_output_mode(std::string_view name);

/// Input projection to `width`, `blocks` two-layer residual blocks, 3-dim head.
struct Architecture {
    std::size_t input_len = 7290;
    std::size_t width = 240;
    std::size_t blocks = 8;

    std::size_t param_count() const {
        return width * input_len + width + blocks * 2 * (width * width + width) + 3 * width + 3;
    }
    friend bool operator==(const Architecture&, const Architecture&) = default;
};

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
/// Activations and batches: one sample per column.
template <typename Scalar>
using ColMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using ColVector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// All regressor weights in one contiguous buffer, laid out in model-file
/// order: input_proj (row-major), input bias, then per block W1, b1, W2, b2,
/// then head (row-major) and head bias. Gradients and optimizer moments use
/// the same type, so flat arithmetic over `data()` is meaningful.
template <typename Scalar>
class Weights {
public:
    using MatMap = Eigen::Map<RowMatrix<Scalar>>;
    using ConstMatMap = Eigen::Map<const RowMatrix<Scalar>>;
    using VecMap = Eigen::Map<ColVector<Scalar>>;
    using ConstVecMap = Eigen::Map<const ColVector<Scalar>>;

    Weights() = default;
    explicit Weights(const Architecture& arch) : arch_(arch), data_(arch.param_count(), Scalar(0)) {}

    const Architecture& arch() const { return arch_; }
    std::span<Scalar> data() { return data_; }
    std::span<const Scalar> data() const { return data_; }
    std::size_t size() const { return data_.size(); }

    MatMap input_proj() { return {ptr(0), w(), in()}; }
    ConstMatMap input_proj() const { return {ptr(0), w(), in()}; }
    VecMap input_bias() { return {ptr(w() * in()), w()}; }
    ConstVecMap input_bias() const { return {ptr(w() * in()), w()}; }

    MatMap w1(std::size_t b) { return {ptr(block_at(b)), w(), w()}; }
    ConstMatMap w1(std::size_t b) const { return {ptr(block_at(b)), w(), w()}; }
    VecMap b1(std::size_t b) { return {ptr(block_at(b) + w() * w()), w()}; }
    ConstVecMap b1(std::size_t b) const { return {ptr(block_at(b) + w() * w()), w()}; }
    MatMap w2(std::size_t b) { return {ptr(block_at(b) + w() * w() + w()), w(), w()}; }
    ConstMatMap w2(std::size_t b) const { return {ptr(block_at(b) + w() * w() + w()), w(), w()}; }
    VecMap b2(std::size_t b) { return {ptr(block_at(b) + 2 * w() * w() + w()), w()}; }
    ConstVecMap b2(std::size_t b) const { return {ptr(block_at(b) + 2 * w() * w() + w()), w()}; }

    MatMap head() { return {ptr(head_at()), 3, w()}; }
    ConstMatMap head() const { return {ptr(head_at()), 3, w()}; }
    VecMap head_bias() { return {ptr(head_at() + 3 * w()), 3}; }
    ConstVecMap head_bias() const { return {ptr(head_at() + 3 * w()), 3}; }

    template <typename To>
    Weights<To> cast() const {
        Weights<To> out(arch_);
        auto dst = out.data();
        for (std::size_t n = 0; n < data_.size(); ++n) dst[n] = static_cast<To>(data_[n]);
        return out;
    }

    friend bool operator==(const Weights& a, const Weights& b) { return a.arch_ == b.arch_ && a.data_ == b.data_; }

private:
    Eigen::Index w() const { return static_cast<Eigen::Index>(arch_.width); }
    Eigen::Index in() const { return static_cast<Eigen::Index>(arch_.input_len); }
    Eigen::Index block_at(std::size_t b) const {
        return w() * in() + w() + static_cast<Eigen::Index>(b) * 2 * (w() * w() + w());
    }
    Eigen::Index head_at() const { return block_at(arch_.blocks); }
    Scalar* ptr(Eigen::Index offset) { return data_.data() + offset; }
    const Scalar* ptr(Eigen::Index offset) const { return data_.data() + offset; }

    Architecture arch_;
    // Fixed base alignment keeps vectorized reductions bit-identical between allocations.
    std::vector<Scalar, Eigen::aligned_allocator<Scalar>> data_;
};

/// Serialized model: 32-bit weights plus the contract metadata.
struct RegressorParams {
    Weights<float> weights;
    std::uint64_t layout_hash = 0;
    OutputMode output_mode = OutputMode::AtlasCoord;

    const Architecture& arch() const { return weights.arch(); }
    std::size_t param_count() const { return weights.size(); }
    friend bool operator==(const RegressorParams&, const RegressorParams&) = default;
};

/// He-uniform weight matrices from xoshiro256** seeded via splitmix64; zero
/// biases; zero head, so the untrained model outputs exactly (0, 0, 0).
RegressorParams init_params(std::uint64_t seed, const Architecture& arch, std::uint64_t layout_hash,
                            OutputMode mode = OutputMode::AtlasCoord);

/// Cached intermediate values of a batched forward pass.
template <typename Scalar>
struct ForwardTrace {
    ColMatrix<Scalar> input_pre;              // input_proj * x + b, before relu
    std::vector<ColMatrix<Scalar>> hidden;    // hidden[b] = input of block b; hidden[blocks] feeds the head
    std::vector<ColMatrix<Scalar>> block_pre; // W1 * hidden[b] + b1, before relu
    ColMatrix<Scalar> output;                 // 3 x batch
};

/// Batched forward pass; `inputs` is input_len x batch.
template <typename Scalar>
ColMatrix<Scalar> forward_batch(const Weights<Scalar>& weights, const Eigen::Ref<const ColMatrix<Scalar>>& inputs,
                                ForwardTrace<Scalar>* trace = nullptr);

/// Reverse-mode pass: given d(loss)/d(output) (3 x batch), returns gradients
/// for every parameter.
template <typename Scalar>
Weights<Scalar> backward_batch(const Weights<Scalar>& weights, const Eigen::Ref<const ColMatrix<Scalar>>& inputs,
                               const ForwardTrace<Scalar>& trace, const Eigen::Ref<const ColMatrix<Scalar>>& output_grad);

/// log(mean_i ||pred_i - target_i||^2 + epsilon) over columns.
template <typename Scalar>
Scalar logmse(const Eigen::Ref<const ColMatrix<Scalar>>& pred, const Eigen::Ref<const ColMatrix<Scalar>>& target,
              Scalar epsilon);

/// d logmse / d pred = 2 (pred - target) / (n (MSE + epsilon)).
template <typename Scalar>
ColMatrix<Scalar> logmse_grad(const Eigen::Ref<const ColMatrix<Scalar>>& pred,
                              const Eigen::Ref<const ColMatrix<Scalar>>& target, Scalar epsilon);

template <typename Scalar>
struct LossAndGradient {
    Scalar loss;
    Weights<Scalar> grad;
};

/// Forward, logMSE and backward over one batch.
template <typename Scalar>
LossAndGradient<Scalar> loss_and_gradient(const Weights<Scalar>& weights,
                                          const Eigen::Ref<const ColMatrix<Scalar>>& inputs,
                                          const Eigen::Ref<const ColMatrix<Scalar>>& targets, Scalar epsilon);

/// Single-descriptor forward pass in the precision of `Scalar`.
template <typename Scalar>
std::array<double, 3> forward(const Weights<Scalar>& weights, std::span<const float> descriptor);

std::array<double, 3> forward(const RegressorParams& params, std::span<const float> descriptor);

void save_params(const RegressorParams& params, const std::filesystem::path& path);
std::string encode_params(const RegressorParams& params);

/// Throws FormatError on bad magic/version/size and IncompatibleError when
/// `expected_layout_hash` is given and differs.
RegressorParams load_params(const std::filesystem::path& path,
                            std::optional<std::uint64_t> expected_layout_hash = std::nullopt);
RegressorParams decode_params(std::string_view bytes, std::optional<std::uint64_t> expected_layout_hash = std::nullopt);

}  // namespace bodygps
