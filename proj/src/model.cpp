#include "bodygps/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <random>

#include "bodygps/rng.hpp"

namespace bodygps {
namespace {

constexpr char kMagic[4] = {'B', 'G', 'P', 'S'};
constexpr std::uint32_t kVersion = 1;
constexpr std::size_t kHeaderSize = 4 + 4 + 8 + 1 + 4 * 3;

template <typename Scalar>
auto relu(const ColMatrix<Scalar>& m) {
    return m.cwiseMax(Scalar(0));
}

template <typename Scalar>
void he_uniform(Eigen::Map<RowMatrix<Scalar>> m, Xoshiro256& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(m.cols()));
    // Row-major fill keeps the draw order identical to file order.
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = static_cast<Scalar>(rng.uniform(-limit, limit));
}

template <typename T>
void put(std::string& out, T value) {
    static_assert(std::endian::native == std::endian::little, "model files are little-endian");
    char buf[sizeof(T)];
    std::memcpy(buf, &value, sizeof(T));
    out.append(buf, sizeof(T));
}

template <typename T>
T get(std::string_view bytes, std::size_t& pos) {
    T value;
    std::memcpy(&value, bytes.data() + pos, sizeof(T));
    pos += sizeof(T);
    return value;
}

}  // namespace

std::string_view output_mode_name(OutputMode m) {
    return m == OutputMode::AtlasCoord ? "atlas_coord" : "displacement_mm";
}

OutputMode parse_output_mode(std::string_view name) {
    if (name == "atlas_coord") return OutputMode::AtlasCoord;
    if (name == "displacement_mm") return OutputMode::DisplacementMm;
    throw ConfigError("unknown output mode '" + std::string(name) + "' (expected atlas_coord or displacement_mm)");
}

RegressorParams init_params(std::uint64_t seed, const Architecture& arch, std::uint64_t layout_hash, OutputMode mode) {
    if (arch.input_len == 0 || arch.width == 0) throw ConfigError("architecture dims must be positive");
    RegressorParams params{Weights<float>(arch), layout_hash, mode};
    Xoshiro256 rng(seed);
    he_uniform(params.weights.input_proj(), rng);
    for (std::size_t b = 0; b < arch.blocks; ++b) {
        he_uniform(params.weights.w1(b), rng);
        he_uniform(params.weights.w2(b), rng);
    }
    return params;
}

template <typename Scalar>
ColMatrix<Scalar> forward_batch(const Weights<Scalar>& weights, const Eigen::Ref<const ColMatrix<Scalar>>& inputs,
                                ForwardTrace<Scalar>* trace) {
    const Architecture& arch = weights.arch();
    if (static_cast<std::size_t>(inputs.rows()) != arch.input_len)
        throw ShapeError("descriptor length mismatch: expected " + std::to_string(arch.input_len) + ", got " +
                         std::to_string(inputs.rows()));

    ColMatrix<Scalar> pre = weights.input_proj() * inputs;
    pre.colwise() += weights.input_bias();
    ColMatrix<Scalar> h = relu(pre);
    if (trace) {
        trace->input_pre = std::move(pre);
        trace->hidden.assign(1, h);
        trace->block_pre.clear();
    }
    ColMatrix<Scalar> z(arch.width, inputs.cols());
    for (std::size_t b = 0; b < arch.blocks; ++b) {
        z.noalias() = weights.w1(b) * h;
        z.colwise() += weights.b1(b);
        h.noalias() += weights.w2(b) * relu(z);
        h.colwise() += weights.b2(b);
        if (trace) {
            trace->block_pre.push_back(z);
            trace->hidden.push_back(h);
        }
    }
    ColMatrix<Scalar> out = weights.head() * h;
    out.colwise() += weights.head_bias();
    if (trace) trace->output = out;
    return out;
}

template <typename Scalar>
Weights<Scalar> backward_batch(const Weights<Scalar>& weights, const Eigen::Ref<const ColMatrix<Scalar>>& inputs,
                               const ForwardTrace<Scalar>& trace,
                               const Eigen::Ref<const ColMatrix<Scalar>>& output_grad) {
    const Architecture& arch = weights.arch();
    if (output_grad.rows() != 3 || output_grad.cols() != inputs.cols())
        throw ShapeError("output gradient must be 3 x batch");
    if (trace.hidden.size() != arch.blocks + 1) throw ShapeError("forward trace does not match architecture");

    Weights<Scalar> grad(arch);
    grad.head().noalias() = output_grad * trace.hidden.back().transpose();
    grad.head_bias() = output_grad.rowwise().sum();

    ColMatrix<Scalar> dh = weights.head().transpose() * output_grad;
    ColMatrix<Scalar> dz(arch.width, inputs.cols());
    for (std::size_t b = arch.blocks; b-- > 0;) {
        const ColMatrix<Scalar>& z = trace.block_pre[b];
        // h_out = h_in + W2 relu(z) + b2, z = W1 h_in + b1
        grad.w2(b).noalias() = dh * relu(z).transpose();
        grad.b2(b) = dh.rowwise().sum();
        dz.noalias() = weights.w2(b).transpose() * dh;
        dz = (z.array() > Scalar(0)).select(dz, Scalar(0));
        grad.w1(b).noalias() = dz * trace.hidden[b].transpose();
        grad.b1(b) = dz.rowwise().sum();
        dh.noalias() += weights.w1(b).transpose() * dz;
    }
    dz = (trace.input_pre.array() > Scalar(0)).select(dh, Scalar(0));
    grad.input_proj().noalias() = dz * inputs.transpose();
    grad.input_bias() = dz.rowwise().sum();
    return grad;
}

template <typename Scalar>
Scalar logmse(const Eigen::Ref<const ColMatrix<Scalar>>& pred, const Eigen::Ref<const ColMatrix<Scalar>>& target,
              Scalar epsilon) {
    if (pred.rows() != target.rows() || pred.cols() != target.cols() || pred.cols() == 0)
        throw ShapeError("logmse needs equal, non-empty shapes");
    const Scalar mse = (pred - target).squaredNorm() / static_cast<Scalar>(pred.cols());
    return std::log(mse + epsilon);
}

template <typename Scalar>
ColMatrix<Scalar> logmse_grad(const Eigen::Ref<const ColMatrix<Scalar>>& pred,
                              const Eigen::Ref<const ColMatrix<Scalar>>& target, Scalar epsilon) {
    if (pred.rows() != target.rows() || pred.cols() != target.cols() || pred.cols() == 0)
        throw ShapeError("logmse needs equal, non-empty shapes");
    const Scalar n = static_cast<Scalar>(pred.cols());
    const Scalar mse = (pred - target).squaredNorm() / n;
    return (pred - target) * (Scalar(2) / (n * (mse + epsilon)));
}

template <typename Scalar>
LossAndGradient<Scalar> loss_and_gradient(const Weights<Scalar>& weights,
                                          const Eigen::Ref<const ColMatrix<Scalar>>& inputs,
                                          const Eigen::Ref<const ColMatrix<Scalar>>& targets, Scalar epsilon) {
    if (inputs.cols() == 0) throw ShapeError("empty batch");
    ForwardTrace<Scalar> trace;
    const ColMatrix<Scalar> pred = forward_batch(weights, inputs, &trace);
    const Scalar loss = logmse<Scalar>(pred, targets, epsilon);
    const ColMatrix<Scalar> dy = logmse_grad<Scalar>(pred, targets, epsilon);
    return {loss, backward_batch<Scalar>(weights, inputs, trace, dy)};
}

template <typename Scalar>
std::array<double, 3> forward(const Weights<Scalar>& weights, std::span<const float> descriptor) {
    const Architecture& arch = weights.arch();
    if (descriptor.size() != arch.input_len)
        throw ShapeError("descriptor length mismatch: expected " + std::to_string(arch.input_len) + ", got " +
                         std::to_string(descriptor.size()));
    const Eigen::Map<const Eigen::VectorXf> d(descriptor.data(), static_cast<Eigen::Index>(descriptor.size()));
    ColVector<Scalar> h;
    if constexpr (std::is_same_v<Scalar, float>)
        h.noalias() = weights.input_proj() * d;
    else
        h.noalias() = weights.input_proj() * d.template cast<Scalar>();
    h = (h + weights.input_bias()).cwiseMax(Scalar(0));
    ColVector<Scalar> z(arch.width);
    for (std::size_t b = 0; b < arch.blocks; ++b) {
        z.noalias() = weights.w1(b) * h;
        z = (z + weights.b1(b)).cwiseMax(Scalar(0));
        h.noalias() += weights.w2(b) * z;
        h += weights.b2(b);
    }
    const ColVector<Scalar> out = weights.head() * h + weights.head_bias();
    return {static_cast<double>(out[0]), static_cast<double>(out[1]), static_cast<double>(out[2])};
}

std::array<double, 3> forward(const RegressorParams& params, std::span<const float> descriptor) {
    return forward(params.weights, descriptor);
}

std::string encode_params(const RegressorParams& params) {
    const Architecture& arch = params.arch();
    std::string out;
    out.reserve(kHeaderSize + params.weights.size() * sizeof(float));
    out.append(kMagic, 4);
    put<std::uint32_t>(out, kVersion);
    put<std::uint64_t>(out, params.layout_hash);
    put<std::uint8_t>(out, static_cast<std::uint8_t>(params.output_mode));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(arch.input_len));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(arch.width));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(arch.blocks));
    const auto data = params.weights.data();
    out.append(reinterpret_cast<const char*>(data.data()), data.size() * sizeof(float));
    return out;
}

void save_params(const RegressorParams& params, const std::filesystem::path& path) {
    const std::string bytes = encode_params(params);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("short write to " + path.string());
}

RegressorParams decode_params(std::string_view bytes, std::optional<std::uint64_t> expected_layout_hash) {
    if (bytes.size() < kHeaderSize || std::memcmp(bytes.data(), kMagic, 4) != 0)
        throw FormatError("not a BGPS model file (bad magic)");
    std::size_t pos = 4;
    const auto version = get<std::uint32_t>(bytes, pos);
    if (version != kVersion) throw FormatError("unsupported model file version " + std::to_string(version));
    const auto layout_hash = get<std::uint64_t>(bytes, pos);
    const auto mode_byte = get<std::uint8_t>(bytes, pos);
    if (mode_byte > 1) throw FormatError("unknown output_mode byte " + std::to_string(mode_byte));
    Architecture arch;
    arch.input_len = get<std::uint32_t>(bytes, pos);
    arch.width = get<std::uint32_t>(bytes, pos);
    arch.blocks = get<std::uint32_t>(bytes, pos);
    if (arch.input_len == 0 || arch.width == 0) throw FormatError("model file declares empty architecture");
    const std::size_t payload = arch.param_count() * sizeof(float);
    if (bytes.size() - pos != payload)
        throw FormatError("model file holds " + std::to_string(bytes.size() - pos) + " weight bytes, expected " +
                          std::to_string(payload));
    if (expected_layout_hash && *expected_layout_hash != layout_hash)
        throw IncompatibleError("model was trained for a different descriptor layout (fingerprint mismatch)");

    RegressorParams params{Weights<float>(arch), layout_hash, static_cast<OutputMode>(mode_byte)};
    std::memcpy(params.weights.data().data(), bytes.data() + pos, payload);
    for (float w : params.weights.data())
        if (!std::isfinite(w)) throw FormatError("model file contains non-finite weights");
    return params;
}

RegressorParams load_params(const std::filesystem::path& path, std::optional<std::uint64_t> expected_layout_hash) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    const std::string bytes(std::istreambuf_iterator<char>(in), {});
    return decode_params(bytes, expected_layout_hash);
}

#define BODYGPS_INSTANTIATE(S)                                                                                       \
    template ColMatrix<S> forward_batch<S>(const Weights<S>&, const Eigen::Ref<const ColMatrix<S>>&,                \
                                           ForwardTrace<S>*);                                                        \
    template Weights<S> backward_batch<S>(const Weights<S>&, const Eigen::Ref<const ColMatrix<S>>&,                 \
                                          const ForwardTrace<S>&, const Eigen::Ref<const ColMatrix<S>>&);            \
    template S logmse<S>(const Eigen::Ref<const ColMatrix<S>>&, const Eigen::Ref<const ColMatrix<S>>&, S);          \
    template ColMatrix<S> logmse_grad<S>(const Eigen::Ref<const ColMatrix<S>>&, const Eigen::Ref<const ColMatrix<S>>&, \
                                         S);                                                                         \
    template LossAndGradient<S> loss_and_gradient<S>(const Weights<S>&, const Eigen::Ref<const ColMatrix<S>>&,      \
                                                     const Eigen::Ref<const ColMatrix<S>>&, S);                      \
    template std::array<double, 3> forward<S>(const Weights<S>&, std::span<const float>);

BODYGPS_INSTANTIATE(float)
BODYGPS_INSTANTIATE(double)
#undef BODYGPS_INSTANTIATE

}  // namespace bodygps
