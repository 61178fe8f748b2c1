#include <doctest.h>

#include <cmath>
#include <iomanip>

#include "bodygps/model.hpp"
#include "bodygps/rng.hpp"
#include "bodygps/sampler.hpp"
#include "test_support.hpp"

using namespace bodygps;
using bodygps::test::TempDir;

namespace {

// 64-bit forward outputs for the golden case below.
constexpr double GOLDEN_Y0 = -0.47804727286444904;
constexpr double GOLDEN_Y1 = -0.95609454572889807;
constexpr double GOLDEN_Y2 = -1.4341417771431364;

// Plain-loop forward pass in double, written from the architecture definition.
std::array<double, 3> naive_forward(const Weights<float>& w, const std::vector<double>& x) {
    const auto& a = w.arch();
    const auto W = static_cast<Eigen::Index>(a.width);
    std::vector<double> h(a.width);
    for (Eigen::Index r = 0; r < W; ++r) {
        double s = w.input_bias()(r);
        for (std::size_t c = 0; c < a.input_len; ++c) s += double(w.input_proj()(r, static_cast<Eigen::Index>(c))) * x[c];
        h[r] = std::max(s, 0.0);
    }
    for (std::size_t b = 0; b < a.blocks; ++b) {
        std::vector<double> z(a.width), out(h);
        for (Eigen::Index r = 0; r < W; ++r) {
            double s = w.b1(b)(r);
            for (Eigen::Index c = 0; c < W; ++c) s += double(w.w1(b)(r, c)) * h[c];
            z[r] = std::max(s, 0.0);
        }
        for (Eigen::Index r = 0; r < W; ++r) {
            double s = w.b2(b)(r);
            for (Eigen::Index c = 0; c < W; ++c) s += double(w.w2(b)(r, c)) * z[c];
            out[r] += s;
        }
        h = out;
    }
    std::array<double, 3> y{};
    for (Eigen::Index r = 0; r < 3; ++r) {
        double s = w.head_bias()(r);
        for (Eigen::Index c = 0; c < W; ++c) s += double(w.head()(r, c)) * h[c];
        y[r] = s;
    }
    return y;
}

RegressorParams small_params(std::uint64_t seed, Architecture arch, bool random_head = true) {
    RegressorParams p = init_params(seed, arch, 0x1234);
    Xoshiro256 rng(seed + 99);
    if (random_head)
        for (float& v : p.weights.head().reshaped()) v = static_cast<float>(rng.uniform(-0.3, 0.3));
    for (float& v : p.weights.input_bias()) v = static_cast<float>(rng.uniform(-0.1, 0.1));
    for (std::size_t b = 0; b < arch.blocks; ++b) {
        for (float& v : p.weights.b1(b)) v = static_cast<float>(rng.uniform(-0.1, 0.1));
        for (float& v : p.weights.b2(b)) v = static_cast<float>(rng.uniform(-0.1, 0.1));
    }
    return p;
}

ColMatrix<double> random_batch(Xoshiro256& rng, std::size_t rows, Eigen::Index cols) {
    ColMatrix<double> x(static_cast<Eigen::Index>(rows), cols);
    for (auto& v : x.reshaped()) v = rng.uniform();
    return x;
}

}  // namespace

TEST_SUITE("model") {
    TEST_CASE("parameter count is the closed-form sum") {
        const std::size_t expected = 240 * 7290 + 240 + 8 * (2 * (240 * 240 + 240)) + 3 * 240 + 3;
        CHECK(expected == 2676003);
        CHECK(Architecture{}.param_count() == expected);
        const RegressorParams p = init_params(1, Architecture{}, default_layout().fingerprint());
        CHECK(p.param_count() == expected);
    }

    TEST_CASE("init is deterministic, zero-headed and He-uniform bounded") {
        const Architecture arch{64, 32, 3};
        const RegressorParams a = init_params(42, arch, 7), b = init_params(42, arch, 7), c = init_params(43, arch, 7);
        CHECK(a == b);
        CHECK(!(a == c));
        CHECK(a.weights.head().isZero(0));
        CHECK(a.weights.head_bias().isZero(0));
        CHECK(a.weights.input_bias().isZero(0));
        const double bound_in = std::sqrt(6.0 / 64.0), bound_w = std::sqrt(6.0 / 32.0);
        CHECK(a.weights.input_proj().cwiseAbs().maxCoeff() <= bound_in);
        CHECK(a.weights.w1(1).cwiseAbs().maxCoeff() <= bound_w);
        CHECK(a.weights.w2(2).cwiseAbs().maxCoeff() > 0.0f);
        std::vector<float> x(64, 0.7f);
        CHECK(forward(a, x) == std::array<double, 3>{0, 0, 0});
    }

    TEST_CASE("untrained default model outputs exactly zero") {
        const RegressorParams p = init_params(42, Architecture{}, default_layout().fingerprint());
        std::vector<float> d(7290, 0.5f);
        CHECK(forward(p, d) == std::array<double, 3>{0, 0, 0});
        CHECK(forward(p.weights.cast<double>(), d) == std::array<double, 3>{0, 0, 0});
    }

    TEST_CASE("forward agrees with a plain-loop reference") {
        Xoshiro256 rng(3);
        const RegressorParams p = small_params(5, {40, 24, 3});
        for (int trial = 0; trial < 5; ++trial) {
            std::vector<double> x(40);
            std::vector<float> xf(40);
            for (std::size_t n = 0; n < 40; ++n) {
                xf[n] = static_cast<float>(rng.uniform());
                x[n] = xf[n];
            }
            const auto ref = naive_forward(p.weights, x);
            const auto got64 = forward(p.weights.cast<double>(), xf);
            const auto got32 = forward(p, xf);
            for (int r = 0; r < 3; ++r) {
                CHECK(got64[r] == doctest::Approx(ref[r]).epsilon(1e-12));
                CHECK(got32[r] == doctest::Approx(ref[r]).epsilon(1e-4));
            }
        }
    }

    TEST_CASE("batched and single forward agree") {
        Xoshiro256 rng(4);
        const RegressorParams p = small_params(6, {40, 24, 2});
        const Weights<double> w = p.weights.cast<double>();
        const ColMatrix<double> x = random_batch(rng, 40, 7);
        const ColMatrix<double> y = forward_batch<double>(w, x);
        for (Eigen::Index c = 0; c < 7; ++c) {
            std::vector<float> xf(40);
            for (Eigen::Index r = 0; r < 40; ++r) xf[static_cast<std::size_t>(r)] = static_cast<float>(x(r, c));
            const auto single = forward(w, xf);
            for (int r = 0; r < 3; ++r) CHECK(single[r] == doctest::Approx(y(r, c)).epsilon(1e-6));
        }
    }

    TEST_CASE("golden forward value for seed 42 on an all-0.5 descriptor") {
        // The head is zero after init, so a fixed head pattern exposes the hidden state.
        RegressorParams p = init_params(42, Architecture{}, default_layout().fingerprint());
        for (Eigen::Index c = 0; c < 240; ++c)
            for (Eigen::Index r = 0; r < 3; ++r)
                p.weights.head()(r, c) = static_cast<float>((r + 1) * ((c % 7) - 3)) / 240.0f;
        const std::vector<float> d(7290, 0.5f);
        const auto y32 = forward(p, d);
        const auto y64 = forward(p.weights.cast<double>(), d);
        const auto ref = naive_forward(p.weights, std::vector<double>(7290, 0.5));
        for (int r = 0; r < 3; ++r) CHECK(y64[r] == doctest::Approx(ref[r]).epsilon(1e-10));
        MESSAGE(std::setprecision(17) << "golden " << y64[0] << " " << y64[1] << " " << y64[2]);
        // Frozen from the first verified build (64-bit path, cross-checked against naive_forward).
        CHECK(y64[0] == doctest::Approx(GOLDEN_Y0).epsilon(1e-12));
        CHECK(y64[1] == doctest::Approx(GOLDEN_Y1).epsilon(1e-12));
        CHECK(y64[2] == doctest::Approx(GOLDEN_Y2).epsilon(1e-12));
        for (int r = 0; r < 3; ++r) CHECK(y32[r] == doctest::Approx(y64[r]).epsilon(1e-4));
    }

    TEST_CASE("residual identity: zeroed blocks reduce the net to head(relu(proj x))") {
        Xoshiro256 rng(8);
        RegressorParams p = small_params(9, {30, 16, 4});
        for (std::size_t b = 0; b < 4; ++b) {
            p.weights.w1(b).setZero();
            p.weights.w2(b).setZero();
            p.weights.b1(b).setZero();
            p.weights.b2(b).setZero();
        }
        const Weights<double> w = p.weights.cast<double>();
        const ColMatrix<double> x = random_batch(rng, 30, 5);
        ColMatrix<double> h = (w.input_proj() * x).colwise() + ColVector<double>(w.input_bias());
        h = h.cwiseMax(0.0);
        const ColMatrix<double> expected = (w.head() * h).colwise() + ColVector<double>(w.head_bias());
        CHECK(forward_batch<double>(w, x) == expected);
    }

    TEST_CASE("forward rejects wrong descriptor lengths") {
        const RegressorParams p = small_params(1, {10, 8, 1});
        std::vector<float> bad(11);
        CHECK_THROWS_AS(forward(p, bad), ShapeError);
        CHECK_THROWS_AS(forward_batch<double>(p.weights.cast<double>(), ColMatrix<double>::Zero(9, 2)), ShapeError);
    }

    TEST_CASE("property: outputs are finite for inputs in the unit cube") {
        Xoshiro256 rng(12);
        const RegressorParams p = small_params(13, Architecture{});
        for (int trial = 0; trial < 5; ++trial) {
            std::vector<float> d(7290);
            for (auto& v : d) v = static_cast<float>(rng.uniform());
            for (double y : forward(p, d)) CHECK(std::isfinite(y));
        }
    }
}

TEST_SUITE("loss") {
    TEST_CASE("logmse closed forms") {
        ColMatrix<double> a(3, 4);
        a.setRandom();
        CHECK(logmse<double>(a, a, 1e-8) == doctest::Approx(std::log(1e-8)));
        CHECK(std::log(1e-8) == doctest::Approx(-18.420680743952367));
        ColMatrix<double> b = a;
        b.row(0).array() += 1.0;
        const double v = logmse<double>(b, a, 1e-8);
        CHECK(v == doctest::Approx(9.99999995e-9).epsilon(1e-6));
    }

    TEST_CASE("property: logmse is permutation and duplication invariant and monotone") {
        Xoshiro256 rng(21);
        for (int trial = 0; trial < 50; ++trial) {
            const auto n = static_cast<Eigen::Index>(1 + rng.uniform(0, 20));
            ColMatrix<double> p = random_batch(rng, 3, n), t = random_batch(rng, 3, n);
            const double base = logmse<double>(p, t, 1e-8);
            ColMatrix<double> p2(3, 2 * n), t2(3, 2 * n);
            p2 << p, p;
            t2 << t, t;
            CHECK(logmse<double>(p2, t2, 1e-8) == doctest::Approx(base).epsilon(1e-12));
            // Reverse the column order.
            CHECK(logmse<double>(p.rowwise().reverse(), t.rowwise().reverse(), 1e-8) ==
                  doctest::Approx(base).epsilon(1e-12));
            // Growing one residual strictly increases the loss.
            ColMatrix<double> p3 = p;
            const Eigen::Index c = static_cast<Eigen::Index>(rng.uniform(0, static_cast<double>(n)));
            p3.col(c) = t.col(c) + (p.col(c) - t.col(c)) * 1.5 + ColVector<double>::Constant(3, 1e-3);
            if ((p3.col(c) - t.col(c)).norm() > (p.col(c) - t.col(c)).norm())
                CHECK(logmse<double>(p3, t, 1e-8) > base);
            CHECK(base > std::log(1e-8));
        }
    }

    TEST_CASE("logmse gradient matches the closed form and finite differences") {
        Xoshiro256 rng(22);
        ColMatrix<double> p = random_batch(rng, 3, 6), t = random_batch(rng, 3, 6);
        const ColMatrix<double> g = logmse_grad<double>(p, t, 1e-8);
        const double mse = (p - t).squaredNorm() / 6.0;
        CHECK((g - 2.0 * (p - t) / (6.0 * (mse + 1e-8))).cwiseAbs().maxCoeff() < 1e-14);
        for (Eigen::Index k = 0; k < p.size(); ++k) {
            ColMatrix<double> hi = p, lo = p;
            hi.reshaped()(k) += 1e-6;
            lo.reshaped()(k) -= 1e-6;
            const double fd = (logmse<double>(hi, t, 1e-8) - logmse<double>(lo, t, 1e-8)) / 2e-6;
            CHECK(fd == doctest::Approx(g.reshaped()(k)).epsilon(1e-6));
        }
    }

    TEST_CASE("gradients vanish when targets equal outputs") {
        Xoshiro256 rng(23);
        const RegressorParams p = small_params(24, {20, 12, 2});
        const Weights<double> w = p.weights.cast<double>();
        const ColMatrix<double> x = random_batch(rng, 20, 4);
        const ColMatrix<double> y = forward_batch<double>(w, x);
        const auto lg = loss_and_gradient<double>(w, x, y, 1e-8);
        CHECK(lg.loss == doctest::Approx(std::log(1e-8)));
        for (double g : lg.grad.data()) CHECK(g == 0.0);
    }

    TEST_CASE("duplicating the batch leaves gradients unchanged") {
        Xoshiro256 rng(25);
        const RegressorParams p = small_params(26, {20, 12, 2});
        const Weights<double> w = p.weights.cast<double>();
        const ColMatrix<double> x = random_batch(rng, 20, 3), t = random_batch(rng, 3, 3);
        ColMatrix<double> x2(20, 6), t2(3, 6);
        x2 << x, x;
        t2 << t, t;
        const auto a = loss_and_gradient<double>(w, x, t, 1e-8);
        const auto b = loss_and_gradient<double>(w, x2, t2, 1e-8);
        CHECK(b.loss == doctest::Approx(a.loss).epsilon(1e-12));
        double max_diff = 0, max_abs = 0;
        for (std::size_t n = 0; n < a.grad.size(); ++n) {
            max_diff = std::max(max_diff, std::abs(a.grad.data()[n] - b.grad.data()[n]));
            max_abs = std::max(max_abs, std::abs(a.grad.data()[n]));
        }
        CHECK(max_diff <= 1e-12 * max_abs);
    }

    TEST_CASE("analytic gradients match central differences on a small network") {
        Xoshiro256 rng(27);
        const RegressorParams p = small_params(28, {12, 10, 3});
        Weights<double> w = p.weights.cast<double>();
        for (int batch = 0; batch < 3; ++batch) {
            const ColMatrix<double> x = random_batch(rng, 12, 4), t = random_batch(rng, 3, 4);
            const auto lg = loss_and_gradient<double>(w, x, t, 1e-8);
            for (int trial = 0; trial < 40; ++trial) {
                const auto k = static_cast<std::size_t>(rng.uniform(0, static_cast<double>(w.size())));
                const double saved = w.data()[k];
                w.data()[k] = saved + 1e-5;
                const double up = loss_and_gradient<double>(w, x, t, 1e-8).loss;
                w.data()[k] = saved - 1e-5;
                const double down = loss_and_gradient<double>(w, x, t, 1e-8).loss;
                w.data()[k] = saved;
                const double fd = (up - down) / 2e-5;
                const double an = lg.grad.data()[k];
                CHECK(std::abs(fd - an) <= 1e-5 * std::max({std::abs(fd), std::abs(an), 1e-3}));
            }
        }
    }
}

TEST_SUITE("model_file") {
    TEST_CASE("save then load is bit-exact") {
        TempDir dir;
        RegressorParams p = small_params(31, {50, 20, 2});
        p.output_mode = OutputMode::DisplacementMm;
        save_params(p, dir / "m.bgps");
        const RegressorParams q = load_params(dir / "m.bgps");
        CHECK(q == p);
        CHECK(load_params(dir / "m.bgps", 0x1234) == p);
        CHECK(encode_params(q) == bodygps::test::read_bytes(dir / "m.bgps"));
    }

    TEST_CASE("header layout is magic, version, hash, mode, dims") {
        const RegressorParams p = small_params(32, {5, 4, 1});
        const std::string bytes = encode_params(p);
        CHECK(bytes.substr(0, 4) == "BGPS");
        auto u32 = [&](std::size_t at) {
            std::uint32_t v = 0;
            for (int b = 3; b >= 0; --b) v = (v << 8) | static_cast<std::uint8_t>(bytes[at + b]);
            return v;
        };
        CHECK(u32(4) == 1u);
        CHECK(u32(8) == 0x1234u);
        CHECK(u32(12) == 0u);
        CHECK(static_cast<int>(bytes[16]) == 0);
        CHECK(u32(17) == 5u);
        CHECK(u32(21) == 4u);
        CHECK(u32(25) == 1u);
        CHECK(bytes.size() == 29 + 4 * p.param_count());
    }

    TEST_CASE("corrupt, truncated or mismatched files are rejected") {
        const RegressorParams p = small_params(33, {5, 4, 1});
        std::string bytes = encode_params(p);
        CHECK_THROWS_AS(decode_params(bytes, 0x9999), IncompatibleError);
        CHECK_THROWS_AS(decode_params(bytes.substr(0, bytes.size() - 1)), FormatError);
        std::string bad_magic = bytes;
        bad_magic[0] = 'X';
        CHECK_THROWS_AS(decode_params(bad_magic), FormatError);
        std::string bad_version = bytes;
        bad_version[4] = 2;
        CHECK_THROWS_AS(decode_params(bad_version), FormatError);
        std::string bad_mode = bytes;
        bad_mode[16] = 7;
        CHECK_THROWS_AS(decode_params(bad_mode), FormatError);
        CHECK_THROWS_AS(decode_params(""), FormatError);
    }

    TEST_CASE("output mode names round trip") {
        CHECK(parse_output_mode("atlas_coord") == OutputMode::AtlasCoord);
        CHECK(parse_output_mode(output_mode_name(OutputMode::DisplacementMm)) == OutputMode::DisplacementMm);
        CHECK_THROWS_AS(parse_output_mode("pixels"), ConfigError);
    }
}
