#include <doctest.h>

#include <cmath>

#include "bodygps/metaimage.hpp"
#include "bodygps/rng.hpp"
#include "bodygps/volume.hpp"
#include "test_support.hpp"

using namespace bodygps;
using bodygps::test::TempDir;

namespace {

Volume geometry_only(Vec3 spacing, Vec3 origin) { return Volume(ImageGeometry{{4, 4, 4}, spacing, origin}, 0.0f, 0.0f); }

std::string short_header(const std::string& dims) {
    return "ObjectType = Image\nNDims = 3\nDimSize = " + dims +
           "\nElementSpacing = 1 1 1\nOffset = 0 0 0\nElementType = MET_SHORT\nElementDataFile = LOCAL\n";
}

}  // namespace

TEST_SUITE("volume") {
    TEST_CASE("world_to_voxel divides componentwise without clamping") {
        const Volume v = geometry_only({2, 2, 2}, {0, 0, 0});
        CHECK(world_to_voxel(v, {0, 0, 0}) == Vec3{0, 0, 0});
        const Vec3 c = world_to_voxel(v, {1.9, 4.0, -2.0});
        CHECK(c.x == doctest::Approx(0.95));
        CHECK(c.y == 2.0);
        CHECK(c.z == -1.0);

        const Volume w = geometry_only({1, 1, 5}, {10, 20, 400});
        CHECK(world_to_voxel(w, {10, 20, 405}) == Vec3{0, 0, 1});
    }

    TEST_CASE("voxel_to_world is origin plus index times spacing") {
        const Volume v = geometry_only({2, 2, 2}, {0, 0, 0});
        CHECK(voxel_to_world(v, 0, 0, 0) == Vec3{0, 0, 0});
        CHECK(voxel_to_world(v, 1, 2, 3) == Vec3{2, 4, 6});
        const Volume w = geometry_only({1, 1, 5}, {10, 20, 400});
        CHECK(voxel_to_world(w, 0, 0, 1) == Vec3{10, 20, 405});
    }

    TEST_CASE("property: world_to_voxel inverts voxel_to_world at integer points") {
        Xoshiro256 rng(11);
        for (int trial = 0; trial < 200; ++trial) {
            const Vec3 spacing{rng.uniform(0.3, 5.0), rng.uniform(0.3, 5.0), rng.uniform(0.3, 5.0)};
            const Vec3 origin{rng.uniform(-300, 300), rng.uniform(-300, 300), rng.uniform(-300, 300)};
            const ImageGeometry g{{64, 64, 64}, spacing, origin};
            const auto i = static_cast<std::int64_t>(rng.uniform(0, 64));
            const auto j = static_cast<std::int64_t>(rng.uniform(0, 64));
            const auto k = static_cast<std::int64_t>(rng.uniform(0, 64));
            const Vec3 c = g.world_to_voxel(g.voxel_to_world(i, j, k));
            // Exact up to the rounding of one multiply-add and one divide.
            CHECK(std::abs(c.x - static_cast<double>(i)) < 1e-9);
            CHECK(std::abs(c.y - static_cast<double>(j)) < 1e-9);
            CHECK(std::abs(c.z - static_cast<double>(k)) < 1e-9);
            CHECK(g.nearest_index(g.voxel_to_world(i, j, k)) == Index3{i, j, k});
        }
    }

    TEST_CASE("sample_nearest rounds half away from zero and fills out of bounds") {
        const Volume v = bodygps::test::index_volume({3, 3, 3});
        // Independent oracle: floor(x + 0.5) for non-negative coordinates.
        auto oracle = [&](Vec3 p) {
            const auto i = static_cast<int>(std::floor(p.x + 0.5));
            const auto j = static_cast<int>(std::floor(p.y + 0.5));
            const auto k = static_cast<int>(std::floor(p.z + 0.5));
            return static_cast<float>(i + 3 * j + 9 * k);
        };
        CHECK(sample_nearest(v, {1.2, 2.4, 0.5}) == 16.0f);
        CHECK(oracle({1.2, 2.4, 0.5}) == 16.0f);
        CHECK(sample_nearest(v, {1e9, 0, 0}) == v.background());
        CHECK(sample_nearest(v, {-0.51, 0, 0}) == v.background());
        CHECK(sample_nearest(v, {-0.49, 0, 0}) == 0.0f);
        CHECK(sample_nearest(v, {std::nan(""), 0, 0}) == v.background());

        const Volume w = bodygps::test::index_volume({4, 4, 4}, {2, 2, 2});
        CHECK(sample_nearest(w, {1.9, 0, 0}) == w.at(1, 0, 0));

        Xoshiro256 rng(3);
        for (int n = 0; n < 500; ++n) {
            const Vec3 p{rng.uniform(0, 2.49), rng.uniform(0, 2.49), rng.uniform(0, 2.49)};
            CHECK(sample_nearest(v, p) == oracle(p));
        }
    }

    TEST_CASE("property: sample_nearest is constant within 0.49 spacing of a voxel center") {
        Xoshiro256 rng(5);
        const Volume v = bodygps::test::index_volume({8, 9, 10}, {1.5, 2.0, 3.5}, {-7, 3, 100});
        for (int n = 0; n < 500; ++n) {
            const auto i = static_cast<std::int64_t>(rng.uniform(0, 8));
            const auto j = static_cast<std::int64_t>(rng.uniform(0, 9));
            const auto k = static_cast<std::int64_t>(rng.uniform(0, 10));
            WorldPoint p = voxel_to_world(v, i, j, k);
            const int axis = static_cast<int>(rng.uniform(0, 3));
            p[axis] += rng.uniform(-0.49, 0.49) * 1.5;
            CHECK(sample_nearest(v, p) == v.at(i, j, k));
        }
    }

    TEST_CASE("trilinear interpolation is exact on grid points and linear between them") {
        const Volume v = bodygps::test::index_volume({3, 3, 3});
        CHECK(sample_trilinear(v, {1, 2, 1}) == 16.0f);
        CHECK(sample_trilinear(v, {0.5, 0, 0}) == doctest::Approx(0.5));
        CHECK(sample_trilinear(v, {1, 1.5, 1}) == doctest::Approx(14.5));
    }

    TEST_CASE("geometry validation rejects empty dims and non-positive spacing") {
        CHECK_THROWS_AS(Volume(ImageGeometry{{0, 1, 1}, {1, 1, 1}, {}}, 0.0f, 0.0f), ShapeError);
        CHECK_THROWS_AS(Volume(ImageGeometry{{1, 1, 1}, {1, 0, 1}, {}}, 0.0f, 0.0f), ShapeError);
        CHECK_THROWS_AS(Volume(ImageGeometry{{2, 2, 2}, {1, 1, 1}, {}}, std::vector<float>(7), 0.0f), ShapeError);
    }

    TEST_CASE("embedding keeps world positions of the original voxels") {
        const Volume v = bodygps::test::index_volume({3, 4, 5}, {2, 2, 2}, {1, 2, 3}, -5.0f);
        const Volume big = embed_centered(v, {9, 10, 11});
        for (std::int64_t k = 0; k < 5; ++k)
            for (std::int64_t j = 0; j < 4; ++j)
                for (std::int64_t i = 0; i < 3; ++i)
                    CHECK(sample_nearest(big, voxel_to_world(v, i, j, k)) == v.at(i, j, k));
        CHECK(big.at(0, 0, 0) == -5.0f);
    }
}

TEST_SUITE("metaimage") {
    TEST_CASE("save then load round trips every element type bit-exactly") {
        TempDir dir;
        const ImageGeometry g{{4, 4, 4}, {0.7, 1.25, 3.0}, {-12.5, 0.1, 1e3}};
        std::vector<float> data(64);
        for (std::size_t n = 0; n < data.size(); ++n) data[n] = static_cast<float>(static_cast<int>(n) * 37 % 255);
        const Volume v(g, data, 0.0f);
        for (ElementType t : {ElementType::Short, ElementType::UChar, ElementType::Float}) {
            for (const char* name : {"a.mha", "b.mhd"}) {
                const auto path = dir / (std::string(element_type_name(t)) + name);
                save_volume(v, path, t);
                const MetaImage back = read_metaimage(path);
                CHECK(back.element_type == t);
                CHECK(back.geometry == g);
                CHECK(back.voxels == data);
            }
        }

        std::vector<float> fractional(64);
        for (std::size_t n = 0; n < 64; ++n) fractional[n] = 0.1f * static_cast<float>(n) - 3.3f;
        save_volume(Volume(g, fractional, 0.0f), dir / "f.mha");
        const Volume f = load_volume(dir / "f.mha");
        CHECK(std::vector<float>(f.voxels().begin(), f.voxels().end()) == fractional);
        CHECK(f.background() == *std::min_element(fractional.begin(), fractional.end()));

        std::vector<std::uint8_t> labels(64);
        for (std::size_t n = 0; n < 64; ++n) labels[n] = static_cast<std::uint8_t>(n % 7);
        save_volume(LabelVolume(g, labels, 0), dir / "m.mha");
        const LabelVolume m = load_label_volume(dir / "m.mha");
        CHECK(std::vector<std::uint8_t>(m.voxels().begin(), m.voxels().end()) == labels);
        CHECK(m.geometry() == g);
    }

    TEST_CASE("header with NDims = 2 is a parse error naming the key") {
        const std::string text = "ObjectType = Image\nNDims = 2\nDimSize = 2 2\nElementSpacing = 1 1\nOffset = 0 0\n"
                                 "ElementType = MET_SHORT\nElementDataFile = LOCAL\n" +
                                 std::string(8, '\0');
        try {
            parse_metaimage(text);
            FAIL("expected a parse error");
        } catch (const ParseError& e) {
            CHECK(e.key == "NDims");
        }
    }

    TEST_CASE("missing required key names the key") {
        const std::string text =
            "ObjectType = Image\nNDims = 3\nElementSpacing = 1 1 1\nOffset = 0 0 0\nElementType = MET_SHORT\n"
            "ElementDataFile = LOCAL\n";
        try {
            parse_metaimage(text);
            FAIL("expected a parse error");
        } catch (const ParseError& e) {
            CHECK(e.key == "DimSize");
        }
    }

    TEST_CASE("payload shorter or longer than DimSize is a truncation error") {
        // 64 MET_SHORT voxels (128 bytes) against DimSize 4 4 5, which needs 80.
        CHECK_THROWS_AS(parse_metaimage(short_header("4 4 5") + std::string(128, '\0')), TruncationError);
        CHECK_THROWS_AS(parse_metaimage(short_header("4 4 4") + std::string(130, '\0')), TruncationError);
        CHECK_NOTHROW(parse_metaimage(short_header("4 4 4") + std::string(128, '\0')));
    }

    TEST_CASE("unsupported element types and encodings are rejected explicitly") {
        std::string text = short_header("1 1 1");
        text.replace(text.find("MET_SHORT"), 9, "MET_DOUBLE");
        CHECK_THROWS_AS(parse_metaimage(text + std::string(8, '\0')), UnsupportedTypeError);

        std::string compressed = short_header("1 1 1");
        compressed.insert(0, "CompressedData = True\n");
        CHECK_THROWS_AS(parse_metaimage(compressed + std::string(2, '\0')), UnsupportedTypeError);

        std::string external = short_header("1 1 1");
        external.replace(external.find("LOCAL"), 5, "data.raw");
        CHECK_THROWS_AS(parse_metaimage(external), UnsupportedTypeError);
    }

    TEST_CASE("short payloads decode little-endian, x fastest") {
        std::string payload;
        for (int v : {1, -2, 300, -1024}) {
            payload.push_back(static_cast<char>(v & 0xff));
            payload.push_back(static_cast<char>((v >> 8) & 0xff));
        }
        const MetaImage m = parse_metaimage(short_header("2 2 1") + payload);
        CHECK(m.voxels == std::vector<float>{1, -2, 300, -1024});
        const Volume v = to_volume(m);
        CHECK(v.at(1, 1, 0) == -1024.0f);
    }

    TEST_CASE("unknown keys are tolerated") {
        std::string text = short_header("1 1 1");
        text.insert(0, "SomeVendorKey = 12\n");
        CHECK(parse_metaimage(text + std::string(2, '\0')).voxels.size() == 1);
    }

    TEST_CASE("label volumes reject non-label values") {
        TempDir dir;
        save_volume(Volume(ImageGeometry{{2, 1, 1}, {1, 1, 1}, {}}, std::vector<float>{0.0f, 300.0f}, 0.0f),
                    dir / "bad.mha", ElementType::Short);
        CHECK_THROWS_AS(load_label_volume(dir / "bad.mha"), ParseError);
    }
}
