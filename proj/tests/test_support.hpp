#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <string>
#include <unistd.h>

#include "bodygps/synth.hpp"
#include "bodygps/volume.hpp"

namespace bodygps::test {

/// Scratch directory removed on destruction.
class TempDir {
public:
    TempDir() {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("bodygps_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() { std::filesystem::remove_all(path_); }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

inline std::string read_bytes(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_bytes(const std::filesystem::path& p, const std::string& bytes) {
    std::ofstream out(p, std::ios::binary);
    out << bytes;
}

/// Volume whose voxel value equals its flat index.
inline Volume index_volume(Index3 dims, Vec3 spacing = {1, 1, 1}, Vec3 origin = {}, float background = -1.0f) {
    ImageGeometry g{dims, spacing, origin};
    std::vector<float> data(g.voxel_count());
    for (std::size_t n = 0; n < data.size(); ++n) data[n] = static_cast<float>(n);
    return Volume(g, std::move(data), background);
}

/// Small two-organ phantom on a 24^3 grid at 4 mm, for fast end-to-end tests.
inline PhantomSpec tiny_phantom_spec() {
    PhantomSpec s;
    s.name = "tiny";
    s.geometry = {{24, 24, 24}, {4.0, 4.0, 4.0}, {-46.0, -46.0, -46.0}};
    s.background = -1024.0;
    s.organs = {{1, "body", {0, 0, 0}, {40, 34, 44}, 40.0, 0.0},
                {2, "left", {-14, 0, 0}, {12, 14, 18}, 400.0, 0.0},
                {3, "right", {16, 4, 6}, {10, 10, 14}, -600.0, 20.0}};
    s.reference = {"carina", {0, 0, 6}};
    s.landmarks = {{"tip", {16, 4, 18}}};
    s.noise_sd = 0.0;
    s.subject_noise_sd = 0.0;
    s.scale_mm = 256.0;
    s.deformation = {3, 8.0, 30.0, 50.0, 0.5};
    return s;
}

}  // namespace bodygps::test
