#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "bodygps/synth.hpp"

namespace bodygps {

/// A generated atlas with its train and held-out subjects. Fields travel with
/// each subject, so ground truth is always available.
struct SyntheticDataset {
    PhantomSpec spec;
    std::uint64_t seed = 0;
    std::shared_ptr<const Atlas> atlas;
    std::vector<SubjectSample> train;
    std::vector<SubjectSample> heldout;
};

/// Atlas from derive_seed(seed, 0); subject i gets its field from
/// derive_seed(seed, 1000 + i) and noise from derive_seed(seed, 2000 + i).
/// The last `n_heldout` subjects are held out.
SyntheticDataset generate_dataset(const PhantomSpec& spec, int n_subjects, int n_heldout, std::uint64_t seed);

/// Writes atlas/ (bundle), subjects/<id>.mha, subjects/<id>_mask.mha and
/// manifest.json under `dir`. Returns the manifest document.
nlohmann::json write_dataset(const SyntheticDataset& data, const std::filesystem::path& dir);

/// Reads a manifest written by write_dataset. Volumes come from disk and
/// fields from the manifest records. Throws ConfigError on missing files.
SyntheticDataset load_dataset(const std::filesystem::path& manifest_path);

/// Built-in phantom by name ("thorax", "ankle") or a JSON spec file.
PhantomSpec load_phantom_spec(const std::string& name_or_path);

}  // namespace bodygps
