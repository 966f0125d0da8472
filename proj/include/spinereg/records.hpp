#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "spinereg/pipeline.hpp"
#include "spinereg/synth.hpp"
#include "spinereg/transform.hpp"

namespace spinereg {

// All records are JSON. Reals are written with round-trip precision.

struct TransformRecord {
    RigidTransform transform;
    std::string frame_from;
    std::string frame_to;
};

/// {"R": [9, row-major], "t": [3], "s": real, "frame_from": ..., "frame_to": ...}
nlohmann::json to_json(const TransformRecord& rec);
TransformRecord transform_record_from_json(const nlohmann::json& j);

/// Writes the record plus any extra members of `extra` (an object).
void write_transform_record(const TransformRecord& rec, const std::filesystem::path& path,
                            const nlohmann::json& extra = nlohmann::json::object());
TransformRecord read_transform_record(const std::filesystem::path& path);

/// Study manifest:
///   {"baseline": "base.nii",
///    "followups": [{"timepoint": "3m", "path": "fu3.nii"}, ...],
///    "label_map": {"1": "C7", ...},      (optional)
///    "config": {"outlier-weight": 0.1, ...}}  (optional, same keys as CLI flags)
/// Relative paths resolve against the manifest's directory.
struct Manifest {
    std::filesystem::path baseline;
    std::vector<std::pair<std::string, std::filesystem::path>> followups;
    std::optional<LabelMap> label_map;
    nlohmann::json config = nlohmann::json::object();
};

Manifest read_manifest(const std::filesystem::path& path);
void write_manifest(const Manifest& m, const std::filesystem::path& path);

/// Reads every volume named by the manifest.
StudySeries load_series(const Manifest& m);

/// Parses a JSON file into an object; IoError when unreadable or malformed.
nlohmann::json read_json_file(const std::filesystem::path& path);
void write_json_file(const nlohmann::json& j, const std::filesystem::path& path);

/// Report tree under `dir`:
///   transforms/<label>_<name>_<timepoint>.json   follow-up -> baseline record
///   metrics.csv                                 registered entries only
///   summary.json                                config echo and per-entry status (deterministic)
///   provenance.json                             wall-clock timings and run time stamp
///   surfaces/...                                PLYs, when kept
void write_study_report(const StudyReport& report, const std::filesystem::path& dir);

/// JSON echo of the settings that influence results.
nlohmann::json config_to_json(const PipelineConfig& config);

/// Writes baseline/follow-up volumes (`ext` = ".nii" or ".txt" sidecar),
/// ground_truth.json and manifest.json into `dir`.
void write_synthetic_study(const SyntheticStudy& study, const PhantomSpec& phantom, const PerturbationSpec& perturb,
                           const std::filesystem::path& dir, const std::string& ext);

}  // namespace spinereg
