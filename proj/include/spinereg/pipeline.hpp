#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "spinereg/mesh.hpp"
#include "spinereg/metrics.hpp"
#include "spinereg/registration.hpp"
#include "spinereg/volume.hpp"

namespace spinereg {

using LabelMap = std::map<int, std::string>;

/// Labels 1..18 -> C7, T1..T12, L1..L5.
LabelMap default_label_map();

struct StudySeries {
    LabelVolume baseline;
    std::vector<std::pair<std::string, LabelVolume>> followups;  // (timepoint, volume), in study order
    LabelMap label_map = default_label_map();

    /// Timepoints unique and non-empty; label_map names every baseline label;
    /// baseline has at least one label.
    void validate() const;
};

struct PipelineConfig {
    GmmConfig gmm;
    DecimationParams decimation;
    /// Worker threads across (vertebra, timepoint) jobs.
    int threads = 1;
    /// Keep the baseline and registered follow-up surfaces in the report.
    bool keep_surfaces = false;
    /// Optional Gaussian jitter (mm) of follow-up surfaces before registration.
    double followup_vertex_noise = 0.0;
    std::uint64_t noise_seed = 0;
};

enum class EntryStatus { Registered, Skipped, Failed };
const char* to_string(EntryStatus s);

struct StudyEntry {
    int label = 0;
    std::string name;
    std::string timepoint;
    EntryStatus status = EntryStatus::Skipped;
    std::string message;

    /// Maps follow-up world coordinates into the baseline frame.
    RigidTransform followup_to_baseline;
    /// As fitted: baseline (centroids) -> follow-up (data).
    RigidTransform fitted;
    int iterations = 0;
    double sigma2 = 0.0;
    bool converged = false;
    std::vector<double> objective_history;
    MetricsReport metrics;
    std::size_t baseline_vertices = 0;
    std::size_t followup_vertices = 0;
    double seconds = 0.0;  // wall-clock of the registration call

    TriangleMesh baseline_surface;    // only with keep_surfaces
    TriangleMesh registered_surface;  // follow-up surface in the baseline frame
};

struct StudyReport {
    PipelineConfig config;
    std::vector<StudyEntry> entries;  // sorted by (label, timepoint order)

    std::size_t count(EntryStatus s) const;
};

/// Mask -> marching cubes -> decimation for one label.
TriangleMesh label_surface(const LabelVolume& vol, LabelVolume::Label label, const DecimationParams& params);

/// Per-vertebra, per-timepoint registration and metrics. Vertebrae absent from
/// a follow-up are recorded as skipped; per-job failures are recorded as
/// failed without aborting the study.
StudyReport run_study(const StudySeries& series, const PipelineConfig& config);

}  // namespace spinereg
