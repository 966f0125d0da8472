#include "spinereg/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <set>
#include <thread>

#include "spinereg/error.hpp"
#include "spinereg/synth.hpp"

namespace spinereg {

LabelMap default_label_map() {
    LabelMap m;
    m[1] = "C7";
    for (int i = 1; i <= 12; ++i) m[1 + i] = "T" + std::to_string(i);
    for (int i = 1; i <= 5; ++i) m[13 + i] = "L" + std::to_string(i);
    return m;
}

void StudySeries::validate() const {
    std::set<std::string> seen;
    for (const auto& [tp, vol] : followups) {
        if (tp.empty()) throw PreconditionError("empty timepoint identifier");
        if (!seen.insert(tp).second) throw PreconditionError("duplicate timepoint '" + tp + "'");
    }
    const auto labels = baseline.labels();
    if (labels.empty()) throw PreconditionError("baseline volume contains no labels");
    for (auto l : labels) {
        if (!label_map.count(l)) throw PreconditionError("label " + std::to_string(l) + " has no name in the label map");
    }
}

const char* to_string(EntryStatus s) {
    switch (s) {
        case EntryStatus::Registered: return "registered";
        case EntryStatus::Skipped: return "skipped";
        case EntryStatus::Failed: return "failed";
    }
    return "unknown";
}

std::size_t StudyReport::count(EntryStatus s) const {
    return static_cast<std::size_t>(
        std::count_if(entries.begin(), entries.end(), [s](const StudyEntry& e) { return e.status == s; }));
}

TriangleMesh label_surface(const LabelVolume& vol, LabelVolume::Label label, const DecimationParams& params) {
    const BinaryMask mask = extract_label(vol, label);
    if (mask.empty()) throw PreconditionError("label " + std::to_string(label) + " not present in volume");
    return decimate(marching_cubes(mask), params);
}

namespace {

// Runs fn(i) for i in [0, n) on up to `threads` workers. Exceptions must be
// handled inside fn.
template <class Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
    const auto workers = static_cast<std::size_t>(std::max(1, threads));
    if (workers == 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < std::min(workers, n); ++w) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) fn(i);
        });
    }
    for (auto& t : pool) t.join();
}

struct BaselineSurface {
    TriangleMesh mesh;
    BinaryMask mask;
    std::string error;
};

}  // namespace

StudyReport run_study(const StudySeries& series, const PipelineConfig& config) {
    series.validate();
    config.gmm.validate();
    config.decimation.validate();

    StudyReport report;
    report.config = config;

    const auto labels = series.baseline.labels();
    std::vector<BaselineSurface> base(labels.size());
    parallel_for(labels.size(), config.threads, [&](std::size_t i) {
        try {
            base[i].mask = extract_label(series.baseline, labels[i]);
            base[i].mesh = decimate(marching_cubes(base[i].mask), config.decimation);
        } catch (const std::exception& e) {
            base[i].error = e.what();
        }
    });

    // Entries are laid out label-major in timepoint order, so the output
    // order is fixed before any job runs.
    const std::size_t n_tp = series.followups.size();
    report.entries.resize(labels.size() * n_tp);
    GmmConfig gmm = config.gmm;
    gmm.threads = 1;  // parallelism is across jobs

    parallel_for(report.entries.size(), config.threads, [&](std::size_t j) {
        const std::size_t li = j / n_tp, ti = j % n_tp;
        const auto label = labels[li];
        const auto& [tp, vol] = series.followups[ti];
        StudyEntry& e = report.entries[j];
        e.label = label;
        e.name = series.label_map.at(label);
        e.timepoint = tp;
        e.metrics.vertebra_label = label;
        e.metrics.timepoint = tp;
        try {
            if (!base[li].error.empty()) throw DegenerateError("baseline surface: " + base[li].error);
            const BinaryMask fmask = extract_label(vol, label);
            if (fmask.empty()) {
                e.status = EntryStatus::Skipped;
                e.message = "label not present in follow-up";
                return;
            }
            TriangleMesh fmesh = decimate(marching_cubes(fmask), config.decimation);
            if (config.followup_vertex_noise > 0.0) {
                fmesh = jitter_vertices(fmesh, config.followup_vertex_noise,
                                        config.noise_seed + 1000003ULL * label + ti);
            }
            const TriangleMesh& bmesh = base[li].mesh;
            e.baseline_vertices = bmesh.vertices.size();
            e.followup_vertices = fmesh.vertices.size();

            const auto t0 = std::chrono::steady_clock::now();
            const RegistrationResult r = register_meshes(fmesh, bmesh, gmm);
            e.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

            e.fitted = r.transform;
            e.followup_to_baseline = invert(r.transform);
            e.iterations = r.iterations;
            e.sigma2 = r.sigma2;
            e.converged = r.converged;
            e.objective_history = r.objective_history;

            const BinaryMask moved = resample_mask(fmask, series.baseline.geometry(), e.followup_to_baseline);
            e.metrics.dice = dice(base[li].mask, moved);
            TriangleMesh registered = apply_transform_to_mesh(fmesh, e.followup_to_baseline);
            e.metrics.surface = hausdorff_stats(bmesh, registered);
            if (config.keep_surfaces) {
                e.baseline_surface = bmesh;
                e.registered_surface = std::move(registered);
            }
            e.status = EntryStatus::Registered;
        } catch (const std::exception& ex) {
            e.status = EntryStatus::Failed;
            e.message = ex.what();
        }
    });
    return report;
}

}  // namespace spinereg
