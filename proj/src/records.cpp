#include "spinereg/records.hpp"

#include <chrono>
#include <ctime>
#include <fstream>
#include <set>
#include <sstream>

#include "spinereg/error.hpp"
#include "spinereg/volume_io.hpp"

namespace spinereg {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json vec_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

Vec3 vec_from(const json& j, const char* what) {
    if (!j.is_array() || j.size() != 3) throw IoError(std::string("expected 3 numbers for '") + what + "'");
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

std::string file_safe(const std::string& s) {
    std::string out = s;
    for (char& c : out) {
        const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '-' ||
                        c == '_' || c == '.';
        if (!ok) c = '_';
    }
    return out;
}

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError(dir.string() + ": cannot create directory (" + ec.message() + ")");
}

void write_text(const std::string& text, const fs::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError(path.string() + ": cannot open for writing");
    out << text;
    if (!out) throw IoError(path.string() + ": write failed");
}

}  // namespace

json to_json(const TransformRecord& rec) {
    const Mat3& R = rec.transform.rotation();
    json r = json::array();
    for (int i = 0; i < 3; ++i)
        for (int k = 0; k < 3; ++k) r.push_back(R(i, k));
    return json{{"R", r},
                {"t", vec_json(rec.transform.translation())},
                {"s", rec.transform.scale()},
                {"frame_from", rec.frame_from},
                {"frame_to", rec.frame_to}};
}

TransformRecord transform_record_from_json(const json& j) {
    try {
        const json& r = j.at("R");
        if (!r.is_array() || r.size() != 9) throw IoError("transform record: 'R' must hold 9 numbers");
        Mat3 R;
        for (int i = 0; i < 3; ++i)
            for (int k = 0; k < 3; ++k) R(i, k) = r[3 * i + k].get<double>();
        TransformRecord rec{RigidTransform(R, vec_from(j.at("t"), "t"), j.at("s").get<double>()),
                            j.value("frame_from", ""), j.value("frame_to", "")};
        return rec;
    } catch (const json::exception& e) {
        throw IoError(std::string("transform record: ") + e.what());
    }
}

json read_json_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(path.string() + ": cannot open");
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw IoError(path.string() + ": malformed JSON (" + e.what() + ")");
    }
}

void write_json_file(const json& j, const fs::path& path) { write_text(j.dump(2) + "\n", path); }

void write_transform_record(const TransformRecord& rec, const fs::path& path, const json& extra) {
    json j = to_json(rec);
    for (const auto& [k, v] : extra.items()) j[k] = v;
    write_json_file(j, path);
}

TransformRecord read_transform_record(const fs::path& path) {
    try {
        return transform_record_from_json(read_json_file(path));
    } catch (const IoError& e) {
        const std::string msg = e.what();
        if (msg.rfind(path.string(), 0) == 0) throw;
        throw IoError(path.string() + ": " + msg);
    }
}

Manifest read_manifest(const fs::path& path) {
    const json j = read_json_file(path);
    const fs::path base = path.parent_path();
    auto resolve = [&](const std::string& p) {
        const fs::path q(p);
        return q.is_relative() ? base / q : q;
    };
    Manifest m;
    try {
        if (!j.is_object()) throw IoError("top level must be an object");
        m.baseline = resolve(j.at("baseline").get<std::string>());
        std::set<std::string> seen;
        for (const auto& f : j.at("followups")) {
            const auto tp = f.at("timepoint").get<std::string>();
            if (!seen.insert(tp).second) throw PreconditionError(path.string() + ": duplicate timepoint '" + tp + "'");
            m.followups.emplace_back(tp, resolve(f.at("path").get<std::string>()));
        }
        if (j.contains("label_map")) {
            LabelMap lm;
            for (const auto& [k, v] : j.at("label_map").items()) {
                std::size_t used = 0;
                int label = 0;
                try {
                    label = std::stoi(k, &used);
                } catch (const std::exception&) {
                    used = 0;
                }
                if (used != k.size() || label <= 0 || label > 65535) {
                    throw PreconditionError(path.string() + ": label_map key '" + k + "' is not a positive label");
                }
                lm[label] = v.get<std::string>();
            }
            m.label_map = std::move(lm);
        }
        if (j.contains("config")) {
            if (!j["config"].is_object()) throw IoError("'config' must be an object");
            m.config = j["config"];
        }
    } catch (const json::exception& e) {
        throw IoError(path.string() + ": invalid manifest (" + e.what() + ")");
    } catch (const IoError& e) {
        throw IoError(path.string() + ": invalid manifest (" + e.what() + ")");
    }
    return m;
}

void write_manifest(const Manifest& m, const fs::path& path) {
    json j;
    j["baseline"] = m.baseline.generic_string();
    j["followups"] = json::array();
    for (const auto& [tp, p] : m.followups) j["followups"].push_back({{"timepoint", tp}, {"path", p.generic_string()}});
    if (m.label_map) {
        json lm = json::object();
        for (const auto& [k, v] : *m.label_map) lm[std::to_string(k)] = v;
        j["label_map"] = lm;
    }
    if (!m.config.empty()) j["config"] = m.config;
    write_json_file(j, path);
}

StudySeries load_series(const Manifest& m) {
    StudySeries s;
    s.baseline = read_volume(m.baseline);
    for (const auto& [tp, p] : m.followups) s.followups.emplace_back(tp, read_volume(p));
    if (m.label_map) s.label_map = *m.label_map;
    return s;
}

json config_to_json(const PipelineConfig& c) {
    return json{{"outlier_weight", c.gmm.outlier_weight},
                {"max_iterations", c.gmm.max_iterations},
                {"rel_tolerance", c.gmm.rel_tolerance},
                {"estimate_scale", c.gmm.estimate_scale},
                {"prealign_centroids", c.gmm.prealign_centroids},
                {"sigma2_floor", c.gmm.sigma2_floor},
                {"target_triangles", c.decimation.target_triangles},
                {"max_geometric_error", c.decimation.max_geometric_error},
                {"max_edge_length", c.decimation.max_edge_length},
                {"followup_vertex_noise", c.followup_vertex_noise},
                {"noise_seed", c.noise_seed}};
}

void write_study_report(const StudyReport& report, const fs::path& dir) {
    ensure_dir(dir / "transforms");
    if (report.config.keep_surfaces) ensure_dir(dir / "surfaces");

    std::ostringstream csv;
    write_metrics_header(csv);
    json entries = json::array();
    json timings = json::array();
    double total_seconds = 0.0;

    for (const auto& e : report.entries) {
        json je{{"label", e.label},      {"name", e.name},
                {"timepoint", e.timepoint}, {"status", to_string(e.status)}};
        if (!e.message.empty()) je["message"] = e.message;
        if (e.status == EntryStatus::Registered) {
            const std::string stem = std::to_string(e.label) + "_" + file_safe(e.name) + "_" + file_safe(e.timepoint);
            const TransformRecord rec{e.followup_to_baseline, "followup:" + e.timepoint, "baseline"};
            const json registration{{"fitted", to_json({e.fitted, "baseline", "followup:" + e.timepoint})},
                                    {"iterations", e.iterations},
                                    {"sigma2", e.sigma2},
                                    {"converged", e.converged},
                                    {"objective_history_length", e.objective_history.size()},
                                    {"objective_history", e.objective_history}};
            write_transform_record(rec, dir / "transforms" / (stem + ".json"),
                                   json{{"label", e.label}, {"name", e.name}, {"registration", registration}});
            write_metrics_row(csv, e.metrics);

            je["transform"] = to_json(rec);
            je["iterations"] = e.iterations;
            je["sigma2"] = e.sigma2;
            je["converged"] = e.converged;
            je["objective_history_length"] = e.objective_history.size();
            je["objective_final"] = e.objective_history.empty() ? 0.0 : e.objective_history.back();
            je["baseline_vertices"] = e.baseline_vertices;
            je["followup_vertices"] = e.followup_vertices;
            je["dice"] = e.metrics.dice;
            je["hd_mean"] = e.metrics.surface.mean;
            je["hd_max"] = e.metrics.surface.max;
            je["hd95"] = e.metrics.surface.p95;
            je["n_samples"] = e.metrics.surface.count;

            timings.push_back({{"label", e.label}, {"timepoint", e.timepoint}, {"seconds", e.seconds}});
            total_seconds += e.seconds;

            if (report.config.keep_surfaces) {
                write_ply(e.baseline_surface, dir / "surfaces" / (std::to_string(e.label) + "_" + file_safe(e.name) +
                                                                  "_baseline.ply"));
                write_ply(e.registered_surface, dir / "surfaces" / (stem + "_registered.ply"));
            }
        }
        entries.push_back(std::move(je));
    }

    write_text(csv.str(), dir / "metrics.csv");
    const json summary{{"config", config_to_json(report.config)},
                       {"counts",
                        {{"registered", report.count(EntryStatus::Registered)},
                         {"skipped", report.count(EntryStatus::Skipped)},
                         {"failed", report.count(EntryStatus::Failed)}}},
                       {"entries", entries}};
    write_json_file(summary, dir / "summary.json");

    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm utc{};
    gmtime_r(&now, &utc);
    char stamp[32];
    std::strftime(stamp, sizeof(stamp), "%Y-%m-%dT%H:%M:%SZ", &utc);
    const json provenance{{"generated_at", stamp},
                          {"threads", report.config.threads},
                          {"registration_seconds_total", total_seconds},
                          {"registrations", timings}};
    write_json_file(provenance, dir / "provenance.json");
}

void write_synthetic_study(const SyntheticStudy& study, const PhantomSpec& ps, const PerturbationSpec& pt,
                           const fs::path& dir, const std::string& ext) {
    ensure_dir(dir);
    Manifest manifest;
    manifest.baseline = "baseline" + ext;
    write_volume(study.baseline.volume, dir / manifest.baseline);

    auto counts_json = [](const LabelVolume& vol) {
        json c = json::object();
        for (auto l : vol.labels()) c[std::to_string(l)] = vol.count(l);
        return c;
    };

    json shapes = json::array();
    for (const auto& s : study.baseline.shapes) {
        shapes.push_back({{"label", s.label},
                          {"center", vec_json(s.center)},
                          {"orientation", to_json({RigidTransform(s.orientation, Vec3::Zero()), "local", "baseline"})["R"]},
                          {"radii", vec_json(s.radii)},
                          {"process_lo", vec_json(s.process_lo)},
                          {"process_hi", vec_json(s.process_hi)}});
    }
    json followups = json::array();
    for (std::size_t k = 0; k < study.followups.size(); ++k) {
        const auto& [tp, fu] = study.followups[k];
        const fs::path name = "followup_" + file_safe(tp) + ext;
        write_volume(fu.volume, dir / name);
        manifest.followups.emplace_back(tp, name);
        json tr = json::array();
        for (const auto& [label, T] : fu.transforms) {
            json r = to_json({T, "baseline", "followup:" + tp});
            r["label"] = label;
            tr.push_back(std::move(r));
        }
        followups.push_back({{"timepoint", tp},
                             {"path", name.generic_string()},
                             {"perturbation_seed", pt.seed + k},
                             {"voxel_counts", counts_json(fu.volume)},
                             {"transforms", tr}});
    }

    const json truth{
        {"phantom",
         {{"n_vertebrae", ps.n_vertebrae},
          {"dims", study.baseline.volume.geometry().dims},
          {"spacing", vec_json(ps.spacing)},
          {"body_radii", vec_json(ps.body_radii)},
          {"process_size", vec_json(ps.process_size)},
          {"inter_body_gap", ps.inter_body_gap},
          {"margin", ps.margin},
          {"shape_jitter", ps.shape_jitter},
          {"max_tilt", ps.max_tilt},
          {"seed", ps.seed}}},
        {"perturbation",
         {{"max_rotation", pt.max_rotation},
          {"max_translation", pt.max_translation},
          {"lesion_fraction", pt.lesion_fraction},
          {"vertex_noise_sd", pt.vertex_noise_sd},
          {"max_grid_offset", pt.max_grid_offset},
          {"seed", pt.seed}}},
        {"baseline", {{"path", manifest.baseline.generic_string()}, {"voxel_counts", counts_json(study.baseline.volume)},
                      {"shapes", shapes}}},
        {"followups", followups}};
    write_json_file(truth, dir / "ground_truth.json");

    if (pt.vertex_noise_sd > 0.0) {
        manifest.config = json{{"vertex-noise", pt.vertex_noise_sd}, {"noise-seed", pt.seed}};
    }
    write_manifest(manifest, dir / "manifest.json");
}

}  // namespace spinereg
