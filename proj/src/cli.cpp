#include "spinereg/cli.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include "spinereg/error.hpp"
#include "spinereg/metrics.hpp"
#include "spinereg/pipeline.hpp"
#include "spinereg/records.hpp"
#include "spinereg/synth.hpp"
#include "spinereg/volume_io.hpp"

namespace spinereg {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int g_verbosity = 0;

void log(int level, const std::string& msg) {
    if (level <= g_verbosity) std::cerr << "spinereg: " << msg << '\n';
}

std::vector<std::string> json_to_args(const json& v) {
    if (v.is_array()) {
        std::vector<std::string> out;
        for (const auto& e : v) {
            const auto part = json_to_args(e);
            out.insert(out.end(), part.begin(), part.end());
        }
        return out;
    }
    if (v.is_string()) return {v.get<std::string>()};
    if (v.is_boolean()) return {v.get<bool>() ? "true" : "false"};
    return {v.dump()};
}

std::string normalize_key(std::string k) {
    for (char& c : k)
        if (c == '_') c = '-';
    return k;
}

// Feeds config-file values to options of `app` not given on the command line.
void apply_config(CLI::App* app, const json& config) {
    if (config.is_null()) return;
    if (!config.is_object()) throw PreconditionError("config must be a JSON object");
    std::map<std::string, CLI::Option*> by_name;
    for (CLI::App* a : {app, app->get_parent()}) {
        if (!a) continue;
        for (CLI::Option* opt : a->get_options()) {
            if (!opt->get_lnames().empty()) by_name.emplace(opt->get_lnames().front(), opt);
        }
    }
    for (const auto& [key, value] : config.items()) {
        const std::string name = normalize_key(key);
        auto it = by_name.find(name);
        if (it == by_name.end() || name == "config" || name == "help") {
            log(1, "config key '" + key + "' does not apply to '" + app->get_name() + "', ignored");
            continue;
        }
        CLI::Option* opt = it->second;
        if (opt->count() > 0) continue;  // command line wins
        try {
            opt->add_result(json_to_args(value));
            opt->run_callback();
        } catch (const CLI::Error& e) {
            throw PreconditionError("config key '" + key + "': " + e.what());
        }
    }
}

struct GmmFlags {
    GmmConfig cfg;
    void add(CLI::App* app) {
        app->add_option("--outlier-weight", cfg.outlier_weight, "Uniform outlier mass w in [0, 1)");
        app->add_option("--max-iterations", cfg.max_iterations, "EM iteration cap");
        app->add_option("--tolerance", cfg.rel_tolerance, "Relative objective change for convergence");
        app->add_option("--estimate-scale", cfg.estimate_scale, "Estimate a uniform scale (true/false)");
        app->add_option("--prealign", cfg.prealign_centroids, "Start from the centroid-aligning translation (true/false)");
        app->add_option("--sigma2-floor", cfg.sigma2_floor, "Lower clamp on sigma^2 (mm^2)");
    }
};

struct DecimationFlags {
    DecimationParams params;
    void add(CLI::App* app) {
        app->add_option("--target-triangles", params.target_triangles, "Decimation target triangle count");
        app->add_option("--max-error", params.max_geometric_error, "Decimation geometric error bound (mm)");
        app->add_option("--max-edge", params.max_edge_length, "Longest edge a decimation collapse may create (mm, 0 = no limit)");
    }
};

Vec3 to_vec3(const std::vector<double>& v, const char* what) {
    if (v.size() == 1) return Vec3::Constant(v[0]);
    if (v.size() == 3) return {v[0], v[1], v[2]};
    throw PreconditionError(std::string("--") + what + " takes 1 or 3 values");
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream in(s);
    std::string item;
    while (std::getline(in, item, ',')) {
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

bool is_mesh_path(const fs::path& p) {
    std::string ext = p.extension().string();
    for (char& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return ext == ".ply";
}

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.9f", v);
    return buf;
}

}  // namespace

int run_cli(int argc, char** argv) {
    CLI::App app{"Per-vertebra rigid registration of longitudinal spine label volumes", "spinereg"};
    app.option_defaults()->always_capture_default();
    app.require_subcommand(1);
    app.fallthrough();

    int threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    std::string config_path;
    app.add_flag("-v,--verbose", g_verbosity, "Increase log detail on stderr (repeatable)");
    app.add_option("--config", config_path, "JSON file of option values (keys are long flag names); flags override it");
    app.add_option("--threads", threads, "Worker threads; 1 gives bit-reproducible output")->check(CLI::PositiveNumber);

    // surface
    auto* surface = app.add_subcommand("surface", "Extract a decimated surface for one label");
    std::string s_volume, s_out;
    int s_label = 0;
    DecimationFlags s_dec;
    surface->add_option("--volume,-i", s_volume, "Label volume (.nii or sidecar)")->required();
    surface->add_option("--label,-l", s_label, "Label to extract")->required();
    surface->add_option("--out,-o", s_out, "Output PLY")->required();
    s_dec.add(surface);

    // register
    auto* reg = app.add_subcommand("register", "Rigidly register a moving (follow-up) mesh onto a fixed (baseline) mesh");
    std::string r_fixed, r_moving, r_out, r_registered;
    GmmFlags r_gmm;
    reg->add_option("--fixed", r_fixed, "Baseline PLY (mixture centroids)")->required();
    reg->add_option("--moving", r_moving, "Follow-up PLY (data points)")->required();
    reg->add_option("--out,-o", r_out, "Transform record (JSON), moving -> fixed")->required();
    reg->add_option("--registered", r_registered, "Also write the moving mesh mapped into the fixed frame (PLY)");
    r_gmm.add(reg);

    // study
    auto* study = app.add_subcommand("study", "Register every vertebra of every follow-up in a manifest");
    std::string st_manifest, st_out;
    bool st_surfaces = false;
    double st_noise = 0.0;
    std::uint64_t st_noise_seed = 0;
    GmmFlags st_gmm;
    DecimationFlags st_dec;
    study->add_option("--manifest,-m", st_manifest, "Study manifest (JSON)")->required();
    study->add_option("--out,-o", st_out, "Report directory")->required();
    study->add_option("--surfaces", st_surfaces, "Write baseline and registered PLY surfaces (true/false)");
    study->add_option("--vertex-noise", st_noise, "Gaussian jitter (mm) added to follow-up surfaces");
    study->add_option("--noise-seed", st_noise_seed, "Seed of the follow-up surface jitter");
    st_gmm.add(study);
    st_dec.add(study);

    // metrics
    auto* metrics = app.add_subcommand("metrics", "Dice between label volumes or surface distances between meshes");
    std::string m_a, m_b, m_transform, m_out;
    int m_label = 0;
    metrics->add_option("--a", m_a, "First input (.ply mesh or label volume)")->required();
    metrics->add_option("--b", m_b, "Second input, same kind as --a")->required();
    metrics->add_option("--label", m_label, "Label for volume inputs (0 = every label)");
    metrics->add_option("--transform", m_transform, "Transform record applied to --b first (b frame -> a frame)");
    metrics->add_option("--out,-o", m_out, "Write the table here instead of stdout");

    // synth
    auto* synth = app.add_subcommand("synth", "Generate a synthetic phantom study with ground truth");
    std::string sy_out, sy_timepoints = "3m,6m,12m", sy_format = "nii";
    PhantomSpec ps;
    PerturbationSpec pt;
    std::vector<std::int64_t> sy_dims{0, 0, 0};
    std::vector<double> sy_spacing{1.0}, sy_radii{ps.body_radii.x(), ps.body_radii.y(), ps.body_radii.z()},
        sy_process{ps.process_size.x(), ps.process_size.y(), ps.process_size.z()};
    synth->add_option("--out,-o", sy_out, "Output directory")->required();
    synth->add_option("--n-vertebrae", ps.n_vertebrae, "Number of stacked vertebrae");
    synth->add_option("--dims", sy_dims, "Grid size (3 values; 0 0 0 = automatic)")->expected(3);
    synth->add_option("--spacing", sy_spacing, "Voxel spacing mm (1 or 3 values)")->expected(1, 3);
    synth->add_option("--body-radii", sy_radii, "Ellipsoid semi-axes mm")->expected(3);
    synth->add_option("--process-size", sy_process, "Posterior block extent mm")->expected(3);
    synth->add_option("--gap", ps.inter_body_gap, "Gap between neighbouring bodies mm");
    synth->add_option("--margin", ps.margin, "Background margin mm");
    synth->add_option("--shape-jitter", ps.shape_jitter, "Relative per-vertebra radius variation");
    synth->add_option("--max-tilt", ps.max_tilt, "Largest random tilt of each vertebra (degrees)");
    synth->add_option("--phantom-seed", ps.seed, "Phantom seed");
    synth->add_option("--max-rotation", pt.max_rotation, "Largest per-vertebra rotation (degrees)");
    synth->add_option("--max-translation", pt.max_translation, "Largest per-vertebra translation (mm)");
    synth->add_option("--lesion-fraction", pt.lesion_fraction, "Eroded voxels per vertebra as a fraction of its surface voxels");
    synth->add_option("--vertex-noise", pt.vertex_noise_sd, "Surface jitter sd (mm), passed to study via the manifest");
    synth->add_option("--grid-offset", pt.max_grid_offset, "Largest follow-up grid origin shift per axis (mm)");
    synth->add_option("--perturb-seed", pt.seed, "Perturbation seed (follow-up k uses seed + k)");
    synth->add_option("--timepoints", sy_timepoints, "Comma-separated follow-up tags");
    synth->add_option("--format", sy_format, "Volume format: nii or sidecar")->check(CLI::IsMember({"nii", "sidecar"}));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        json file_config = json::object();
        if (!config_path.empty()) file_config = read_json_file(config_path);
        CLI::App* active = app.get_subcommands().front();

        if (active == surface) {
            apply_config(surface, file_config);
            if (s_label <= 0 || s_label > 65535) throw PreconditionError("--label must be in 1..65535");
            const LabelVolume vol = read_volume(s_volume);
            log(1, "read " + s_volume);
            const TriangleMesh mesh = label_surface(vol, static_cast<LabelVolume::Label>(s_label), s_dec.params);
            write_ply(mesh, s_out);
            log(1, "label " + std::to_string(s_label) + ": " + std::to_string(mesh.triangles.size()) +
                       " triangles, watertight=" + (is_watertight(mesh) ? "yes" : "no") + " -> " + s_out);
        } else if (active == reg) {
            apply_config(reg, file_config);
            const TriangleMesh fixed = read_ply(r_fixed);
            const TriangleMesh moving = read_ply(r_moving);
            GmmConfig cfg = r_gmm.cfg;
            cfg.threads = threads;
            const RegistrationResult r = register_meshes(moving, fixed, cfg);
            const RigidTransform moving_to_fixed = invert(r.transform);
            const json summary{{"fitted", to_json(TransformRecord{r.transform, "fixed", "moving"})},
                               {"iterations", r.iterations},
                               {"sigma2", r.sigma2},
                               {"converged", r.converged},
                               {"objective_history_length", r.objective_history.size()},
                               {"objective_history", r.objective_history},
                               {"weighted_objective_history", r.weighted_objective_history}};
            write_transform_record({moving_to_fixed, "moving", "fixed"}, r_out, json{{"registration", summary}});
            if (!r_registered.empty()) write_ply(apply_transform_to_mesh(moving, moving_to_fixed), r_registered);
            log(1, "registered in " + std::to_string(r.iterations) + " iterations, sigma2=" + std::to_string(r.sigma2) +
                       (r.converged ? "" : " (iteration cap reached)"));
        } else if (active == study) {
            const Manifest manifest = read_manifest(st_manifest);
            json merged = manifest.config;
            for (const auto& [k, v] : file_config.items()) merged[k] = v;
            apply_config(study, merged);
            const StudySeries series = load_series(manifest);
            PipelineConfig cfg;
            cfg.gmm = st_gmm.cfg;
            cfg.decimation = st_dec.params;
            cfg.threads = threads;
            cfg.keep_surfaces = st_surfaces;
            cfg.followup_vertex_noise = st_noise;
            cfg.noise_seed = st_noise_seed;
            log(1, "study: " + std::to_string(series.followups.size()) + " follow-up(s), " +
                       std::to_string(series.baseline.labels().size()) + " baseline label(s)");
            const StudyReport report = run_study(series, cfg);
            write_study_report(report, st_out);
            for (const auto& e : report.entries) {
                if (e.status == EntryStatus::Failed) {
                    log(0, "warning: " + e.name + " @ " + e.timepoint + " failed: " + e.message);
                } else if (e.status == EntryStatus::Skipped) {
                    log(1, e.name + " @ " + e.timepoint + " skipped: " + e.message);
                } else {
                    log(1, e.name + " @ " + e.timepoint + ": dice " + format_double(e.metrics.dice) + ", hd mean " +
                               format_double(e.metrics.surface.mean) + " mm, " + std::to_string(e.iterations) +
                               " iterations");
                }
            }
        } else if (active == metrics) {
            apply_config(metrics, file_config);
            std::optional<RigidTransform> T;
            if (!m_transform.empty()) T = read_transform_record(m_transform).transform;
            std::ostringstream table;
            if (is_mesh_path(m_a) != is_mesh_path(m_b)) {
                throw PreconditionError("--a and --b must both be meshes (.ply) or both be volumes");
            }
            if (is_mesh_path(m_a)) {
                const TriangleMesh a = read_ply(m_a);
                TriangleMesh b = read_ply(m_b);
                if (T) b = apply_transform_to_mesh(b, *T);
                const SurfaceDistanceStats s = hausdorff_stats(a, b);
                table << "hd_mean,hd_max,hd95,n_samples\n"
                      << format_double(s.mean) << ',' << format_double(s.max) << ',' << format_double(s.p95) << ','
                      << s.count << '\n';
            } else {
                const LabelVolume a = read_volume(m_a);
                const LabelVolume b = read_volume(m_b);
                const LabelVolume bb = resample_labels(b, a.geometry(), T.value_or(RigidTransform::identity()));
                std::vector<LabelVolume::Label> labels;
                if (m_label > 0) {
                    labels.push_back(static_cast<LabelVolume::Label>(m_label));
                } else {
                    std::set<LabelVolume::Label> all;
                    for (auto l : a.labels()) all.insert(l);
                    for (auto l : b.labels()) all.insert(l);
                    labels.assign(all.begin(), all.end());
                }
                table << "label,dice\n";
                for (auto l : labels) {
                    table << l << ',' << format_double(dice(extract_label(a, l), extract_label(bb, l))) << '\n';
                }
            }
            if (m_out.empty()) {
                std::cout << table.str();
            } else {
                std::ofstream out(m_out, std::ios::binary);
                if (!(out << table.str())) throw IoError(m_out + ": cannot write");
            }
        } else if (active == synth) {
            apply_config(synth, file_config);
            ps.dims = {sy_dims.at(0), sy_dims.at(1), sy_dims.at(2)};
            ps.spacing = to_vec3(sy_spacing, "spacing");
            ps.body_radii = to_vec3(sy_radii, "body-radii");
            ps.process_size = to_vec3(sy_process, "process-size");
            const auto tps = split_list(sy_timepoints);
            const SyntheticStudy st = make_study(ps, pt, tps);
            write_synthetic_study(st, ps, pt, sy_out, sy_format == "nii" ? ".nii" : ".txt");
            log(1, "wrote synthetic study with " + std::to_string(tps.size()) + " follow-up(s) to " + sy_out);
        }
    } catch (const Error& e) {
        log(0, std::string("error: ") + e.what());
        switch (e.kind()) {
            case ErrorKind::Io: return kExitIo;
            case ErrorKind::Precondition: return kExitPrecondition;
            case ErrorKind::Degenerate: return kExitDegenerate;
        }
        return kExitInternal;
    } catch (const std::exception& e) {
        log(0, std::string("internal error: ") + e.what());
        return kExitInternal;
    }
    return kExitOk;
}

}  // namespace spinereg
