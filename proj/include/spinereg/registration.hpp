#pragma once

#include <Eigen/Core>
#include <vector>

#include "spinereg/mesh.hpp"
#include "spinereg/transform.hpp"

namespace spinereg {

/// Point sets are 3xK matrices, one point per column.
using PointSet = Eigen::Matrix3Xd;

/// EM settings for Gaussian-mixture rigid registration.
struct GmmConfig {
    /// Mass of the uniform outlier component, in [0, 1). 0 gives the pure
    /// equal-prior mixture.
    double outlier_weight = 0.1;
    int max_iterations = 150;
    /// Stop once |E_k - E_{k-1}| <= rel_tolerance * |E_{k-1}| (E: weighted_objective_history).
    double rel_tolerance = 1e-6;
    /// When false the scale is held at exactly 1.
    bool estimate_scale = false;
    /// Start from the translation that maps the centroid mean onto the data mean.
    bool prealign_centroids = true;
    /// Lower clamp on the variance, mm^2.
    double sigma2_floor = 1e-10;
    /// Worker threads for the E-step. Results are bit-reproducible for a fixed
    /// thread count; across thread counts they agree to ~1e-12 relative.
    int threads = 1;

    void validate() const;
};

/// Correspondence probabilities P(m, n) = P(y_m | x_n), M x N, and their total mass.
struct Posteriors {
    Eigen::MatrixXd P;
    double np = 0.0;
};

struct RegistrationResult {
    /// Maps centroid (baseline) space into data (follow-up) space.
    RigidTransform transform;
    double sigma2 = 0.0;
    int iterations = 0;
    bool converged = false;
    /// Mixture negative log-likelihood at the parameters entering each
    /// iteration. EM never increases it.
    std::vector<double> objective_history;
    /// The weighted objective E (see objective()) after each M-step, with the
    /// posteriors of that iteration. Not monotone in general: N_P changes
    /// between iterations.
    std::vector<double> weighted_objective_history;
};

/// (1 / 3MN) * sum_{m,n} |x_n - y_m|^2.
double init_sigma2(const PointSet& X, const PointSet& Y);

/// Posterior responsibilities of each centroid for each data point under the
/// mixture (1-w)/M sum_m N(x; T(y_m), sigma2 I) + w/N.
Posteriors e_step(const PointSet& X, const PointSet& Y, const RigidTransform& T, double sigma2, double w);

struct MStepResult {
    RigidTransform transform;
    double sigma2 = 0.0;      // clamped to the floor
    double sigma2_raw = 0.0;  // closed-form minimiser before clamping
};

/// Closed-form minimiser of the weighted objective for fixed posteriors
/// (weighted Procrustes, reflection-corrected). Throws DegenerateError when
/// the posterior mass is zero or collapses onto a single point.
MStepResult m_step(const PointSet& X, const PointSet& Y, const Posteriors& post, bool estimate_scale,
                   double sigma2_floor = 1e-10);

/// E = 1/(2 sigma2) * sum P(m,n) |x_n - T(y_m)|^2 + (3 N_P / 2) log sigma2.
double objective(const PointSet& X, const PointSet& Y, const RigidTransform& T, double sigma2, const Posteriors& post);

/// -sum_n log p(x_n) for the mixture above.
double negative_log_likelihood(const PointSet& X, const PointSet& Y, const RigidTransform& T, double sigma2, double w);

/// Full EM loop. X are the data points (follow-up), Y the mixture centroids
/// (baseline); the returned transform maps Y's frame onto X's.
RegistrationResult register_point_sets(const PointSet& X, const PointSet& Y, const GmmConfig& config);

/// Convenience overload on mesh vertices.
RegistrationResult register_meshes(const TriangleMesh& followup, const TriangleMesh& baseline, const GmmConfig& config);

}  // namespace spinereg
