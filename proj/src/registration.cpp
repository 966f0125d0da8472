#include "spinereg/registration.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <thread>

#include "spinereg/error.hpp"
#include "spinereg/spatial.hpp"

namespace spinereg {

void GmmConfig::validate() const {
    if (!(outlier_weight >= 0.0 && outlier_weight < 1.0)) throw PreconditionError("outlier weight must lie in [0, 1)");
    if (max_iterations < 1) throw PreconditionError("max_iterations must be positive");
    if (!(rel_tolerance > 0.0)) throw PreconditionError("rel_tolerance must be positive");
    if (!(sigma2_floor > 0.0)) throw PreconditionError("sigma2_floor must be positive");
    if (threads < 1) throw PreconditionError("thread count must be positive");
}

namespace {

// Terms with exp(-(d2 - d2min) / 2 sigma2) below exp(-kCutoff) are dropped in
// the accelerated E-step; relative to the leading term (1.0) they vanish in
// double precision.
constexpr double kCutoff = 40.0;

// log of the outlier constant c = (2 pi sigma2)^{3/2} * w/(1-w) * M/N.
double log_outlier_constant(double sigma2, double w, Eigen::Index M, Eigen::Index N) {
    if (w <= 0.0) return -std::numeric_limits<double>::infinity();
    return 1.5 * std::log(2.0 * std::numbers::pi * sigma2) + std::log(w / (1.0 - w)) +
           std::log(double(M) / double(N));
}

void check_points(const PointSet& X, const PointSet& Y) {
    if (X.cols() == 0 || Y.cols() == 0) throw PreconditionError("point sets must be non-empty");
    if (!X.allFinite() || !Y.allFinite()) throw PreconditionError("point sets contain non-finite coordinates");
}

// Weighted first and second moments the M-step needs.
struct Moments {
    double np = 0.0;
    Vec3 mu_x = Vec3::Zero();
    Vec3 mu_y = Vec3::Zero();
    Mat3 A = Mat3::Zero();  // sum P (x_n - mu_x)(y_m - mu_y)^T
    double sxx = 0.0;       // sum_n (P^T 1)_n |x_n - mu_x|^2
    double syy = 0.0;       // sum_m (P 1)_m |y_m - mu_y|^2
};

MStepResult solve_m_step(const Moments& mom, bool estimate_scale, double sigma2_floor) {
    if (!(mom.np > 0.0) || !std::isfinite(mom.np)) {
        throw DegenerateError("total posterior mass is zero; every data point was treated as an outlier");
    }
    const double a_norm = mom.A.norm();
    if (!(mom.sxx > 0.0) || !(mom.syy > 0.0) || !(a_norm > 1e-14 * std::sqrt(mom.sxx * mom.syy)) ||
        !mom.A.allFinite()) {
        throw DegenerateError("posterior mass collapsed onto a single point; rotation is undetermined");
    }
    Eigen::JacobiSVD<Mat3> svd(mom.A, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Mat3& U = svd.matrixU();
    const Mat3& V = svd.matrixV();
    const double d = (U * V.transpose()).determinant() < 0.0 ? -1.0 : 1.0;
    const Mat3 R = U * Vec3(1.0, 1.0, d).asDiagonal() * V.transpose();
    const double trace_AR = (mom.A.transpose() * R).trace();

    const double s = estimate_scale ? trace_AR / mom.syy : 1.0;
    if (!(s > 0.0)) throw DegenerateError("estimated scale is not positive");
    const Vec3 t = mom.mu_x - s * (R * mom.mu_y);

    MStepResult out;
    out.transform = RigidTransform(R, t, s);
    // sum P |x_hat - s R y_hat|^2 = sxx - 2 s tr(A^T R) + s^2 syy
    out.sigma2_raw = std::max(0.0, (mom.sxx - 2.0 * s * trace_AR + s * s * mom.syy) / (3.0 * mom.np));
    out.sigma2 = std::max(out.sigma2_raw, sigma2_floor);
    return out;
}

double weighted_objective_value(double np, double sigma2_raw, double sigma2) {
    return 3.0 * np * sigma2_raw / (2.0 * sigma2) + 1.5 * np * std::log(sigma2);
}

// Accumulators of one E-step pass: P1 = P 1, Pt1 = P^T 1, PX(:, m) = sum_n P(m,n) x_n,
// and lse(n) = log(sum_m exp(-|x_n - T y_m|^2 / 2 sigma2) + c).
struct Stats {
    Eigen::VectorXd p1;
    Eigen::VectorXd pt1;
    Eigen::Matrix3Xd px;
    Eigen::VectorXd lse;

    Stats(Eigen::Index M, Eigen::Index N)
        : p1(Eigen::VectorXd::Zero(M)), pt1(Eigen::VectorXd::Zero(N)), px(Eigen::Matrix3Xd::Zero(3, M)),
          lse(Eigen::VectorXd::Zero(N)) {}
};

// log(a + exp(b)) for a >= 0.
double log_add(double a, double b) {
    if (b == -std::numeric_limits<double>::infinity()) return std::log(a);
    if (b > 0.0) return b + std::log1p(a * std::exp(-b));
    return std::log(a + std::exp(b));
}

// Per-point negative log-likelihood terms that do not depend on the data.
double nll_offset(Eigen::Index M, Eigen::Index N, double sigma2, double w) {
    return double(N) * (1.5 * std::log(2.0 * std::numbers::pi * sigma2) + std::log(double(M)) - std::log1p(-w));
}

// Transformed centroids split by coordinate so the dense pass vectorizes.
struct CentroidColumns {
    Eigen::ArrayXd x, y, z;
    explicit CentroidColumns(const PointSet& TY)
        : x(TY.row(0).transpose()), y(TY.row(1).transpose()), z(TY.row(2).transpose()) {}
};

// E-step over data columns [begin, end) into block-local accumulators.
void accumulate_block(const PointSet& X, const PointSet& TY, const CentroidColumns* cols, const PointKdTree* tree,
                      double sigma2, double log_c, Eigen::Index begin, Eigen::Index end, Eigen::VectorXd& p1,
                      Eigen::Matrix3Xd& px, Eigen::VectorXd& pt1, Eigen::VectorXd& lse) {
    const double inv2s = 1.0 / (2.0 * sigma2);
    const Eigen::Index M = TY.cols();
    Eigen::ArrayXd d2(M), k(M);
    Eigen::ArrayXd ax, ay, az;
    if (tree == nullptr) {
        ax = Eigen::ArrayXd::Zero(M);
        ay = Eigen::ArrayXd::Zero(M);
        az = Eigen::ArrayXd::Zero(M);
    }
    std::vector<Eigen::Index> idx;
    std::vector<double> dist;

    for (Eigen::Index n = begin; n < end; ++n) {
        const Vec3 x = X.col(n);
        if (tree == nullptr) {
            d2 = (cols->x - x[0]).square() + (cols->y - x[1]).square() + (cols->z - x[2]).square();
            const double dmin = d2.minCoeff();
            const double log_cs = log_c + dmin * inv2s;
            if (log_cs > 700.0) {  // outlier term swamps every Gaussian
                lse[n] = log_c;
                continue;
            }
            // Terms beyond the cutoff are dropped as in the sparse pass; this also
            // keeps exp away from subnormal results, which are very slow.
            k = ((dmin - d2) * inv2s).max(-kCutoff).exp();
            k = ((d2 - dmin) * inv2s > kCutoff).select(0.0, k);
            const double total = k.sum();
            lse[n] = log_add(total, log_cs) - dmin * inv2s;
            k *= 1.0 / (total + std::exp(log_cs));
            p1.array() += k;
            ax += x[0] * k;
            ay += x[1] * k;
            az += x[2] * k;
            pt1[n] = k.sum();
        } else {
            const double dmin = tree->nearest(x).second;
            const double log_cs = log_c + dmin * inv2s;
            if (log_cs > 700.0) {
                lse[n] = log_c;
                continue;
            }
            idx.clear();
            dist.clear();
            tree->radius_search(x, dmin + 2.0 * sigma2 * kCutoff, [&](Eigen::Index m, double dd) {
                idx.push_back(m);
                dist.push_back(dd);
            });
            double sum = 0.0;
            for (auto& v : dist) {
                v = std::exp((dmin - v) * inv2s);
                sum += v;
            }
            lse[n] = log_add(sum, log_cs) - dmin * inv2s;
            const double inv_denom = 1.0 / (sum + std::exp(log_cs));
            double total = 0.0;
            for (std::size_t i = 0; i < idx.size(); ++i) {
                const double p = dist[i] * inv_denom;
                p1[idx[i]] += p;
                px.col(idx[i]) += p * x;
                total += p;
            }
            pt1[n] = total;
        }
    }
    if (tree == nullptr) {
        px.row(0) += ax.matrix().transpose();
        px.row(1) += ay.matrix().transpose();
        px.row(2) += az.matrix().transpose();
    }
}

Stats fused_e_step(const PointSet& X, const PointSet& TY, double sigma2, double w, int threads) {
    const Eigen::Index M = TY.cols(), N = X.cols();
    Stats st(M, N);
    const double log_c = log_outlier_constant(sigma2, w, M, N);

    // Use the kd-tree once the Gaussian support (radius^2 = 2 sigma2 kCutoff) is
    // below a tenth of the cloud extent; wider balls are cheaper to do densely.
    const Vec3 extent = TY.rowwise().maxCoeff() - TY.rowwise().minCoeff();
    const bool sparse = 2.0 * sigma2 * kCutoff < 0.01 * extent.squaredNorm();
    std::optional<PointKdTree> tree;
    std::optional<CentroidColumns> cols;
    if (sparse) {
        tree.emplace(TY);
    } else {
        cols.emplace(TY);
    }
    const PointKdTree* tree_ptr = tree ? &*tree : nullptr;
    const CentroidColumns* cols_ptr = cols ? &*cols : nullptr;

    const int blocks = static_cast<int>(std::min<Eigen::Index>(threads, N));
    if (blocks <= 1) {
        accumulate_block(X, TY, cols_ptr, tree_ptr, sigma2, log_c, 0, N, st.p1, st.px, st.pt1, st.lse);
        return st;
    }
    // Fixed contiguous partition and in-order reduction: deterministic for a
    // given thread count.
    std::vector<Eigen::VectorXd> p1s(blocks, Eigen::VectorXd::Zero(M));
    std::vector<Eigen::Matrix3Xd> pxs(blocks, Eigen::Matrix3Xd::Zero(3, M));
    {
        std::vector<std::jthread> pool;
        for (int b = 0; b < blocks; ++b) {
            const Eigen::Index begin = N * b / blocks, end = N * (b + 1) / blocks;
            pool.emplace_back([&, b, begin, end] {
                accumulate_block(X, TY, cols_ptr, tree_ptr, sigma2, log_c, begin, end, p1s[b], pxs[b], st.pt1, st.lse);
            });
        }
    }
    for (int b = 0; b < blocks; ++b) {
        st.p1 += p1s[b];
        st.px += pxs[b];
    }
    return st;
}

Moments moments_from_stats(const PointSet& X, const PointSet& Y, const Stats& st) {
    Moments mom;
    mom.np = st.pt1.sum();
    if (!(mom.np > 0.0)) return mom;
    mom.mu_x = X * st.pt1 / mom.np;
    mom.mu_y = Y * st.p1 / mom.np;
    mom.A = st.px * Y.transpose() - mom.np * mom.mu_x * mom.mu_y.transpose();
    mom.sxx = X.colwise().squaredNorm().dot(st.pt1) - mom.np * mom.mu_x.squaredNorm();
    mom.syy = Y.colwise().squaredNorm().dot(st.p1) - mom.np * mom.mu_y.squaredNorm();
    return mom;
}

}  // namespace

double init_sigma2(const PointSet& X, const PointSet& Y) {
    check_points(X, Y);
    // sum_{m,n} |x_n - y_m|^2 = M sum|x - xbar|^2 + N sum|y - ybar|^2 + MN |xbar - ybar|^2
    const auto N = static_cast<double>(X.cols()), M = static_cast<double>(Y.cols());
    const Vec3 xbar = X.rowwise().mean(), ybar = Y.rowwise().mean();
    const double sx = (X.colwise() - xbar).squaredNorm();
    const double sy = (Y.colwise() - ybar).squaredNorm();
    return (M * sx + N * sy + M * N * (xbar - ybar).squaredNorm()) / (3.0 * M * N);
}

Posteriors e_step(const PointSet& X, const PointSet& Y, const RigidTransform& T, double sigma2, double w) {
    check_points(X, Y);
    if (!(sigma2 > 0.0)) throw PreconditionError("sigma2 must be positive");
    if (!(w >= 0.0 && w < 1.0)) throw PreconditionError("outlier weight must lie in [0, 1)");
    const Eigen::Index M = Y.cols(), N = X.cols();
    PointSet TY(3, M);
    for (Eigen::Index m = 0; m < M; ++m) TY.col(m) = T(Y.col(m));

    const double inv2s = 1.0 / (2.0 * sigma2);
    const double log_c = log_outlier_constant(sigma2, w, M, N);
    Posteriors post;
    post.P = Eigen::MatrixXd::Zero(M, N);
    Eigen::VectorXd d2(M);
    for (Eigen::Index n = 0; n < N; ++n) {
        for (Eigen::Index m = 0; m < M; ++m) d2[m] = (X.col(n) - TY.col(m)).squaredNorm();
        const double dmin = d2.minCoeff();
        const double log_cs = log_c + dmin * inv2s;
        if (log_cs > 700.0) continue;
        double denom = std::exp(log_cs);
        for (Eigen::Index m = 0; m < M; ++m) {
            post.P(m, n) = std::exp((dmin - d2[m]) * inv2s);
            denom += post.P(m, n);
        }
        post.P.col(n) /= denom;
    }
    post.np = post.P.sum();
    return post;
}

MStepResult m_step(const PointSet& X, const PointSet& Y, const Posteriors& post, bool estimate_scale,
                   double sigma2_floor) {
    check_points(X, Y);
    if (post.P.rows() != Y.cols() || post.P.cols() != X.cols()) {
        throw PreconditionError("posterior matrix dimensions do not match the point sets");
    }
    if (!(sigma2_floor > 0.0)) throw PreconditionError("sigma2_floor must be positive");
    Moments mom;
    const Eigen::VectorXd pt1 = post.P.colwise().sum().transpose();
    const Eigen::VectorXd p1 = post.P.rowwise().sum();
    mom.np = pt1.sum();
    if (!(mom.np > 0.0)) throw DegenerateError("total posterior mass is zero");
    mom.mu_x = X * pt1 / mom.np;
    mom.mu_y = Y * p1 / mom.np;
    const PointSet Xh = X.colwise() - mom.mu_x;
    const PointSet Yh = Y.colwise() - mom.mu_y;
    mom.A = Xh * post.P.transpose() * Yh.transpose();
    mom.sxx = Xh.colwise().squaredNorm().dot(pt1);
    mom.syy = Yh.colwise().squaredNorm().dot(p1);
    return solve_m_step(mom, estimate_scale, sigma2_floor);
}

double objective(const PointSet& X, const PointSet& Y, const RigidTransform& T, double sigma2, const Posteriors& post) {
    if (!(sigma2 > 0.0)) throw PreconditionError("sigma2 must be positive");
    if (post.P.rows() != Y.cols() || post.P.cols() != X.cols()) {
        throw PreconditionError("posterior matrix dimensions do not match the point sets");
    }
    double quad = 0.0;
    for (Eigen::Index m = 0; m < Y.cols(); ++m) {
        const Vec3 ty = T(Y.col(m));
        for (Eigen::Index n = 0; n < X.cols(); ++n) quad += post.P(m, n) * (X.col(n) - ty).squaredNorm();
    }
    return quad / (2.0 * sigma2) + 1.5 * post.np * std::log(sigma2);
}

double negative_log_likelihood(const PointSet& X, const PointSet& Y, const RigidTransform& T, double sigma2, double w) {
    check_points(X, Y);
    if (!(sigma2 > 0.0)) throw PreconditionError("sigma2 must be positive");
    if (!(w >= 0.0 && w < 1.0)) throw PreconditionError("outlier weight must lie in [0, 1)");
    const double inv2s = 1.0 / (2.0 * sigma2);
    const double log_c = log_outlier_constant(sigma2, w, Y.cols(), X.cols());
    PointSet TY(3, Y.cols());
    for (Eigen::Index m = 0; m < Y.cols(); ++m) TY.col(m) = T(Y.col(m));
    double sum = 0.0;
    for (Eigen::Index n = 0; n < X.cols(); ++n) {
        const Eigen::ArrayXd d2 = (TY.colwise() - X.col(n)).colwise().squaredNorm().transpose().array();
        const double dmin = d2.minCoeff();
        sum += log_add(((dmin - d2) * inv2s).exp().sum(), log_c + dmin * inv2s) - dmin * inv2s;
    }
    return nll_offset(Y.cols(), X.cols(), sigma2, w) - sum;
}

RegistrationResult register_point_sets(const PointSet& X, const PointSet& Y, const GmmConfig& config) {
    config.validate();
    check_points(X, Y);
    if (X.cols() < 4 || Y.cols() < 4) throw PreconditionError("rigid registration needs at least 4 points per set");

    // Work in frames centred on each set's plain mean; keeps the moment sums
    // well conditioned for surfaces far from the world origin.
    const Vec3 cx = X.rowwise().mean(), cy = Y.rowwise().mean();
    const PointSet Xc = X.colwise() - cx;
    const PointSet Yc = Y.colwise() - cy;

    // Internal transform acts on centred coordinates: T'(yc) = sR yc + t'.
    RigidTransform Tc = config.prealign_centroids ? RigidTransform{} : RigidTransform::translation(cy - cx);
    PointSet TY = Yc;
    auto transform_centroids = [&] {
        TY.noalias() = Tc.scale() * Tc.rotation() * Yc;
        TY.colwise() += Tc.translation();
    };
    transform_centroids();
    double sigma2 = std::max(init_sigma2(Xc, TY), config.sigma2_floor);

    RegistrationResult result;
    for (int it = 0; it < config.max_iterations; ++it) {
        const Stats st = fused_e_step(Xc, TY, sigma2, config.outlier_weight, config.threads);
        const double nll = nll_offset(Yc.cols(), Xc.cols(), sigma2, config.outlier_weight) - st.lse.sum();
        result.objective_history.push_back(nll);
        const MStepResult ms =
            solve_m_step(moments_from_stats(Xc, Yc, st), config.estimate_scale, config.sigma2_floor);
        result.weighted_objective_history.push_back(weighted_objective_value(st.pt1.sum(), ms.sigma2_raw, ms.sigma2));

        Tc = ms.transform;
        sigma2 = ms.sigma2;
        transform_centroids();

        if (ms.sigma2_raw <= config.sigma2_floor) {
            result.converged = true;
            break;
        }
        const auto& h = result.weighted_objective_history;
        if (h.size() >= 2 && std::abs(h.back() - h[h.size() - 2]) <= config.rel_tolerance * std::abs(h[h.size() - 2])) {
            result.converged = true;
            break;
        }
    }
    result.iterations = static_cast<int>(result.objective_history.size());
    result.sigma2 = sigma2;
    // T(y) = sR (y - cy) + t' + cx
    const Vec3 t = Tc.translation() + cx - Tc.scale() * (Tc.rotation() * cy);
    result.transform = RigidTransform(Tc.rotation(), t, Tc.scale());
    return result;
}

RegistrationResult register_meshes(const TriangleMesh& followup, const TriangleMesh& baseline, const GmmConfig& config) {
    if (followup.vertices.empty() || baseline.vertices.empty()) {
        throw PreconditionError("registration requires non-empty meshes");
    }
    return register_point_sets(followup.points(), baseline.points(), config);
}

}  // namespace spinereg
