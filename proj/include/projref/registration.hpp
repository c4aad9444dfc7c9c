// Point-to-plane ICP baseline: kd-tree nearest neighbors with deterministic
// tie-breaking, k-NN normal estimation, coordinate-preserving voxel
// downsampling, and trajectory composition.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "projref/geometry.hpp"
#include "projref/parallel.hpp"
#include "projref/pointcloud.hpp"

namespace projref {

// ---------------------------------------------------------------------------
// Spatial index

/// Static kd-tree over a point set. Queries break distance ties by the
/// lowest original index, so results never depend on build or scan order.
class KdTree {
 public:
  explicit KdTree(const std::vector<Vec3>& points) : pts_(points) {
    order_.resize(pts_.size());
    std::iota(order_.begin(), order_.end(), size_t{0});
    if (!order_.empty()) build(0, order_.size(), 0);
  }

  size_t size() const { return pts_.size(); }

  /// Nearest point within max_dist (inf = unbounded); SIZE_MAX when none.
  size_t nearest(const Vec3& q, double max_dist = std::numeric_limits<double>::infinity()) const {
    size_t best = SIZE_MAX;
    double best_d2 = max_dist * max_dist;
    if (!order_.empty()) nearest_rec(q, 0, order_.size(), 0, best, best_d2);
    return best;
  }

  /// k nearest points, sorted by (distance, index).
  std::vector<size_t> knn(const Vec3& q, size_t k) const {
    std::vector<std::pair<double, size_t>> heap;  // max-heap on (d2, -index order)
    if (!order_.empty()) knn_rec(q, 0, order_.size(), 0, k, heap);
    std::sort(heap.begin(), heap.end(), [](const auto& a, const auto& b) {
      return a.first != b.first ? a.first < b.first : a.second < b.second;
    });
    std::vector<size_t> out;
    out.reserve(heap.size());
    for (const auto& [d2, i] : heap) out.push_back(i);
    return out;
  }

 private:
  const std::vector<Vec3>& pts_;
  std::vector<size_t> order_;  // in-place kd ordering over point indices

  void build(size_t lo, size_t hi, int depth) {
    if (hi - lo <= 1) return;
    size_t mid = (lo + hi) / 2;
    int axis = depth % 3;
    std::nth_element(order_.begin() + lo, order_.begin() + mid, order_.begin() + hi,
                     [&](size_t a, size_t b) {
                       double pa = pts_[a][axis], pb = pts_[b][axis];
                       return pa != pb ? pa < pb : a < b;
                     });
    build(lo, mid, depth + 1);
    build(mid + 1, hi, depth + 1);
  }

  static bool better(double d2, size_t idx, double best_d2, size_t best) {
    if (d2 != best_d2) return d2 < best_d2;
    return idx < best;
  }

  void nearest_rec(const Vec3& q, size_t lo, size_t hi, int depth, size_t& best,
                   double& best_d2) const {
    if (lo >= hi) return;
    size_t mid = (lo + hi) / 2;
    size_t idx = order_[mid];
    double d2 = (pts_[idx] - q).squaredNorm();
    if (d2 < best_d2 || (d2 == best_d2 && idx < best)) {
      best_d2 = d2;
      best = idx;
    }
    int axis = depth % 3;
    double delta = q[axis] - pts_[idx][axis];
    size_t near_lo = delta < 0 ? lo : mid + 1, near_hi = delta < 0 ? mid : hi;
    size_t far_lo = delta < 0 ? mid + 1 : lo, far_hi = delta < 0 ? hi : mid;
    nearest_rec(q, near_lo, near_hi, depth + 1, best, best_d2);
    if (delta * delta <= best_d2) nearest_rec(q, far_lo, far_hi, depth + 1, best, best_d2);
  }

  void knn_rec(const Vec3& q, size_t lo, size_t hi, int depth, size_t k,
               std::vector<std::pair<double, size_t>>& heap) const {
    if (lo >= hi) return;
    size_t mid = (lo + hi) / 2;
    size_t idx = order_[mid];
    double d2 = (pts_[idx] - q).squaredNorm();
    auto worse = [](const std::pair<double, size_t>& a, const std::pair<double, size_t>& b) {
      // max-heap: the "largest" (worst) candidate at the top; ties broken so
      // the higher index is considered worse
      return a.first != b.first ? a.first < b.first : a.second < b.second;
    };
    if (heap.size() < k) {
      heap.emplace_back(d2, idx);
      std::push_heap(heap.begin(), heap.end(), worse);
    } else if (worse({d2, idx}, heap.front())) {
      std::pop_heap(heap.begin(), heap.end(), worse);
      heap.back() = {d2, idx};
      std::push_heap(heap.begin(), heap.end(), worse);
    }
    int axis = depth % 3;
    double delta = q[axis] - pts_[idx][axis];
    size_t near_lo = delta < 0 ? lo : mid + 1, near_hi = delta < 0 ? mid : hi;
    size_t far_lo = delta < 0 ? mid + 1 : lo, far_hi = delta < 0 ? hi : mid;
    knn_rec(q, near_lo, near_hi, depth + 1, k, heap);
    if (heap.size() < k || delta * delta <= heap.front().first)
      knn_rec(q, far_lo, far_hi, depth + 1, k, heap);
  }
};

// ---------------------------------------------------------------------------
// Normals

struct NormalField {
  std::vector<Vec3> normals;   // unit, oriented toward the viewpoint
  std::vector<uint8_t> valid;  // 0 when the neighborhood was degenerate
};

/// Smallest-eigenvector normal of each point's k-NN covariance, oriented
/// toward the viewpoint (camera origin by default). Rank-deficient
/// neighborhoods are flagged invalid rather than erroring.
inline NormalField estimate_normals(const std::vector<Vec3>& points, int k,
                                    const Vec3& viewpoint = Vec3::Zero(), int workers = 1) {
  if (points.size() < size_t(k) + 1)
    throw std::invalid_argument("estimate_normals: cloud smaller than k+1");
  KdTree tree(points);
  NormalField out;
  out.normals.assign(points.size(), Vec3::Zero());
  out.valid.assign(points.size(), 0);
  parallel_for(int(points.size()), workers, [&](int i) {
    auto nbrs = tree.knn(points[i], size_t(k) + 1);  // includes the point itself
    Vec3 mean = Vec3::Zero();
    for (size_t j : nbrs) mean += points[j];
    mean /= double(nbrs.size());
    Mat3 cov = Mat3::Zero();
    for (size_t j : nbrs) {
      Vec3 d = points[j] - mean;
      cov += d * d.transpose();
    }
    Eigen::SelfAdjointEigenSolver<Mat3> es(cov);
    // degenerate (collinear/coincident) when the mid eigenvalue vanishes
    if (es.eigenvalues()[1] <= 1e-12 * std::max(es.eigenvalues()[2], 1e-300)) return;
    Vec3 n = es.eigenvectors().col(0);
    if (n.dot(viewpoint - points[i]) < 0.0) n = -n;
    out.normals[i] = n.normalized();
    out.valid[i] = 1;
  });
  return out;
}

// ---------------------------------------------------------------------------
// Voxel downsampling

/// Indices of the surviving points: per occupied voxel, the original point
/// nearest that voxel's center (ties to the lowest index). Coordinates are
/// untouched. Returned indices are sorted ascending.
inline std::vector<size_t> voxel_nearest_indices(const std::vector<Vec3>& points,
                                                 double voxel_size) {
  if (!(voxel_size > 0.0)) throw std::invalid_argument("voxel size must be positive");
  struct Key {
    int64_t x, y, z;
    bool operator==(const Key& o) const { return x == o.x && y == o.y && z == o.z; }
  };
  struct KeyHash {
    size_t operator()(const Key& k) const {
      uint64_t h = 1469598103934665603ull;
      for (int64_t v : {k.x, k.y, k.z}) {
        h ^= uint64_t(v);
        h *= 1099511628211ull;
      }
      return size_t(h);
    }
  };
  std::unordered_map<Key, std::pair<double, size_t>, KeyHash> best;
  best.reserve(points.size());
  for (size_t i = 0; i < points.size(); ++i) {
    Key k{int64_t(std::floor(points[i].x() / voxel_size)),
          int64_t(std::floor(points[i].y() / voxel_size)),
          int64_t(std::floor(points[i].z() / voxel_size))};
    Vec3 center((k.x + 0.5) * voxel_size, (k.y + 0.5) * voxel_size, (k.z + 0.5) * voxel_size);
    double d2 = (points[i] - center).squaredNorm();
    auto [it, inserted] = best.try_emplace(k, d2, i);
    if (!inserted && (d2 < it->second.first ||
                      (d2 == it->second.first && i < it->second.second)))
      it->second = {d2, i};
  }
  std::vector<size_t> kept;
  kept.reserve(best.size());
  for (const auto& [k, v] : best) kept.push_back(v.second);
  std::sort(kept.begin(), kept.end());
  return kept;
}

inline std::vector<Vec3> voxel_nearest_downsample(const std::vector<Vec3>& points,
                                                  double voxel_size) {
  std::vector<Vec3> out;
  for (size_t i : voxel_nearest_indices(points, voxel_size)) out.push_back(points[i]);
  return out;
}

inline PointCloud voxel_nearest_downsample(const PointCloud& cloud, double voxel_size) {
  PointCloud out;
  for (size_t i : voxel_nearest_indices(cloud.points, voxel_size))
    out.push(cloud.points[i], cloud.camera_px[i], cloud.local_coord[i], cloud.global_px[i],
             cloud.has_global[i] != 0);
  return out;
}

// ---------------------------------------------------------------------------
// ICP

struct IcpConfig {
  int max_iters = 100;
  double rel_change = 5e-3;    // convergence criterion on relative RMSE change
  int normal_k = 20;
  double max_corr_dist = 5e-3; // meters
  uint64_t seed = 0;
  int workers = 1;

  void validate() const {
    if (max_iters <= 0 || !(rel_change > 0.0) || normal_k <= 0 || !(max_corr_dist > 0.0))
      throw std::invalid_argument("IcpConfig: all parameters must be positive");
  }
};

struct NoCorrespondences : std::runtime_error {
  NoCorrespondences() : std::runtime_error("ICP found no correspondences within range") {}
};

struct IcpResult {
  RigidTransform transform;   // maps source into the target frame
  double rmse = 0.0;          // final point-to-plane RMSE, meters
  int iterations = 0;
  size_t correspondences = 0;
  bool converged = false;
};

/// Point-to-plane ICP: nearest-neighbor correspondences within
/// max_corr_dist, closed-form small-angle update re-orthonormalized each
/// iteration, until the relative RMSE change drops below rel_change.
inline IcpResult icp_point_to_plane(const std::vector<Vec3>& source,
                                    const std::vector<Vec3>& target, const IcpConfig& cfg,
                                    const RigidTransform& init = {}) {
  cfg.validate();
  if (source.empty() || target.empty())
    throw std::invalid_argument("icp_point_to_plane: empty cloud");

  KdTree tree(target);
  NormalField nf = estimate_normals(target, std::min<int>(cfg.normal_k, int(target.size()) - 1),
                                    Vec3::Zero(), cfg.workers);

  IcpResult out;
  out.transform = init;
  double prev_rmse = std::numeric_limits<double>::infinity();

  std::vector<size_t> corr(source.size());
  for (int iter = 0; iter < cfg.max_iters; ++iter) {
    out.iterations = iter + 1;
    parallel_for(int(source.size()), cfg.workers, [&](int i) {
      Vec3 q = out.transform * source[i];
      size_t j = tree.nearest(q, cfg.max_corr_dist);
      corr[i] = (j != SIZE_MAX && nf.valid[j]) ? j : SIZE_MAX;
    });

    Eigen::Matrix<double, 6, 6> ata = Eigen::Matrix<double, 6, 6>::Zero();
    Vec6 atb = Vec6::Zero();
    double sq_sum = 0.0;
    size_t count = 0;
    for (size_t i = 0; i < source.size(); ++i) {
      if (corr[i] == SIZE_MAX) continue;
      Vec3 q = out.transform * source[i];
      const Vec3& n = nf.normals[corr[i]];
      double r = n.dot(target[corr[i]] - q);
      Vec6 a;
      a << q.cross(n), n;
      ata += a * a.transpose();
      atb += a * r;
      sq_sum += r * r;
      ++count;
    }
    if (count == 0) throw NoCorrespondences();
    out.correspondences = count;
    out.rmse = std::sqrt(sq_sum / double(count));

    if (std::abs(prev_rmse - out.rmse) / std::max(prev_rmse, 1e-30) < cfg.rel_change) {
      out.converged = true;
      break;
    }
    prev_rmse = out.rmse;

    Eigen::LDLT<Eigen::Matrix<double, 6, 6>> ldlt(ata +
                                                  1e-12 * Eigen::Matrix<double, 6, 6>::Identity());
    Vec6 x = ldlt.solve(atb);
    if (!x.allFinite()) break;
    Vec3 w = x.head<3>(), t = x.tail<3>();
    Mat3 lin = Mat3::Identity();
    lin(0, 1) = -w.z();
    lin(0, 2) = w.y();
    lin(1, 0) = w.z();
    lin(1, 2) = -w.x();
    lin(2, 0) = -w.y();
    lin(2, 1) = w.x();
    // project the linearized update back onto SO(3)
    Eigen::JacobiSVD<Mat3> svd(lin, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Mat3 dr = svd.matrixU() * svd.matrixV().transpose();
    if (dr.determinant() < 0.0) {
      Mat3 flip = Mat3::Identity();
      flip(2, 2) = -1.0;
      dr = svd.matrixU() * flip * svd.matrixV().transpose();
    }
    out.transform = compose({dr, t}, out.transform);
  }
  return out;
}

/// Chains relative transforms from a fixed initial pose; element 0 of the
/// result is the initial pose itself.
inline std::vector<RigidTransform> compose_trajectory(
    const std::vector<RigidTransform>& relatives, const RigidTransform& initial = {}) {
  std::vector<RigidTransform> out{initial};
  for (const auto& rel : relatives) out.push_back(compose(rel, out.back()));
  return out;
}

}  // namespace projref
