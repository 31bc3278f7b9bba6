#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <Eigen/Dense>

namespace lmb {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

/// Ordered set of n landmarks in d = 2 or 3 dimensions. Row i is landmark i.
///
/// The stacked state used by the processes is landmark-major:
/// (x_1^1, ..., x_1^d, x_2^1, ...).
class LandmarkShape {
 public:
  explicit LandmarkShape(Matrix points);

  static LandmarkShape from_flat(const Vector& stacked, Index dim);

  Index size() const { return points_.rows(); }
  Index dim() const { return points_.cols(); }
  Index state_dim() const { return points_.size(); }
  const Matrix& points() const { return points_; }
  Vector flatten() const;

 private:
  Matrix points_;
};

/// Scalar Gaussian kernel k(x, y) = sqrt(v) exp(-|x - y|^2 / (2 l^2)).
/// sqrt(v) makes sigma * sigma^T proportional to v.
struct KernelSpec {
  double variance = 1.0;
  double lengthscale = 1.0;

  void validate() const;
  KernelSpec with_variance(double v) const { return {v, lengthscale}; }
};

double kernel_eval(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& y,
                   const KernelSpec& spec);

/// (n d) x (n d) block matrix with blocks k(x_i, x_j) I_d.
Matrix build_sigma(const LandmarkShape& shape, const KernelSpec& spec);

/// Same as above on a stacked state of landmarks with `dim` coordinates each.
/// Accepts any dim >= 1 so one-dimensional test processes can share the code.
Matrix build_sigma(const Eigen::Ref<const Vector>& stacked, Index dim, const KernelSpec& spec);

/// Ordinary Procrustes: translate, scale and rotate `target` onto `reference`
/// (no reflections). Throws AlignmentError when `target` is degenerate.
LandmarkShape procrustes_align(const LandmarkShape& reference, const LandmarkShape& target);

/// Sum of squared landmark distances.
double procrustes_residual(const LandmarkShape& a, const LandmarkShape& b);

/// n points equally spaced by arc length along the closed polyline (rows are
/// vertices), starting at the first vertex.
LandmarkShape resample_outline(const Matrix& polyline, Index n);

enum class SynthKind { circle, ellipse, blob };

struct SynthParams {
  double radius = 1.0;      // circle, blob
  double semi_axis_x = 2.0; // ellipse
  double semi_axis_y = 1.0; // ellipse
  double perturbation = 0.1;  // blob: relative amplitude of the radial wobble
  int harmonics = 3;          // blob: frequencies 2 .. harmonics + 1
};

LandmarkShape synth_shape(SynthKind kind, Index n, const SynthParams& params, std::uint64_t seed);

SynthKind parse_synth_kind(const std::string& name);

/// Landmark CSV: one landmark per row, columns x,y[,z], optional header line.
LandmarkShape read_landmarks_csv(const std::filesystem::path& path);
/// Polyline rows for resampling use the same format.
Matrix read_points_csv(const std::filesystem::path& path);
void write_landmarks_csv(const LandmarkShape& shape, const std::filesystem::path& path);

}  // namespace lmb
