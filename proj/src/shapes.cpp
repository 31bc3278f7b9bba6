#include "lmbridge/shapes.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "lmbridge/error.hpp"
#include "text_io.hpp"

namespace lmb {

LandmarkShape::LandmarkShape(Matrix points) : points_(std::move(points)) {
  if (points_.rows() < 1) throw DomainError("landmark shape needs at least one landmark");
  if (points_.cols() != 2 && points_.cols() != 3)
    throw DomainError("landmark shape must be 2- or 3-dimensional, got d = " +
                      std::to_string(points_.cols()));
  if (!points_.allFinite()) throw DomainError("landmark coordinates must be finite");
}

LandmarkShape LandmarkShape::from_flat(const Vector& stacked, Index dim) {
  if (dim < 1 || stacked.size() % dim != 0)
    throw DomainError("stacked state length is not a multiple of the dimension");
  const Index n = stacked.size() / dim;
  Matrix points(n, dim);
  for (Index i = 0; i < n; ++i) points.row(i) = stacked.segment(i * dim, dim).transpose();
  return LandmarkShape(std::move(points));
}

Vector LandmarkShape::flatten() const {
  Vector out(points_.size());
  for (Index i = 0; i < points_.rows(); ++i) out.segment(i * dim(), dim()) = points_.row(i).transpose();
  return out;
}

void KernelSpec::validate() const {
  if (!(variance > 0.0) || !std::isfinite(variance))
    throw DomainError("kernel variance must be positive and finite");
  if (!(lengthscale > 0.0) || !std::isfinite(lengthscale))
    throw DomainError("kernel lengthscale must be positive and finite");
}

double kernel_eval(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& y,
                   const KernelSpec& spec) {
  if (x.size() != y.size()) throw DomainError("kernel_eval: points differ in dimension");
  if (!x.allFinite() || !y.allFinite()) throw DomainError("kernel_eval: non-finite input");
  const double r2 = (x - y).squaredNorm();
  return std::sqrt(spec.variance) * std::exp(-r2 / (2.0 * spec.lengthscale * spec.lengthscale));
}

Matrix build_sigma(const Eigen::Ref<const Vector>& stacked, Index dim, const KernelSpec& spec) {
  spec.validate();
  if (dim < 1 || stacked.size() % dim != 0 || stacked.size() == 0)
    throw DomainError("build_sigma: state length is not a positive multiple of the dimension");
  if (!stacked.allFinite()) throw DomainError("build_sigma: non-finite state");
  const Index n = stacked.size() / dim;
  const double amplitude = std::sqrt(spec.variance);
  const double inv_two_l2 = 1.0 / (2.0 * spec.lengthscale * spec.lengthscale);
  Matrix sigma = Matrix::Zero(n * dim, n * dim);
  for (Index i = 0; i < n; ++i) {
    for (Index j = i; j < n; ++j) {
      const double r2 = (stacked.segment(i * dim, dim) - stacked.segment(j * dim, dim)).squaredNorm();
      const double k = amplitude * std::exp(-r2 * inv_two_l2);
      for (Index c = 0; c < dim; ++c) {
        sigma(i * dim + c, j * dim + c) = k;
        sigma(j * dim + c, i * dim + c) = k;
      }
    }
  }
  return sigma;
}

Matrix build_sigma(const LandmarkShape& shape, const KernelSpec& spec) {
  return build_sigma(shape.flatten(), shape.dim(), spec);
}

double procrustes_residual(const LandmarkShape& a, const LandmarkShape& b) {
  if (a.size() != b.size() || a.dim() != b.dim())
    throw DomainError("procrustes_residual: shapes differ in size");
  return (a.points() - b.points()).squaredNorm();
}

LandmarkShape procrustes_align(const LandmarkShape& reference, const LandmarkShape& target) {
  if (reference.size() != target.size() || reference.dim() != target.dim())
    throw DomainError("procrustes_align: shapes differ in landmark count or dimension");

  const Eigen::RowVectorXd ref_centroid = reference.points().colwise().mean();
  const Eigen::RowVectorXd tgt_centroid = target.points().colwise().mean();
  const Matrix a = reference.points().rowwise() - ref_centroid;
  const Matrix b = target.points().rowwise() - tgt_centroid;

  const double b_norm2 = b.squaredNorm();
  if (b_norm2 <= 1e-24 * std::max(1.0, tgt_centroid.squaredNorm()))
    throw AlignmentError("procrustes_align: target landmarks are all coincident");

  // min_R,s |s b R - a|^2 with R a rotation (det R = +1).
  const Matrix cross = b.transpose() * a;
  Eigen::JacobiSVD<Matrix> svd(cross, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Vector signs = Vector::Ones(cross.rows());
  if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0) signs(signs.size() - 1) = -1.0;
  const Matrix rotation = svd.matrixU() * signs.asDiagonal() * svd.matrixV().transpose();
  const double scale = svd.singularValues().dot(signs) / b_norm2;

  Matrix aligned = (scale * b * rotation).rowwise() + ref_centroid;
  return LandmarkShape(std::move(aligned));
}

LandmarkShape resample_outline(const Matrix& polyline, Index n) {
  if (n < 1) throw DomainError("resample_outline: need at least one output point");
  const Index m = polyline.rows();
  if (m < 2) throw DomainError("resample_outline: polyline needs at least two points");
  if (!polyline.allFinite()) throw DomainError("resample_outline: non-finite vertex");

  Vector segment(m);
  for (Index i = 0; i < m; ++i) segment(i) = (polyline.row((i + 1) % m) - polyline.row(i)).norm();
  const double total = segment.sum();
  if (!(total > 0.0)) throw DomainError("resample_outline: polyline has zero arc length");

  Matrix out(n, polyline.cols());
  Index seg = 0;
  double seg_start = 0.0;
  for (Index k = 0; k < n; ++k) {
    const double s = total * static_cast<double>(k) / static_cast<double>(n);
    while (seg < m - 1 && seg_start + segment(seg) <= s) {
      seg_start += segment(seg);
      ++seg;
    }
    const double frac = segment(seg) > 0.0 ? (s - seg_start) / segment(seg) : 0.0;
    out.row(k) = polyline.row(seg) + frac * (polyline.row((seg + 1) % m) - polyline.row(seg));
  }
  return LandmarkShape(std::move(out));
}

LandmarkShape synth_shape(SynthKind kind, Index n, const SynthParams& params, std::uint64_t seed) {
  if (n < 3) throw DomainError("synth_shape: need at least three landmarks");
  Matrix pts(n, 2);
  const double two_pi = 2.0 * std::numbers::pi;

  Vector cos_coef, sin_coef;
  if (kind == SynthKind::blob) {
    if (params.harmonics < 1) throw DomainError("synth_shape: blob needs at least one harmonic");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    cos_coef.resize(params.harmonics);
    sin_coef.resize(params.harmonics);
    for (int h = 0; h < params.harmonics; ++h) {
      cos_coef(h) = normal(rng);
      sin_coef(h) = normal(rng);
    }
    // Keep the radius positive so the outline stays star-shaped.
    const double worst = (cos_coef.cwiseAbs() + sin_coef.cwiseAbs()).sum();
    if (params.perturbation * worst >= 0.9) {
      const double shrink = 0.9 / (params.perturbation * worst);
      cos_coef *= shrink;
      sin_coef *= shrink;
    }
  }

  for (Index k = 0; k < n; ++k) {
    const double theta = two_pi * static_cast<double>(k) / static_cast<double>(n);
    switch (kind) {
      case SynthKind::circle:
        pts(k, 0) = params.radius * std::cos(theta);
        pts(k, 1) = params.radius * std::sin(theta);
        break;
      case SynthKind::ellipse:
        pts(k, 0) = params.semi_axis_x * std::cos(theta);
        pts(k, 1) = params.semi_axis_y * std::sin(theta);
        break;
      case SynthKind::blob: {
        double wobble = 0.0;
        for (int h = 0; h < params.harmonics; ++h) {
          const double freq = h + 2.0;
          wobble += cos_coef(h) * std::cos(freq * theta) + sin_coef(h) * std::sin(freq * theta);
        }
        const double r = params.radius * (1.0 + params.perturbation * wobble);
        pts(k, 0) = r * std::cos(theta);
        pts(k, 1) = r * std::sin(theta);
        break;
      }
    }
  }
  return LandmarkShape(std::move(pts));
}

SynthKind parse_synth_kind(const std::string& name) {
  if (name == "circle") return SynthKind::circle;
  if (name == "ellipse") return SynthKind::ellipse;
  if (name == "blob") return SynthKind::blob;
  throw DomainError("unknown synthetic shape kind '" + name + "'");
}

Matrix read_points_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");

  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t line_no = 0;
  std::size_t columns = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto body = detail::trim(line);
    if (body.empty() || body.front() == '#') continue;
    const auto fields = detail::split(body, ',');
    std::vector<double> values(fields.size());
    bool numeric = true;
    for (std::size_t c = 0; c < fields.size(); ++c) numeric = numeric && detail::parse_number(fields[c], values[c]);
    if (!numeric) {
      if (rows.empty() && columns == 0) {  // header
        columns = fields.size();
        continue;
      }
      throw IoError(path.string() + ":" + std::to_string(line_no) + ": non-numeric field");
    }
    if (columns == 0) columns = values.size();
    if (values.size() != columns)
      throw IoError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                    std::to_string(columns) + " columns, got " + std::to_string(values.size()));
    rows.push_back(std::move(values));
  }
  if (rows.empty()) throw IoError("'" + path.string() + "' contains no points");

  Matrix pts(static_cast<Index>(rows.size()), static_cast<Index>(columns));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < columns; ++c) pts(static_cast<Index>(r), static_cast<Index>(c)) = rows[r][c];
  return pts;
}

LandmarkShape read_landmarks_csv(const std::filesystem::path& path) {
  Matrix pts = read_points_csv(path);
  if (pts.cols() != 2 && pts.cols() != 3)
    throw IoError("'" + path.string() + "': landmark files need 2 or 3 columns");
  return LandmarkShape(std::move(pts));
}

void write_landmarks_csv(const LandmarkShape& shape, const std::filesystem::path& path) {
  std::ostringstream out;
  out << (shape.dim() == 2 ? "x,y\n" : "x,y,z\n");
  for (Index i = 0; i < shape.size(); ++i) {
    for (Index c = 0; c < shape.dim(); ++c) {
      if (c) out << ',';
      out << detail::format_number(shape.points()(i, c));
    }
    out << '\n';
  }
  detail::write_text_file(path, out.str());
}

}  // namespace lmb
