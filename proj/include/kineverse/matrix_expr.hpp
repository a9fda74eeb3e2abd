#pragma once

#include <Eigen/Dense>
#include <set>
#include <utility>
#include <vector>

#include "kineverse/ext_expr.hpp"

namespace kineverse {

/// Dense matrix of expressions, row-major. Entries are ExtExpr so extended
/// gradients ride along through matrix algebra; plain symbolic matrices are
/// simply the case where no entry carries overrides.
class MatrixExpr {
public:
  MatrixExpr() : rows_(0), cols_(0) {}
  MatrixExpr(int rows, int cols) : rows_(rows), cols_(cols), entries_(size_t(rows) * cols) {}
  MatrixExpr(int rows, int cols, std::vector<ExtExpr> entries)
      : rows_(rows), cols_(cols), entries_(std::move(entries)) {
    if (entries_.size() != size_t(rows) * cols) throw Error("MatrixExpr: entry count mismatch");
  }

  static MatrixExpr identity(int n) {
    MatrixExpr m(n, n);
    for (int i = 0; i < n; ++i) m(i, i) = ExtExpr(1.0);
    return m;
  }

  static MatrixExpr constant(const Eigen::MatrixXd& v) {
    MatrixExpr m(int(v.rows()), int(v.cols()));
    for (int i = 0; i < v.rows(); ++i)
      for (int j = 0; j < v.cols(); ++j) m(i, j) = ExtExpr(v(i, j));
    return m;
  }

  int rows() const { return rows_; }
  int cols() const { return cols_; }

  const ExtExpr& operator()(int i, int j) const { return entries_.at(size_t(i) * cols_ + j); }
  ExtExpr& operator()(int i, int j) { return entries_.at(size_t(i) * cols_ + j); }

  const std::vector<ExtExpr>& entries() const { return entries_; }

  std::set<Variable> variables() const {
    std::set<Variable> vars;
    for (const auto& e : entries_) {
      auto v = e.expr().variables();
      vars.insert(v.begin(), v.end());
    }
    return vars;
  }

  Eigen::MatrixXd evaluate(const Assignment& q) const {
    Eigen::MatrixXd out(rows_, cols_);
    std::unordered_map<const detail::ExprNode*, double> memo;
    for (int i = 0; i < rows_; ++i)
      for (int j = 0; j < cols_; ++j)
        out(i, j) = ScalarExpr::eval_node((*this)(i, j).expr().node(), q, memo);
    return out;
  }

  MatrixExpr substitute(const Assignment& partial) const {
    MatrixExpr out(rows_, cols_);
    for (size_t i = 0; i < entries_.size(); ++i) out.entries_[i] = entries_[i].substitute(partial);
    return out;
  }

  MatrixExpr operator*(const MatrixExpr& other) const {
    if (cols_ != other.rows_) throw Error("MatrixExpr multiply: shape mismatch");
    MatrixExpr out(rows_, other.cols_);
    for (int i = 0; i < rows_; ++i)
      for (int j = 0; j < other.cols_; ++j) {
        ExtExpr sum(0.0);
        for (int k = 0; k < cols_; ++k) sum = sum + (*this)(i, k) * other(k, j);
        out(i, j) = std::move(sum);
      }
    return out;
  }

  MatrixExpr operator+(const MatrixExpr& other) const {
    if (rows_ != other.rows_ || cols_ != other.cols_) throw Error("MatrixExpr add: shape mismatch");
    MatrixExpr out(rows_, cols_);
    for (size_t i = 0; i < entries_.size(); ++i) out.entries_[i] = entries_[i] + other.entries_[i];
    return out;
  }

  MatrixExpr block(int i0, int j0, int r, int c) const {
    MatrixExpr out(r, c);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) out(i, j) = (*this)(i0 + i, j0 + j);
    return out;
  }

  bool operator==(const MatrixExpr& other) const {
    if (rows_ != other.rows_ || cols_ != other.cols_) return false;
    for (size_t i = 0; i < entries_.size(); ++i)
      if (!(entries_[i] == other.entries_[i])) return false;
    return true;
  }

private:
  int rows_, cols_;
  std::vector<ExtExpr> entries_;
};

/// Translation part (3x1) of a homogeneous transform.
inline MatrixExpr position_of(const MatrixExpr& t) {
  if (t.rows() != 4 || t.cols() != 4) throw Error("position_of expects a 4x4 transform");
  return t.block(0, 3, 3, 1);
}

/// Rotation block (3x3) of a homogeneous transform.
inline MatrixExpr rotation_of(const MatrixExpr& t) {
  if (t.rows() != 4 || t.cols() != 4) throw Error("rotation_of expects a 4x4 transform");
  return t.block(0, 0, 3, 3);
}

inline MatrixExpr translation(const ExtExpr& x, const ExtExpr& y, const ExtExpr& z) {
  MatrixExpr t = MatrixExpr::identity(4);
  t(0, 3) = x;
  t(1, 3) = y;
  t(2, 3) = z;
  return t;
}

/// Right-handed rotation about a unit axis (Rodrigues), as a 4x4 transform.
inline MatrixExpr rotation(const ExtExpr& ax, const ExtExpr& ay, const ExtExpr& az,
                           const ExtExpr& angle) {
  const ExtExpr s = sin(angle);
  const ExtExpr c = cos(angle);
  const ExtExpr ic = ExtExpr(1.0) - c;
  MatrixExpr t = MatrixExpr::identity(4);
  t(0, 0) = c + ax * ax * ic;
  t(0, 1) = ax * ay * ic - az * s;
  t(0, 2) = ax * az * ic + ay * s;
  t(1, 0) = ay * ax * ic + az * s;
  t(1, 1) = c + ay * ay * ic;
  t(1, 2) = ay * az * ic - ax * s;
  t(2, 0) = az * ax * ic - ay * s;
  t(2, 1) = az * ay * ic + ax * s;
  t(2, 2) = c + az * az * ic;
  return t;
}

/// Constant-axis rotation. The Rodrigues coefficients are folded numerically
/// so entries the axis fully determines (e.g. the axis diagonal) come out
/// constant instead of as expressions that merely evaluate to a constant.
inline MatrixExpr rotation(const Eigen::Vector3d& axis, const ExtExpr& angle) {
  const double n = axis.norm();
  if (n <= 1e-9) throw Error("rotation: axis norm is (near) zero");
  const Eigen::Vector3d u = axis / n;
  const ExtExpr s = sin(angle);
  const ExtExpr c = cos(angle);
  const Eigen::Matrix3d outer = u * u.transpose();
  Eigen::Matrix3d skew;
  skew << 0, -u.z(), u.y(), u.z(), 0, -u.x(), -u.y(), u.x(), 0;
  MatrixExpr t = MatrixExpr::identity(4);
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      const double in_cos = (i == j ? 1.0 : 0.0) - outer(i, j);
      ExtExpr e = ExtExpr(in_cos) * c + ExtExpr(outer(i, j));
      if (skew(i, j) == -1.0)
        e = e - s;
      else if (skew(i, j) != 0.0)
        e = e + ExtExpr(skew(i, j)) * s;
      t(i, j) = std::move(e);
    }
  }
  return t;
}

/// Fixed-axis XYZ (roll about x, then pitch about y, then yaw about z) Euler
/// convention: R = Rz(yaw) * Ry(pitch) * Rx(roll).
inline MatrixExpr rotation_rpy(const ExtExpr& roll, const ExtExpr& pitch, const ExtExpr& yaw) {
  return rotation(Eigen::Vector3d::UnitZ(), yaw) * rotation(Eigen::Vector3d::UnitY(), pitch) *
         rotation(Eigen::Vector3d::UnitX(), roll);
}

inline MatrixExpr transform_from(const Eigen::Matrix4d& m) { return MatrixExpr::constant(m); }

/// World position (3x1) of a body-local point under a 4x4 transform.
inline MatrixExpr transform_point(const MatrixExpr& t, const Eigen::Vector3d& local) {
  if (t.rows() != 4 || t.cols() != 4) throw Error("transform_point expects a 4x4 transform");
  MatrixExpr out(3, 1);
  for (int i = 0; i < 3; ++i) {
    ExtExpr sum = t(i, 3);
    for (int k = 0; k < 3; ++k) sum = sum + t(i, k) * ExtExpr(local[k]);
    out(i, 0) = std::move(sum);
  }
  return out;
}

/// Extended-gradient Jacobian: entry (i, j) is the gradient entry of rows[i]
/// for the derivative of vars[j].
inline MatrixExpr jacobian(const std::vector<ExtExpr>& rows, const std::vector<Variable>& vars) {
  MatrixExpr out(int(rows.size()), int(vars.size()));
  for (size_t i = 0; i < rows.size(); ++i)
    for (size_t j = 0; j < vars.size(); ++j)
      out(int(i), int(j)) = ExtExpr(rows[i].gradient_entry(vars[j].derivative()));
  return out;
}

inline MatrixExpr jacobian(const MatrixExpr& column, const std::vector<Variable>& vars) {
  if (column.cols() != 1) throw Error("jacobian expects a column matrix");
  std::vector<ExtExpr> rows;
  rows.reserve(size_t(column.rows()));
  for (int i = 0; i < column.rows(); ++i) rows.push_back(column(i, 0));
  return jacobian(rows, vars);
}

}  // namespace kineverse
