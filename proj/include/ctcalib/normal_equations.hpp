#pragma once

// Normal equations for B-spline least squares.
//
// Variables come in blocks. Knot blocks (one per control point, all of the
// same size) interact only with knots at most three indices away, which gives
// a block-banded matrix. A few knot blocks may be declared "border" blocks,
// and extra global blocks (extrinsics, biases, gravity) are always border
// blocks: those may couple with anything. Border columns are ordered last, so
// a sparse LDL^T with natural ordering has no fill outside band + border.

#include <array>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SparseCore>

namespace ctcalib {

class ArrowNormalEquations {
 public:
  using Block66 = Eigen::Matrix<double, 6, 6>;

  /// Block ids: knots are 0 .. knot_count-1, globals follow in order.
  ArrowNormalEquations(int knot_count, int knot_dim, std::span<const int> border_knots,
                       std::span<const int> global_sizes);

  int knot_count() const { return knot_count_; }
  int block_count() const { return static_cast<int>(size_.size()); }
  int block_size(int id) const { return size_[id]; }
  int global_id(int g) const { return knot_count_ + g; }

  /// Excluded blocks keep a zero update. Must be called before the first add().
  void set_fixed(int id);
  bool fixed(int id) const { return fixed_[id] != 0; }

  /// Free parameter count.
  int dimension() const { return dim_; }

  /// Adds a whitened residual block r (m) with Jacobian J (m x sum of block sizes),
  /// its columns grouped by `ids` in order.
  void add(std::span<const int> ids, const Eigen::Ref<const Eigen::MatrixXd>& jac,
           const Eigen::Ref<const Eigen::VectorXd>& r);

  void clear();

  double cost() const { return cost_; }
  std::size_t residual_count() const { return residuals_; }

  /// J^T r scattered to the full block layout (fixed blocks zero).
  Eigen::VectorXd gradient() const;

  /// Sparse upper triangle of J^T J over free parameters.
  Eigen::SparseMatrix<double> hessian() const;

  /// Free-parameter index -> (block id, component).
  std::pair<int, int> parameter_of(int col) const;

  /// Solves (H + lambda * diag(H)) x = -g and scatters x to the full block
  /// layout. Returns false if the factorization fails.
  bool solve(double lambda, Eigen::VectorXd& step_full) const;

  /// Columns whose Jacobi-scaled LDL^T pivot is below `tol`; empty when
  /// the undamped system is well posed.
  std::vector<int> deficient_columns(double tol) const;

  /// Offset of block `id` in the full layout (sum of block sizes before it).
  int full_offset(int id) const { return full_off_[id]; }
  int full_size() const { return full_size_; }

 private:
  void finalize_layout();
  void accumulate(int a, int b, const Eigen::Ref<const Eigen::MatrixXd>& h);

  int knot_count_;
  int knot_dim_;
  std::vector<int> size_;
  std::vector<char> border_;
  std::vector<char> fixed_;
  bool layout_done_ = false;

  // Free layout: band columns first, border columns last.
  std::vector<int> band_index_;   // knot -> compact band index, -1 if border/fixed
  std::vector<int> col_;          // block -> first free column, -1 if fixed
  std::vector<int> full_off_;
  int full_size_ = 0;
  int band_dim_ = 0;
  int border_dim_ = 0;
  int dim_ = 0;
  std::vector<int> band_knots_;   // compact band index -> knot

  std::vector<std::array<Block66, 4>> band_;  // band_[a][k] = H(a, a + k)
  std::vector<Eigen::MatrixXd> band_border_;  // knot_dim x border_dim
  Eigen::MatrixXd corner_;                    // border_dim x border_dim
  Eigen::VectorXd g_;                         // free layout
  double cost_ = 0.0;
  std::size_t residuals_ = 0;
};

}  // namespace ctcalib
