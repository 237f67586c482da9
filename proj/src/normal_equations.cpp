#include "ctcalib/normal_equations.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <Eigen/SparseCholesky>

namespace ctcalib {

namespace {
using SmallMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, 6, 6>;
}

ArrowNormalEquations::ArrowNormalEquations(int knot_count, int knot_dim,
                                           std::span<const int> border_knots,
                                           std::span<const int> global_sizes)
    : knot_count_(knot_count), knot_dim_(knot_dim) {
  if (knot_dim < 1 || knot_dim > 6) throw std::invalid_argument("knot block size must be 1..6");
  size_.assign(knot_count, knot_dim);
  border_.assign(knot_count, 0);
  for (int k : border_knots) {
    if (k >= 0 && k < knot_count) border_[k] = 1;
  }
  for (int s : global_sizes) {
    if (s < 1 || s > 6) throw std::invalid_argument("global block size must be 1..6");
    size_.push_back(s);
    border_.push_back(1);
  }
  fixed_.assign(size_.size(), 0);
}

void ArrowNormalEquations::set_fixed(int id) {
  if (layout_done_) throw std::logic_error("set_fixed after accumulation started");
  fixed_.at(id) = 1;
}

void ArrowNormalEquations::finalize_layout() {
  if (layout_done_) return;
  const int nb = block_count();
  col_.assign(nb, -1);
  full_off_.assign(nb, 0);
  band_index_.assign(knot_count_, -1);
  band_knots_.clear();
  full_size_ = 0;
  for (int id = 0; id < nb; ++id) {
    full_off_[id] = full_size_;
    full_size_ += size_[id];
  }
  int c = 0;
  for (int k = 0; k < knot_count_; ++k) {
    if (border_[k] || fixed_[k]) continue;
    band_index_[k] = static_cast<int>(band_knots_.size());
    band_knots_.push_back(k);
    col_[k] = c;
    c += size_[k];
  }
  band_dim_ = c;
  for (int id = 0; id < nb; ++id) {
    if (!border_[id] || fixed_[id]) continue;
    col_[id] = c;
    c += size_[id];
  }
  dim_ = c;
  border_dim_ = dim_ - band_dim_;
  band_.assign(band_knots_.size(), {});
  for (auto& row : band_) {
    for (auto& b : row) b.setZero();
  }
  band_border_.assign(band_knots_.size(), Eigen::MatrixXd::Zero(knot_dim_, border_dim_));
  corner_ = Eigen::MatrixXd::Zero(border_dim_, border_dim_);
  g_ = Eigen::VectorXd::Zero(dim_);
  layout_done_ = true;
}

void ArrowNormalEquations::clear() {
  finalize_layout();
  for (auto& row : band_) {
    for (auto& b : row) b.setZero();
  }
  for (auto& m : band_border_) m.setZero();
  corner_.setZero();
  g_.setZero();
  cost_ = 0.0;
  residuals_ = 0;
}

void ArrowNormalEquations::accumulate(int a, int b, const Eigen::Ref<const Eigen::MatrixXd>& h) {
  const bool a_band = a < knot_count_ && !border_[a];
  const bool b_band = b < knot_count_ && !border_[b];
  if (a_band && b_band) {
    if (a == b) {
      band_[band_index_[a]][0].topLeftCorner(size_[a], size_[a]) += h;
      return;
    }
    const int lo = std::min(a, b);
    const int hi = std::max(a, b);
    if (hi - lo > 3) throw std::logic_error("residual couples band knots more than 3 apart");
    auto blk = band_[band_index_[lo]][hi - lo].topLeftCorner(size_[lo], size_[hi]);
    if (a < b) {
      blk += h;
    } else {
      blk += h.transpose();
    }
    return;
  }
  if (a_band) {
    band_border_[band_index_[a]].middleCols(col_[b] - band_dim_, size_[b]) += h;
    return;
  }
  if (b_band) {
    band_border_[band_index_[b]].middleCols(col_[a] - band_dim_, size_[a]) += h.transpose();
    return;
  }
  const int ra = col_[a] - band_dim_;
  const int rb = col_[b] - band_dim_;
  corner_.block(ra, rb, size_[a], size_[b]) += h;
  if (a != b) corner_.block(rb, ra, size_[b], size_[a]) += h.transpose();
}

void ArrowNormalEquations::add(std::span<const int> ids, const Eigen::Ref<const Eigen::MatrixXd>& jac,
                               const Eigen::Ref<const Eigen::VectorXd>& r) {
  finalize_layout();
  cost_ += r.squaredNorm();
  ++residuals_;
  int cp = 0;
  for (std::size_t p = 0; p < ids.size(); ++p) {
    const int a = ids[p];
    const int sa = size_[a];
    if (!fixed_[a]) {
      const auto ja = jac.middleCols(cp, sa);
      g_.segment(col_[a], sa).noalias() += ja.transpose() * r;
      int cq = cp;
      for (std::size_t q = p; q < ids.size(); ++q) {
        const int b = ids[q];
        const int sb = size_[b];
        if (!fixed_[b]) {
          SmallMat h = ja.transpose() * jac.middleCols(cq, sb);
          if (q == p) {
            accumulate(a, a, h);
          } else if (a == b) {
            SmallMat sym = h + h.transpose();
            accumulate(a, a, sym);
          } else {
            accumulate(a, b, h);
          }
        }
        cq += sb;
      }
    }
    cp += sa;
  }
}

Eigen::VectorXd ArrowNormalEquations::gradient() const {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(full_size_);
  for (int id = 0; id < block_count(); ++id) {
    if (col_[id] >= 0) out.segment(full_off_[id], size_[id]) = g_.segment(col_[id], size_[id]);
  }
  return out;
}

Eigen::SparseMatrix<double> ArrowNormalEquations::hessian() const {
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(band_knots_.size() * (4 * 36 + knot_dim_ * border_dim_) +
               static_cast<std::size_t>(border_dim_ * border_dim_));
  for (std::size_t ai = 0; ai < band_knots_.size(); ++ai) {
    const int ka = band_knots_[ai];
    const int ca = col_[ka];
    const int sa = size_[ka];
    for (int k = 0; k < 4; ++k) {
      const int kb = ka + k;
      if (kb >= knot_count_ || band_index_[kb] < 0) continue;
      const int cb = col_[kb];
      const auto& blk = band_[ai][k];
      for (int i = 0; i < sa; ++i) {
        for (int j = (k == 0 ? i : 0); j < size_[kb]; ++j) {
          if (blk(i, j) != 0.0 || (k == 0 && i == j)) trip.emplace_back(ca + i, cb + j, blk(i, j));
        }
      }
    }
    const auto& bb = band_border_[ai];
    for (int i = 0; i < sa; ++i) {
      for (int j = 0; j < border_dim_; ++j) {
        if (bb(i, j) != 0.0) trip.emplace_back(ca + i, band_dim_ + j, bb(i, j));
      }
    }
  }
  for (int i = 0; i < border_dim_; ++i) {
    for (int j = i; j < border_dim_; ++j) {
      if (corner_(i, j) != 0.0 || i == j) trip.emplace_back(band_dim_ + i, band_dim_ + j, corner_(i, j));
    }
  }
  Eigen::SparseMatrix<double> h(dim_, dim_);
  h.setFromTriplets(trip.begin(), trip.end());
  return h;
}

std::pair<int, int> ArrowNormalEquations::parameter_of(int col) const {
  for (int id = 0; id < block_count(); ++id) {
    if (col_[id] >= 0 && col >= col_[id] && col < col_[id] + size_[id]) return {id, col - col_[id]};
  }
  return {-1, -1};
}

namespace {
using Ldlt = Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>, Eigen::Upper,
                                  Eigen::NaturalOrdering<int>>;
}

bool ArrowNormalEquations::solve(double lambda, Eigen::VectorXd& step_full) const {
  Eigen::SparseMatrix<double> h = hessian();
  const Eigen::VectorXd diag = h.diagonal();
  const double floor = 1e-12 * std::max(diag.maxCoeff(), 1e-300);
  for (int i = 0; i < dim_; ++i) {
    h.coeffRef(i, i) = diag[i] + lambda * std::max(diag[i], floor);
  }
  Ldlt ldlt(h);
  if (ldlt.info() != Eigen::Success) return false;
  const Eigen::VectorXd x = ldlt.solve(-g_);
  if (ldlt.info() != Eigen::Success || !x.allFinite()) return false;
  step_full = Eigen::VectorXd::Zero(full_size_);
  for (int id = 0; id < block_count(); ++id) {
    if (col_[id] >= 0) step_full.segment(full_off_[id], size_[id]) = x.segment(col_[id], size_[id]);
  }
  return true;
}

std::vector<int> ArrowNormalEquations::deficient_columns(double tol) const {
  Eigen::SparseMatrix<double> h = hessian();
  const Eigen::VectorXd diag = h.diagonal();
  const double scale = std::max(diag.maxCoeff(), 1e-300);
  std::vector<int> bad;
  Eigen::VectorXd s(dim_);
  for (int i = 0; i < dim_; ++i) {
    // A column with (numerically) zero norm is unconstrained outright.
    if (diag[i] <= 1e-14 * scale) {
      bad.push_back(i);
      s[i] = 0.0;
    } else {
      s[i] = 1.0 / std::sqrt(diag[i]);
    }
  }
  if (!bad.empty()) return bad;
  Eigen::SparseMatrix<double> scaled = s.asDiagonal() * h * s.asDiagonal();
  Ldlt ldlt(scaled);
  const Eigen::VectorXd d = ldlt.vectorD();
  for (int i = 0; i < dim_; ++i) {
    if (!(d[i] > tol)) bad.push_back(i);
  }
  return bad;
}

}  // namespace ctcalib
