#pragma once

// Finite-dimensional Hilbert-space arithmetic over tensor-product signatures.
//
// Operators are stored sparse (row-major) because the cascaded models are
// dominated by ladder and projector terms; dense() materializes a copy for
// spectral checks on small systems.

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <unsupported/Eigen/KroneckerProduct>

#include <cmath>
#include <complex>
#include <cstdint>
#include <initializer_list>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "qtraj/error.hpp"
#include "qtraj/log.hpp"

namespace qtraj {

using Complex = std::complex<double>;

class Dims {
 public:
  Dims() = default;

  explicit Dims(std::vector<int> sizes) : sizes_(std::move(sizes)) {
    total_ = 1;
    for (int d : sizes_) {
      if (d < 1) fail(ErrorKind::invalid_dimension, "subsystem dimension must be >= 1");
      total_ *= d;
    }
  }

  Dims(std::initializer_list<int> sizes) : Dims(std::vector<int>(sizes)) {}

  int total() const { return total_; }
  int count() const { return static_cast<int>(sizes_.size()); }
  int operator[](int slot) const { return sizes_.at(static_cast<std::size_t>(slot)); }
  const std::vector<int>& sizes() const { return sizes_; }

  friend bool operator==(const Dims& a, const Dims& b) { return a.sizes_ == b.sizes_; }
  friend bool operator!=(const Dims& a, const Dims& b) { return !(a == b); }

 private:
  std::vector<int> sizes_;
  int total_ = 1;
};

inline std::string to_string(const Dims& dims) {
  std::string s = "[";
  for (int i = 0; i < dims.count(); ++i) {
    if (i) s += ",";
    s += std::to_string(dims[i]);
  }
  return s + "]";
}

template <typename Scalar>
class BasicOperator {
 public:
  using SparseMatrix = Eigen::SparseMatrix<Scalar, Eigen::RowMajor>;
  using DenseMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using RealScalar = typename Eigen::NumTraits<Scalar>::Real;

  BasicOperator() = default;

  BasicOperator(Dims dims, SparseMatrix matrix) : dims_(std::move(dims)), matrix_(std::move(matrix)) {
    if (matrix_.rows() != dims_.total() || matrix_.cols() != dims_.total())
      fail(ErrorKind::signature, "operator side " + std::to_string(matrix_.rows()) + "x" +
                                     std::to_string(matrix_.cols()) + " does not match dims " +
                                     to_string(dims_));
    matrix_.makeCompressed();
  }

  BasicOperator(Dims dims, const DenseMatrix& dense)
      : BasicOperator(std::move(dims), SparseMatrix(dense.sparseView())) {}

  static BasicOperator identity(const Dims& dims) {
    SparseMatrix m(dims.total(), dims.total());
    m.setIdentity();
    return {dims, std::move(m)};
  }

  static BasicOperator zero(const Dims& dims) { return {dims, SparseMatrix(dims.total(), dims.total())}; }

  const Dims& dims() const { return dims_; }
  const SparseMatrix& matrix() const { return matrix_; }
  DenseMatrix dense() const { return DenseMatrix(matrix_); }
  Eigen::Index side() const { return matrix_.rows(); }
  Eigen::Index nonzeros() const { return matrix_.nonZeros(); }

  BasicOperator adjoint() const { return {dims_, SparseMatrix(matrix_.adjoint())}; }

  /// Drops stored entries with magnitude <= tol (cancellations leave explicit zeros).
  BasicOperator pruned(RealScalar tol = 0) const {
    SparseMatrix m = matrix_;
    m.prune([tol](Eigen::Index, Eigen::Index, const Scalar& v) { return std::abs(v) > tol; });
    return {dims_, std::move(m)};
  }

  BasicOperator& operator+=(const BasicOperator& o) {
    check_same(o);
    matrix_ += o.matrix_;
    return *this;
  }
  BasicOperator& operator-=(const BasicOperator& o) {
    check_same(o);
    matrix_ -= o.matrix_;
    return *this;
  }
  BasicOperator& operator*=(const Scalar& s) {
    matrix_ *= s;
    return *this;
  }

  friend BasicOperator operator+(BasicOperator a, const BasicOperator& b) { return a += b; }
  friend BasicOperator operator-(BasicOperator a, const BasicOperator& b) { return a -= b; }
  friend BasicOperator operator-(BasicOperator a) { return a *= Scalar(-1); }
  friend BasicOperator operator*(BasicOperator a, const Scalar& s) { return a *= s; }
  friend BasicOperator operator*(const Scalar& s, BasicOperator a) { return a *= s; }
  friend BasicOperator operator*(const BasicOperator& a, const BasicOperator& b) {
    a.check_same(b);
    return {a.dims_, SparseMatrix(a.matrix_ * b.matrix_)};
  }

 private:
  void check_same(const BasicOperator& o) const {
    if (dims_ != o.dims_)
      fail(ErrorKind::signature, "operator dims " + to_string(dims_) + " vs " + to_string(o.dims_));
  }

  Dims dims_;
  SparseMatrix matrix_;
};

using Operator = BasicOperator<Complex>;

/// Truncated bosonic lowering operator, a|n> = sqrt(n)|n-1>.
template <typename Scalar = Complex>
BasicOperator<Scalar> annihilation(int d) {
  if (d < 2) fail(ErrorKind::invalid_dimension, "annihilation needs d >= 2, got " + std::to_string(d));
  typename BasicOperator<Scalar>::SparseMatrix m(d, d);
  m.reserve(Eigen::VectorXi::Constant(d, 1));
  for (int n = 0; n + 1 < d; ++n) m.insert(n, n + 1) = Scalar(std::sqrt(double(n + 1)));
  return {Dims{d}, std::move(m)};
}

/// |i><j| on a d-level system.
template <typename Scalar = Complex>
BasicOperator<Scalar> transition(int i, int j, int d = 3) {
  if (d < 1 || i < 0 || j < 0 || i >= d || j >= d)
    fail(ErrorKind::invalid_level, "transition(" + std::to_string(i) + "," + std::to_string(j) +
                                       ") out of range for d=" + std::to_string(d));
  typename BasicOperator<Scalar>::SparseMatrix m(d, d);
  m.insert(i, j) = Scalar(1);
  return {Dims{d}, std::move(m)};
}

template <typename Scalar>
BasicOperator<Scalar> kron(const BasicOperator<Scalar>& a, const BasicOperator<Scalar>& b) {
  std::vector<int> sizes = a.dims().sizes();
  sizes.insert(sizes.end(), b.dims().sizes().begin(), b.dims().sizes().end());
  typename BasicOperator<Scalar>::SparseMatrix m = Eigen::kroneckerProduct(a.matrix(), b.matrix());
  return {Dims(std::move(sizes)), std::move(m)};
}

/// identity ⊗ ... ⊗ op ⊗ ... ⊗ identity with op at `slot`.
template <typename Scalar>
BasicOperator<Scalar> embed(const BasicOperator<Scalar>& op, int slot, const Dims& dims) {
  if (slot < 0 || slot >= dims.count())
    fail(ErrorKind::signature, "slot " + std::to_string(slot) + " out of range for " + to_string(dims));
  if (op.side() != dims[slot])
    fail(ErrorKind::signature, "operator side " + std::to_string(op.side()) + " does not fit slot " +
                                   std::to_string(slot) + " of " + to_string(dims));
  int before = 1, after = 1;
  for (int s = 0; s < slot; ++s) before *= dims[s];
  for (int s = slot + 1; s < dims.count(); ++s) after *= dims[s];
  using Sparse = typename BasicOperator<Scalar>::SparseMatrix;
  Sparse left(before, before), right(after, after);
  left.setIdentity();
  right.setIdentity();
  Sparse tmp = Eigen::kroneckerProduct(left, op.matrix());
  Sparse m = Eigen::kroneckerProduct(tmp, right);
  return {dims, std::move(m)};
}

template <typename Scalar>
BasicOperator<Scalar> commutator(const BasicOperator<Scalar>& a, const BasicOperator<Scalar>& b) {
  return a * b - b * a;
}

template <typename Scalar>
typename BasicOperator<Scalar>::RealScalar max_abs_entry(const BasicOperator<Scalar>& op) {
  typename BasicOperator<Scalar>::RealScalar m = 0;
  const auto& mat = op.matrix();
  for (Eigen::Index k = 0; k < mat.outerSize(); ++k)
    for (typename BasicOperator<Scalar>::SparseMatrix::InnerIterator it(mat, k); it; ++it)
      m = std::max(m, std::abs(it.value()));
  return m;
}

template <typename Scalar>
bool is_hermitian(const BasicOperator<Scalar>& op, double tol = 1e-12) {
  return max_abs_entry(op - op.adjoint()) <= tol;
}

/// State vector or density matrix over a dimension signature.
template <typename Scalar>
class BasicState {
 public:
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

  BasicState() = default;

  static BasicState pure(Dims dims, Vector psi) {
    if (psi.size() != dims.total()) fail(ErrorKind::signature, "state length does not match " + to_string(dims));
    BasicState s;
    s.dims_ = std::move(dims);
    s.data_ = std::move(psi);
    return s;
  }

  static BasicState mixed(Dims dims, Matrix rho) {
    if (rho.rows() != dims.total() || rho.cols() != dims.total())
      fail(ErrorKind::signature, "density side does not match " + to_string(dims));
    BasicState s;
    s.dims_ = std::move(dims);
    s.data_ = std::move(rho);
    return s;
  }

  const Dims& dims() const { return dims_; }
  bool is_pure() const { return std::holds_alternative<Vector>(data_); }
  const Vector& vector() const { return std::get<Vector>(data_); }
  const Matrix& density() const { return std::get<Matrix>(data_); }

  Matrix to_density() const {
    if (is_pure()) return vector() * vector().adjoint();
    return density();
  }

  /// ||psi|| for pure states, Re Tr(rho) for density matrices.
  double norm_or_trace() const {
    if (is_pure()) return vector().norm();
    return std::real(density().trace());
  }

  void normalize() {
    if (is_pure())
      std::get<Vector>(data_) /= vector().norm();
    else
      std::get<Matrix>(data_) /= density().trace();
  }

  /// Unit norm for vectors; unit trace, Hermiticity and near-positivity for
  /// density matrices.
  void validate(double trace_tol = 1e-9, double eig_tol = 1e-8) const {
    if (is_pure()) {
      if (std::abs(vector().norm() - 1.0) > trace_tol) fail(ErrorKind::numerical, "state vector is not normalized");
      return;
    }
    const Matrix& rho = density();
    if (std::abs(rho.trace() - Scalar(1)) > trace_tol) fail(ErrorKind::numerical, "density trace differs from 1");
    if ((rho - rho.adjoint()).cwiseAbs().maxCoeff() > 1e-10) fail(ErrorKind::numerical, "density is not Hermitian");
    Eigen::SelfAdjointEigenSolver<Matrix> es(rho, Eigen::EigenvaluesOnly);
    if (es.eigenvalues().minCoeff() < -eig_tol) fail(ErrorKind::numerical, "density has a negative eigenvalue");
  }

 private:
  Dims dims_;
  std::variant<Vector, Matrix> data_;
};

using QuantumState = BasicState<Complex>;

template <typename Scalar = Complex>
BasicState<Scalar> basis_state(int n, int d) {
  if (n < 0 || n >= d) fail(ErrorKind::invalid_level, "basis index out of range");
  typename BasicState<Scalar>::Vector v = BasicState<Scalar>::Vector::Zero(d);
  v(n) = Scalar(1);
  return BasicState<Scalar>::pure(Dims{d}, std::move(v));
}

/// Truncated coherent state, renormalized to unit norm.
inline QuantumState coherent_state(Complex alpha, int d) {
  if (d < 1) fail(ErrorKind::invalid_dimension, "coherent_state needs d >= 1");
  QuantumState::Vector v(d);
  // Recurrence c_n = c_{n-1} alpha / sqrt(n) avoids factorial overflow.
  Complex c = std::exp(-0.5 * std::norm(alpha));
  for (int n = 0; n < d; ++n) {
    if (n > 0) c *= alpha / std::sqrt(double(n));
    v(n) = c;
  }
  const double deficit = 1.0 - v.norm();
  if (deficit > 1e-6)
    warn("coherent_state truncation at d=" + std::to_string(d) + " loses norm " + std::to_string(deficit));
  v /= v.norm();
  return QuantumState::pure(Dims{d}, std::move(v));
}

template <typename Scalar>
BasicState<Scalar> tensor(const BasicState<Scalar>& a, const BasicState<Scalar>& b) {
  std::vector<int> sizes = a.dims().sizes();
  sizes.insert(sizes.end(), b.dims().sizes().begin(), b.dims().sizes().end());
  if (a.is_pure() && b.is_pure()) {
    typename BasicState<Scalar>::Vector v = Eigen::kroneckerProduct(a.vector(), b.vector());
    return BasicState<Scalar>::pure(Dims(std::move(sizes)), std::move(v));
  }
  typename BasicState<Scalar>::Matrix m = Eigen::kroneckerProduct(a.to_density(), b.to_density());
  return BasicState<Scalar>::mixed(Dims(std::move(sizes)), std::move(m));
}

/// <psi|O|psi> or Tr(O rho).
template <typename Scalar>
Scalar expectation(const BasicOperator<Scalar>& op, const BasicState<Scalar>& state) {
  if (op.dims() != state.dims())
    fail(ErrorKind::signature, "expectation dims " + to_string(op.dims()) + " vs " + to_string(state.dims()));
  if (state.is_pure()) {
    const auto& psi = state.vector();
    return psi.dot(op.matrix() * psi);
  }
  return (op.matrix() * state.density()).trace();
}

/// Real part of a Hermitian expectation; rejects an imaginary residue above tol.
template <typename Scalar>
typename BasicOperator<Scalar>::RealScalar real_expectation(const BasicOperator<Scalar>& op,
                                                            const BasicState<Scalar>& state,
                                                            double tol = 1e-10) {
  Scalar v = expectation(op, state);
  if (std::abs(std::imag(v)) > tol) fail(ErrorKind::numerical, "expectation of Hermitian operator has imaginary part");
  return std::real(v);
}

}  // namespace qtraj
