#pragma once

#include <cstddef>
#include <initializer_list>
#include <vector>

namespace xcpd {

// Dense row-major matrix of doubles. The numerical substrate for adjacency,
// Laplacian, basis and rotation matrices. Kept deliberately small: the
// library targets graphs of at most a few hundred nodes.
class DenseMatrix {
  public:
    DenseMatrix() = default;
    DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), v_(rows * cols, fill) {}

    static DenseMatrix identity(std::size_t n);
    static DenseMatrix from_rows(std::initializer_list<std::initializer_list<double>> rows);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    bool empty() const { return v_.empty(); }

    double& operator()(std::size_t r, std::size_t c) { return v_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return v_[r * cols_ + c]; }

    double* row_ptr(std::size_t r) { return v_.data() + r * cols_; }
    const double* row_ptr(std::size_t r) const { return v_.data() + r * cols_; }

    std::vector<double>& values() { return v_; }
    const std::vector<double>& values() const { return v_; }

    bool all_finite() const;
    bool same_shape(const DenseMatrix& other) const {
        return rows_ == other.rows_ && cols_ == other.cols_;
    }

  private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> v_;
};

// Result of a symmetric eigendecomposition. Eigenvalues ascending and
// eigenvectors stored as columns, unit norm, with a deterministic sign:
// in each column the first entry with magnitude > 1e-12 is positive.
struct EigenDecomposition {
    std::vector<double> eigenvalues;
    DenseMatrix eigenvectors;
};

// Cyclic Jacobi eigensolver for symmetric matrices. Deterministic rotation
// order; converges when the off-diagonal Frobenius mass drops below
// tol * ||m||_F, which bounds the reconstruction error ||V L V^T - m||_F by
// the same amount. Throws DimensionError for non-square or asymmetric input
// and ConvergenceError when the sweep budget is exhausted.
EigenDecomposition jacobi_eigh(const DenseMatrix& m, double tol = 1e-12, int max_sweeps = 100);

// Orthogonal Procrustes: returns the orthogonal R minimizing ||b - a R||_F
// for inputs with orthonormal columns. Solved through the eigendecomposition
// of the block-symmetrized form of a^T b.
DenseMatrix procrustes_align(const DenseMatrix& a, const DenseMatrix& b);

double frobenius_norm(const DenseMatrix& m);

// Plain product with deterministic left-to-right accumulation over the inner
// dimension.
DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b);

DenseMatrix transpose(const DenseMatrix& m);
DenseMatrix add(const DenseMatrix& a, const DenseMatrix& b);
DenseMatrix subtract(const DenseMatrix& a, const DenseMatrix& b);
void scale_inplace(DenseMatrix& m, double factor);
double max_abs(const DenseMatrix& m);

}  // namespace xcpd
