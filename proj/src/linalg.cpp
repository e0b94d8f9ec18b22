#include "xcpd/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "xcpd/errors.hpp"

namespace xcpd {

DenseMatrix DenseMatrix::identity(std::size_t n) {
    DenseMatrix m(n, n, 0.0);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

DenseMatrix DenseMatrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.begin()->size();
    DenseMatrix m(r, c);
    std::size_t i = 0;
    for (const auto& row : rows) {
        if (row.size() != c) throw DimensionError("from_rows: ragged initializer");
        std::size_t j = 0;
        for (double v : row) m(i, j++) = v;
        ++i;
    }
    return m;
}

bool DenseMatrix::all_finite() const {
    for (double v : v_)
        if (!std::isfinite(v)) return false;
    return true;
}

double frobenius_norm(const DenseMatrix& m) {
    double s = 0.0;
    for (double v : m.values()) s += v * v;
    return std::sqrt(s);
}

double max_abs(const DenseMatrix& m) {
    double s = 0.0;
    for (double v : m.values()) s = std::max(s, std::fabs(v));
    return s;
}

DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
    if (a.cols() != b.rows()) throw DimensionError("matmul: inner dimensions differ");
    DenseMatrix out(a.rows(), b.cols(), 0.0);
    // i-k-j order: each output entry accumulates over k in ascending order.
    for (std::size_t i = 0; i < a.rows(); ++i) {
        double* out_row = out.row_ptr(i);
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) continue;
            const double* b_row = b.row_ptr(k);
            for (std::size_t j = 0; j < b.cols(); ++j) out_row[j] += aik * b_row[j];
        }
    }
    return out;
}

DenseMatrix transpose(const DenseMatrix& m) {
    DenseMatrix out(m.cols(), m.rows());
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < m.cols(); ++j) out(j, i) = m(i, j);
    return out;
}

DenseMatrix add(const DenseMatrix& a, const DenseMatrix& b) {
    if (!a.same_shape(b)) throw DimensionError("add: shape mismatch");
    DenseMatrix out = a;
    for (std::size_t i = 0; i < out.values().size(); ++i) out.values()[i] += b.values()[i];
    return out;
}

DenseMatrix subtract(const DenseMatrix& a, const DenseMatrix& b) {
    if (!a.same_shape(b)) throw DimensionError("subtract: shape mismatch");
    DenseMatrix out = a;
    for (std::size_t i = 0; i < out.values().size(); ++i) out.values()[i] -= b.values()[i];
    return out;
}

void scale_inplace(DenseMatrix& m, double factor) {
    for (double& v : m.values()) v *= factor;
}

namespace {

void apply_sign_convention(DenseMatrix& vectors) {
    for (std::size_t j = 0; j < vectors.cols(); ++j) {
        double lead = 0.0;
        for (std::size_t i = 0; i < vectors.rows(); ++i) {
            if (std::fabs(vectors(i, j)) > 1e-12) {
                lead = vectors(i, j);
                break;
            }
        }
        if (lead < 0.0)
            for (std::size_t i = 0; i < vectors.rows(); ++i) vectors(i, j) = -vectors(i, j);
    }
}

// Ordering among equal eigenvalues: the sign-conventioned column with the
// greater entry at the first differing position comes first. This keeps the
// identity matrix's eigenbasis in natural column order.
bool column_less(const DenseMatrix& v, std::size_t a, std::size_t b) {
    for (std::size_t i = 0; i < v.rows(); ++i) {
        if (v(i, a) != v(i, b)) return v(i, a) > v(i, b);
    }
    return false;
}

double offdiag_norm(const DenseMatrix& a) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j)
            if (i != j) s += a(i, j) * a(i, j);
    return std::sqrt(s);
}

}  // namespace

EigenDecomposition jacobi_eigh(const DenseMatrix& m, double tol, int max_sweeps) {
    const std::size_t n = m.rows();
    if (n == 0 || m.cols() != n) throw DimensionError("jacobi_eigh: matrix must be square");
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            if (std::fabs(m(i, j) - m(j, i)) > 1e-10)
                throw DimensionError("jacobi_eigh: matrix is not symmetric");
    if (tol <= 0.0) throw ConfigError("jacobi_eigh: tol must be positive");

    DenseMatrix a = m;
    DenseMatrix v = DenseMatrix::identity(n);
    const double norm = frobenius_norm(m);
    const double threshold = tol * norm;

    bool converged = norm == 0.0 || offdiag_norm(a) <= threshold;
    for (int sweep = 0; sweep < max_sweeps && !converged; ++sweep) {
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = a(p, q);
                if (apq == 0.0) continue;
                const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
                double t = 1.0 / (std::fabs(theta) + std::sqrt(1.0 + theta * theta));
                if (theta < 0.0) t = -t;
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = t * c;
                const double tau = s / (1.0 + c);
                const double h = t * apq;

                a(p, p) -= h;
                a(q, q) += h;
                a(p, q) = 0.0;
                a(q, p) = 0.0;
                for (std::size_t i = 0; i < n; ++i) {
                    if (i != p && i != q) {
                        const double aip = a(i, p);
                        const double aiq = a(i, q);
                        a(i, p) = aip - s * (aiq + tau * aip);
                        a(p, i) = a(i, p);
                        a(i, q) = aiq + s * (aip - tau * aiq);
                        a(q, i) = a(i, q);
                    }
                    const double vip = v(i, p);
                    const double viq = v(i, q);
                    v(i, p) = vip - s * (viq + tau * vip);
                    v(i, q) = viq + s * (vip - tau * viq);
                }
            }
        }
        converged = offdiag_norm(a) <= threshold;
    }
    if (!converged) throw ConvergenceError("jacobi_eigh: sweep budget exhausted");

    apply_sign_convention(v);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
        if (a(x, x) != a(y, y)) return a(x, x) < a(y, y);
        return column_less(v, x, y);
    });

    EigenDecomposition out;
    out.eigenvalues.resize(n);
    out.eigenvectors = DenseMatrix(n, n);
    for (std::size_t j = 0; j < n; ++j) {
        out.eigenvalues[j] = a(order[j], order[j]);
        for (std::size_t i = 0; i < n; ++i) out.eigenvectors(i, j) = v(i, order[j]);
    }
    return out;
}

DenseMatrix procrustes_align(const DenseMatrix& a, const DenseMatrix& b) {
    if (!a.same_shape(b)) throw DimensionError("procrustes_align: shape mismatch");
    const std::size_t k = a.cols();
    const DenseMatrix m = matmul(transpose(a), b);

    // Eigenpairs of [[0, M], [M^T, 0]] encode the SVD of M: the top-k
    // eigenvectors split into (u_i, v_i)/sqrt(2) and R = sum_i u_i v_i^T.
    DenseMatrix h(2 * k, 2 * k, 0.0);
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = 0; j < k; ++j) {
            h(i, k + j) = m(i, j);
            h(k + j, i) = m(i, j);
        }
    const EigenDecomposition eig = jacobi_eigh(h, 1e-13);

    DenseMatrix r(k, k, 0.0);
    for (std::size_t idx = k; idx < 2 * k; ++idx) {
        for (std::size_t i = 0; i < k; ++i) {
            const double ui = eig.eigenvectors(i, idx);
            for (std::size_t j = 0; j < k; ++j) r(i, j) += 2.0 * ui * eig.eigenvectors(k + j, idx);
        }
    }

    // Polar touch-up in case a tiny singular value left R slightly
    // non-orthogonal.
    DenseMatrix gram = matmul(transpose(r), r);
    DenseMatrix drift = subtract(gram, DenseMatrix::identity(k));
    if (max_abs(drift) > 1e-10) {
        const EigenDecomposition ge = jacobi_eigh(gram, 1e-13);
        DenseMatrix inv_sqrt(k, k, 0.0);
        for (std::size_t j = 0; j < k; ++j) {
            const double lam = ge.eigenvalues[j];
            if (lam <= 1e-12) return r;  // rank-deficient alignment, leave as computed
            inv_sqrt(j, j) = 1.0 / std::sqrt(lam);
        }
        r = matmul(r, matmul(ge.eigenvectors, matmul(inv_sqrt, transpose(ge.eigenvectors))));
    }
    return r;
}

}  // namespace xcpd
