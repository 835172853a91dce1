// hilbert.hpp: dense complex linear algebra on small composite Hilbert spaces.
//
// Operators and kets are plain Eigen dynamic matrices/vectors. Composite
// spaces use the Kronecker convention with the first factor as the slow index.

#pragma once

#include <Eigen/Dense>
#include <unsupported/Eigen/KroneckerProduct>
#include <unsupported/Eigen/MatrixFunctions>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace qtraj {

using Complex = std::complex<double>;
using Operator = Eigen::MatrixXcd;
using Ket = Eigen::VectorXcd;
using Index = Eigen::Index;

inline constexpr Complex kI{0.0, 1.0};

// Ordered tensor factors; an operator/ket "lives" on the space when its
// dimension equals total().
struct CompositeSpace {
    std::vector<Index> factor_dims;

    CompositeSpace() = default;
    CompositeSpace(std::initializer_list<Index> dims) : factor_dims(dims) { validate(); }
    explicit CompositeSpace(std::vector<Index> dims) : factor_dims(std::move(dims)) { validate(); }

    static CompositeSpace single(Index dim) { return CompositeSpace{dim}; }

    [[nodiscard]] Index total() const {
        return std::accumulate(factor_dims.begin(), factor_dims.end(), Index{1},
                               [](Index a, Index b) { return a * b; });
    }
    [[nodiscard]] std::size_t size() const noexcept { return factor_dims.size(); }
    [[nodiscard]] Index dim(std::size_t k) const { return factor_dims.at(k); }

    bool operator==(const CompositeSpace&) const = default;

private:
    void validate() const {
        if (factor_dims.empty()) throw std::invalid_argument("CompositeSpace: no factors");
        for (Index d : factor_dims)
            if (d <= 0) throw std::invalid_argument("CompositeSpace: factor dimension must be positive");
    }
};

// --------------------------- small constructors ----------------------------

inline Operator identity(Index dim) { return Operator::Identity(dim, dim); }

inline Operator zeros(Index dim) { return Operator::Zero(dim, dim); }

// Truncated bosonic lowering operator: a|n> = sqrt(n)|n-1>. For dim 2 this is
// |g><e| with |g> = index 0.
inline Operator annihilation(Index dim) {
    if (dim < 1) throw std::invalid_argument("annihilation: dim must be >= 1");
    Operator a = Operator::Zero(dim, dim);
    for (Index n = 1; n < dim; ++n) a(n - 1, n) = std::sqrt(static_cast<double>(n));
    return a;
}

inline Operator number_op(Index dim) {
    const Operator a = annihilation(dim);
    return a.adjoint() * a;
}

inline Ket basis_ket(Index dim, Index k) {
    if (k < 0 || k >= dim) throw std::out_of_range("basis_ket: index out of range");
    Ket v = Ket::Zero(dim);
    v(k) = 1.0;
    return v;
}

inline Operator projector(const Ket& v) { return v * v.adjoint(); }

inline Operator projector(Index dim, Index k) { return projector(basis_ket(dim, k)); }

inline Operator sigma_x() {
    Operator m(2, 2);
    m << 0.0, 1.0, 1.0, 0.0;
    return m;
}

inline Operator sigma_y() {
    Operator m(2, 2);
    m << 0.0, -kI, kI, 0.0;
    return m;
}

inline Operator sigma_z() {
    Operator m(2, 2);
    m << 1.0, 0.0, 0.0, -1.0;
    return m;
}

inline Operator commutator(const Operator& a, const Operator& b) { return a * b - b * a; }

inline Operator anticommutator(const Operator& a, const Operator& b) { return a * b + b * a; }

// --------------------------- norms and checks -------------------------------

inline double hermiticity_defect(const Operator& a) {
    return (a - a.adjoint()).norm();
}

inline bool is_hermitian(const Operator& a, double rel_tol = 1e-10) {
    if (a.rows() != a.cols()) return false;
    return hermiticity_defect(a) <= rel_tol * std::max(1.0, a.norm());
}

inline bool all_finite(const Operator& a) { return a.allFinite(); }

inline double spectral_norm(const Operator& a) {
    if (a.size() == 0) return 0.0;
    Eigen::JacobiSVD<Operator> svd(a);
    return svd.singularValues()(0);
}

// Sum of singular values.
inline double trace_norm(const Operator& a) {
    if (a.size() == 0) return 0.0;
    Eigen::JacobiSVD<Operator> svd(a);
    return svd.singularValues().sum();
}

inline double trace_distance(const Operator& a, const Operator& b) {
    return 0.5 * trace_norm(a - b);
}

inline double expectation(const Operator& op, const Ket& psi) {
    return (psi.adjoint() * op * psi)(0, 0).real();
}

// |<a|b>|^2 / (<a|a><b|b>)
inline double fidelity(const Ket& a, const Ket& b) {
    const double na = a.squaredNorm(), nb = b.squaredNorm();
    if (na == 0.0 || nb == 0.0) return 0.0;
    return std::norm(a.dot(b)) / (na * nb);
}

// --------------------------- tensor structure -------------------------------

inline Operator tensor(const Operator& a, const Operator& b) {
    return Eigen::kroneckerProduct(a, b).eval();
}

inline Ket tensor(const Ket& a, const Ket& b) {
    Ket out(a.size() * b.size());
    for (Index i = 0; i < a.size(); ++i) out.segment(i * b.size(), b.size()) = a(i) * b;
    return out;
}

// Operator acting as `op` on factor k and identity elsewhere.
inline Operator embed(const Operator& op, const CompositeSpace& space, std::size_t k) {
    if (k >= space.size()) throw std::out_of_range("embed: factor index out of range");
    if (op.rows() != space.dim(k) || op.cols() != space.dim(k))
        throw std::invalid_argument("embed: operator dimension does not match factor " + std::to_string(k));
    Operator out = identity(1);
    for (std::size_t j = 0; j < space.size(); ++j)
        out = tensor(out, j == k ? op : identity(space.dim(j)));
    return out;
}

// Partial trace of a two-factor operator, keeping factor `keep` (0 or 1).
inline Operator partial_trace(const Operator& x, const CompositeSpace& space, std::size_t keep) {
    if (space.size() != 2) throw std::invalid_argument("partial_trace: two-factor space required");
    if (keep > 1) throw std::out_of_range("partial_trace: keep must be 0 or 1");
    const Index da = space.dim(0), db = space.dim(1);
    if (x.rows() != da * db || x.cols() != da * db)
        throw std::invalid_argument("partial_trace: operator dimension " + std::to_string(x.rows()) +
                                    " does not match space dimension " + std::to_string(da * db));
    if (keep == 0) {
        Operator out = Operator::Zero(da, da);
        for (Index i = 0; i < da; ++i)
            for (Index j = 0; j < da; ++j)
                for (Index k = 0; k < db; ++k) out(i, j) += x(i * db + k, j * db + k);
        return out;
    }
    Operator out = Operator::Zero(db, db);
    for (Index i = 0; i < db; ++i)
        for (Index j = 0; j < db; ++j)
            for (Index k = 0; k < da; ++k) out(i, j) += x(k * db + i, k * db + j);
    return out;
}

// --------------------------- matrix functions -------------------------------

inline Operator expm(const Operator& a) {
    if (a.rows() != a.cols()) throw std::invalid_argument("expm: operator must be square");
    if (!a.allFinite()) throw std::invalid_argument("expm: non-finite entries");
    Operator out = a.exp();
    if (!out.allFinite())
        throw std::overflow_error("expm: result overflowed (norm " + std::to_string(a.norm()) + ")");
    return out;
}

struct HermitianEigen {
    Eigen::VectorXd values;  // ascending
    Operator vectors;        // columns, orthonormal
};

// Fixes the global phase so the first component of largest modulus is real
// and non-negative.
inline void fix_phase(Eigen::Ref<Ket> v) {
    Index best = 0;
    double best_mod = -1.0;
    for (Index i = 0; i < v.size(); ++i) {
        const double m = std::abs(v(i));
        if (m > best_mod * (1.0 + 1e-12) + 1e-14) {
            best_mod = m;
            best = i;
        }
    }
    if (best_mod > 0.0) v *= std::conj(v(best)) / best_mod;
}

inline HermitianEigen herm_eig(const Operator& a) {
    if (a.rows() != a.cols()) throw std::invalid_argument("herm_eig: operator must be square");
    if (hermiticity_defect(a) > 1e-10 * std::max(1.0, a.norm()))
        throw std::invalid_argument("herm_eig: operator is not Hermitian");
    const Operator h = 0.5 * (a + a.adjoint());
    Eigen::SelfAdjointEigenSolver<Operator> solver(h);
    if (solver.info() != Eigen::Success) throw std::runtime_error("herm_eig: eigensolver failed");
    HermitianEigen out{solver.eigenvalues(), solver.eigenvectors()};
    for (Index k = 0; k < out.vectors.cols(); ++k) fix_phase(out.vectors.col(k));
    return out;
}

inline double min_eigenvalue(const Operator& a) { return herm_eig(a).values(0); }

struct SchmidtDecomposition {
    std::vector<double> coefficients;  // descending, strictly positive
    std::vector<Ket> left;
    std::vector<Ket> right;

    [[nodiscard]] Ket reconstruct() const {
        if (coefficients.empty()) return Ket{};
        Ket out = Ket::Zero(left.front().size() * right.front().size());
        for (std::size_t k = 0; k < coefficients.size(); ++k)
            out += coefficients[k] * tensor(left[k], right[k]);
        return out;
    }
};

inline SchmidtDecomposition schmidt(const Ket& psi, const CompositeSpace& space, double rel_cutoff = 1e-12) {
    if (space.size() != 2) throw std::invalid_argument("schmidt: two-factor space required");
    const Index da = space.dim(0), db = space.dim(1);
    if (psi.size() != da * db) throw std::invalid_argument("schmidt: ket dimension does not match space");
    Operator m(da, db);
    for (Index i = 0; i < da; ++i)
        for (Index j = 0; j < db; ++j) m(i, j) = psi(i * db + j);
    Eigen::JacobiSVD<Operator> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const auto& s = svd.singularValues();
    SchmidtDecomposition out;
    const double cutoff = rel_cutoff * (s.size() > 0 ? s(0) : 0.0);
    for (Index k = 0; k < s.size(); ++k) {
        if (s(k) <= cutoff || s(k) == 0.0) break;
        Ket u = svd.matrixU().col(k);
        Ket w = svd.matrixV().col(k).conjugate();
        // Move the phase convention onto the left vector, compensate on the right.
        const Ket u0 = u;
        fix_phase(u);
        const Complex ph = u0.dot(u);  // u = u0 * conj-phase, so ph = <u0|u>
        w *= std::conj(ph);
        out.coefficients.push_back(s(k));
        out.left.push_back(std::move(u));
        out.right.push_back(std::move(w));
    }
    return out;
}

}  // namespace qtraj
