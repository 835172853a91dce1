// lindblad.hpp: Markovian master equations, their integration and the
// system-plus-output-mode block algebra.

#pragma once

#include "qtraj/hilbert.hpp"

#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace qtraj {

using DensityMatrix = Operator;

// H (Hermitian, inverse time) plus Lindblad operators (inverse sqrt time).
struct LindbladModel {
    Operator H;
    std::vector<Operator> lindblads;
    CompositeSpace space;

    LindbladModel() = default;
    LindbladModel(Operator h, std::vector<Operator> ls)
        : LindbladModel(h, std::move(ls), CompositeSpace::single(h.rows())) {}
    LindbladModel(Operator h, std::vector<Operator> ls, CompositeSpace sp)
        : H(std::move(h)), lindblads(std::move(ls)), space(std::move(sp)) {
        validate();
    }

    [[nodiscard]] Index dim() const noexcept { return H.rows(); }

    // H - (i/2) sum L^dag L
    [[nodiscard]] Operator effective_hamiltonian() const {
        Operator heff = H;
        for (const auto& l : lindblads) heff -= 0.5 * kI * (l.adjoint() * l);
        return heff;
    }

    void validate() const {
        if (H.rows() != H.cols() || H.rows() == 0)
            throw std::invalid_argument("LindbladModel: H must be square and non-empty");
        if (!H.allFinite()) throw std::invalid_argument("LindbladModel: H has non-finite entries");
        if (hermiticity_defect(H) > 1e-10 * std::max(1.0, H.norm()))
            throw std::invalid_argument("LindbladModel: H is not Hermitian");
        if (space.total() != H.rows())
            throw std::invalid_argument("LindbladModel: space dimension does not match H");
        for (std::size_t m = 0; m < lindblads.size(); ++m) {
            const auto& l = lindblads[m];
            if (l.rows() != H.rows() || l.cols() != H.cols())
                throw std::invalid_argument("LindbladModel: Lindblad operator " + std::to_string(m) +
                                            " has the wrong dimension");
            if (!l.allFinite())
                throw std::invalid_argument("LindbladModel: Lindblad operator " + std::to_string(m) +
                                            " has non-finite entries");
        }
    }
};

struct DensityCheck {
    double hermiticity = 0.0;
    double trace_error = 0.0;
    double min_eigenvalue = 0.0;
    bool ok = false;
};

inline DensityCheck check_density(const DensityMatrix& rho, double weight = 1.0) {
    DensityCheck c;
    c.hermiticity = hermiticity_defect(rho);
    c.trace_error = std::abs(rho.trace() - Complex(weight));
    c.min_eigenvalue = herm_eig(0.5 * (rho + rho.adjoint())).values(0);
    c.ok = c.hermiticity <= 1e-10 * std::max(1.0, rho.norm()) && c.trace_error <= 1e-8 &&
           c.min_eigenvalue >= -1e-8 * std::max(weight, 1e-300);
    return c;
}

// -i[H,rho] + sum_m (L rho L^dag - 1/2 {L^dag L, rho})
inline Operator liouvillian_apply(const LindbladModel& model, const Operator& rho) {
    if (rho.rows() != model.dim() || rho.cols() != model.dim())
        throw std::invalid_argument("liouvillian_apply: state dimension " + std::to_string(rho.rows()) +
                                    " does not match model dimension " + std::to_string(model.dim()));
    Operator out = -kI * (model.H * rho - rho * model.H);
    for (const auto& l : model.lindblads) {
        const Operator ldl = l.adjoint() * l;
        out += l * rho * l.adjoint() - 0.5 * (ldl * rho + rho * ldl);
    }
    return out;
}

// Upper bound on the induced norm of the Liouvillian.
inline double generator_norm_bound(const LindbladModel& model) {
    double b = 2.0 * spectral_norm(model.H);
    for (const auto& l : model.lindblads) {
        const double s = spectral_norm(l);
        b += 2.0 * s * s;
    }
    return b;
}

inline constexpr double kMaxGeneratorStep = 0.1;

inline double max_stable_dt(const LindbladModel& model) {
    const double b = generator_norm_bound(model);
    return b > 0.0 ? kMaxGeneratorStep / b : std::numeric_limits<double>::infinity();
}

// Maps times onto integer step counts of a fixed grid.
inline std::vector<long> grid_steps(const std::vector<double>& times, double dt, double T) {
    std::vector<long> steps;
    steps.reserve(times.size());
    long prev = -1;
    for (double t : times) {
        if (t < 0.0 || t > T * (1.0 + 1e-12))
            throw std::invalid_argument("output time " + std::to_string(t) + " outside [0, T]");
        const double k = t / dt;
        const long kr = std::lround(k);
        if (std::abs(k - static_cast<double>(kr)) > 1e-6)
            throw std::invalid_argument("output time " + std::to_string(t) + " is not a multiple of dt");
        if (kr <= prev) throw std::invalid_argument("output times must be strictly increasing");
        steps.push_back(kr);
        prev = kr;
    }
    return steps;
}

struct MasterTrajectory {
    std::vector<double> times;
    std::vector<DensityMatrix> states;
};

// Fixed-step classical RK4. Empty output_times means {0, T}.
inline MasterTrajectory evolve_master(const LindbladModel& model, const DensityMatrix& rho0, double T, double dt,
                                      std::vector<double> output_times = {}) {
    if (rho0.rows() != model.dim() || rho0.cols() != model.dim())
        throw std::invalid_argument("evolve_master: initial state dimension does not match model");
    if (!(dt > 0.0) || !(T >= 0.0)) throw std::invalid_argument("evolve_master: need dt > 0 and T >= 0");
    const double bound = generator_norm_bound(model);
    if (bound * dt > kMaxGeneratorStep) {
        std::ostringstream os;
        os << "evolve_master: step too large, ||L|| dt = " << bound * dt << " > " << kMaxGeneratorStep
           << " (use dt <= " << kMaxGeneratorStep / bound << ")";
        throw std::invalid_argument(os.str());
    }
    if (output_times.empty()) output_times = {0.0, T};
    const long n_steps = std::lround(T / dt);
    if (std::abs(T / dt - static_cast<double>(n_steps)) > 1e-6)
        throw std::invalid_argument("evolve_master: T is not a multiple of dt");
    const auto steps = grid_steps(output_times, dt, T);

    MasterTrajectory out;
    DensityMatrix rho = rho0;
    std::size_t next = 0;
    for (long k = 0; k <= n_steps && next < steps.size(); ++k) {
        if (k == steps[next]) {
            out.times.push_back(static_cast<double>(k) * dt);
            out.states.push_back(rho);
            ++next;
        }
        if (k == n_steps) break;
        const Operator k1 = liouvillian_apply(model, rho);
        const Operator k2 = liouvillian_apply(model, rho + 0.5 * dt * k1);
        const Operator k3 = liouvillian_apply(model, rho + 0.5 * dt * k2);
        const Operator k4 = liouvillian_apply(model, rho + dt * k3);
        rho += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    return out;
}

// --------------------------- dense superoperators ---------------------------

inline constexpr Index kMaxLiouvilleDim = 1600;

// Column-stacking convention: vec(A X B) = (B^T kron A) vec(X).
inline Eigen::VectorXcd vectorize(const Operator& x) {
    return Eigen::Map<const Eigen::VectorXcd>(x.data(), x.size());
}

inline Operator unvectorize(const Eigen::VectorXcd& v, Index dim) {
    if (v.size() != dim * dim) throw std::invalid_argument("unvectorize: size mismatch");
    return Eigen::Map<const Operator>(v.data(), dim, dim);
}

inline Operator liouvillian_superop(const LindbladModel& model) {
    const Index d = model.dim();
    if (d * d > kMaxLiouvilleDim)
        throw std::invalid_argument("liouvillian_superop: Liouville dimension " + std::to_string(d * d) +
                                    " exceeds cap " + std::to_string(kMaxLiouvilleDim));
    const Operator id = identity(d);
    Operator s = -kI * (tensor(id, model.H) - tensor(model.H.transpose(), id));
    for (const auto& l : model.lindblads) {
        const Operator ldl = l.adjoint() * l;
        s += tensor(l.conjugate(), l) - 0.5 * tensor(id, ldl) - 0.5 * tensor(ldl.transpose(), id);
    }
    return s;
}

inline Operator superop_expm(const LindbladModel& model, double t) {
    return expm(liouvillian_superop(model) * t);
}

inline Operator apply_superop(const Operator& s, const Operator& x) {
    return unvectorize(s * vectorize(x), x.rows());
}

// Builds the superoperator matrix of any linear map on dim x dim operators.
template <class Map>
Operator superop_from_map(Map&& f, Index dim) {
    Operator s(dim * dim, dim * dim);
    for (Index j = 0; j < dim; ++j)
        for (Index i = 0; i < dim; ++i) {
            Operator e = Operator::Zero(dim, dim);
            e(i, j) = 1.0;
            s.col(j * dim + i) = vectorize(f(e));
        }
    return s;
}

// --------------------------- projective measurement -------------------------

inline void validate_projector_set(const std::vector<Operator>& projectors, Index dim, double tol = 1e-10) {
    if (projectors.empty()) throw std::invalid_argument("projector set is empty");
    Operator sum = Operator::Zero(dim, dim);
    for (std::size_t i = 0; i < projectors.size(); ++i) {
        const auto& p = projectors[i];
        if (p.rows() != dim || p.cols() != dim)
            throw std::invalid_argument("projector " + std::to_string(i) + " has the wrong dimension");
        sum += p;
        for (std::size_t j = i; j < projectors.size(); ++j) {
            const Operator prod = p * projectors[j];
            const Operator expected = i == j ? p : Operator::Zero(dim, dim);
            if ((prod - expected).norm() > tol)
                throw std::invalid_argument("projectors " + std::to_string(i) + "," + std::to_string(j) +
                                            " are not orthogonal projections");
        }
    }
    if ((sum - identity(dim)).norm() > tol) throw std::invalid_argument("projector set is not complete");
}

// sum_alpha P rho P
inline DensityMatrix repeated_measurement_map(const DensityMatrix& rho, const std::vector<Operator>& projectors) {
    validate_projector_set(projectors, rho.rows());
    DensityMatrix out = DensityMatrix::Zero(rho.rows(), rho.cols());
    for (const auto& p : projectors) out += p * rho * p;
    return out;
}

// --------------------------- system (x) two-level output mode --------------

// rho = sum_ij rho_ij (x) |i><j| with the output mode truncated to two levels.
struct BlockDensity {
    Operator rho00, rho01, rho10, rho11;

    [[nodiscard]] Index system_dim() const noexcept { return rho00.rows(); }

    static BlockDensity zero(Index d) {
        return {Operator::Zero(d, d), Operator::Zero(d, d), Operator::Zero(d, d), Operator::Zero(d, d)};
    }

    [[nodiscard]] Complex trace() const { return rho00.trace() + rho11.trace(); }

    BlockDensity& operator+=(const BlockDensity& o) {
        rho00 += o.rho00;
        rho01 += o.rho01;
        rho10 += o.rho10;
        rho11 += o.rho11;
        return *this;
    }
    friend BlockDensity operator+(BlockDensity a, const BlockDensity& b) { return a += b; }
    friend BlockDensity operator*(Complex s, const BlockDensity& x) {
        return {s * x.rho00, s * x.rho01, s * x.rho10, s * x.rho11};
    }
    friend BlockDensity operator-(const BlockDensity& a, const BlockDensity& b) {
        return a + Complex(-1.0) * b;
    }

    [[nodiscard]] double max_abs() const {
        return std::max({rho00.cwiseAbs().maxCoeff(), rho01.cwiseAbs().maxCoeff(), rho10.cwiseAbs().maxCoeff(),
                         rho11.cwiseAbs().maxCoeff()});
    }
};

inline BlockDensity to_blocks(const Operator& rho, Index system_dim) {
    if (rho.rows() != 2 * system_dim || rho.cols() != 2 * system_dim)
        throw std::invalid_argument("to_blocks: expected a system (x) two-level mode operator");
    BlockDensity x = BlockDensity::zero(system_dim);
    for (Index i = 0; i < system_dim; ++i)
        for (Index j = 0; j < system_dim; ++j) {
            x.rho00(i, j) = rho(2 * i, 2 * j);
            x.rho01(i, j) = rho(2 * i, 2 * j + 1);
            x.rho10(i, j) = rho(2 * i + 1, 2 * j);
            x.rho11(i, j) = rho(2 * i + 1, 2 * j + 1);
        }
    return x;
}

inline Operator from_blocks(const BlockDensity& x) {
    const Index d = x.system_dim();
    Operator rho(2 * d, 2 * d);
    for (Index i = 0; i < d; ++i)
        for (Index j = 0; j < d; ++j) {
            rho(2 * i, 2 * j) = x.rho00(i, j);
            rho(2 * i, 2 * j + 1) = x.rho01(i, j);
            rho(2 * i + 1, 2 * j) = x.rho10(i, j);
            rho(2 * i + 1, 2 * j + 1) = x.rho11(i, j);
        }
    return rho;
}

// Dephasing of the output mode alone: off-diagonal blocks decay as e^{-Gamma2 t/2}.
inline BlockDensity exp_L2(const BlockDensity& x, double t, double gamma2) {
    if (t < 0.0) throw std::invalid_argument("exp_L2: negative time");
    const double f = std::exp(-0.5 * gamma2 * t);
    return {x.rho00, f * x.rho01, f * x.rho10, x.rho11};
}

// System coupled to a dissipated, dephased output mode:
//   H = H0 (x) 1 + kappa (a^dag (x) b + a (x) b^dag)
//   L1 part: -i[H, .] + Gamma1 dissipator of 1 (x) b
//   L2 part: Gamma2 dephasing with 1 (x) n2
struct SplitLindbladModel {
    Operator H0;
    Operator lowering;  // system operator a
    double kappa = 0.0;
    double gamma1 = 0.0;
    double gamma2 = 0.0;
    Index mode_dim = 2;

    SplitLindbladModel() = default;
    SplitLindbladModel(Operator h0, Operator a, double kap, double g1, double g2, Index mdim = 2)
        : H0(std::move(h0)), lowering(std::move(a)), kappa(kap), gamma1(g1), gamma2(g2), mode_dim(mdim) {
        if (H0.rows() != lowering.rows() || H0.cols() != lowering.cols())
            throw std::invalid_argument("SplitLindbladModel: H0 and lowering operator dimensions differ");
        if (!(gamma2 > 0.0)) throw std::invalid_argument("SplitLindbladModel: gamma2 must be positive");
        if (gamma1 < 0.0) throw std::invalid_argument("SplitLindbladModel: gamma1 must be non-negative");
        if (mode_dim < 2) throw std::invalid_argument("SplitLindbladModel: mode_dim must be >= 2");
    }

    [[nodiscard]] Index system_dim() const noexcept { return H0.rows(); }
    [[nodiscard]] CompositeSpace space() const { return CompositeSpace{system_dim(), mode_dim}; }

    [[nodiscard]] Operator hamiltonian() const {
        const Operator b = annihilation(mode_dim);
        const Operator& a = lowering;
        return tensor(H0, identity(mode_dim)) +
               kappa * (tensor(a.adjoint(), b) + tensor(a, Operator(b.adjoint())));
    }

    // The L1 generator as a Lindblad model.
    [[nodiscard]] LindbladModel base() const {
        return {hamiltonian(), {std::sqrt(gamma1) * tensor(identity(system_dim()), annihilation(mode_dim))}, space()};
    }

    // L1 + L2.
    [[nodiscard]] LindbladModel full() const {
        LindbladModel m = base();
        m.lindblads.push_back(std::sqrt(gamma2) * tensor(identity(system_dim()), number_op(mode_dim)));
        return m;
    }

    [[nodiscard]] double effective_gamma() const { return 4.0 * kappa * kappa / gamma2; }
};

namespace detail {

// f[x0, ..., xn] for f(z) = exp(z t), via the exponential of a bidiagonal matrix.
inline double exp_divided_difference(std::initializer_list<double> nodes, double t) {
    const Index n = static_cast<Index>(nodes.size());
    Eigen::MatrixXd j = Eigen::MatrixXd::Zero(n, n);
    Index k = 0;
    for (double x : nodes) {
        j(k, k) = x * t;
        if (k + 1 < n) j(k, k + 1) = t;
        ++k;
    }
    const Eigen::MatrixXd e = j.exp();
    return e(0, n - 1);
}

}  // namespace detail

inline std::vector<std::string> split_regime_warnings(const SplitLindbladModel& model, double dt,
                                                      double threshold = 10.0) {
    std::vector<std::string> w;
    if (model.gamma2 * dt < threshold) {
        std::ostringstream os;
        os << "regime: Gamma2*dt >> 1 violated (Gamma2*dt = " << model.gamma2 * dt << " < " << threshold << ")";
        w.push_back(os.str());
    }
    if (model.gamma1 * dt > 1.0 / threshold) {
        std::ostringstream os;
        os << "regime: Gamma1*dt << 1 violated (Gamma1*dt = " << model.gamma1 * dt << " > " << 1.0 / threshold
           << ")";
        w.push_back(os.str());
    }
    return w;
}

// One step e^{L dt} to second order in the Hamiltonian coupling.
//
// The reference generator (Gamma2 dephasing plus the Gamma1 mode dissipator)
// acts on the blocks through three spectral projectors with rates
// 0, -Gamma1 and -(Gamma1+Gamma2)/2, so every time integral of the Dyson
// series reduces to an exponential divided difference of those rates.
inline BlockDensity split_evolve_second_order(const SplitLindbladModel& model, const BlockDensity& x, double dt,
                                              std::vector<std::string>* warnings = nullptr) {
    if (model.mode_dim != 2)
        throw std::invalid_argument("split_evolve_second_order: requires a two-level output mode");
    if (x.system_dim() != model.system_dim())
        throw std::invalid_argument("split_evolve_second_order: block dimension does not match model");
    if (dt < 0.0) throw std::invalid_argument("split_evolve_second_order: negative dt");
    if (warnings) {
        auto w = split_regime_warnings(model, dt);
        warnings->insert(warnings->end(), w.begin(), w.end());
    }

    const Operator& h0 = model.H0;
    const Operator& a = model.lowering;
    const Operator ad = a.adjoint();
    const Complex ik = kI * model.kappa;
    const Index d = model.system_dim();

    auto coupling = [&](const BlockDensity& y) {
        return BlockDensity{
            -kI * commutator(h0, y.rho00) - ik * ad * y.rho10 + ik * y.rho01 * a,
            -kI * commutator(h0, y.rho01) - ik * ad * y.rho11 + ik * y.rho00 * ad,
            -kI * commutator(h0, y.rho10) - ik * a * y.rho00 + ik * y.rho11 * a,
            -kI * commutator(h0, y.rho11) - ik * a * y.rho01 + ik * y.rho10 * ad,
        };
    };
    const Operator z = Operator::Zero(d, d);
    auto project = [&](int k, const BlockDensity& y) -> BlockDensity {
        switch (k) {
            case 0: return {y.rho00 + y.rho11, z, z, z};
            case 1: return {-y.rho11, z, z, y.rho11};
            default: return {z, y.rho01, y.rho10, z};
        }
    };
    const double rates[3] = {0.0, -model.gamma1, -0.5 * (model.gamma1 + model.gamma2)};

    BlockDensity out = BlockDensity::zero(d);
    BlockDensity px[3];
    for (int m = 0; m < 3; ++m) {
        px[m] = project(m, x);
        out += Complex(std::exp(rates[m] * dt)) * px[m];
    }
    for (int l = 0; l < 3; ++l) {
        for (int m = 0; m < 3; ++m) {
            const BlockDensity v1 = coupling(px[m]);
            const BlockDensity y = project(l, v1);
            out += Complex(detail::exp_divided_difference({rates[l], rates[m]}, dt)) * y;
            const BlockDensity v2 = coupling(y);
            for (int k = 0; k < 3; ++k)
                out += Complex(detail::exp_divided_difference({rates[k], rates[l], rates[m]}, dt)) *
                       project(k, v2);
        }
    }
    return out;
}

// The large-Gamma2 closed forms for one step, term by term as derived in the
// small-Gamma1*dt expansion (O(kappa^2/Gamma2^2) dropped). Only meaningful for
// Gamma1*dt << 1 << Gamma2*dt.
inline BlockDensity asymptotic_step(const SplitLindbladModel& model, const BlockDensity& x, double dt) {
    if (model.mode_dim != 2) throw std::invalid_argument("asymptotic_step: requires a two-level output mode");
    const Operator& h = model.H0;
    const Operator& a = model.lowering;
    const Operator ad = a.adjoint();
    const Complex ik = kI * model.kappa;
    const double g2 = model.gamma2, g1 = model.gamma1, k2 = model.kappa * model.kappa;
    const Operator& r00 = x.rho00;
    const Operator& r01 = x.rho01;
    const Operator& r10 = x.rho10;
    const Operator& r11 = x.rho11;

    const Operator c0 = ik * r01 * a - ik * ad * r10;
    const Operator c1 = ik * r10 * ad - ik * a * r01;
    const Operator feed = ik * a * r01 - ik * r10 * ad;

    BlockDensity y;
    // The Gamma1^2 terms carry the square that the second-order expansion
    // produces (printed without it in the original derivation).
    y.rho00 = r00 - kI * commutator(h, r00) * dt + g1 * r11 * dt +
              (2.0 * k2 * dt / g2) * (2.0 * ad * r11 * a - ad * a * r00 - r00 * ad * a) + (2.0 / g2) * c0 -
              (2.0 * kI * dt / g2) * commutator(h, c0) - (2.0 * g1 * dt / g2) * feed -
              commutator(h, commutator(h, r00)) * (dt * dt / 2.0) - g1 * g1 * r11 * (dt * dt / 2.0) -
              kI * g1 * commutator(h, r11) * dt * dt;
    y.rho01 = (2.0 / g2) * (ik * r00 * ad - ik * ad * r11) -
              (2.0 * ik * dt / g2) *
                  (-kI * ad * commutator(h, r11) + kI * commutator(h, r00) * ad - g1 * commutator(ad, r11));
    y.rho10 = (2.0 / g2) * (-ik * a * r00 + ik * r11 * a) +
              (2.0 * ik * dt / g2) *
                  (-kI * commutator(h, r11) * a + kI * a * commutator(h, r00) + g1 * commutator(a, r11));
    y.rho11 = r11 - kI * commutator(h, r11) * dt - g1 * r11 * dt +
              (2.0 * k2 * dt / g2) * (2.0 * a * r00 * ad - a * ad * r11 - r11 * a * ad) + (2.0 / g2) * c1 -
              (2.0 * kI * dt / g2) * commutator(h, c1) + (2.0 * g1 * dt / g2) * feed -
              commutator(h, commutator(h, r11)) * (dt * dt / 2.0) + g1 * g1 * r11 * (dt * dt / 2.0) +
              kI * g1 * commutator(h, r11) * dt * dt;
    return y;
}

// Coupled equations for the diagonal blocks after the off-diagonal blocks are
// eliminated, gamma = 4 kappa^2 / Gamma2, H_eff = H0 - i (gamma/2) a^dag a.
// Off-diagonal blocks of the input are ignored and of the output are zero.
//
// The reabsorption loss of rho11 is written as -(gamma/2){a a^dag, rho11}, which
// for a bosonic mode ([a, a^dag] = 1) is the H_eff damping plus -gamma rho11.
inline BlockDensity intermediate_rhs(const BlockDensity& x, const Operator& H0, const Operator& a, double gamma,
                                     double Gamma1, bool include_reabsorption = true) {
    const Index d = x.system_dim();
    const Operator ad = a.adjoint();
    const Operator heff = H0 - 0.5 * kI * gamma * (ad * a);
    const Operator heff_dag = heff.adjoint();
    BlockDensity dx = BlockDensity::zero(d);
    dx.rho00 = -kI * heff * x.rho00 + kI * x.rho00 * heff_dag + Gamma1 * x.rho11;
    // rho11 sees no a^dag a damping from the emission channel; undo the H_eff part.
    dx.rho11 = -kI * heff * x.rho11 + kI * x.rho11 * heff_dag + 0.5 * gamma * anticommutator(ad * a, x.rho11) +
               gamma * a * x.rho00 * ad - Gamma1 * x.rho11;
    if (include_reabsorption) {
        dx.rho00 += gamma * ad * x.rho11 * a;
        dx.rho11 -= 0.5 * gamma * anticommutator(a * ad, x.rho11);
    }
    return dx;
}

}  // namespace qtraj
