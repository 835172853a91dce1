// photodetect.hpp: cavity, detector-mode and system (x) output-mode models,
// atom-beam decoherence rates and the rate hierarchy check.

#pragma once

#include "qtraj/hilbert.hpp"
#include "qtraj/lindblad.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace qtraj {

struct DetectorParams {
    double lambda = 0.0;  // phase kick per atom, radians
    double tau = 1.0;     // mean atom spacing
    double Gamma1 = 0.0;
    double Gamma2 = 0.0;
    double kappa = 0.0;
    std::optional<double> omega_det;

    void validate() const {
        if (Gamma1 < 0.0 || Gamma2 < 0.0 || kappa < 0.0)
            throw std::invalid_argument("DetectorParams: rates must be non-negative");
        if (!(tau > 0.0)) throw std::invalid_argument("DetectorParams: tau must be positive");
    }
};

// gamma = 4 kappa^2 / Gamma2
inline double effective_gamma(double kappa, double Gamma2) {
    if (!(Gamma2 > 0.0)) throw std::invalid_argument("effective_gamma: Gamma2 must be positive");
    return 4.0 * kappa * kappa / Gamma2;
}

inline LindbladModel cavity_model(const Operator& H0, double gamma, Index dim) {
    if (dim < 2) throw std::invalid_argument("cavity_model: dim must be >= 2");
    if (gamma < 0.0) throw std::invalid_argument("cavity_model: gamma must be non-negative");
    if (H0.rows() != dim || H0.cols() != dim)
        throw std::invalid_argument("cavity_model: H0 dimension does not match dim");
    return {H0, {std::sqrt(gamma) * annihilation(dim)}};
}

// sqrt(Gamma1) b and sqrt(Gamma2) b^dag b on the mode alone.
inline LindbladModel detector_mode_model(double Gamma1, double Gamma2, Index dim) {
    if (dim < 2) throw std::invalid_argument("detector_mode_model: dim must be >= 2");
    if (Gamma1 < 0.0 || Gamma2 < 0.0) throw std::invalid_argument("detector_mode_model: rates must be non-negative");
    return {zeros(dim), {std::sqrt(Gamma1) * annihilation(dim), std::sqrt(Gamma2) * number_op(dim)}};
}

inline SplitLindbladModel total_model(const Operator& H0, const DetectorParams& p, Index mode_dim = 2) {
    p.validate();
    return {H0, annihilation(H0.rows()), p.kappa, p.Gamma1, p.Gamma2, mode_dim};
}

// Channels in order: sqrt(gamma) a (x) b^dag, [sqrt(gamma) a^dag (x) b], sqrt(Gamma1) 1 (x) b.
inline LindbladModel intermediate_model(const Operator& H0, double gamma, double Gamma1, bool include_reabsorption,
                                        Index mode_dim = 2) {
    if (gamma < 0.0 || Gamma1 < 0.0) throw std::invalid_argument("intermediate_model: rates must be non-negative");
    const Index ds = H0.rows();
    const Operator a = annihilation(ds);
    const Operator b = annihilation(mode_dim);
    std::vector<Operator> ls;
    ls.push_back(std::sqrt(gamma) * tensor(a, Operator(b.adjoint())));
    if (include_reabsorption) ls.push_back(std::sqrt(gamma) * tensor(Operator(a.adjoint()), b));
    ls.push_back(std::sqrt(Gamma1) * tensor(identity(ds), b));
    return {tensor(H0, identity(mode_dim)), std::move(ls), CompositeSpace{ds, mode_dim}};
}

// Same form as the cavity; valid on time scales long compared to 1/Gamma1.
inline LindbladModel adiabatic_model(const Operator& H0, double gamma, Index dim) {
    return cavity_model(H0, gamma, dim);
}

// Gamma2 = -(1/tau) ln cos(lambda dn), |lambda dn| < pi/2.
inline double decoherence_rate(double lambda, double tau, double delta_n) {
    if (!(tau > 0.0)) throw std::invalid_argument("decoherence_rate: tau must be positive");
    const double x = std::abs(lambda * delta_n);
    if (!(x < 0.5 * std::numbers::pi)) {
        std::ostringstream os;
        os << "decoherence_rate: |lambda * delta_n| = " << x << " must be < pi/2";
        throw std::domain_error(os.str());
    }
    return -std::log(std::cos(x)) / tau;
}

// Per-atom suppression of <n|rho|n'>.
inline double atom_kick_factor(double lambda, long n, long n_prime) {
    if (n < 0 || n_prime < 0) throw std::invalid_argument("atom_kick_factor: occupation numbers must be >= 0");
    return std::cos(lambda * static_cast<double>(n - n_prime));
}

// Phase e^{-2 i lambda n} carried by the outgoing atom.
inline Complex atom_outgoing_phase(double lambda, long n) {
    return std::exp(-2.0 * kI * lambda * static_cast<double>(n));
}

struct HierarchyReport {
    double gamma = 0.0;
    double nbar = 0.0;
    double ratio21 = 0.0;  // Gamma2 / Gamma1
    double ratio1g = 0.0;  // Gamma1 / (gamma nbar)
    double omega = 0.0;
    double threshold = 10.0;
    bool pass21 = false;
    bool pass1g = false;

    [[nodiscard]] bool ok() const { return pass21 && pass1g; }

    [[nodiscard]] std::vector<std::string> warnings() const {
        std::vector<std::string> w;
        if (!pass21) {
            std::ostringstream os;
            os << "Gamma2/Gamma1 = " << ratio21 << " below " << threshold;
            w.push_back(os.str());
        }
        if (!pass1g) {
            std::ostringstream os;
            os << "Gamma1/(gamma nbar) = " << ratio1g << " below " << threshold;
            w.push_back(os.str());
        }
        return w;
    }
};

inline HierarchyReport validate_hierarchy(const DetectorParams& p, const Ket& psi0, const Operator& H0,
                                          double threshold = 10.0) {
    p.validate();
    if (psi0.size() != H0.rows()) throw std::invalid_argument("validate_hierarchy: psi0 does not match H0");
    constexpr double inf = std::numeric_limits<double>::infinity();
    HierarchyReport r;
    r.threshold = threshold;
    r.gamma = p.Gamma2 > 0.0 ? effective_gamma(p.kappa, p.Gamma2) : (p.kappa == 0.0 ? 0.0 : inf);
    r.nbar = expectation(number_op(H0.rows()), psi0) / psi0.squaredNorm();
    r.omega = H0.size() ? herm_eig(H0).values.cwiseAbs().maxCoeff() : 0.0;
    r.ratio21 = p.Gamma1 > 0.0 ? p.Gamma2 / p.Gamma1 : inf;
    const double gn = r.gamma * r.nbar;
    r.ratio1g = gn > 0.0 ? p.Gamma1 / gn : inf;
    r.pass21 = r.ratio21 >= threshold;
    r.pass1g = r.ratio1g >= threshold;
    return r;
}

// Shared parameter point: two-level system, H0 = 0, kappa = 1, Gamma2 = 100,
// Gamma1 = 10, dt = 1e-3, projection spacing 0.1, start in |e>.
struct RefScenario {
    static constexpr double kappa = 1.0;
    static constexpr double Gamma2 = 100.0;
    static constexpr double Gamma1 = 10.0;
    static constexpr double dt = 1e-3;
    static constexpr double delta_t = 0.1;
    static constexpr Index dim = 2;

    static double gamma() { return effective_gamma(kappa, Gamma2); }
    static Operator H0() { return zeros(dim); }
    static Ket excited() { return basis_ket(dim, 1); }
    static Ket ground() { return basis_ket(dim, 0); }
    static DetectorParams params() {
        DetectorParams p;
        p.kappa = kappa;
        p.Gamma1 = Gamma1;
        p.Gamma2 = Gamma2;
        return p;
    }
    static SplitLindbladModel split() { return total_model(H0(), params()); }
    static LindbladModel cavity() { return cavity_model(H0(), gamma(), dim); }
};

}  // namespace qtraj
