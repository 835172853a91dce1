#include "qtraj/lindblad.hpp"
#include "qtraj/photodetect.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace qtraj;

namespace {

Operator random_density(Index d, std::mt19937_64& g) {
    std::normal_distribution<double> n;
    Operator m(d, d);
    for (Index i = 0; i < d; ++i)
        for (Index j = 0; j < d; ++j) m(i, j) = Complex(n(g), n(g));
    Operator r = m * m.adjoint();
    return r / r.trace();
}

LindbladModel random_model(Index d, std::mt19937_64& g) {
    std::normal_distribution<double> n;
    Operator h(d, d), l(d, d);
    for (Index i = 0; i < d; ++i)
        for (Index j = 0; j < d; ++j) {
            h(i, j) = Complex(n(g), n(g));
            l(i, j) = 0.5 * Complex(n(g), n(g));
        }
    h = 0.5 * (h + h.adjoint()).eval();
    return {h, {l, 0.3 * number_op(d)}};
}

double max_rel(const Operator& x, const Operator& ref) {
    return (x - ref).cwiseAbs().maxCoeff() / ref.cwiseAbs().maxCoeff();
}

double split_error(double kappa, int n_states, std::uint64_t seed) {
    const SplitLindbladModel m(zeros(2), annihilation(2), kappa, 10.0, 100.0);
    const Operator s = superop_expm(m.full(), 0.1);
    std::mt19937_64 g(seed);
    double worst = 0.0;
    for (int k = 0; k < n_states; ++k) {
        const Operator rho = random_density(4, g);
        const Operator exact = apply_superop(s, rho);
        const Operator approx = from_blocks(split_evolve_second_order(m, to_blocks(rho, 2), 0.1));
        worst = std::max(worst, max_rel(approx, exact));
    }
    return worst;
}

}  // namespace

TEST(Model, RejectsNonHermitianHamiltonian) {
    EXPECT_THROW(LindbladModel(annihilation(2), {}), std::invalid_argument);
    EXPECT_THROW(LindbladModel(zeros(2), {identity(3)}), std::invalid_argument);
}

TEST(Liouvillian, CommutantGivesZero) {
    const LindbladModel m(sigma_z(), {});
    EXPECT_LT(liouvillian_apply(m, 0.5 * identity(2)).norm(), 1e-15);
}

TEST(Liouvillian, CavityOnePhoton) {
    const double g = 0.7;
    const auto m = cavity_model(zeros(3), g, 3);
    const Operator d = liouvillian_apply(m, projector(3, 1));
    EXPECT_LT((d - g * (projector(3, 0) - projector(3, 1))).norm(), 1e-14);
}

TEST(Liouvillian, TracelessAndHermitian) {
    std::mt19937_64 g(11);
    const auto m = random_model(4, g);
    for (int k = 0; k < 5; ++k) {
        const Operator d = liouvillian_apply(m, random_density(4, g));
        EXPECT_LT(std::abs(d.trace()), 1e-12);
        EXPECT_LT(hermiticity_defect(d), 1e-12);
    }
}

TEST(Liouvillian, SuperopMatchesApply) {
    std::mt19937_64 g(12);
    const auto m = random_model(3, g);
    const Operator s = liouvillian_superop(m);
    const Operator rho = random_density(3, g);
    EXPECT_LT((apply_superop(s, rho) - liouvillian_apply(m, rho)).norm(), 1e-12);
}

TEST(EvolveMaster, ClosedSystemRotation) {
    const LindbladModel m(0.5 * sigma_z(), {});
    Ket plus(2);
    plus << 1.0, 1.0;
    plus /= std::sqrt(2.0);
    const Operator rho0 = plus * plus.adjoint();
    const auto tr = evolve_master(m, rho0, 3.0, 1e-3);
    const Operator u = expm(Operator(-kI * 3.0 * m.H));
    EXPECT_LT((tr.states.back() - u * rho0 * u.adjoint()).norm(), 1e-8);
}

TEST(EvolveMaster, CavityDecay) {
    const double g = 0.04;
    const auto m = cavity_model(zeros(2), g, 2);
    const auto tr = evolve_master(m, projector(2, 1), 20.0, 1e-3, {0.0, 5.0, 10.0, 20.0});
    ASSERT_EQ(tr.times.size(), 4u);
    for (std::size_t k = 0; k < tr.times.size(); ++k)
        EXPECT_NEAR(tr.states[k](1, 1).real(), std::exp(-g * tr.times[k]), 1e-6);
}

TEST(EvolveMaster, TraceHermiticityPositivity) {
    std::mt19937_64 g(13);
    const auto m = random_model(4, g);
    const double T = 5.0 / generator_norm_bound(m) * 4.0;
    const double dt = 0.05 / generator_norm_bound(m);
    const double steps = std::round(T / dt);
    const auto tr = evolve_master(m, random_density(4, g), steps * dt, dt);
    for (const auto& rho : tr.states) {
        EXPECT_NEAR(rho.trace().real(), 1.0, 1e-8);
        EXPECT_LT(hermiticity_defect(rho), 1e-10);
        EXPECT_GE(min_eigenvalue(0.5 * (rho + rho.adjoint())), -1e-8);
    }
}

TEST(EvolveMaster, AgreesWithSuperopExpm) {
    std::mt19937_64 g(14);
    const auto m = random_model(3, g);
    const Operator rho0 = random_density(3, g);
    const double dt = 0.02 / generator_norm_bound(m);
    const double T = 400 * dt;
    const auto tr = evolve_master(m, rho0, T, dt);
    EXPECT_LT((tr.states.back() - apply_superop(superop_expm(m, T), rho0)).norm(), 1e-6);
}

TEST(EvolveMaster, RejectsLargeStep) {
    const auto m = cavity_model(zeros(2), 100.0, 2);
    EXPECT_THROW(evolve_master(m, projector(2, 1), 1.0, 0.01), std::invalid_argument);
    EXPECT_THROW(evolve_master(m, projector(2, 1), 1.00005, 1e-4), std::invalid_argument);
}

TEST(SuperopExpm, IdentityAtZero) {
    std::mt19937_64 g(15);
    const auto m = random_model(3, g);
    EXPECT_LT((superop_expm(m, 0.0) - identity(9)).norm(), 1e-15);
}

TEST(SuperopExpm, DerivativeAtZero) {
    std::mt19937_64 g(16);
    const auto m = random_model(3, g);
    const double h = 1e-6;
    const Operator fd = (superop_expm(m, h) - superop_expm(m, -h)) / (2.0 * h);
    EXPECT_LT((fd - liouvillian_superop(m)).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(SuperopExpm, TracePreservingRows) {
    std::mt19937_64 g(17);
    const auto m = random_model(3, g);
    const Operator s = superop_expm(m, 0.7);
    // Tr(X) = vec(I)^dag vec(X) is invariant.
    const Eigen::VectorXcd vi = vectorize(identity(3));
    EXPECT_LT((vi.adjoint() * s - vi.adjoint()).norm(), 1e-10);
}

TEST(SuperopExpm, Semigroup) {
    std::mt19937_64 g(18);
    const auto m = random_model(3, g);
    EXPECT_LT((superop_expm(m, 0.9) - superop_expm(m, 0.4) * superop_expm(m, 0.5)).norm(), 1e-8);
}

TEST(SuperopExpm, DimensionCap) {
    const auto m = cavity_model(zeros(41), 1.0, 41);
    EXPECT_THROW(liouvillian_superop(m), std::invalid_argument);
}

TEST(SuperopFromMap, ReproducesLiouvillian) {
    std::mt19937_64 g(19);
    const auto m = random_model(3, g);
    const Operator s = superop_from_map([&](const Operator& x) { return liouvillian_apply(m, x); }, 3);
    EXPECT_LT((s - liouvillian_superop(m)).norm(), 1e-12);
}

TEST(Blocks, RoundTrip) {
    std::mt19937_64 g(20);
    const Operator rho = random_density(6, g);
    const auto x = to_blocks(rho, 3);
    EXPECT_EQ(from_blocks(x), rho);
    EXPECT_LT((x.rho10 - x.rho01.adjoint()).norm(), 1e-15);
    EXPECT_LT(std::abs(x.trace() - rho.trace()), 1e-15);
}

TEST(ExpL2, ZeroTime) {
    std::mt19937_64 g(21);
    const auto x = to_blocks(random_density(4, g), 2);
    EXPECT_EQ(from_blocks(exp_L2(x, 0.0, 100.0)), from_blocks(x));
}

TEST(ExpL2, HalvesOffDiagonal) {
    std::mt19937_64 g(22);
    const auto x = to_blocks(random_density(4, g), 2);
    const double gamma2 = 3.0;
    const auto y = exp_L2(x, 2.0 * std::log(2.0) / gamma2, gamma2);
    EXPECT_LT((y.rho01 - 0.5 * x.rho01).norm(), 1e-15);
    EXPECT_LT((y.rho10 - 0.5 * x.rho10).norm(), 1e-15);
    EXPECT_EQ(y.rho00, x.rho00);
    EXPECT_EQ(y.rho11, x.rho11);
}

TEST(ExpL2, MatchesDephasingModel) {
    std::mt19937_64 g(23);
    const Operator rho = random_density(4, g);
    const double gamma2 = 100.0;
    const LindbladModel l2(zeros(4), {std::sqrt(gamma2) * tensor(identity(2), number_op(2))}, {2, 2});
    const auto tr = evolve_master(l2, rho, 0.05, 1e-4);
    EXPECT_LT((from_blocks(exp_L2(to_blocks(rho, 2), 0.05, gamma2)) - tr.states.back()).norm(), 1e-8);
    EXPECT_THROW(exp_L2(to_blocks(rho, 2), -1.0, gamma2), std::invalid_argument);
}

TEST(Split, FullModelIsBasePlusDephasing) {
    const SplitLindbladModel m(0.3 * number_op(2), annihilation(2), 1.0, 10.0, 100.0);
    const LindbladModel l2(zeros(4), {std::sqrt(100.0) * tensor(identity(2), number_op(2))}, {2, 2});
    EXPECT_LT((liouvillian_superop(m.full()) - liouvillian_superop(m.base()) - liouvillian_superop(l2)).norm(), 1e-12);
    EXPECT_DOUBLE_EQ(m.effective_gamma(), 0.04);
}

TEST(Split, DecoupledEqualsExpL2) {
    std::mt19937_64 g(24);
    const SplitLindbladModel m(zeros(2), annihilation(2), 0.0, 0.0, 100.0);
    const auto x = to_blocks(random_density(4, g), 2);
    EXPECT_LT((from_blocks(split_evolve_second_order(m, x, 0.1)) - from_blocks(exp_L2(x, 0.1, 100.0))).norm(), 1e-15);
}

TEST(Split, MatchesOracleAtRef) { EXPECT_LE(split_error(1.0, 20, 25), 1e-3); }

TEST(Split, QuadraticOrBetterInKappa) {
    std::vector<double> lk, le;
    for (double k : {0.25, 0.5, 1.0, 2.0}) {
        lk.push_back(std::log(k));
        le.push_back(std::log(split_error(k, 10, 26)));
    }
    const double mk = (lk[0] + lk[1] + lk[2] + lk[3]) / 4, me = (le[0] + le[1] + le[2] + le[3]) / 4;
    double num = 0.0, den = 0.0;
    for (int i = 0; i < 4; ++i) {
        num += (lk[i] - mk) * (le[i] - me);
        den += (lk[i] - mk) * (lk[i] - mk);
    }
    EXPECT_GE(num / den, 1.8);
}

TEST(Split, OffDiagonalOutputIsSmall) {
    std::mt19937_64 g(27);
    const SplitLindbladModel m(zeros(2), annihilation(2), 1.0, 10.0, 100.0);
    for (int k = 0; k < 20; ++k) {
        const auto y = split_evolve_second_order(m, to_blocks(random_density(4, g), 2), 0.1);
        EXPECT_LE(spectral_norm(y.rho01), 3.0 * m.kappa / m.gamma2);
    }
}

TEST(Split, RegimeWarningsNameTheInequality) {
    const SplitLindbladModel m(zeros(2), annihilation(2), 1.0, 10.0, 100.0);
    std::vector<std::string> w;
    split_evolve_second_order(m, to_blocks(projector(4, 2), 2), 0.01, &w);
    ASSERT_FALSE(w.empty());
    EXPECT_NE(w.front().find("Gamma2"), std::string::npos);
}

TEST(DividedDifference, ClosedForms) {
    const double t = 0.3;
    EXPECT_NEAR(detail::exp_divided_difference({0.0}, t), 1.0, 1e-15);
    EXPECT_NEAR(detail::exp_divided_difference({-2.0, -5.0}, t), (std::exp(-5.0 * t) - std::exp(-2.0 * t)) / -3.0, 1e-14);
    EXPECT_NEAR(detail::exp_divided_difference({-4.0, -4.0}, t), t * std::exp(-4.0 * t), 1e-14);
    EXPECT_NEAR(detail::exp_divided_difference({-1.0, -1.0, -1.0}, t), 0.5 * t * t * std::exp(-t), 1e-14);
}

TEST(Asymptotic, CloseToOracleInItsRegime) {
    // Gamma1 dt << 1 << Gamma2 dt.
    const SplitLindbladModel m(zeros(2), annihilation(2), 1.0, 0.5, 1000.0);
    std::mt19937_64 g(28);
    const Operator s = superop_expm(m.full(), 0.05);
    for (int k = 0; k < 5; ++k) {
        const Operator rho = random_density(4, g);
        const Operator y = from_blocks(asymptotic_step(m, to_blocks(rho, 2), 0.05));
        EXPECT_LT(max_rel(y, apply_superop(s, rho)), 2e-2);
    }
}

TEST(Measurement, DiagonalUnchanged) {
    const std::vector<Operator> p{projector(2, 0), projector(2, 1)};
    Operator rho = Operator::Zero(2, 2);
    rho(0, 0) = 0.3;
    rho(1, 1) = 0.7;
    EXPECT_EQ(repeated_measurement_map(rho, p), rho);
}

TEST(Measurement, DephasesPlusState) {
    Ket plus(2);
    plus << 1.0, 1.0;
    plus /= std::sqrt(2.0);
    const std::vector<Operator> p{projector(2, 0), projector(2, 1)};
    EXPECT_LT((repeated_measurement_map(plus * plus.adjoint(), p) - 0.5 * identity(2)).norm(), 1e-15);
}

TEST(Measurement, Idempotent) {
    std::mt19937_64 g(29);
    const std::vector<Operator> p{projector(3, 0), projector(3, 1) + projector(3, 2)};
    const Operator once = repeated_measurement_map(random_density(3, g), p);
    EXPECT_LT((repeated_measurement_map(once, p) - once).norm(), 1e-15);
}

TEST(Measurement, RejectsBadSets) {
    EXPECT_THROW(repeated_measurement_map(identity(2), {projector(2, 0)}), std::invalid_argument);
    EXPECT_THROW(repeated_measurement_map(identity(2), {projector(2, 0), identity(2)}), std::invalid_argument);
}

TEST(IntermediateRhs, NoExcitationReducesToHeffDamping) {
    const double gamma = 0.4;
    const Operator a = annihilation(2);
    BlockDensity x = BlockDensity::zero(2);
    x.rho00 = projector(2, 1);
    const auto d = intermediate_rhs(x, zeros(2), a, gamma, 10.0);
    EXPECT_LT((d.rho00 + 0.5 * gamma * anticommutator(a.adjoint() * a, x.rho00)).norm(), 1e-15);
}

TEST(IntermediateRhs, ConservesTotalTrace) {
    std::mt19937_64 g(30);
    const auto x = to_blocks(random_density(6, g), 3);
    for (bool re : {false, true}) {
        const auto d = intermediate_rhs(x, number_op(3), annihilation(3), 0.3, 5.0, re);
        EXPECT_LT(std::abs(d.rho00.trace() + d.rho11.trace()), 1e-12);
    }
}
