// Acceptance checks C1..C10 on the shared reference point. One line per
// criterion: "C<n> PASS|FAIL <measured> (<tolerance>)".
//
//   acceptance            run all
//   acceptance C3 C7      run some
//   acceptance --strict   exit 1 if any criterion fails
//
// Without --strict the exit code only reflects crashes, so known failures
// stay visible in the log without breaking the test run.

#include "qtraj/io.hpp"
#include "qtraj/qtraj.hpp"

#include <Eigen/Eigenvalues>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <sys/wait.h>
#include <unistd.h>

using namespace qtraj;
namespace fs = std::filesystem;

namespace {

struct Result {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, double x) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, x);
    return buf;
}

using Ref = RefScenario;

Ket excited_mode0() { return tensor(Ref::excited(), basis_ket(2, 0)); }

// ---------------------------------------------------------------- C1

Result c1() {
    const auto model = Ref::cavity();
    const Ket psi0 = Ref::excited();
    const double T = 20.0;
    std::vector<double> times;
    for (int k = 0; k <= 20; ++k) times.push_back(k);
    std::vector<Operator> exact;
    for (double t : times) exact.push_back(apply_superop(superop_expm(model, t), Operator(psi0 * psi0.adjoint())));

    EnsembleOptions opt;
    opt.T = T;
    opt.dt = Ref::dt;
    opt.output_times = times;
    opt.n_traj = 10000;
    opt.master_seed = 1001;
    opt.workers = 1;
    bool pass = true;
    std::string detail;
    for (Engine e : kAllEngines) {
        const auto st = run_ensemble(e, model, psi0, opt);
        double worst = 0.0;
        for (std::size_t k = 0; k < times.size(); ++k) worst = std::max(worst, trace_distance(st.mean[k], exact[k]));
        // ortho is a jump unraveling too and gets the tighter bound
        const double tol = is_diffusive(e) ? 0.03 : 0.02;
        pass = pass && worst <= tol;
        detail += std::string(engine_name(e)) + "=" + fmt("%.4f", worst) + "(<=" + fmt("%.2f", tol) + ") ";
    }
    return {pass, "max trace distance " + detail};
}

// ---------------------------------------------------------------- C2

// e^{-i Heff t} through an eigendecomposition of Heff, so the ket oracle
// does not share the Pade exponential with the trace form.
struct EigenPropagator {
    Eigen::MatrixXcd v, vinv;
    Eigen::VectorXcd lam;
    explicit EigenPropagator(const Operator& heff) {
        Eigen::ComplexEigenSolver<Eigen::MatrixXcd> es(heff);
        v = es.eigenvectors();
        vinv = v.inverse();
        lam = es.eigenvalues();
    }
    Ket apply(double t, const Ket& x) const {
        Eigen::VectorXcd y = vinv * x;
        for (Index i = 0; i < y.size(); ++i) y(i) *= std::exp(-kI * lam(i) * t);
        return v * y;
    }
};

Result c2() {
    std::mt19937_64 g(2002);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> nd;
    const double gamma = Ref::gamma();
    const Operator a = annihilation(2);
    double worst = 0.0;
    int nonzero = 0;
    for (int rep = 0; rep < 100; ++rep) {
        // half on REF itself, half with a drive so multi-click records carry weight
        const Operator h0 = rep % 2 == 0 ? Ref::H0() : Operator(0.5 * sigma_x());
        const auto model = cavity_model(h0, gamma, 2);
        Ket psi(2);
        psi << Complex(nd(g), nd(g)), Complex(nd(g), nd(g));
        psi.normalize();
        const double T = 1.0 + 19.0 * u(g);
        const int n = static_cast<int>(u(g) * 6.0);
        std::vector<double> times(n);
        for (auto& t : times) t = T * u(g);
        std::sort(times.begin(), times.end());
        const double delta_t = 0.05 + 0.5 * u(g);

        const Operator heff = h0 - 0.5 * kI * gamma * (a.adjoint() * a);
        const EigenPropagator prop(heff);
        Ket x = psi;
        double t = 0.0;
        for (double tj : times) {
            x = a * prop.apply(tj - t, x);
            t = tj;
        }
        x = prop.apply(T - t, x);
        const double ket = std::pow(gamma * delta_t, n) * x.squaredNorm();
        const double trace = jump_record_probability(model, psi, times, T, delta_t);
        const double err = ket == 0.0 && trace == 0.0 ? 0.0 : std::abs(trace - ket) / std::abs(ket);
        if (ket > 0.0) ++nonzero;
        worst = std::max(worst, err);
    }
    return {worst <= 1e-12, "max relative error " + fmt("%.3e", worst) + " (<=1e-12) over 100 records, " +
                                std::to_string(nonzero) + " with nonzero probability"};
}

// ---------------------------------------------------------------- C3

Result c3() {
    const auto split = Ref::split();
    const Operator rho0 = excited_mode0() * excited_mode0().adjoint();
    const std::size_t N = 10;
    const double dt = Ref::delta_t, gamma = Ref::gamma(), T = N * dt;

    const auto probs = history_probabilities(split, rho0, N, dt);
    const double p0 = probs.probabilities.front();
    const double e0 = std::abs(p0 / std::exp(-gamma * T) - 1.0);

    double e1 = 0.0;
    std::size_t worst_k = 0;
    for (std::size_t k = 1; k <= N; ++k) {
        std::vector<std::uint8_t> a(k, 0);
        a.back() = 1;
        const History h(a, dt);
        const double p = decoherence_functional(split, rho0, h, h).real();
        const double want = gamma * dt * std::exp(-gamma * static_cast<double>(k - 1) * dt);
        const double e = std::abs(p / want - 1.0);
        if (e > e1) {
            e1 = e;
            worst_k = k;
        }
    }

    const std::size_t M = 5;
    const auto cg = coarse_grain(probs.histories, probs.probabilities, M);
    const auto jm = adiabatic_model(split.H0, split.effective_gamma(), 2);
    double e2 = 0.0, unmatched = 0.0;
    for (const auto& [windows, p] : cg.records) {
        std::vector<double> times;
        for (auto w : windows) times.push_back((static_cast<double>(w) + 0.5) * cg.window);
        const double q = jump_record_probability(jm, Ref::excited(), times, T, cg.window);
        if (q > 0.0)
            e2 = std::max(e2, std::abs(p / q - 1.0));
        else
            unmatched += p;
    }
    const bool pass = e0 <= 0.05 && e1 <= 0.10 && e2 <= 0.10;
    return {pass, "empty record " + fmt("%+.4f", p0 / std::exp(-gamma * T) - 1.0) + " (<=0.05); single click worst " +
                      fmt("%.4f", e1) + " at k=" + std::to_string(worst_k) + " (<=0.10); coarse M=5 worst " +
                      fmt("%.4f", e2) + " (<=0.10); mass on records impossible for jumps " + fmt("%.2e", unmatched)};
}

// ---------------------------------------------------------------- C4

Result c4() {
    const Operator rho0 = excited_mode0() * excited_mode0().adjoint();
    const double dt = Ref::delta_t;
    std::vector<double> lx, ly;
    double ref_ratio = 0.0;
    std::string scan;
    for (double x : {5.0, 10.0, 20.0, 40.0}) {
        DetectorParams p = Ref::params();
        p.Gamma2 = x / dt;
        const auto t = decoherence_table(total_model(Ref::H0(), p), rho0, 10, dt);
        if (x == 10.0) ref_ratio = t.max_ratio;
        lx.push_back(std::log(x));
        ly.push_back(std::log(t.max_ratio));
        scan += fmt("%g:", x) + fmt("%.3e ", t.max_ratio);
    }
    const double mx = std::accumulate(lx.begin(), lx.end(), 0.0) / lx.size();
    const double my = std::accumulate(ly.begin(), ly.end(), 0.0) / ly.size();
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
        sxy += (lx[i] - mx) * (ly[i] - my);
        sxx += (lx[i] - mx) * (lx[i] - mx);
    }
    const double exponent = -sxy / sxx;
    const bool pass = ref_ratio <= 0.01 && exponent >= 1.6 && exponent <= 2.4;
    return {pass, "max DH ratio at Gamma2*dt=10 " + fmt("%.4f", ref_ratio) + " (<=0.01); fitted exponent " +
                      fmt("%.3f", exponent) + " ([1.6,2.4]); scan " + scan};
}

// ---------------------------------------------------------------- C5

double block_error(const BlockDensity& a, const Operator& exact) {
    const Operator d = from_blocks(a) - exact;
    return d.cwiseAbs().maxCoeff() / exact.cwiseAbs().maxCoeff();
}

Result c5() {
    std::mt19937_64 g(5005);
    std::normal_distribution<double> nd;
    auto random_rho = [&] {
        Operator x(4, 4);
        for (Index i = 0; i < 4; ++i)
            for (Index j = 0; j < 4; ++j) x(i, j) = Complex(nd(g), nd(g));
        Operator r = x * x.adjoint();
        return Operator(r / r.trace());
    };
    const auto split = Ref::split();
    const double dt = Ref::delta_t;
    const Operator s = superop_expm(split.full(), dt);
    double worst = 0.0;
    for (int rep = 0; rep < 50; ++rep) {
        const Operator rho = random_rho();
        const auto y = split_evolve_second_order(split, to_blocks(rho, 2), dt);
        worst = std::max(worst, block_error(y, apply_superop(s, rho)));
    }
    const Operator rho = random_rho();
    std::vector<double> lx, ly;
    for (double kappa : {0.25, 0.5, 1.0, 2.0}) {
        const SplitLindbladModel m(Ref::H0(), annihilation(2), kappa, Ref::Gamma1, Ref::Gamma2);
        const auto y = split_evolve_second_order(m, to_blocks(rho, 2), dt);
        lx.push_back(std::log(kappa * dt));
        ly.push_back(std::log(block_error(y, apply_superop(superop_expm(m.full(), dt), rho))));
    }
    const double mx = std::accumulate(lx.begin(), lx.end(), 0.0) / lx.size();
    const double my = std::accumulate(ly.begin(), ly.end(), 0.0) / ly.size();
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
        sxy += (lx[i] - mx) * (ly[i] - my);
        sxx += (lx[i] - mx) * (lx[i] - mx);
    }
    const double slope = sxy / sxx;
    return {worst <= 1e-3 && slope >= 1.8, "max relative error " + fmt("%.3e", worst) + " (<=1e-3) on 50 states; slope " +
                                               fmt("%.3f", slope) + " (>=1.8)"};
}

// ---------------------------------------------------------------- C6

Result c6() {
    const auto split = Ref::split();
    const auto ad = adiabatic_model(Ref::H0(), Ref::gamma(), 2);
    const Operator rho0 = excited_mode0() * excited_mode0().adjoint();
    const Operator sys0 = Ref::excited() * Ref::excited().adjoint();
    const double step = 0.25, T = 1.0 / Ref::gamma();
    const Operator sf = superop_expm(split.full(), step), sa = superop_expm(ad, step);
    Operator x = rho0, y = sys0;
    double worst = 0.0, at = 0.0;
    for (double t = step; t <= T + 1e-9; t += step) {
        x = apply_superop(sf, x);
        y = apply_superop(sa, y);
        const double d = trace_distance(partial_trace(x, split.space(), 0), y);
        if (d > worst) {
            worst = d;
            at = t;
        }
    }
    const double tol = 5.0 * Ref::gamma() / Ref::Gamma1;
    return {worst <= tol, "max trace distance " + fmt("%.4f", worst) + " at t=" + fmt("%.2f", at) + " (<=" +
                              fmt("%.2f", tol) + ") over gamma*T<=1"};
}

// ---------------------------------------------------------------- C7

Result c7() {
    const double T = 5.0, window = 0.5;
    const std::size_t n = 10000;
    const auto nw = static_cast<std::size_t>(std::lround(T / window));
    using Record = std::vector<std::size_t>;
    auto record_of = [&](const std::vector<JumpEvent>& events, bool ups_only) {
        Record r;
        for (const auto& e : events) {
            if (ups_only && e.kind != JumpKind::Up) continue;
            const auto w = std::min(nw - 1, static_cast<std::size_t>((e.t - 1e-12) / window));
            if (r.empty() || r.back() != w) r.push_back(w);
        }
        return r;
    };

    EnsembleOptions opt;
    opt.T = T;
    opt.dt = Ref::dt;
    opt.n_traj = n;
    opt.keep_events = true;
    opt.workers = 1;

    opt.master_seed = 7007;
    const auto jumps = run_ensemble(Engine::Jumps, Ref::cavity(), Ref::excited(), opt);

    const auto inter = intermediate_model(Ref::H0(), Ref::gamma(), Ref::Gamma1, false);
    opt.master_seed = 7008;
    opt.excitation_observable = embed(number_op(2), CompositeSpace{2, 2}, 1);
    const auto ortho = run_ensemble(Engine::Ortho, inter, excited_mode0(), opt);

    std::map<Record, double> p, q;
    for (const auto& ev : jumps.events) p[record_of(ev, false)] += 1.0 / n;
    for (const auto& ev : ortho.events) q[record_of(ev, true)] += 1.0 / n;
    double tv = 0.0;
    std::map<Record, int> keys;
    for (const auto& [r, v] : p) keys[r] = 1;
    for (const auto& [r, v] : q) keys[r] = 1;
    for (const auto& [r, v] : keys) tv += std::abs(p[r] - q[r]);
    tv *= 0.5;
    return {tv <= 0.05, "total variation " + fmt("%.4f", tv) + " (<=0.05) over " + std::to_string(keys.size()) +
                            " records, T=5, window 0.5, n=1e4"};
}

// ---------------------------------------------------------------- C8

Result c8() {
    const auto split = Ref::split();
    const Operator rho0 = excited_mode0() * excited_mode0().adjoint();
    const std::size_t N = 10;
    const double dt = Ref::delta_t;
    const Operator heff = Ref::cavity().effective_hamiltonian();

    // no-click history against the normalized no-jump state
    const History h0(std::vector<std::uint8_t>(N, 0), dt);
    const Ket ref0 = tensor(Ket(expm(Operator(-kI * h0.duration() * heff)) * Ref::excited()), basis_ket(2, 0));
    const auto r0 = pt_eigen_report(pt_decoherence_functional(split, rho0, h0, h0), ref0);
    // click in the last interval: a e^{-i Heff (N-1) dt}|e> with the mode excited
    std::vector<std::uint8_t> a1(N, 0);
    a1.back() = 1;
    const History h1(a1, dt);
    const Ket ref1 = tensor(Ket(annihilation(2) * expm(Operator(-kI * (static_cast<double>(N - 1) * dt) * heff)) * Ref::excited()),
                            basis_ket(2, 1));
    const auto r1 = pt_eigen_report(pt_decoherence_functional(split, rho0, h1, h1), ref1);

    // off-diagonal operators over all pairs, by the same prefix-pair recursion
    // as the scalar table
    const auto probs = history_probabilities(split, rho0, N, dt);
    const HistoryEvolver ev(split, dt, Backend::Exact);
    const auto sched = ProjectorSchedule::photon_number(2, 2);
    const auto& P = sched.at(0);
    double worst = 0.0;
    std::size_t undefined = 0;
    std::function<void(std::size_t, std::size_t, std::size_t, const Operator&)> rec =
        [&](std::size_t j, std::size_t i, std::size_t ip, const Operator& x) {
            if (j == N) {
                if (i == ip) return;
                const double p = probs.probabilities[i], pp = probs.probabilities[ip];
                if (p < kProbabilityFloor || pp < kProbabilityFloor) {
                    ++undefined;
                    return;
                }
                worst = std::max(worst, trace_norm(x) / std::sqrt(p * pp));
                return;
            }
            const Operator y = ev(x);
            for (std::size_t a = 0; a < 2; ++a)
                for (std::size_t b = 0; b < 2; ++b) rec(j + 1, 2 * i + a, 2 * ip + b, Operator(P[a] * y * P[b]));
        };
    rec(0, 0, 0, rho0);

    const double dom = std::min(r0.dominance, r1.dominance);
    const double fid = std::min(r0.fidelity, r1.fidelity);
    const bool pass = dom >= 1e3 && fid >= 0.99 && worst <= 0.1;
    return {pass, "dominance 0^N " + fmt("%.1f", r0.dominance) + ", 0^(N-1)1 " + fmt("%.1f", r1.dominance) +
                      " (>=1e3); fidelity min " + fmt("%.6f", fid) + " (>=0.99); off-diagonal max ||D||_1/sqrt(pp') " +
                      fmt("%.4f", worst) + " (<=0.1), " + std::to_string(undefined) + " pairs below floor"};
}

// ---------------------------------------------------------------- C9

Result c9() {
    const auto split = Ref::split();
    const Operator rho0 = excited_mode0() * excited_mode0().adjoint();
    const double rn = trajectory_consistency_check(split, rho0, ProjectorSchedule::photon_number(2, 2), 10, Ref::delta_t);
    const double rp = trajectory_consistency_check(split, rho0, ProjectorSchedule::plus_minus(2), 10, Ref::delta_t);
    const double tol = 5.0 * Ref::kappa / Ref::Gamma2;
    const bool pass = rn <= tol && rp >= 10.0 * rn;
    return {pass, "number-basis residual " + fmt("%.4e", rn) + " (<=" + fmt("%.2f", tol) + "); plus/minus residual " +
                      fmt("%.4e", rp) + ", ratio " + fmt("%.2f", rp / rn) + " (>=10)"};
}

// ---------------------------------------------------------------- C10

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Drops the timestamp: the "# generated" CSV line and the "generated" field
// of a JSON metadata line.
std::string strip_timestamp(const std::string& s) {
    std::istringstream in(s);
    std::string line, out;
    while (std::getline(in, line)) {
        if (line.rfind("# generated", 0) == 0) continue;
        if (!line.empty() && line[0] == '{') {
            auto j = json::parse(line);
            if (j.contains("meta") && j["meta"].is_object()) j["meta"].erase("generated");
            line = j.dump();
        }
        out += line + '\n';
    }
    return out;
}

Result c10() {
    const fs::path dir = fs::temp_directory_path() / ("qtraj_acceptance_" + std::to_string(::getpid()));
    fs::create_directories(dir);
    const fs::path samples = QTRAJ_SAMPLES_DIR;
    const std::vector<std::pair<std::string, std::string>> runs{
        {"evolve", "ref_cavity_evolve.json"}, {"traj", "ref_jumps_traj.json"}, {"traj", "ref_ortho_intermediate.json"},
        {"ensemble", "ref_ensemble.json"},    {"hist", "ref_hist.json"},       {"compare", "ref_compare.json"}};
    int identical = 0, total = 0;
    std::string bad;
    for (const auto& [cmd, cfg] : runs) {
        std::vector<std::string> outs;
        for (int workers : {1, 8, 1}) {
            // same path every time: the path itself is part of the recorded config
            const fs::path out = dir / (cmd + "_" + cfg + ".out");
            const std::string line = std::string(QTRAJ_CLI_PATH) + " " + cmd + " --config " + (samples / cfg).string() +
                                     " --workers " + std::to_string(workers) + " --out " + out.string() + " 2>/dev/null";
            const int status = std::system(line.c_str());
            if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) {
                outs.push_back("exit " + std::to_string(status));
                continue;
            }
            std::string body = strip_timestamp(slurp(out));
            if (cmd == "hist") body += slurp(out.string() + ".summary.json");
            outs.push_back(body);
        }
        ++total;
        if (outs[0] == outs[1] && outs[0] == outs[2] && outs[0].rfind("exit ", 0) != 0)
            ++identical;
        else
            bad += cmd + ":" + cfg + " ";
    }
    fs::remove_all(dir);
    return {identical == total, std::to_string(identical) + "/" + std::to_string(total) +
                                    " commands bit-identical across reruns with 1 and 8 workers" +
                                    (bad.empty() ? "" : "; differing: " + bad)};
}

}  // namespace

int main(int argc, char** argv) {
    const std::vector<std::pair<std::string, std::function<Result()>>> all{
        {"C1", c1}, {"C2", c2}, {"C3", c3}, {"C4", c4}, {"C5", c5},
        {"C6", c6}, {"C7", c7}, {"C8", c8}, {"C9", c9}, {"C10", c10}};
    bool strict = false;
    std::vector<std::string> wanted;
    for (int i = 1; i < argc; ++i) {
        const std::string a = argv[i];
        if (a == "--strict")
            strict = true;
        else
            wanted.push_back(a);
    }
    int failed = 0;
    for (const auto& [name, fn] : all) {
        if (!wanted.empty() && std::find(wanted.begin(), wanted.end(), name) == wanted.end()) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Result r;
        try {
            r = fn();
        } catch (const std::exception& e) {
            std::cout << name << " ERROR " << e.what() << std::endl;
            return 2;
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::cout << name << (r.pass ? " PASS " : " FAIL ") << r.detail << " [" << fmt("%.1f", secs) << " s]"
                  << std::endl;
        if (!r.pass) ++failed;
    }
    return strict && failed > 0 ? 1 : 0;
}
