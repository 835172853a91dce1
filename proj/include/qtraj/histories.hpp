// histories.hpp: decoherent histories over the system (x) output-mode model.
//
// A history alpha_1..alpha_N is read as: evolve by e^{L dt}, project with
// P_{alpha_1}, evolve, project with P_{alpha_2}, ... so projection j sits at
// time j*dt. The decoherence functional is the trace of the resulting chain
// X -> P_a e^{L dt}(X) P_b started from rho0.

#pragma once

#include "qtraj/hilbert.hpp"
#include "qtraj/lindblad.hpp"

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace qtraj {

inline constexpr std::size_t kMaxEnumerateN = 20;
inline constexpr std::size_t kMaxTableN = 12;
// Histories with p below this are excluded from Dowker-Halliwell ratios.
inline constexpr double kProbabilityFloor = 1e-14;

struct History {
    std::vector<std::uint8_t> alphas;
    double delta_t = 0.0;

    History() = default;
    History(std::vector<std::uint8_t> a, double dt) : alphas(std::move(a)), delta_t(dt) {
        if (alphas.empty()) throw std::invalid_argument("History: N must be >= 1");
        if (!(delta_t > 0.0)) throw std::invalid_argument("History: delta_t must be positive");
    }

    static History parse(std::string_view s, double dt) {
        std::vector<std::uint8_t> a;
        for (char c : s) {
            if (c < '0' || c > '9') throw std::invalid_argument("History: bad character in '" + std::string(s) + "'");
            a.push_back(static_cast<std::uint8_t>(c - '0'));
        }
        return {std::move(a), dt};
    }

    // alpha_1 is the most significant digit.
    static History from_index(std::uint64_t idx, std::size_t n, std::size_t k, double dt) {
        std::vector<std::uint8_t> a(n);
        for (std::size_t j = n; j-- > 0;) {
            a[j] = static_cast<std::uint8_t>(idx % k);
            idx /= k;
        }
        return {std::move(a), dt};
    }

    [[nodiscard]] std::size_t size() const noexcept { return alphas.size(); }
    [[nodiscard]] double duration() const noexcept { return delta_t * static_cast<double>(alphas.size()); }

    [[nodiscard]] std::string str() const {
        std::string s;
        for (auto a : alphas) s.push_back(static_cast<char>('0' + a));
        return s;
    }

    bool operator==(const History&) const = default;
};

inline std::vector<History> enumerate_histories(std::size_t n, double delta_t, std::size_t k = 2) {
    if (n < 1 || n > kMaxEnumerateN)
        throw std::invalid_argument("enumerate_histories: N must be in [1, " + std::to_string(kMaxEnumerateN) + "]");
    if (k < 2) throw std::invalid_argument("enumerate_histories: need at least two alternatives");
    std::uint64_t total = 1;
    for (std::size_t j = 0; j < n; ++j) total *= k;
    std::vector<History> out;
    out.reserve(total);
    for (std::uint64_t i = 0; i < total; ++i) out.push_back(History::from_index(i, n, k, delta_t));
    return out;
}

// ------------------------------ projectors -----------------------------------

struct ProjectorSchedule {
    // One set per projection time; a single set is reused at every time.
    std::vector<std::vector<Operator>> sets;

    [[nodiscard]] const std::vector<Operator>& at(std::size_t j) const {
        if (sets.empty()) throw std::logic_error("ProjectorSchedule: empty");
        return sets.size() == 1 ? sets.front() : sets.at(j);
    }

    [[nodiscard]] std::size_t alternatives() const { return at(0).size(); }

    void validate(Index dim, std::size_t n) const {
        if (sets.empty()) throw std::invalid_argument("ProjectorSchedule: no projector sets");
        if (sets.size() != 1 && sets.size() != n)
            throw std::invalid_argument("ProjectorSchedule: " + std::to_string(sets.size()) +
                                        " sets for " + std::to_string(n) + " projection times");
        for (const auto& s : sets) {
            validate_projector_set(s, dim);
            if (s.size() != sets.front().size())
                throw std::invalid_argument("ProjectorSchedule: sets differ in size");
        }
    }

    // P0 = 1 (x) |0><0|, P1 = 1 - P0 ("photon present").
    static ProjectorSchedule photon_number(Index system_dim, Index mode_dim) {
        const Operator p0 = tensor(identity(system_dim), projector(mode_dim, 0));
        return {{{p0, identity(system_dim * mode_dim) - p0}}};
    }

    // Mode projected onto (|0> +- |1>)/sqrt2 (two-level mode).
    static ProjectorSchedule plus_minus(Index system_dim) {
        Ket plus(2), minus(2);
        plus << 1.0, 1.0;
        minus << 1.0, -1.0;
        plus /= std::sqrt(2.0);
        minus /= std::sqrt(2.0);
        return {{{tensor(identity(system_dim), projector(plus)), tensor(identity(system_dim), projector(minus))}}};
    }
};

// ------------------------------ evolution ------------------------------------

enum class Backend { Exact, Split };

inline std::string_view backend_name(Backend b) { return b == Backend::Exact ? "exact" : "split"; }

inline Backend parse_backend(std::string_view s) {
    if (s == "exact") return Backend::Exact;
    if (s == "split") return Backend::Split;
    throw std::invalid_argument("unknown backend '" + std::string(s) + "' (expected exact or split)");
}

// e^{L dt} on operators of the composite space.
class HistoryEvolver {
public:
    HistoryEvolver(const SplitLindbladModel& model, double delta_t, Backend backend)
        : model_(model), dt_(delta_t), backend_(backend), dim_(model.system_dim() * model.mode_dim) {
        if (!(delta_t > 0.0)) throw std::invalid_argument("HistoryEvolver: delta_t must be positive");
        if (backend == Backend::Exact) {
            s_ = superop_expm(model.full(), delta_t);
        } else {
            if (model.mode_dim != 2) throw std::invalid_argument("HistoryEvolver: split backend needs a two-level mode");
            warnings_ = split_regime_warnings(model, delta_t);
        }
    }

    [[nodiscard]] Operator operator()(const Operator& x) const {
        if (backend_ == Backend::Exact) return apply_superop(s_, x);
        return from_blocks(split_evolve_second_order(model_, to_blocks(x, model_.system_dim()), dt_));
    }

    [[nodiscard]] Index dim() const noexcept { return dim_; }
    [[nodiscard]] double delta_t() const noexcept { return dt_; }
    [[nodiscard]] Backend backend() const noexcept { return backend_; }
    [[nodiscard]] const std::vector<std::string>& warnings() const noexcept { return warnings_; }

private:
    SplitLindbladModel model_;
    double dt_;
    Backend backend_;
    Index dim_;
    Operator s_;
    std::vector<std::string> warnings_;
};

namespace detail {

inline void check_pair(const History& h, const History& hp) {
    if (h.size() != hp.size()) throw std::invalid_argument("decoherence functional: histories differ in length");
    if (h.delta_t != hp.delta_t) throw std::invalid_argument("decoherence functional: histories differ in delta_t");
}

inline Operator chain(const HistoryEvolver& ev, const Operator& rho0, const History& h, const History& hp,
                      const ProjectorSchedule& sched) {
    check_pair(h, hp);
    if (rho0.rows() != ev.dim()) throw std::invalid_argument("decoherence functional: rho0 dimension mismatch");
    sched.validate(ev.dim(), h.size());
    Operator x = rho0;
    for (std::size_t j = 0; j < h.size(); ++j) {
        const auto& set = sched.at(j);
        if (h.alphas[j] >= set.size() || hp.alphas[j] >= set.size())
            throw std::out_of_range("decoherence functional: alternative index exceeds projector set");
        x = set[h.alphas[j]] * ev(x) * set[hp.alphas[j]];
    }
    return x;
}

}  // namespace detail

inline Complex decoherence_functional(const SplitLindbladModel& model, const Operator& rho0, const History& h,
                                      const History& hp, Backend backend = Backend::Exact,
                                      std::optional<ProjectorSchedule> schedule = std::nullopt) {
    const HistoryEvolver ev(model, h.delta_t, backend);
    const auto sched = schedule ? *schedule : ProjectorSchedule::photon_number(model.system_dim(), model.mode_dim);
    return detail::chain(ev, rho0, h, hp, sched).trace();
}

// Operator-valued chain before the final trace.
inline Operator pt_decoherence_functional(const SplitLindbladModel& model, const Operator& rho0, const History& h,
                                          const History& hp, Backend backend = Backend::Exact,
                                          std::optional<ProjectorSchedule> schedule = std::nullopt) {
    const HistoryEvolver ev(model, h.delta_t, backend);
    const auto sched = schedule ? *schedule : ProjectorSchedule::photon_number(model.system_dim(), model.mode_dim);
    return detail::chain(ev, rho0, h, hp, sched);
}

// ------------------------------ tables ---------------------------------------

struct DecoherenceTable {
    std::vector<History> histories;
    Operator D;  // D(i, j) = D[h_i, h_j]
    std::vector<double> probabilities;
    double max_ratio = 0.0;      // max Dowker-Halliwell ratio over pairs i != j
    double epsilon = 0.0;        // sqrt(max_ratio): |D| <= eps sqrt(p p') for all pairs
    std::optional<std::pair<std::size_t, std::size_t>> argmax;
    std::size_t undefined_pairs = 0;  // pairs with a probability below the floor
    double probability_sum = 0.0;
    Complex pair_sum{0.0, 0.0};  // sum over all (h, h')
    double truncated_mass = 0.0;
    Backend backend = Backend::Exact;
    std::vector<std::string> warnings;
};

inline std::optional<double> dowker_halliwell_ratio(const DecoherenceTable& t, std::size_t i, std::size_t j) {
    const double p = t.probabilities.at(i), pp = t.probabilities.at(j);
    if (p < kProbabilityFloor || pp < kProbabilityFloor) return std::nullopt;
    return std::norm(t.D(static_cast<Index>(i), static_cast<Index>(j))) / (p * pp);
}

inline void summarize_table(DecoherenceTable& t) {
    const std::size_t n = t.histories.size();
    t.probabilities.resize(n);
    t.probability_sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        t.probabilities[i] = t.D(static_cast<Index>(i), static_cast<Index>(i)).real();
        t.probability_sum += t.probabilities[i];
    }
    t.pair_sum = t.D.sum();
    t.max_ratio = 0.0;
    t.undefined_pairs = 0;
    t.argmax.reset();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            if (i == j) continue;
            const auto r = dowker_halliwell_ratio(t, i, j);
            if (!r) {
                ++t.undefined_pairs;
                continue;
            }
            if (!t.argmax || *r > t.max_ratio) {
                t.max_ratio = *r;
                t.argmax = {i, j};
            }
        }
    t.epsilon = std::sqrt(t.max_ratio);
}

// Full table over all K^N histories. The chain is shared between pairs with a
// common prefix, so the cost is one evolution per node of the pair tree.
inline DecoherenceTable decoherence_table(const SplitLindbladModel& model, const Operator& rho0, std::size_t n,
                                          double delta_t, Backend backend = Backend::Exact,
                                          std::optional<ProjectorSchedule> schedule = std::nullopt) {
    if (n < 1 || n > kMaxTableN)
        throw std::invalid_argument("decoherence_table: N must be in [1, " + std::to_string(kMaxTableN) + "]");
    const HistoryEvolver ev(model, delta_t, backend);
    const auto sched = schedule ? *schedule : ProjectorSchedule::photon_number(model.system_dim(), model.mode_dim);
    sched.validate(ev.dim(), n);
    if (rho0.rows() != ev.dim()) throw std::invalid_argument("decoherence_table: rho0 dimension mismatch");
    const std::size_t k = sched.alternatives();

    DecoherenceTable t;
    t.backend = backend;
    t.warnings = ev.warnings();
    t.histories = enumerate_histories(n, delta_t, k);
    const auto total = static_cast<Index>(t.histories.size());
    t.D = Operator::Zero(total, total);

    std::function<void(std::size_t, const Operator&, std::uint64_t, std::uint64_t)> rec =
        [&](std::size_t j, const Operator& x, std::uint64_t ih, std::uint64_t ihp) {
            if (j == n) {
                t.D(static_cast<Index>(ih), static_cast<Index>(ihp)) = x.trace();
                return;
            }
            const Operator y = ev(x);
            const auto& set = sched.at(j);
            for (std::size_t a = 0; a < k; ++a) {
                const Operator left = set[a] * y;
                for (std::size_t b = 0; b < k; ++b) {
                    const Operator z = left * set[b];
                    if (z.isZero(0.0)) continue;
                    rec(j + 1, z, ih * k + a, ihp * k + b);
                }
            }
        };
    rec(0, rho0, 0, 0);
    summarize_table(t);
    return t;
}

struct HistoryProbabilities {
    std::vector<History> histories;
    std::vector<double> probabilities;
    double truncated_mass = 0.0;
    double probability_sum = 0.0;
    std::vector<std::string> warnings;
};

// Diagonal only; branches whose running probability drops below
// pruning_threshold are cut and their mass recorded.
inline HistoryProbabilities history_probabilities(const SplitLindbladModel& model, const Operator& rho0, std::size_t n,
                                                  double delta_t, double pruning_threshold = 0.0,
                                                  Backend backend = Backend::Exact,
                                                  std::optional<ProjectorSchedule> schedule = std::nullopt) {
    if (n < 1 || n > kMaxEnumerateN)
        throw std::invalid_argument("history_probabilities: N must be in [1, " + std::to_string(kMaxEnumerateN) + "]");
    const HistoryEvolver ev(model, delta_t, backend);
    const auto sched = schedule ? *schedule : ProjectorSchedule::photon_number(model.system_dim(), model.mode_dim);
    sched.validate(ev.dim(), n);
    if (rho0.rows() != ev.dim()) throw std::invalid_argument("history_probabilities: rho0 dimension mismatch");
    const std::size_t k = sched.alternatives();

    HistoryProbabilities out;
    out.warnings = ev.warnings();
    std::vector<std::uint8_t> path(n);
    std::function<void(std::size_t, const Operator&)> rec = [&](std::size_t j, const Operator& x) {
        if (j == n) {
            out.histories.emplace_back(path, delta_t);
            out.probabilities.push_back(x.trace().real());
            return;
        }
        const Operator y = ev(x);
        const auto& set = sched.at(j);
        for (std::size_t a = 0; a < k; ++a) {
            const Operator z = set[a] * y * set[a];
            const double p = z.trace().real();
            path[j] = static_cast<std::uint8_t>(a);
            if (p < pruning_threshold) {
                out.truncated_mass += p;
                continue;
            }
            rec(j + 1, z);
        }
    };
    rec(0, rho0);
    for (double p : out.probabilities) out.probability_sum += p;
    return out;
}

// ------------------------------ partial trace --------------------------------

struct PtEigenReport {
    Eigen::VectorXd eigenvalues;  // descending
    double dominance = 0.0;       // lambda_1 / lambda_2 (inf when lambda_2 <= 0)
    Ket principal;
    double fidelity = 0.0;        // |<principal|reference>|^2, normalized
};

inline PtEigenReport pt_eigen_report(const Operator& dbar, const Ket& reference) {
    const auto eig = herm_eig(0.5 * (dbar + dbar.adjoint()));
    const Index d = eig.values.size();
    PtEigenReport r;
    r.eigenvalues = eig.values.reverse();
    r.principal = eig.vectors.col(d - 1);
    r.dominance = d > 1 && r.eigenvalues(1) > 0.0 ? r.eigenvalues(0) / r.eigenvalues(1)
                                                   : std::numeric_limits<double>::infinity();
    if (reference.size() == r.principal.size()) r.fidelity = fidelity(r.principal, reference);
    return r;
}

// ------------------------------ coarse graining ------------------------------

struct CoarseGrained {
    std::size_t M = 1;
    double window = 0.0;  // M * delta_t
    std::size_t n_windows = 0;
    // Record (sorted window indices holding a 0 -> photon transition) -> probability.
    std::map<std::vector<std::size_t>, double> records;
    double multi_transition_mass = 0.0;  // histories with >1 transition in one window
    double total = 0.0;
};

// Gamma1 * window >= 3 and omega * window <= 0.1.
inline std::vector<std::string> validate_coarse_window(double Gamma1, double omega, double window) {
    std::vector<std::string> w;
    if (Gamma1 * window < 3.0)
        w.push_back("coarse window too short: Gamma1 * Delta_t = " + std::to_string(Gamma1 * window) + " < 3");
    if (omega * window > 0.1)
        w.push_back("coarse window too long: omega * Delta_t = " + std::to_string(omega * window) + " > 0.1");
    return w;
}

inline CoarseGrained coarse_grain(const std::vector<History>& histories, const std::vector<double>& probabilities,
                                  std::size_t M) {
    if (M < 1) throw std::invalid_argument("coarse_grain: M must be >= 1");
    if (histories.size() != probabilities.size())
        throw std::invalid_argument("coarse_grain: history and probability lists differ in length");
    CoarseGrained out;
    out.M = M;
    if (!histories.empty()) {
        const std::size_t n = histories.front().size();
        out.window = static_cast<double>(M) * histories.front().delta_t;
        out.n_windows = (n + M - 1) / M;
    }
    for (std::size_t i = 0; i < histories.size(); ++i) {
        const auto& a = histories[i].alphas;
        std::vector<std::size_t> windows;
        bool multi = false;
        std::uint8_t prev = 0;
        for (std::size_t j = 0; j < a.size(); ++j) {
            if (prev == 0 && a[j] != 0) {
                const std::size_t w = j / M;
                if (!windows.empty() && windows.back() == w)
                    multi = true;
                else
                    windows.push_back(w);
            }
            prev = a[j];
        }
        out.records[windows] += probabilities[i];
        if (multi) out.multi_transition_mass += probabilities[i];
        out.total += probabilities[i];
    }
    return out;
}

// ------------------------------ trajectory consistency -----------------------

// || Tr_mode( e^{L N dt} rho0 - (M o e^{L dt})^N rho0 ) ||_1 with M the
// repeated-measurement map of the schedule.
inline double trajectory_consistency_check(const SplitLindbladModel& model, const Operator& rho0,
                                           const ProjectorSchedule& schedule, std::size_t n, double delta_t,
                                           Backend backend = Backend::Exact) {
    const HistoryEvolver ev(model, delta_t, backend);
    schedule.validate(ev.dim(), n);
    if (rho0.rows() != ev.dim()) throw std::invalid_argument("trajectory_consistency_check: rho0 dimension mismatch");
    Operator full = rho0, branches = rho0;
    for (std::size_t j = 0; j < n; ++j) {
        full = ev(full);
        branches = repeated_measurement_map(ev(branches), schedule.at(j));
    }
    return trace_norm(partial_trace(full - branches, model.space(), 0));
}

}  // namespace qtraj
