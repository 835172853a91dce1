// unravel.hpp: stochastic pure-state unravelings of a Lindblad model and a
// seeded ensemble runner.
//
// Engines: jumps (norm-preserving), jumps-linear, qsd (Ito, nonlinear),
// qsd-linear, ortho (Diosi orthogonal jumps). One step is dt; jumps are
// time-stamped at the end of the step in which they fire.

#pragma once

#include "qtraj/hilbert.hpp"
#include "qtraj/lindblad.hpp"
#include "qtraj/rng.hpp"

#include <array>
#include <atomic>
#include <cstdint>
#include <exception>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace qtraj {

enum class Engine { Jumps, JumpsLinear, Qsd, QsdLinear, Ortho };

inline constexpr std::array<Engine, 5> kAllEngines{Engine::Jumps, Engine::JumpsLinear, Engine::Qsd,
                                                   Engine::QsdLinear, Engine::Ortho};

inline std::string_view engine_name(Engine e) {
    switch (e) {
        case Engine::Jumps: return "jumps";
        case Engine::JumpsLinear: return "jumps-linear";
        case Engine::Qsd: return "qsd";
        case Engine::QsdLinear: return "qsd-linear";
        case Engine::Ortho: return "ortho";
    }
    return "?";
}

inline Engine parse_engine(std::string_view name) {
    for (Engine e : kAllEngines)
        if (engine_name(e) == name) return e;
    throw std::invalid_argument("unknown engine '" + std::string(name) +
                                "' (expected jumps, jumps-linear, qsd, qsd-linear or ortho)");
}

inline bool is_linear(Engine e) { return e == Engine::JumpsLinear || e == Engine::QsdLinear; }
inline bool is_diffusive(Engine e) { return e == Engine::Qsd || e == Engine::QsdLinear; }

enum class JumpSampler { Bernoulli, WaitingTime };

enum class JumpKind { Jump, Up, Down };

inline std::string_view jump_kind_name(JumpKind k) {
    switch (k) {
        case JumpKind::Jump: return "jump";
        case JumpKind::Up: return "up";
        case JumpKind::Down: return "down";
    }
    return "?";
}

struct JumpEvent {
    double t = 0.0;
    std::size_t channel = 0;
    JumpKind kind = JumpKind::Jump;
};

// psi is normalized; the unnormalized ket is exp(log_weight / 2) * psi.
struct Snapshot {
    double t = 0.0;
    Ket psi;
    double log_weight = 0.0;
};

struct TrajectoryRecord {
    Engine engine = Engine::Jumps;
    std::uint64_t seed = 0;
    double dt = 0.0;
    std::vector<Snapshot> snapshots;
    std::vector<JumpEvent> events;
    double log_weight = 0.0;  // at T
    std::vector<std::string> warnings;

    [[nodiscard]] double weight() const { return std::exp(log_weight); }
};

struct OrthoJumpBasis {
    std::vector<Ket> states;
    std::vector<double> rates;

    [[nodiscard]] double total_rate() const {
        double s = 0.0;
        for (double r : rates) s += r;
        return s;
    }
};

inline constexpr double kMaxJumpProbabilityPerStep = 0.1;
inline constexpr double kLogRescaleLow = -345.0;  // ~ ln 1e-150
inline constexpr double kLogRescaleHigh = 345.0;

// W = sum_m (L_m - <L_m>)|psi><psi|(L_m - <L_m>)^dag restricted to the
// complement of psi; eigenvectors with nonzero eigenvalue, rates descending.
inline OrthoJumpBasis ortho_jump_basis(const Ket& psi, const LindbladModel& model) {
    const Index d = model.dim();
    if (psi.size() != d) throw std::invalid_argument("ortho_jump_basis: ket dimension does not match model");
    OrthoJumpBasis out;
    if (model.lindblads.empty()) return out;
    Operator w = Operator::Zero(d, d);
    for (const auto& l : model.lindblads) {
        Ket v = l * psi;
        v -= psi.dot(v) * psi;
        w += v * v.adjoint();
    }
    const Operator q = identity(d) - psi * psi.adjoint();
    w = q * w * q;
    w = 0.5 * (w + w.adjoint()).eval();
    const double scale = std::max(1.0, w.trace().real());
    const auto eig = herm_eig(w);
    for (Index k = d - 1; k >= 0; --k) {
        const double r = eig.values(k);
        if (r <= 1e-12 * scale) break;
        Ket s = eig.vectors.col(k);
        s -= psi.dot(s) * psi;
        s.normalize();
        out.states.push_back(std::move(s));
        out.rates.push_back(r);
    }
    return out;
}

// Precomputed operators plus scratch space for one trajectory. Not shared
// between threads.
class Stepper {
public:
    Stepper(const LindbladModel& model, double dt)
        : model_(&model), dt_(dt), n_ch_(model.lindblads.size()) {
        if (!(dt > 0.0)) throw std::invalid_argument("Stepper: dt must be positive");
        const Index d = model.dim();
        ueff_ = expm(Operator(-kI * dt * model.effective_hamiltonian()));
        minus_iH_ = -kI * model.H;
        drift_lin_ = -kI * model.effective_hamiltonian();
        ldl_.reserve(n_ch_);
        for (const auto& l : model.lindblads) ldl_.push_back(l.adjoint() * l);
        tmp_.resize(d);
        acc_.resize(d);
        lpsi_.assign(n_ch_, Ket(d));
        ev_.resize(n_ch_);
        pn_.resize(n_ch_);
        dxi_.resize(n_ch_);
    }

    [[nodiscard]] const LindbladModel& model() const { return *model_; }
    [[nodiscard]] double dt() const { return dt_; }
    [[nodiscard]] std::size_t channels() const { return n_ch_; }
    [[nodiscard]] const Operator& ueff() const { return ueff_; }
    [[nodiscard]] std::span<Complex> noise_buffer() { return dxi_; }
    // Increment added by the last qsd step before any renormalization.
    [[nodiscard]] const Ket& last_increment() const { return acc_; }

    // Per-channel <L^dag L> on psi / ||psi||^2, into pn_; returns the sum.
    double jump_rates(const Ket& psi) {
        const double n2 = psi.squaredNorm();
        double total = 0.0;
        for (std::size_t m = 0; m < n_ch_; ++m) {
            tmp_.noalias() = model_->lindblads[m] * psi;
            pn_[m] = tmp_.squaredNorm() / n2;
            total += pn_[m];
        }
        return total;
    }

    [[nodiscard]] double rate(std::size_t m) const { return pn_[m]; }

    std::size_t choose_channel(double total, double u) const {
        double acc = 0.0;
        for (std::size_t m = 0; m < n_ch_; ++m) {
            acc += pn_[m];
            if (u * total < acc) return m;
        }
        return n_ch_ - 1;
    }

    // Bernoulli jump step. Normalized: psi stays unit norm. Linear: psi
    // carries the unnormalized record state. Returns the channel if one fired.
    std::optional<std::size_t> jump_step(Ket& psi, Rng& rng, bool normalize) {
        const double total = jump_rates(psi);
        const double u = rng.uniform();
        if (total * dt_ > kMaxJumpProbabilityPerStep) warn("jump probability per step exceeds 0.1");
        if (n_ch_ > 0 && u < total * dt_) {
            const std::size_t m = choose_channel(total, u / (total * dt_));
            tmp_.noalias() = model_->lindblads[m] * psi;
            psi = tmp_;
            if (normalize) {
                const double nn = psi.norm();
                if (!(nn > 0.0)) throw std::logic_error("jump_step: jump on a dark state");
                psi /= nn;
            }
            return m;
        }
        tmp_.noalias() = ueff_ * psi;
        psi = tmp_;
        if (normalize) psi.normalize();
        return std::nullopt;
    }

    // Ito Euler-Maruyama; noise in noise_buffer().
    void qsd_step(Ket& psi) {
        acc_.noalias() = minus_iH_ * psi;
        double mean_sq = 0.0;
        for (std::size_t m = 0; m < n_ch_; ++m) {
            lpsi_[m].noalias() = model_->lindblads[m] * psi;
            ev_[m] = psi.dot(lpsi_[m]);
            mean_sq += std::norm(ev_[m]);
        }
        for (std::size_t m = 0; m < n_ch_; ++m) {
            acc_ += std::conj(ev_[m]) * lpsi_[m];
            tmp_.noalias() = ldl_[m] * psi;
            acc_ -= 0.5 * tmp_;
        }
        acc_ -= 0.5 * mean_sq * psi;
        acc_ *= dt_;
        for (std::size_t m = 0; m < n_ch_; ++m) {
            acc_ += dxi_[m] * lpsi_[m];
            acc_ -= (dxi_[m] * ev_[m]) * psi;
        }
        psi += acc_;
        psi.normalize();
    }

    void qsd_step_linear(Ket& psi) {
        acc_.noalias() = drift_lin_ * psi;
        acc_ *= dt_;
        for (std::size_t m = 0; m < n_ch_; ++m) {
            tmp_.noalias() = model_->lindblads[m] * psi;
            acc_ += dxi_[m] * tmp_;
        }
        psi += acc_;
    }

    // Orthogonal-jump step; psi normalized. On a jump returns the basis
    // index taken (rates descending) and its channel slot in the basis.
    std::optional<std::size_t> ortho_step(Ket& psi, Rng& rng) {
        double total = 0.0;
        double c = 0.0;
        for (std::size_t m = 0; m < n_ch_; ++m) {
            lpsi_[m].noalias() = model_->lindblads[m] * psi;
            ev_[m] = psi.dot(lpsi_[m]);
            const double ldl = lpsi_[m].squaredNorm();
            const double r = std::max(0.0, ldl - std::norm(ev_[m]));
            total += r;
            c += 0.5 * ldl - std::norm(ev_[m]);
        }
        if (total * dt_ > kMaxJumpProbabilityPerStep) warn("ortho jump probability per step exceeds 0.1");
        const double u = rng.uniform();
        if (n_ch_ > 0 && u < total * dt_) {
            const OrthoJumpBasis basis = ortho_jump_basis(psi, *model_);
            if (!basis.states.empty()) {
                const double btot = basis.total_rate();
                const double x = (u / (total * dt_)) * btot;
                double acc = 0.0;
                std::size_t k = basis.states.size() - 1;
                for (std::size_t j = 0; j < basis.states.size(); ++j) {
                    acc += basis.rates[j];
                    if (x < acc) {
                        k = j;
                        break;
                    }
                }
                psi = basis.states[k];
                return k;
            }
        }
        acc_.noalias() = minus_iH_ * psi;
        for (std::size_t m = 0; m < n_ch_; ++m) {
            acc_ += std::conj(ev_[m]) * lpsi_[m];
            tmp_.noalias() = ldl_[m] * psi;
            acc_ -= 0.5 * tmp_;
        }
        acc_ += c * psi;
        psi += dt_ * acc_;
        psi.normalize();
        return std::nullopt;
    }

    std::vector<std::string>& warnings() { return warnings_; }

private:
    void warn(const std::string& msg) {
        for (const auto& w : warnings_)
            if (w == msg) return;
        warnings_.push_back(msg);
    }

    const LindbladModel* model_;
    double dt_;
    std::size_t n_ch_;
    Operator ueff_, minus_iH_, drift_lin_;
    std::vector<Operator> ldl_;
    Ket tmp_, acc_;
    std::vector<Ket> lpsi_;
    std::vector<Complex> ev_;
    std::vector<double> pn_;
    std::vector<Complex> dxi_;
    std::vector<std::string> warnings_;
};

// ------------------------------ single steps --------------------------------

inline void require_unit_norm(const Ket& psi, const char* who) {
    if (std::abs(psi.norm() - 1.0) > 1e-8) throw std::invalid_argument(std::string(who) + ": state must be normalized");
}

inline Ket jump_step_normalized(const Ket& psi, const LindbladModel& model, double dt, Rng& rng) {
    require_unit_norm(psi, "jump_step_normalized");
    Stepper s(model, dt);
    Ket out = psi;
    s.jump_step(out, rng, true);
    return out;
}

inline Ket qsd_step(const Ket& psi, const LindbladModel& model, double dt, NoiseStream& noise) {
    require_unit_norm(psi, "qsd_step");
    Stepper s(model, dt);
    noise.next(s.noise_buffer());
    Ket out = psi;
    s.qsd_step(out);
    return out;
}

inline Ket qsd_step_linear(const Ket& psi, const LindbladModel& model, double dt, NoiseStream& noise) {
    Stepper s(model, dt);
    noise.next(s.noise_buffer());
    Ket out = psi;
    s.qsd_step_linear(out);
    return out;
}

inline Ket ortho_jump_step(const Ket& psi, const LindbladModel& model, double dt, Rng& rng,
                           std::vector<std::string>* warnings = nullptr) {
    require_unit_norm(psi, "ortho_jump_step");
    Stepper s(model, dt);
    Ket out = psi;
    s.ortho_step(out, rng);
    if (warnings) warnings->insert(warnings->end(), s.warnings().begin(), s.warnings().end());
    return out;
}

// ------------------------------ trajectories --------------------------------

struct TrajectoryOptions {
    double T = 1.0;
    double dt = 1e-3;
    std::vector<double> output_times;  // empty: {0, T}
    JumpSampler sampler = JumpSampler::Bernoulli;
    // Events are tagged up/down by the change of this expectation value.
    std::optional<Operator> excitation_observable;
    bool keep_snapshots = true;
};

namespace detail {

inline long checked_steps(double T, double dt) {
    if (!(dt > 0.0) || !(T >= 0.0)) throw std::invalid_argument("trajectory: need dt > 0 and T >= 0");
    const long n = std::lround(T / dt);
    if (std::abs(T / dt - static_cast<double>(n)) > 1e-6)
        throw std::invalid_argument("trajectory: T is not a multiple of dt");
    return n;
}

// Runs one trajectory; `visit(step_index, psi_normalized, log_weight)` is
// called at each output grid step.
template <class Visit>
TrajectoryRecord run_trajectory_impl(Engine engine, const LindbladModel& model, const Ket& psi0,
                                     const TrajectoryOptions& opt, std::uint64_t seed, Visit&& visit) {
    if (psi0.size() != model.dim()) throw std::invalid_argument("trajectory: ket dimension does not match model");
    if (std::abs(psi0.norm() - 1.0) > 1e-8) throw std::invalid_argument("trajectory: initial state must be normalized");
    const long n_steps = checked_steps(opt.T, opt.dt);
    std::vector<double> out_times = opt.output_times;
    if (out_times.empty()) out_times = {0.0, opt.T};
    const auto grid = grid_steps(out_times, opt.dt, opt.T);

    TrajectoryRecord rec;
    rec.engine = engine;
    rec.seed = seed;
    rec.dt = opt.dt;

    Stepper st(model, opt.dt);
    Rng rng(seed);
    Ket psi = psi0;
    double log_w = 0.0;  // log of squared norm carried outside psi
    const bool linear = is_linear(engine);
    const bool waiting = opt.sampler == JumpSampler::WaitingTime &&
                         (engine == Engine::Jumps || engine == Engine::JumpsLinear);
    double survival = 1.0;
    double threshold = waiting ? 1.0 - rng.uniform() : 0.0;
    Ket scratch(model.dim());

    auto classify = [&](const Ket& before, const Ket& after) {
        if (!opt.excitation_observable) return JumpKind::Jump;
        const double a = expectation(*opt.excitation_observable, before) / before.squaredNorm();
        const double b = expectation(*opt.excitation_observable, after) / after.squaredNorm();
        return b > a ? JumpKind::Up : JumpKind::Down;
    };

    std::size_t next = 0;
    Ket before;
    for (long k = 0; k <= n_steps; ++k) {
        while (next < grid.size() && grid[next] == k) {
            const double n2 = psi.squaredNorm();
            const double lw = log_w + std::log(n2);
            const Ket unit = psi / std::sqrt(n2);
            visit(next, unit, lw);
            if (opt.keep_snapshots) rec.snapshots.push_back({static_cast<double>(k) * opt.dt, unit, lw});
            ++next;
        }
        if (k == n_steps) break;
        const double t_end = static_cast<double>(k + 1) * opt.dt;
        if (opt.excitation_observable) before = psi;
        std::optional<std::size_t> fired;
        switch (engine) {
            case Engine::Jumps:
            case Engine::JumpsLinear: {
                if (!waiting) {
                    fired = st.jump_step(psi, rng, !linear);
                    break;
                }
                scratch.noalias() = st.ueff() * psi;
                const double ratio = scratch.squaredNorm() / psi.squaredNorm();
                if (st.channels() > 0 && survival * ratio < threshold) {
                    const double total = st.jump_rates(psi);
                    if (total > 0.0) {
                        const std::size_t m = st.choose_channel(total, rng.uniform());
                        scratch.noalias() = model.lindblads[m] * psi;
                        psi = scratch;
                        if (!linear) psi.normalize();
                        fired = m;
                        survival = 1.0;
                        threshold = 1.0 - rng.uniform();
                        break;
                    }
                }
                survival *= ratio;
                psi = scratch;
                if (!linear) psi.normalize();
                break;
            }
            case Engine::Qsd:
                for (auto& z : st.noise_buffer()) z = rng.complex_normal(opt.dt);
                st.qsd_step(psi);
                break;
            case Engine::QsdLinear:
                for (auto& z : st.noise_buffer()) z = rng.complex_normal(opt.dt);
                st.qsd_step_linear(psi);
                break;
            case Engine::Ortho:
                fired = st.ortho_step(psi, rng);
                break;
        }
        if (fired) rec.events.push_back({t_end, *fired, opt.excitation_observable ? classify(before, psi) : JumpKind::Jump});
        if (linear) {
            const double n2 = psi.squaredNorm();
            if (n2 == 0.0) throw std::runtime_error("trajectory: state norm vanished");
            const double ln2 = std::log(n2);
            if (ln2 < kLogRescaleLow || ln2 > kLogRescaleHigh) {
                log_w += ln2;
                psi /= std::sqrt(n2);
            }
        }
    }
    rec.log_weight = log_w + std::log(psi.squaredNorm());
    rec.warnings = st.warnings();
    return rec;
}

}  // namespace detail

inline TrajectoryRecord run_trajectory(Engine engine, const LindbladModel& model, const Ket& psi0,
                                       const TrajectoryOptions& opt, std::uint64_t seed) {
    return detail::run_trajectory_impl(engine, model, psi0, opt, seed, [](std::size_t, const Ket&, double) {});
}

inline TrajectoryRecord jump_trajectory_linear(const LindbladModel& model, const Ket& psi0, double T, double dt,
                                               std::uint64_t seed) {
    TrajectoryOptions opt;
    opt.T = T;
    opt.dt = dt;
    return run_trajectory(Engine::JumpsLinear, model, psi0, opt, seed);
}

// ------------------------------ jump records --------------------------------

namespace detail {

inline void check_record(const std::vector<double>& times, double T, const std::vector<std::size_t>& channels,
                         std::size_t n_channels) {
    double prev = -1.0;
    for (double t : times) {
        if (!(t >= 0.0) || t > T) throw std::invalid_argument("jump record: time outside [0, T]");
        if (t <= prev && prev >= 0.0) throw std::invalid_argument("jump record: times must be strictly increasing");
        prev = t;
    }
    if (!channels.empty() && channels.size() != times.size())
        throw std::invalid_argument("jump record: channel list length differs from time list");
    for (std::size_t c : channels)
        if (c >= n_channels) throw std::out_of_range("jump record: channel index out of range");
    if (!times.empty() && n_channels == 0) throw std::invalid_argument("jump record: model has no jump channels");
}

}  // namespace detail

// Unnormalized record state e^{-iHeff(T-tN)} L ... L e^{-iHeff t1}|psi0>.
inline Ket record_state(const LindbladModel& model, const Ket& psi0, const std::vector<double>& times, double T,
                        const std::vector<std::size_t>& channels = {}) {
    detail::check_record(times, T, channels, model.lindblads.size());
    const Operator heff = model.effective_hamiltonian();
    Ket psi = psi0;
    double t = 0.0;
    for (std::size_t j = 0; j < times.size(); ++j) {
        psi = expm(Operator(-kI * (times[j] - t) * heff)) * psi;
        psi = model.lindblads[channels.empty() ? 0 : channels[j]] * psi;
        t = times[j];
    }
    return expm(Operator(-kI * (T - t) * heff)) * psi;
}

// Delta_t^N Tr{ ... L e^{-iHeff t1} rho0 e^{iHeff^dag t1} L^dag ... }, the
// density-operator form; the channel operators carry sqrt(gamma).
inline double jump_record_probability(const LindbladModel& model, const Ket& psi0, const std::vector<double>& times,
                                      double T, double delta_t, const std::vector<std::size_t>& channels = {}) {
    if (!(delta_t > 0.0)) throw std::invalid_argument("jump_record_probability: delta_t must be positive");
    detail::check_record(times, T, channels, model.lindblads.size());
    const Operator heff = model.effective_hamiltonian();
    Operator rho = psi0 * psi0.adjoint();
    double t = 0.0;
    auto drift = [&](double tau) {
        const Operator u = expm(Operator(-kI * tau * heff));
        rho = u * rho * u.adjoint();
    };
    for (std::size_t j = 0; j < times.size(); ++j) {
        drift(times[j] - t);
        const Operator& l = model.lindblads[channels.empty() ? 0 : channels[j]];
        rho = l * rho * l.adjoint();
        t = times[j];
    }
    drift(T - t);
    return std::pow(delta_t, static_cast<double>(times.size())) * rho.trace().real();
}

// ------------------------------ ensembles -----------------------------------

struct EnsembleOptions {
    double T = 1.0;
    double dt = 1e-3;
    std::vector<double> output_times;  // empty: {0, T}
    std::size_t n_traj = 1;
    std::uint64_t master_seed = 0;
    unsigned workers = 1;
    JumpSampler sampler = JumpSampler::Bernoulli;
    std::optional<Operator> excitation_observable;
    bool keep_events = false;
    std::vector<Operator> observables;  // Hermitian; mean and error reported per time
};

struct EnsembleStats {
    Engine engine = Engine::Jumps;
    std::size_t n_traj = 0;
    std::vector<double> times;
    std::vector<DensityMatrix> mean;
    std::vector<Eigen::MatrixXd> std_error;  // per entry, modulus
    std::vector<double> mean_weight;         // (1/n) sum of estimator weights
    std::vector<std::vector<double>> obs_mean;   // [time][observable]
    std::vector<std::vector<double>> obs_error;
    std::vector<std::vector<JumpEvent>> events;  // per trajectory if requested
    std::vector<std::string> warnings;
};

inline constexpr std::size_t kEnsembleBlock = 64;

namespace detail {

struct Moments {
    double sw = 0.0, sw2 = 0.0;
    Operator swx, sw2x;
    Eigen::MatrixXd sw2xx;

    std::vector<double> swf, sw2f, sw2ff;

    Moments(Index d, std::size_t n_obs)
        : swx(Operator::Zero(d, d)), sw2x(Operator::Zero(d, d)), sw2xx(Eigen::MatrixXd::Zero(d, d)),
          swf(n_obs, 0.0), sw2f(n_obs, 0.0), sw2ff(n_obs, 0.0) {}

    void add(const Ket& unit, double w, const std::vector<Operator>& obs) {
        for (std::size_t k = 0; k < obs.size(); ++k) {
            const double f = expectation(obs[k], unit);
            swf[k] += w * f;
            sw2f[k] += w * w * f;
            sw2ff[k] += w * w * f * f;
        }
        const Operator x = unit * unit.adjoint();
        sw += w;
        sw2 += w * w;
        swx += w * x;
        sw2x += (w * w) * x;
        sw2xx += (w * w) * x.cwiseAbs2();
    }
    void merge(const Moments& o) {
        sw += o.sw;
        sw2 += o.sw2;
        swx += o.swx;
        sw2x += o.sw2x;
        sw2xx += o.sw2xx;
        for (std::size_t k = 0; k < swf.size(); ++k) {
            swf[k] += o.swf[k];
            sw2f[k] += o.sw2f[k];
            sw2ff[k] += o.sw2ff[k];
        }
    }
};

}  // namespace detail

// Estimator: jump engines already sample records with Born probabilities, so
// their normalized states average with unit weight. qsd-linear samples under
// the Gaussian reference measure and is reweighted by the squared norm
// (self-normalized ratio estimator).
inline EnsembleStats run_ensemble(Engine engine, const LindbladModel& model, const Ket& psi0,
                                  const EnsembleOptions& opt) {
    if (opt.n_traj < 1) throw std::invalid_argument("run_ensemble: n_traj must be >= 1");
    std::vector<double> out_times = opt.output_times;
    if (out_times.empty()) out_times = {0.0, opt.T};
    const auto grid = grid_steps(out_times, opt.dt, opt.T);
    const std::size_t n_out = grid.size();
    const Index d = model.dim();
    const bool weighted = engine == Engine::QsdLinear;

    TrajectoryOptions topt;
    topt.T = opt.T;
    topt.dt = opt.dt;
    topt.output_times = out_times;
    topt.sampler = opt.sampler;
    topt.excitation_observable = opt.excitation_observable;
    topt.keep_snapshots = false;

    const std::size_t n_blocks = (opt.n_traj + kEnsembleBlock - 1) / kEnsembleBlock;
    std::vector<std::vector<detail::Moments>> blocks(n_blocks);
    std::vector<std::vector<JumpEvent>> events(opt.keep_events ? opt.n_traj : 0);
    std::vector<std::vector<std::string>> block_warnings(n_blocks);
    std::atomic<std::size_t> next_block{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;

    auto work = [&] {
        try {
            for (;;) {
                const std::size_t b = next_block.fetch_add(1);
                if (b >= n_blocks) return;
                std::vector<detail::Moments> acc(n_out, detail::Moments(d, opt.observables.size()));
                const std::size_t lo = b * kEnsembleBlock, hi = std::min(opt.n_traj, lo + kEnsembleBlock);
                for (std::size_t i = lo; i < hi; ++i) {
                    auto rec = detail::run_trajectory_impl(
                        engine, model, psi0, topt, derive_seed(opt.master_seed, i),
                        [&](std::size_t slot, const Ket& unit, double lw) {
                            acc[slot].add(unit, weighted ? std::exp(lw) : 1.0, opt.observables);
                        });
                    if (opt.keep_events) events[i] = std::move(rec.events);
                    for (auto& w : rec.warnings) {
                        auto& bw = block_warnings[b];
                        if (std::find(bw.begin(), bw.end(), w) == bw.end()) bw.push_back(std::move(w));
                    }
                }
                blocks[b] = std::move(acc);
            }
        } catch (...) {
            std::lock_guard lock(failure_mutex);
            if (!failure) failure = std::current_exception();
            next_block.store(n_blocks);
        }
    };

    const unsigned workers = std::max(1u, std::min<unsigned>(opt.workers, static_cast<unsigned>(n_blocks)));
    if (workers == 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        for (unsigned k = 0; k < workers; ++k) pool.emplace_back(work);
        for (auto& th : pool) th.join();
    }
    if (failure) std::rethrow_exception(failure);

    EnsembleStats out;
    out.engine = engine;
    out.n_traj = opt.n_traj;
    out.events = std::move(events);
    for (const auto& bw : block_warnings)
        for (const auto& w : bw)
            if (std::find(out.warnings.begin(), out.warnings.end(), w) == out.warnings.end()) out.warnings.push_back(w);
    const double n = static_cast<double>(opt.n_traj);
    const double bessel = opt.n_traj > 1 ? n / (n - 1.0) : 0.0;
    for (std::size_t s = 0; s < n_out; ++s) {
        detail::Moments tot(d, opt.observables.size());
        for (const auto& blk : blocks) tot.merge(blk[s]);
        out.times.push_back(static_cast<double>(grid[s]) * opt.dt);
        const Operator m = tot.swx / tot.sw;
        Eigen::MatrixXd se(d, d);
        for (Index i = 0; i < d; ++i)
            for (Index j = 0; j < d; ++j) {
                const double v = tot.sw2xx(i, j) - 2.0 * (std::conj(m(i, j)) * tot.sw2x(i, j)).real() +
                                 std::norm(m(i, j)) * tot.sw2;
                se(i, j) = std::sqrt(std::max(0.0, v) * bessel) / tot.sw;
            }
        out.mean.push_back(m);
        out.std_error.push_back(se);
        out.mean_weight.push_back(tot.sw / n);
        std::vector<double> om, oe;
        for (std::size_t k = 0; k < opt.observables.size(); ++k) {
            const double mk = tot.swf[k] / tot.sw;
            const double v = tot.sw2ff[k] - 2.0 * mk * tot.sw2f[k] + mk * mk * tot.sw2;
            om.push_back(mk);
            oe.push_back(std::sqrt(std::max(0.0, v) * bessel) / tot.sw);
        }
        out.obs_mean.push_back(std::move(om));
        out.obs_error.push_back(std::move(oe));
    }
    return out;
}

}  // namespace qtraj
