// cli.hpp: run configuration and the evolve / traj / ensemble / hist /
// compare commands. The executable in tools/ only parses flags.

#pragma once

#include "qtraj/hilbert.hpp"
#include "qtraj/histories.hpp"
#include "qtraj/io.hpp"
#include "qtraj/lindblad.hpp"
#include "qtraj/photodetect.hpp"
#include "qtraj/unravel.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace qtraj::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNumeric = 3;

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ScenarioConfig {
    std::string model = "cavity";  // cavity | adiabatic | detector_mode | split | intermediate
    long dim = 2;
    std::optional<double> gamma;
    double omega = 0.0;  // H0 = omega a^dag a
    double kappa = 1.0;
    double Gamma1 = 10.0;
    double Gamma2 = 100.0;
    long mode_dim = 2;
    bool reabsorption = false;
    std::string psi0 = "excited";  // ground | excited | plus | fock:<k>
};

struct HistoryConfig {
    long N = 10;
    double delta_t = 0.1;
    long M = 5;
    double pruning = 0.0;
    std::string table = "all";  // all | diagonal | none
    bool pt_report = false;
};

struct RunConfig {
    ScenarioConfig scenario;
    std::string engine = "jumps";
    std::string sampler = "bernoulli";
    double dt = 1e-3;
    double T = 1.0;
    std::vector<double> output_times;
    long n_out = 11;
    long n_traj = 100;
    std::uint64_t master_seed = 0;
    std::uint64_t traj_index = 0;
    long workers = 1;
    std::vector<std::string> observables{"n"};
    bool oracle = false;
    HistoryConfig history;
    std::string backend = "exact";
    std::string out = "-";

    // Worker count is left out: it never changes results.
    [[nodiscard]] json to_json() const {
        json s{{"model", scenario.model}, {"dim", scenario.dim}, {"omega", scenario.omega},
               {"kappa", scenario.kappa}, {"Gamma1", scenario.Gamma1}, {"Gamma2", scenario.Gamma2},
               {"mode_dim", scenario.mode_dim}, {"reabsorption", scenario.reabsorption}, {"psi0", scenario.psi0}};
        if (scenario.gamma) s["gamma"] = *scenario.gamma;
        return json{{"scenario", s},
                    {"engine", engine},
                    {"sampler", sampler},
                    {"dt", dt},
                    {"T", T},
                    {"output_times", output_times},
                    {"n_out", n_out},
                    {"n_traj", n_traj},
                    {"master_seed", master_seed},
                    {"traj_index", traj_index},
                    {"observables", observables},
                    {"oracle", oracle},
                    {"history",
                     {{"N", history.N},
                      {"delta_t", history.delta_t},
                      {"M", history.M},
                      {"pruning", history.pruning},
                      {"table", history.table},
                      {"pt_report", history.pt_report}}},
                    {"backend", backend},
                    {"out", out}};
    }
};

namespace detail {

inline void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where.empty() ? "config must be a JSON object" : where + ": must be an object");
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!allowed.count(it.key()))
            throw ConfigError("unknown config key '" + (where.empty() ? "" : where + ".") + it.key() + "'");
}

template <class T>
void read(const json& j, const char* key, T& dst, const std::string& where) {
    if (!j.contains(key)) return;
    const std::string name = (where.empty() ? "" : where + ".") + key;
    try {
        const json& v = j.at(key);
        if constexpr (std::is_same_v<T, double>) {
            if (!v.is_number()) throw ConfigError("");
        } else if constexpr (std::is_same_v<T, long> || std::is_same_v<T, std::uint64_t>) {
            if (!v.is_number_integer()) throw ConfigError("");
            if constexpr (std::is_same_v<T, std::uint64_t>)
                if (!v.is_number_unsigned() && v.get<std::int64_t>() < 0) throw ConfigError("");
        } else if constexpr (std::is_same_v<T, bool>) {
            if (!v.is_boolean()) throw ConfigError("");
        } else if constexpr (std::is_same_v<T, std::string>) {
            if (!v.is_string()) throw ConfigError("");
        }
        dst = v.get<T>();
    } catch (const std::exception&) {
        throw ConfigError("config field '" + name + "' has the wrong type");
    }
}

}  // namespace detail

inline RunConfig parse_config(const json& j) {
    using detail::read;
    detail::reject_unknown(j, {"scenario", "engine", "sampler", "dt", "T", "output_times", "n_out", "n_traj",
                               "master_seed", "traj_index", "workers", "observables", "oracle", "history", "backend",
                               "out"},
                           "");
    RunConfig c;
    if (j.contains("scenario")) {
        const json& s = j.at("scenario");
        detail::reject_unknown(s, {"model", "dim", "gamma", "omega", "kappa", "Gamma1", "Gamma2", "mode_dim",
                                   "reabsorption", "psi0"},
                               "scenario");
        read(s, "model", c.scenario.model, "scenario");
        read(s, "dim", c.scenario.dim, "scenario");
        if (s.contains("gamma")) {
            double g = 0.0;
            read(s, "gamma", g, "scenario");
            c.scenario.gamma = g;
        }
        read(s, "omega", c.scenario.omega, "scenario");
        read(s, "kappa", c.scenario.kappa, "scenario");
        read(s, "Gamma1", c.scenario.Gamma1, "scenario");
        read(s, "Gamma2", c.scenario.Gamma2, "scenario");
        read(s, "mode_dim", c.scenario.mode_dim, "scenario");
        read(s, "reabsorption", c.scenario.reabsorption, "scenario");
        read(s, "psi0", c.scenario.psi0, "scenario");
    }
    read(j, "engine", c.engine, "");
    read(j, "sampler", c.sampler, "");
    read(j, "dt", c.dt, "");
    read(j, "T", c.T, "");
    if (j.contains("output_times")) {
        try {
            c.output_times = j.at("output_times").get<std::vector<double>>();
        } catch (const std::exception&) {
            throw ConfigError("config field 'output_times' must be an array of numbers");
        }
    }
    read(j, "n_out", c.n_out, "");
    read(j, "n_traj", c.n_traj, "");
    read(j, "master_seed", c.master_seed, "");
    read(j, "traj_index", c.traj_index, "");
    read(j, "workers", c.workers, "");
    if (j.contains("observables")) {
        try {
            c.observables = j.at("observables").get<std::vector<std::string>>();
        } catch (const std::exception&) {
            throw ConfigError("config field 'observables' must be an array of strings");
        }
    }
    read(j, "oracle", c.oracle, "");
    if (j.contains("history")) {
        const json& h = j.at("history");
        detail::reject_unknown(h, {"N", "delta_t", "M", "pruning", "table", "pt_report"}, "history");
        read(h, "N", c.history.N, "history");
        read(h, "delta_t", c.history.delta_t, "history");
        read(h, "M", c.history.M, "history");
        read(h, "pruning", c.history.pruning, "history");
        read(h, "table", c.history.table, "history");
        read(h, "pt_report", c.history.pt_report, "history");
    }
    read(j, "backend", c.backend, "");
    read(j, "out", c.out, "");
    return c;
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("config file '" + path + "' is not valid JSON: " + e.what());
    }
    return parse_config(j);
}

// ------------------------------ scenario -------------------------------------

struct Scenario {
    LindbladModel model;
    std::optional<SplitLindbladModel> split;
    Ket psi0;            // on the model space
    Ket psi0_system;     // system factor only
    Index system_dim = 2;
    bool composite = false;
    Operator lowering;   // system a, embedded in the model space
    Operator mode_number;  // 1 (x) b^dag b when composite
    double gamma = 0.0;  // effective emission rate of the system
    std::vector<std::string> warnings;
};

namespace detail {

inline Ket make_psi0(const std::string& spec, Index dim) {
    if (spec == "ground") return basis_ket(dim, 0);
    if (spec == "excited") return basis_ket(dim, 1);
    if (spec == "plus") {
        Ket v = basis_ket(dim, 0) + basis_ket(dim, 1);
        return v / std::sqrt(2.0);
    }
    if (spec.rfind("fock:", 0) == 0) {
        long k = -1;
        try {
            k = std::stol(spec.substr(5));
        } catch (const std::exception&) {
        }
        if (k < 0 || k >= dim) throw ConfigError("config field 'scenario.psi0': Fock index out of range");
        return basis_ket(dim, k);
    }
    throw ConfigError("config field 'scenario.psi0' must be ground, excited, plus or fock:<k>");
}

}  // namespace detail

inline void validate_config(const RunConfig& c) {
    const auto& s = c.scenario;
    static const std::set<std::string> models{"cavity", "adiabatic", "detector_mode", "split", "intermediate"};
    if (!models.count(s.model))
        throw ConfigError("config field 'scenario.model' must be cavity, adiabatic, detector_mode, split or intermediate");
    if (s.dim < 2 || s.dim > 40) throw ConfigError("config field 'scenario.dim' must be in [2, 40]");
    if (s.mode_dim < 2 || s.mode_dim > 10) throw ConfigError("config field 'scenario.mode_dim' must be in [2, 10]");
    if (s.kappa < 0.0) throw ConfigError("config field 'scenario.kappa' must be >= 0");
    if (s.Gamma1 < 0.0) throw ConfigError("config field 'scenario.Gamma1' must be >= 0");
    if (s.Gamma2 < 0.0) throw ConfigError("config field 'scenario.Gamma2' must be >= 0");
    if (s.gamma && *s.gamma < 0.0) throw ConfigError("config field 'scenario.gamma' must be >= 0");
    if ((s.model == "split" || s.model == "adiabatic" || s.model == "intermediate" ||
         (s.model == "cavity" && !s.gamma)) &&
        !(s.Gamma2 > 0.0))
        throw ConfigError("config field 'scenario.Gamma2' must be > 0 to derive gamma");
    if (!(c.dt > 0.0)) throw ConfigError("config field 'dt' must be > 0");
    if (!(c.T >= 0.0)) throw ConfigError("config field 'T' must be >= 0");
    if (std::abs(c.T / c.dt - std::round(c.T / c.dt)) > 1e-6)
        throw ConfigError("config field 'T' must be a multiple of 'dt'");
    for (double t : c.output_times)
        if (t < 0.0 || t > c.T + 1e-12) throw ConfigError("config field 'output_times' entries must lie in [0, T]");
    if (c.n_out < 2) throw ConfigError("config field 'n_out' must be >= 2");
    if (c.n_traj < 1) throw ConfigError("config field 'n_traj' must be >= 1");
    if (c.workers < 1 || c.workers > 1024) throw ConfigError("config field 'workers' must be in [1, 1024]");
    try {
        parse_engine(c.engine);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("config field 'engine': ") + e.what());
    }
    if (c.sampler != "bernoulli" && c.sampler != "waiting")
        throw ConfigError("config field 'sampler' must be bernoulli or waiting");
    try {
        parse_backend(c.backend);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("config field 'backend': ") + e.what());
    }
    const auto& h = c.history;
    if (h.N < 1) throw ConfigError("config field 'history.N' must be >= 1");
    if (!(h.delta_t > 0.0)) throw ConfigError("config field 'history.delta_t' must be > 0");
    if (h.M < 1) throw ConfigError("config field 'history.M' must be >= 1");
    if (h.pruning < 0.0) throw ConfigError("config field 'history.pruning' must be >= 0");
    if (h.table != "all" && h.table != "diagonal" && h.table != "none")
        throw ConfigError("config field 'history.table' must be all, diagonal or none");
    static const std::set<std::string> obs{"n", "a", "sx", "sy", "sz", "n_mode"};
    for (const auto& o : c.observables)
        if (!obs.count(o)) throw ConfigError("config field 'observables': unknown observable '" + o + "'");
}

inline Scenario build_scenario(const RunConfig& c) {
    validate_config(c);
    const auto& s = c.scenario;
    Scenario sc;
    const Index d = s.dim;
    const Operator h0 = s.omega * number_op(d);
    const Ket sys0 = detail::make_psi0(s.psi0, d);
    sc.system_dim = d;
    sc.psi0_system = sys0;
    if (s.model == "cavity" || s.model == "adiabatic") {
        sc.gamma = (s.model == "cavity" && s.gamma) ? *s.gamma : effective_gamma(s.kappa, s.Gamma2);
        sc.model = s.model == "cavity" ? cavity_model(h0, sc.gamma, d) : adiabatic_model(h0, sc.gamma, d);
        sc.psi0 = sys0;
        sc.lowering = annihilation(d);
    } else if (s.model == "detector_mode") {
        sc.model = detector_mode_model(s.Gamma1, s.Gamma2, d);
        sc.psi0 = sys0;
        sc.lowering = annihilation(d);
    } else {
        const Index md = s.mode_dim;
        const CompositeSpace space{d, md};
        sc.composite = true;
        sc.psi0 = tensor(sys0, basis_ket(md, 0));
        sc.lowering = embed(annihilation(d), space, 0);
        sc.mode_number = embed(number_op(md), space, 1);
        if (s.model == "split") {
            DetectorParams p;
            p.kappa = s.kappa;
            p.Gamma1 = s.Gamma1;
            p.Gamma2 = s.Gamma2;
            sc.split = total_model(h0, p, md);
            sc.model = sc.split->full();
            sc.gamma = sc.split->effective_gamma();
            sc.warnings = validate_hierarchy(p, sys0, h0).warnings();
        } else {
            sc.gamma = s.gamma ? *s.gamma : effective_gamma(s.kappa, s.Gamma2);
            sc.model = intermediate_model(h0, sc.gamma, s.Gamma1, s.reabsorption, md);
        }
    }
    return sc;
}

inline Operator observable(const Scenario& sc, const std::string& name) {
    if (name == "n") return sc.lowering.adjoint() * sc.lowering;
    if (name == "a") return sc.lowering;
    if (name == "n_mode") {
        if (!sc.composite) throw ConfigError("config field 'observables': n_mode needs a split or intermediate model");
        return sc.mode_number;
    }
    if (sc.system_dim != 2) throw ConfigError("config field 'observables': " + name + " needs scenario.dim = 2");
    const Operator p = name == "sx" ? sigma_x() : name == "sy" ? sigma_y() : sigma_z();
    return sc.composite ? embed(p, CompositeSpace{sc.system_dim, sc.model.dim() / sc.system_dim}, 0) : p;
}

inline std::vector<double> output_grid(const RunConfig& c) {
    if (!c.output_times.empty()) return c.output_times;
    const long steps = std::lround(c.T / c.dt);
    std::vector<double> t;
    for (long k = 0; k < c.n_out; ++k) {
        const long s = std::lround(static_cast<double>(k) * static_cast<double>(steps) / static_cast<double>(c.n_out - 1));
        t.push_back(static_cast<double>(s) * c.dt);
    }
    return t;
}

inline RunMetadata metadata(const RunConfig& c, const std::string& command, std::vector<std::string> warnings = {}) {
    RunMetadata m;
    m.config = c.to_json();
    m.master_seed = c.master_seed;
    m.backend = c.backend;
    m.command = command;
    m.warnings = std::move(warnings);
    return m;
}

// ------------------------------ commands -------------------------------------

inline void cmd_evolve(const RunConfig& c, std::ostream& os) {
    const Scenario sc = build_scenario(c);
    const double bound = generator_norm_bound(sc.model);
    if (bound * c.dt > kMaxGeneratorStep)
        throw ConfigError("config field 'dt' too large for evolve: need dt <= " + fmt_num(kMaxGeneratorStep / bound));
    std::vector<Operator> obs;
    for (const auto& o : c.observables) obs.push_back(observable(sc, o));
    const auto traj = evolve_master(sc.model, sc.psi0 * sc.psi0.adjoint(), c.T, c.dt, output_grid(c));
    metadata(c, "evolve", sc.warnings).write_csv_header(os);
    const Operator n = sc.lowering.adjoint() * sc.lowering;
    os << "t,n";
    for (const auto& o : c.observables) os << ',' << o << "_re," << o << "_im";
    os << ",trace,min_eig\n";
    for (std::size_t k = 0; k < traj.times.size(); ++k) {
        const auto& rho = traj.states[k];
        os << fmt_num(traj.times[k]) << ',' << fmt_num((rho * n).trace().real());
        for (const auto& o : obs) {
            const Complex v = (rho * o).trace();
            os << ',' << fmt_num(v.real()) << ',' << fmt_num(v.imag());
        }
        os << ',' << fmt_num(rho.trace().real()) << ',' << fmt_num(min_eigenvalue(rho)) << '\n';
    }
}

inline TrajectoryOptions trajectory_options(const RunConfig& c, const Scenario& sc) {
    TrajectoryOptions o;
    o.T = c.T;
    o.dt = c.dt;
    o.output_times = output_grid(c);
    o.sampler = c.sampler == "waiting" ? JumpSampler::WaitingTime : JumpSampler::Bernoulli;
    if (sc.composite) o.excitation_observable = sc.mode_number;
    return o;
}

inline void cmd_traj(const RunConfig& c, std::ostream& os) {
    const Scenario sc = build_scenario(c);
    const Engine e = parse_engine(c.engine);
    const auto rec = run_trajectory(e, sc.model, sc.psi0, trajectory_options(c, sc), derive_seed(c.master_seed, c.traj_index));
    write_trajectory_jsonl(os, rec, metadata(c, "traj", sc.warnings));
}

inline void cmd_ensemble(const RunConfig& c, std::ostream& os) {
    const Scenario sc = build_scenario(c);
    const Engine e = parse_engine(c.engine);
    EnsembleOptions o;
    const auto topt = trajectory_options(c, sc);
    o.T = c.T;
    o.dt = c.dt;
    o.output_times = topt.output_times;
    o.n_traj = static_cast<std::size_t>(c.n_traj);
    o.master_seed = c.master_seed;
    o.workers = static_cast<unsigned>(c.workers);
    o.sampler = topt.sampler;
    o.excitation_observable = topt.excitation_observable;
    for (const auto& name : c.observables) {
        if (name == "a") throw ConfigError("config field 'observables': 'a' is not Hermitian, not available for ensemble");
        o.observables.push_back(observable(sc, name));
    }
    const auto st = run_ensemble(e, sc.model, sc.psi0, o);
    std::optional<MasterTrajectory> master;
    if (c.oracle) {
        const double bound = generator_norm_bound(sc.model);
        const double mdt = std::min(c.dt, kMaxGeneratorStep / bound);
        const long sub = static_cast<long>(std::ceil(c.dt / mdt - 1e-9));
        master = evolve_master(sc.model, sc.psi0 * sc.psi0.adjoint(), c.T, c.dt / static_cast<double>(sub), st.times);
    }
    auto warnings = sc.warnings;
    warnings.insert(warnings.end(), st.warnings.begin(), st.warnings.end());
    metadata(c, "ensemble", warnings).write_csv_header(os);
    os << "t";
    for (const auto& name : c.observables) os << ',' << name << "_mean," << name << "_se";
    os << ",mean_weight,trace";
    if (master) os << ",trace_distance";
    os << '\n';
    for (std::size_t k = 0; k < st.times.size(); ++k) {
        os << fmt_num(st.times[k]);
        for (std::size_t j = 0; j < c.observables.size(); ++j)
            os << ',' << fmt_num(st.obs_mean[k][j]) << ',' << fmt_num(st.obs_error[k][j]);
        os << ',' << fmt_num(st.mean_weight[k]) << ',' << fmt_num(st.mean[k].trace().real());
        if (master) os << ',' << fmt_num(trace_distance(st.mean[k], master->states[k]));
        os << '\n';
    }
}

inline const SplitLindbladModel& require_split(const Scenario& sc, const char* cmd) {
    if (!sc.split) throw ConfigError(std::string("config field 'scenario.model' must be split for ") + cmd);
    return *sc.split;
}

inline void cmd_hist(const RunConfig& c, std::ostream& os, std::ostream* summary_os = nullptr) {
    const Scenario sc = build_scenario(c);
    const auto& split = require_split(sc, "hist");
    if (c.history.N > static_cast<long>(kMaxTableN))
        throw ConfigError("config field 'history.N' exceeds the table cap " + std::to_string(kMaxTableN));
    const Backend be = parse_backend(c.backend);
    const Operator rho0 = sc.psi0 * sc.psi0.adjoint();
    auto table = decoherence_table(split, rho0, static_cast<std::size_t>(c.history.N), c.history.delta_t, be);
    json summary = table_summary_json(table);
    if (c.history.pt_report) {
        // The no-click history against the normalized no-jump state.
        const Operator heff = cavity_model(split.H0, split.effective_gamma(), split.system_dim()).effective_hamiltonian();
        const History h0(std::vector<std::uint8_t>(static_cast<std::size_t>(c.history.N), 0), c.history.delta_t);
        const Ket ref = tensor(Ket(expm(Operator(-kI * h0.duration() * heff)) * sc.psi0_system), basis_ket(split.mode_dim, 0));
        const auto r = pt_eigen_report(pt_decoherence_functional(split, rho0, h0, h0, be), ref);
        summary["pt_report"] = {{"history", h0.str()}, {"dominance", r.dominance}, {"fidelity", r.fidelity},
                                {"eigenvalues", std::vector<double>(r.eigenvalues.data(), r.eigenvalues.data() + r.eigenvalues.size())}};
    }
    auto warnings = sc.warnings;
    warnings.insert(warnings.end(), table.warnings.begin(), table.warnings.end());
    const auto meta = metadata(c, "hist", warnings);
    meta.write_csv_header(os);
    if (c.history.table != "none") write_table_csv(os, table, c.history.table == "diagonal");
    json doc{{"meta", meta.to_json(false)}, {"summary", summary}};
    if (summary_os)
        *summary_os << doc.dump(2) << '\n';
    else
        os << "# summary " << summary.dump() << '\n';
}

inline void cmd_compare(const RunConfig& c, std::ostream& os) {
    const Scenario sc = build_scenario(c);
    const auto& split = require_split(sc, "compare");
    const Backend be = parse_backend(c.backend);
    const auto N = static_cast<std::size_t>(c.history.N);
    const auto M = static_cast<std::size_t>(c.history.M);
    const double dt = c.history.delta_t;
    const Operator rho0 = sc.psi0 * sc.psi0.adjoint();
    const auto probs = history_probabilities(split, rho0, N, dt, c.history.pruning, be);
    const auto cg = coarse_grain(probs.histories, probs.probabilities, M);
    const double window = static_cast<double>(M) * dt;
    const double T = static_cast<double>(N) * dt;
    const LindbladModel jump_model = adiabatic_model(split.H0, split.effective_gamma(), split.system_dim());
    const double omega = split.H0.size() ? herm_eig(split.H0).values.cwiseAbs().maxCoeff() : 0.0;

    auto warnings = sc.warnings;
    for (auto& w : probs.warnings) warnings.push_back(w);
    for (auto& w : validate_coarse_window(split.gamma1, omega, window)) warnings.push_back(w);
    if (N % M != 0) warnings.push_back("history.N is not a multiple of history.M; last window is short");
    metadata(c, "compare", warnings).write_csv_header(os);
    os << "record,click_times,p_history,p_jump,rel_error,flag\n";
    double max_err = 0.0;
    for (const auto& [windows, p_hist] : cg.records) {
        std::vector<double> times;
        std::string rec, tstr;
        for (std::size_t w : windows) {
            const double t = std::min(T, (static_cast<double>(w) + 0.5) * window);
            times.push_back(t);
            rec += (rec.empty() ? "" : ";") + std::to_string(w);
            tstr += (tstr.empty() ? "" : ";") + fmt_num(t);
        }
        const double p_jump = jump_record_probability(jump_model, sc.psi0_system, times, T, window);
        const double err = p_jump > 0.0 ? (p_hist - p_jump) / p_jump : std::numeric_limits<double>::infinity();
        if (std::isfinite(err)) max_err = std::max(max_err, std::abs(err));
        os << (rec.empty() ? "-" : rec) << ',' << (tstr.empty() ? "-" : tstr) << ',' << fmt_num(p_hist) << ','
           << fmt_num(p_jump) << ',' << fmt_num(err) << ",ok\n";
    }
    if (probs.truncated_mass > 0.0 || c.history.pruning > 0.0)
        os << "truncated,-," << fmt_num(probs.truncated_mass) << ",nan,nan,beyond_truncation\n";
    json summary{{"max_rel_error", max_err},
                 {"multi_transition_mass", cg.multi_transition_mass},
                 {"truncated_mass", probs.truncated_mass},
                 {"probability_sum", probs.probability_sum},
                 {"warnings", warnings}};
    os << "# summary " << summary.dump() << '\n';
}

// Runs `command` with output to c.out ("-" for `os`). Returns an exit code.
inline int run_command(const std::string& command, const RunConfig& c, std::ostream& os, std::ostream& err) {
    try {
        std::ofstream file;
        std::ostream* out = &os;
        if (c.out != "-") {
            file.open(c.out);
            if (!file) throw ConfigError("config field 'out': cannot open '" + c.out + "' for writing");
            out = &file;
        }
        if (command == "evolve")
            cmd_evolve(c, *out);
        else if (command == "traj")
            cmd_traj(c, *out);
        else if (command == "ensemble")
            cmd_ensemble(c, *out);
        else if (command == "hist") {
            std::ofstream summary;
            if (c.out != "-") {
                summary.open(c.out + ".summary.json");
                if (!summary) throw ConfigError("config field 'out': cannot write summary next to '" + c.out + "'");
            }
            cmd_hist(c, *out, c.out != "-" ? &summary : nullptr);
        } else if (command == "compare")
            cmd_compare(c, *out);
        else
            throw ConfigError("unknown command '" + command + "' (expected evolve, traj, ensemble, hist or compare)");
        return kExitOk;
    } catch (const ConfigError& e) {
        err << "qtraj: config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const std::exception& e) {
        err << "qtraj: " << e.what() << '\n';
        return kExitNumeric;
    }
}

}  // namespace qtraj::cli
