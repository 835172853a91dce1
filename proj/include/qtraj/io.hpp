// io.hpp: CSV and JSONL emission. Numbers use 17 significant digits so
// files round-trip bit for bit.

#pragma once

#include "qtraj/histories.hpp"
#include "qtraj/rng.hpp"
#include "qtraj/unravel.hpp"

#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <ostream>
#include <string>
#include <vector>

namespace qtraj {

using json = nlohmann::ordered_json;

#ifndef QTRAJ_VERSION
#define QTRAJ_VERSION "0.0.0"
#endif

inline constexpr std::string_view kVersion = QTRAJ_VERSION;

inline std::string fmt_num(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.16e", x);
    return buf;
}

inline std::string utc_timestamp() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

// Everything a reader needs to rerun the file. The timestamp is the only
// field that differs between reruns and sits on its own line.
struct RunMetadata {
    json config;
    std::uint64_t master_seed = 0;
    std::string backend;
    std::string command;
    std::vector<std::string> warnings;

    [[nodiscard]] json to_json(bool with_timestamp) const {
        json j;
        j["program"] = "qtraj";
        j["version"] = std::string(kVersion);
        j["command"] = command;
        j["master_seed"] = master_seed;
        j["backend"] = backend;
        j["rng"] = std::string(kRngName);
        j["config"] = config;
        j["warnings"] = warnings;
        if (with_timestamp) j["generated"] = utc_timestamp();
        return j;
    }

    void write_csv_header(std::ostream& os) const {
        os << "# generated " << utc_timestamp() << '\n';
        os << "# qtraj " << kVersion << ' ' << command << '\n';
        os << "# master_seed " << master_seed << '\n';
        os << "# backend " << backend << '\n';
        os << "# rng " << kRngName << '\n';
        os << "# config " << config.dump() << '\n';
        for (const auto& w : warnings) os << "# warning " << w << '\n';
    }
};

inline json ket_json(const Ket& psi) {
    json re = json::array(), im = json::array();
    for (Index i = 0; i < psi.size(); ++i) {
        re.push_back(psi(i).real());
        im.push_back(psi(i).imag());
    }
    return {{"re", re}, {"im", im}};
}

// One JSON object per line: a metadata line, then snapshots and events in time
// order (an event stamped t precedes the snapshot at t), then a summary.
inline void write_trajectory_jsonl(std::ostream& os, const TrajectoryRecord& rec, const RunMetadata& meta) {
    os << json{{"kind", "meta"}, {"meta", meta.to_json(true)}}.dump() << '\n';
    std::size_t e = 0;
    auto emit_event = [&](const JumpEvent& ev) {
        os << json{{"t", ev.t}, {"kind", std::string(jump_kind_name(ev.kind))}, {"channel", ev.channel}}.dump() << '\n';
    };
    for (const auto& s : rec.snapshots) {
        while (e < rec.events.size() && rec.events[e].t <= s.t + 0.5 * rec.dt) emit_event(rec.events[e++]);
        json j{{"t", s.t}, {"kind", "snapshot"}};
        const json amp = ket_json(s.psi);
        j["re"] = amp["re"];
        j["im"] = amp["im"];
        j["log_weight"] = s.log_weight;
        os << j.dump() << '\n';
    }
    while (e < rec.events.size()) emit_event(rec.events[e++]);
    os << json{{"kind", "summary"},
               {"engine", std::string(engine_name(rec.engine))},
               {"seed", rec.seed},
               {"dt", rec.dt},
               {"n_events", rec.events.size()},
               {"log_weight", rec.log_weight},
               {"warnings", rec.warnings}}
              .dump()
       << '\n';
}

// Columns h, h', Re D, Im D, ratio (empty when undefined).
inline void write_table_csv(std::ostream& os, const DecoherenceTable& t, bool diagonal_only = false) {
    os << "h,hp,re_D,im_D,ratio\n";
    const std::size_t n = t.histories.size();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            if (diagonal_only && i != j) continue;
            const Complex d = t.D(static_cast<Index>(i), static_cast<Index>(j));
            const auto r = dowker_halliwell_ratio(t, i, j);
            os << t.histories[i].str() << ',' << t.histories[j].str() << ',' << fmt_num(d.real()) << ','
               << fmt_num(d.imag()) << ',' << (r ? fmt_num(*r) : std::string()) << '\n';
        }
}

inline json table_summary_json(const DecoherenceTable& t) {
    json j;
    j["n_histories"] = t.histories.size();
    j["epsilon"] = t.epsilon;
    j["max_ratio"] = t.max_ratio;
    if (t.argmax) j["argmax"] = {t.histories[t.argmax->first].str(), t.histories[t.argmax->second].str()};
    j["undefined_pairs"] = t.undefined_pairs;
    j["probability_sum"] = t.probability_sum;
    j["pair_sum"] = {t.pair_sum.real(), t.pair_sum.imag()};
    j["truncated_mass"] = t.truncated_mass;
    j["backend"] = std::string(backend_name(t.backend));
    j["warnings"] = t.warnings;
    return j;
}

}  // namespace qtraj
