// Copyright (c) u8k-verifier contributors.
// SPDX-License-Identifier: MIT

#include "u8k/report.hpp"

#include <cstdio>
#include <map>
#include <sstream>

#include <json.hpp>

namespace u8k {

namespace {

using nlohmann::json;

std::map<std::string, std::size_t> alarm_counts(const std::vector<Alarm>& alarms) {
    std::map<std::string, std::size_t> n;
    for (const auto& a : alarms) ++n[std::string(alarm_name(a.kind))];
    return n;
}

// Every alarm the verdict rests on, in a stable order without repeats.
std::vector<Alarm> all_alarms(const RunResult& r) {
    std::vector<Alarm> v = r.verdict.arte.alarms;
    v.insert(v.end(), r.verdict.ape.alarms.begin(), r.verdict.ape.alarms.end());
    v.insert(v.end(), r.base_case.violations.begin(), r.base_case.violations.end());
    std::ranges::sort(v);
    v.erase(std::unique(v.begin(), v.end()), v.end());
    return v;
}

json alarm_json(const Alarm& a) {
    return {{"kind", alarm_name(a.kind)}, {"point", a.point.str()}, {"detail", a.detail}};
}

json property_json(const PropertyVerdict& p) {
    return {{"proved", p.proved}, {"reason", p.proved ? json(nullptr) : json(p.reason)}};
}

std::string fixed(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

std::string property_text(const PropertyVerdict& p) {
    if (p.proved) return "Proved";
    return "NotProved (" + p.reason + ", " + std::to_string(p.alarms.size()) + " alarms)";
}

} // namespace

std::string render_text(const RunResult& r, const ReportContext& ctx) {
    std::ostringstream os;
    os << "mode: " << mode_name(r.mode) << '\n';
    os << "kernel: " << ctx.kernel << '\n';
    if (ctx.user) os << "user: " << *ctx.user << '\n';
    if (ctx.annotations) os << "annotations: " << *ctx.annotations << '\n';
    os << "APE: " << property_text(r.verdict.ape) << '\n';
    os << "ARTE: " << property_text(r.verdict.arte) << '\n';
    const auto alarms = all_alarms(r);
    os << "alarms: " << alarms.size();
    for (const auto& [k, n] : alarm_counts(alarms)) os << ' ' << k << '=' << n;
    os << '\n';
    for (const auto& a : alarms) os << "  " << alarm_name(a.kind) << " at " << a.point.str() << ": " << a.detail << '\n';
    if (r.mode != Mode::InContext) {
        os << "base case: ";
        if (!r.base_case.checked) {
            os << "not checked (no user image)\n";
        } else if (r.base_case.violations.empty()) {
            os << "ok\n";
        } else {
            os << r.base_case.violations.size() << " violations\n";
        }
    }
    os << "invariant: " << r.invariant.states.size() << " points, " << r.invariant.iterations << " iterations, digest "
       << digest(r.serialized) << (r.inductive ? ", inductive" : ", NOT inductive");
    if (ctx.invariant_path) os << ", written to " << *ctx.invariant_path;
    os << '\n';
    if (ctx.oracle) {
        os << "oracle: " << ctx.oracle->runs << " runs (seed " << ctx.oracle->seed << "), "
           << ctx.oracle->states_checked << " kernel states, " << ctx.oracle->escapes << " privileged escapes, "
           << ctx.oracle->uncontained << " outside the invariant\n";
    }
    if (ctx.timing) {
        os << "time: invariant " << fixed(r.invariant_seconds) << " s, base case " << fixed(r.base_case_seconds)
           << " s, total " << fixed(r.total_seconds) << " s\n";
    }
    return os.str();
}

std::string render_json(const RunResult& r, const ReportContext& ctx) {
    const auto alarms = all_alarms(r);
    json j;
    j["schema"] = kReportSchema;
    j["mode"] = mode_name(r.mode);
    j["kernel"] = ctx.kernel;
    j["user"] = ctx.user ? json(*ctx.user) : json(nullptr);
    j["annotations"] = ctx.annotations ? json(*ctx.annotations) : json(nullptr);
    j["verdict"] = {{"ape", property_json(r.verdict.ape)},
                    {"arte", property_json(r.verdict.arte)},
                    {"invariant_trivial", r.verdict.invariant_trivial}};
    j["alarm_counts"] = alarm_counts(alarms);
    j["alarms"] = json::array();
    for (const auto& a : alarms) j["alarms"].push_back(alarm_json(a));
    if (r.mode != Mode::InContext) {
        j["base_case"] = {{"checked", r.base_case.checked}, {"violations", json::array()}};
        for (const auto& a : r.base_case.violations) j["base_case"]["violations"].push_back(alarm_json(a));
    }
    j["invariant"] = {{"points", r.invariant.states.size()},
                      {"iterations", r.invariant.iterations},
                      {"digest", digest(r.serialized)},
                      {"inductive", r.inductive},
                      {"path", ctx.invariant_path ? json(*ctx.invariant_path) : json(nullptr)}};
    if (ctx.oracle) {
        j["oracle"] = {{"runs", ctx.oracle->runs},
                       {"seed", ctx.oracle->seed},
                       {"states_checked", ctx.oracle->states_checked},
                       {"escapes", ctx.oracle->escapes},
                       {"uncontained", ctx.oracle->uncontained}};
    }
    if (ctx.timing) {
        j["timing"] = {{"invariant_seconds", r.invariant_seconds},
                       {"base_case_seconds", r.base_case_seconds},
                       {"total_seconds", r.total_seconds}};
    }
    return j.dump(2) + '\n';
}

std::string render_bench_text(const std::vector<BenchRow>& rows) {
    std::ostringstream os;
    os << "n\tmode\tok\tinvariant_s\tbase_case_s\ttotal_s\tpeak_rss_kb\tape\tarte\tdigest\terror\n";
    for (const auto& r : rows) {
        os << r.n << '\t' << mode_name(r.mode) << '\t' << r.ok << '\t' << fixed(r.invariant_seconds) << '\t'
           << fixed(r.base_case_seconds) << '\t' << fixed(r.total_seconds) << '\t' << r.peak_rss_kb << '\t' << r.ape
           << '\t' << r.arte << '\t' << r.invariant_digest << '\t' << r.error << '\n';
    }
    return os.str();
}

std::string render_bench_json(const std::vector<BenchRow>& rows) {
    json j;
    j["schema"] = kReportSchema;
    j["bench"] = json::array();
    for (const auto& r : rows) {
        j["bench"].push_back({{"n", r.n},
                              {"mode", mode_name(r.mode)},
                              {"ok", r.ok},
                              {"error", r.error.empty() ? json(nullptr) : json(r.error)},
                              {"invariant_seconds", r.invariant_seconds},
                              {"base_case_seconds", r.base_case_seconds},
                              {"total_seconds", r.total_seconds},
                              {"peak_rss_kb", r.peak_rss_kb},
                              {"ape", r.ape},
                              {"arte", r.arte},
                              {"invariant_digest", r.invariant_digest}});
    }
    return j.dump(2) + '\n';
}

} // namespace u8k
