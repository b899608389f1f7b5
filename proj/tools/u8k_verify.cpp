// Copyright (c) u8k-verifier contributors.
// SPDX-License-Identifier: MIT

// Exit status: 0 when APE and ARTE are both proved, 2 when either is not,
// 1 on usage or internal errors.

#include <cstdlib>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "u8k/assembler.hpp"
#include "u8k/bench.hpp"
#include "u8k/report.hpp"

using namespace u8k;

namespace {

MachineImage load_any(const std::string& path) {
    if (path.ends_with(".s")) return assemble_file(path);
    return load_image_file(path);
}

std::uint64_t env_seed() {
    const char* s = std::getenv("U8K_SEED");
    return s ? std::strtoull(s, nullptr, 0) : 0;
}

int run(int argc, char** argv) {
    CLI::App app{"u8k kernel verifier"};
    std::string mode_text = "incontext";
    std::string kernel_path;
    std::string user_path;
    std::string annotations_path;
    std::string report = "text";
    std::string emit_path;
    std::vector<unsigned> bench;
    std::optional<unsigned> exitpoint;
    EngineConfig cfg;
    unsigned vset_k = value_options().vset_k;
    unsigned weak_cap = value_options().weak_update_cap;
    unsigned oracle_runs = 0;
    bool no_timing = false;

    app.add_option("--mode", mode_text, "incontext | param | param-bootdiff")
        ->check(CLI::IsMember({"incontext", "param", "param-bootdiff"}));
    app.add_option("kernel", kernel_path, "kernel image (.img or .s)")->required();
    app.add_option("user", user_path, "user image (.img or .s)");
    app.add_option("--annotations", annotations_path, "interface type annotations");
    app.add_option("--exitpoint", exitpoint, "boot exit IRET address (param-bootdiff)");
    app.add_option("--budget-worklist", cfg.budget, "worklist pops before giving up");
    app.add_option("--vset-k", vset_k, "value-set cap")->check(CLI::Range(1u, 256u));
    app.add_option("--weak-update-cap", weak_cap, "cells a store may weakly update");
    app.add_option("--unroll-cap", cfg.unroll_cap, "largest unrolled loop bound");
    app.add_option("--report", report, "text | json")->check(CLI::IsMember({"text", "json"}));
    app.add_option("--emit-invariant", emit_path, "write the serialized invariant here");
    app.add_option("--bench", bench, "task counts to sweep, e.g. 2,16,128")->delimiter(',');
    app.add_option("--oracle", oracle_runs, "random oracle runs to cross-check (seed from U8K_SEED)");
    app.add_flag("--no-timing", no_timing, "omit timings from the report");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    const Mode mode = mode_text == "incontext" ? Mode::InContext
                      : mode_text == "param"   ? Mode::Param
                                               : Mode::ParamBootDiff;
    if (mode == Mode::InContext && !annotations_path.empty()) {
        std::cerr << "u8k-verify: --annotations is not used in incontext mode\n";
        return 1;
    }
    if (mode != Mode::InContext && annotations_path.empty()) {
        std::cerr << "u8k-verify: " << mode_text << " mode needs --annotations\n";
        return 1;
    }
    if (bench.empty() && user_path.empty() && mode != Mode::Param) {
        std::cerr << "u8k-verify: " << mode_text << " mode needs a user image\n";
        return 1;
    }
    value_options().vset_k = vset_k;
    value_options().weak_update_cap = weak_cap;

    const auto kernel = load_any(kernel_path);
    TypeEnv annotations;
    if (!annotations_path.empty()) annotations = load_annotations(annotations_path);

    if (!bench.empty()) {
        const BenchInputs in{kernel, annotations, cfg};
        const auto rows = bench_sweep(in, bench, mode);
        std::cout << (report == "json" ? render_bench_json(rows) : render_bench_text(rows));
        const bool all = std::ranges::all_of(rows, [](const BenchRow& r) { return r.ok && r.ape && r.arte; });
        return all ? 0 : 2;
    }

    std::optional<MachineImage> user;
    if (!user_path.empty()) user = load_any(user_path);
    RunResult r = mode == Mode::InContext
                      ? run_in_context(kernel, *user, cfg)
                      : run_parameterized(kernel, annotations, user,
                                          ParamOptions{.differentiated = mode == Mode::ParamBootDiff,
                                                       .exitpoint = exitpoint ? std::optional<Address>(static_cast<Address>(*exitpoint))
                                                                              : std::nullopt},
                                          cfg);

    ReportContext ctx;
    ctx.kernel = kernel_path;
    if (user) ctx.user = user_path;
    if (!annotations_path.empty()) ctx.annotations = annotations_path;
    ctx.timing = !no_timing;
    if (!emit_path.empty()) {
        std::ofstream out(emit_path, std::ios::binary);
        out << r.serialized;
        if (!out) throw std::runtime_error("cannot write " + emit_path);
        ctx.invariant_path = emit_path;
    }
    if (oracle_runs > 0 && user) {
        ctx.oracle = oracle_check(kernel, *user, mode == Mode::InContext ? &r.invariant : nullptr, oracle_runs, env_seed());
    }
    std::cout << (report == "json" ? render_json(r, ctx) : render_text(r, ctx));
    return r.verdict.proved() ? 0 : 2;
}

} // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const std::exception& e) {
        std::cerr << "u8k-verify: " << e.what() << '\n';
        return 1;
    }
}
