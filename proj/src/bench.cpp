// Copyright (c) u8k-verifier contributors.
// SPDX-License-Identifier: MIT

#include "u8k/bench.hpp"

#include <sys/resource.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cstdio>
#include <json.hpp>

#include "u8k/assembler.hpp"

namespace u8k {

namespace {

constexpr unsigned kThreadsAt = kRrInterface + 6; // after `if` and the memory table
constexpr unsigned kTaskAt = 0xD0;
constexpr unsigned kThreadSize = 5;

nlohmann::json to_json(const BenchRow& r) {
    return {{"n", r.n},
            {"ok", r.ok},
            {"error", r.error},
            {"invariant_seconds", r.invariant_seconds},
            {"base_case_seconds", r.base_case_seconds},
            {"total_seconds", r.total_seconds},
            {"ape", r.ape},
            {"arte", r.arte},
            {"invariant_digest", r.invariant_digest}};
}

BenchRow from_json(const nlohmann::json& j, Mode mode) {
    BenchRow r;
    r.mode = mode;
    r.n = j.at("n");
    r.ok = j.at("ok");
    r.error = j.at("error");
    r.invariant_seconds = j.at("invariant_seconds");
    r.base_case_seconds = j.at("base_case_seconds");
    r.total_seconds = j.at("total_seconds");
    r.ape = j.at("ape");
    r.arte = j.at("arte");
    r.invariant_digest = j.at("invariant_digest");
    return r;
}

} // namespace

unsigned max_rr_tasks() { return (kTaskAt - kThreadsAt) / kThreadSize; }

std::string generate_rr_user_source(unsigned n) {
    if (n == 0 || n > max_rr_tasks()) {
        throw GeneratorError(std::to_string(n) + " threads of " + std::to_string(kThreadSize) +
                             " bytes do not fit in user memory (at most " + std::to_string(max_rr_tasks()) + ")");
    }
    std::string s = "; " + std::to_string(n) + " round-robin threads sharing one memory table.\n";
    s += ".org " + std::to_string(kRrInterface) + "\n";
    s += "if:     .byte t0, " + std::to_string(n) + "\n";
    s += "table:  .byte 0xD0, 0x0F, 0xE0, 0x0F\n";
    for (unsigned i = 0; i < n; ++i) {
        s += "t" + std::to_string(i) + ": .byte table, task, 0xEF, 0x01, t" + std::to_string((i + 1) % n) + "\n";
    }
    s += ".org " + std::to_string(kTaskAt) + "\n";
    s += "task:\n    ldi r0, 1\n    st [0xE0], r0\n    syscall\n    jmp task\n";
    s += ".org 0xEF\n    .byte 0\n";
    return s;
}

MachineImage generate_rr_user(unsigned n) { return assemble(generate_rr_user_source(n)); }

std::string digest(const std::string& text) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ull;
    }
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

BenchRow bench_one(const BenchInputs& in, unsigned n, Mode mode) {
    BenchRow row;
    row.n = n;
    row.mode = mode;
    try {
        const auto user = generate_rr_user(n);
        RunResult r = mode == Mode::InContext
                          ? run_in_context(in.kernel, user, in.cfg)
                          : run_parameterized(in.kernel, in.annotations, user,
                                              ParamOptions{.differentiated = mode == Mode::ParamBootDiff}, in.cfg);
        row.ok = true;
        row.invariant_seconds = r.invariant_seconds;
        row.base_case_seconds = r.base_case_seconds;
        row.total_seconds = r.total_seconds;
        row.ape = r.verdict.ape.proved;
        row.arte = r.verdict.arte.proved;
        row.invariant_digest = digest(r.serialized);
    } catch (const std::exception& e) {
        row.error = e.what();
    }
    return row;
}

std::vector<BenchRow> bench_sweep(const BenchInputs& in, const std::vector<unsigned>& ns, Mode mode) {
    std::vector<BenchRow> rows;
    for (unsigned n : ns) {
        int fds[2];
        if (pipe(fds) != 0) throw std::runtime_error("pipe failed");
        std::fflush(nullptr);
        const pid_t pid = fork();
        if (pid < 0) throw std::runtime_error("fork failed");
        if (pid == 0) {
            close(fds[0]);
            const auto text = to_json(bench_one(in, n, mode)).dump();
            std::size_t off = 0;
            while (off < text.size()) {
                const auto w = write(fds[1], text.data() + off, text.size() - off);
                if (w <= 0) break;
                off += static_cast<std::size_t>(w);
            }
            close(fds[1]);
            _exit(0);
        }
        close(fds[1]);
        std::string text;
        char buf[4096];
        for (ssize_t k; (k = read(fds[0], buf, sizeof buf)) > 0;) text.append(buf, static_cast<std::size_t>(k));
        close(fds[0]);
        int status = 0;
        rusage ru{};
        wait4(pid, &status, 0, &ru);
        BenchRow row;
        try {
            row = from_json(nlohmann::json::parse(text), mode);
        } catch (const std::exception&) {
            row.n = n;
            row.mode = mode;
            row.error = "child exited with status " + std::to_string(status);
        }
        row.peak_rss_kb = ru.ru_maxrss;
        rows.push_back(row);
    }
    return rows;
}

} // namespace u8k
