// Copyright (c) u8k-verifier contributors.
// SPDX-License-Identifier: MIT
#pragma once

// Text and JSON renderings of verification runs and bench tables.

#include <optional>
#include <string>
#include <vector>

#include "u8k/bench.hpp"
#include "u8k/verify.hpp"

namespace u8k {

struct ReportContext {
    std::string kernel;
    std::optional<std::string> user;
    std::optional<std::string> annotations;
    std::optional<std::string> invariant_path; // where --emit-invariant wrote it
    bool timing{true};
    std::optional<OracleSummary> oracle;
};

constexpr int kReportSchema = 1;

std::string render_text(const RunResult& r, const ReportContext& ctx);
std::string render_json(const RunResult& r, const ReportContext& ctx);

std::string render_bench_text(const std::vector<BenchRow>& rows);
std::string render_bench_json(const std::vector<BenchRow>& rows);

} // namespace u8k
