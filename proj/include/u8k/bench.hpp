// Copyright (c) u8k-verifier contributors.
// SPDX-License-Identifier: MIT
#pragma once

// Task-count sweep over generated user images for the packed round-robin
// kernel (corpus/kernel_rr.s, interface at 0x70).

#include <stdexcept>
#include <string>
#include <vector>

#include "u8k/machine.hpp"
#include "u8k/verify.hpp"

namespace u8k {

constexpr Address kRrInterface = 0x70;

class GeneratorError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

// Largest task count whose thread table fits below the user segments.
unsigned max_rr_tasks();

// N threads linked round-robin, all running the same task through one
// memory table (code 0xD0..0xDF, data 0xE0..0xEF).
// Throws GeneratorError when the N threads do not fit in memory.
std::string generate_rr_user_source(unsigned n);
MachineImage generate_rr_user(unsigned n);

struct BenchRow {
    unsigned n{0};
    Mode mode{Mode::InContext};
    bool ok{false};            // run completed
    std::string error;         // why it did not
    double invariant_seconds{0};
    double base_case_seconds{0};
    double total_seconds{0};
    long peak_rss_kb{0};
    bool ape{false};
    bool arte{false};
    std::string invariant_digest; // FNV-1a of the serialized invariant
};

struct BenchInputs {
    MachineImage kernel;
    TypeEnv annotations; // parameterized modes
    EngineConfig cfg;
};

// Runs one N in-process.
BenchRow bench_one(const BenchInputs& in, unsigned n, Mode mode);

// Runs every N in a forked child, sequentially, and records its peak RSS.
std::vector<BenchRow> bench_sweep(const BenchInputs& in, const std::vector<unsigned>& ns, Mode mode);

std::string digest(const std::string& text);

} // namespace u8k
