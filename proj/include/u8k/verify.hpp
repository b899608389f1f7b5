// Copyright (c) u8k-verifier contributors.
// SPDX-License-Identifier: MIT
#pragma once

// Property checks (ARTE, APE) and the in-context and parameterized
// verification pipelines.

#include <optional>
#include <set>
#include <string>
#include <vector>

#include "u8k/engine.hpp"
#include "u8k/shape.hpp"

namespace u8k {

struct PropertyVerdict {
    bool proved{false};
    std::string reason; // empty when proved
    std::vector<Alarm> alarms;
};

struct Verdict {
    PropertyVerdict ape;
    PropertyVerdict arte;
    bool invariant_trivial{false};

    [[nodiscard]] bool proved() const { return ape.proved && arte.proved; }
};

// Alarm kinds that refute ARTE.
bool is_arte_alarm(AlarmKind k);

PropertyVerdict check_arte(const std::vector<Alarm>& alarms);
// `invariant` must be closed under the empowered transition. `scope`, when
// given, restricts the exits considered.
PropertyVerdict check_ape(const Invariant& inv, const std::vector<Alarm>& alarms,
                          const std::set<ProgramPoint>* scope = nullptr);
// Some kernel point constrains a register or cell and no exit havocked everything.
bool invariant_nontrivial(const Invariant& inv);

enum class Mode { InContext, Param, ParamBootDiff };
std::string_view mode_name(Mode m);

struct BaseCaseReport {
    bool checked{false};
    std::vector<Alarm> violations;
    Labeling labeling;
};

struct RunResult {
    Mode mode{Mode::InContext};
    Verdict verdict;
    Invariant invariant;             // 𝓘 in context, Ī in parameterized modes
    std::optional<Invariant> boot;   // in-context boot analysis (differentiated mode)
    BaseCaseReport base_case;
    std::string serialized;          // canonical text of `invariant`
    bool inductive{false};           // re-transfer self-check on `invariant`
    double invariant_seconds{0};
    double base_case_seconds{0};
    double total_seconds{0};
};

RunResult run_in_context(const MachineImage& kernel, const MachineImage& user, const EngineConfig& cfg = {});

struct ParamOptions {
    bool differentiated{false};
    std::optional<Address> exitpoint; // overrides the annotation file
};

// The annotations' types, params and root regions drive the symbolic entry
// state; `user` (when given) is checked by the base case.
RunResult run_parameterized(const MachineImage& kernel, const TypeEnv& annotations,
                            const std::optional<MachineImage>& user, const ParamOptions& opts = {},
                            const EngineConfig& cfg = {});

// ∀ location constrained by `param`: γ(concrete) ⊆ γ(param), typed facts
// discharged against the concrete labeling. Returns one message per failure.
std::vector<std::string> implication_check(const AbstractState& concrete, const AbstractState& param,
                                           const TypeContext& tc, const TypeSystem& concrete_types,
                                           const Labeling& lab);

// Random schedules against an adversarial user model: counts privileged
// states outside kernel code, and kernel states outside `inv` when given.
struct OracleSummary {
    unsigned runs{0};
    std::uint64_t seed{0};
    std::size_t states_checked{0};
    std::size_t escapes{0};
    std::size_t uncontained{0};
};
OracleSummary oracle_check(const MachineImage& kernel, const MachineImage& user, const Invariant* inv, unsigned runs,
                           std::uint64_t seed);

} // namespace u8k
