// Copyright (c) u8k-verifier contributors.
// SPDX-License-Identifier: MIT
#pragma once

// Worklist fixpoint over kernel code: CFG recovery, call inlining by call
// strings, bounded loop unrolling, widening, and the empowered transition
// that stands for user code between a kernel exit and the next entry.

#include <array>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "u8k/machine.hpp"
#include "u8k/memory.hpp"

namespace u8k {

enum class AlarmKind : std::uint8_t {
    IllegalOpcodeSite,
    MaybeDivZero,
    UnresolvedJump,
    WildStore,
    SelfModification,
    TypingViolationStore,
    MaybeNullDeref,
    PrivilegedExitUnproven,
    BaseCaseViolation,
};
std::string_view alarm_name(AlarmKind k);

// A loop being unrolled: back edge latch -> head, taken `iter` times.
// iter == 0 is the summary of all further iterations.
struct LoopFrame {
    Address head{0};
    Address latch{0};
    unsigned iter{0};
    unsigned depth{0}; // call-string length the loop lives at

    auto operator<=>(const LoopFrame&) const = default;
};

struct ProgramPoint {
    Address addr{0};
    std::vector<Address> calls; // call-site addresses, outermost first
    std::vector<LoopFrame> loops;

    auto operator<=>(const ProgramPoint&) const = default;
    [[nodiscard]] std::string str() const;
};

struct AbstractState {
    bool bottom{true};
    std::array<AbstractValue, kRegisterCount> regs{};
    AbsMemory mem;
    // Operands of the CMP that produced FLAGS, while both are unchanged.
    std::optional<std::pair<Reg, Reg>> cmp;

    [[nodiscard]] const AbstractValue& reg(Reg r) const { return regs[index(r)]; }
    AbstractValue& reg(Reg r) { return regs[index(r)]; }
    // Writes a register and forgets a CMP that read it.
    void write(Reg r, AbstractValue v);

    [[nodiscard]] bool leq(const AbstractState& o, const TypeContext* tc) const;
    [[nodiscard]] AbstractState join(const AbstractState& o, const TypeContext* tc) const;
    [[nodiscard]] AbstractState widen(const AbstractState& next, const TypeContext* tc) const;
    [[nodiscard]] AbstractState meet(const AbstractState& o) const;
    bool operator==(const AbstractState& o) const;

    // No register or cell is constrained.
    [[nodiscard]] bool trivial() const;
};

struct Alarm {
    AlarmKind kind{AlarmKind::IllegalOpcodeSite};
    ProgramPoint point;
    std::string detail;

    auto operator<=>(const Alarm&) const = default;
};

// What the empowered transition did at one kernel exit.
struct ExitReport {
    ProgramPoint point;
    bool total_havoc{false};
    std::string reason; // empty, "privileged-exit-unproven" or "trivial-invariant"
    std::vector<std::pair<unsigned, unsigned>> havocked;
};

struct Invariant {
    std::map<ProgramPoint, AbstractState> states;
    std::set<std::pair<ProgramPoint, ProgramPoint>> cfg;
    std::vector<Alarm> alarms;
    std::vector<ExitReport> exits;
    std::size_t iterations{0};
    bool narrowed{false};
};

class BudgetExceeded : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

struct EngineConfig {
    std::size_t budget{1'000'000};   // worklist pops
    unsigned widen_delay{4};         // joins at a point before widening
    unsigned max_call_depth{32};
    unsigned unroll_cap{64};
    bool narrowing{true};
    std::optional<Address> stop_at; // IRET address ending a boot-only analysis
};

struct AnalysisInput {
    KernelEntries entries{};
    std::vector<std::pair<ProgramPoint, AbstractState>> inits;
    const TypeContext* types{nullptr}; // parameterized mode only
};

Invariant analyze(const AnalysisInput& in, const EngineConfig& cfg = {});

// Unroll(k) iff the loop bound is a single value k <= cap.
struct UnrollDecision {
    bool summarize{true};
    unsigned k{0};
};
UnrollDecision unroll_policy(const BitvecAbs& bound, unsigned cap = 64);

struct EmpoweredResult {
    AbstractState state;
    ExitReport report;
};
// State at the kernel entries after user code runs from the exit state `s`
// (taken just before IRET executes).
EmpoweredResult empowered_step(const AbstractState& s, const TypeContext* tc);

// Successors of one point, with alarms of that transfer appended to `alarms`.
struct Successor {
    ProgramPoint to;
    AbstractState state;
};
std::vector<Successor> transfer(const ProgramPoint& p, const AbstractState& s, const AnalysisInput& in,
                                const EngineConfig& cfg, std::vector<Alarm>* alarms = nullptr,
                                std::vector<ExitReport>* exits = nullptr);

// Re-applies every transfer; ok iff each successor is below the stored state.
bool check_inductive(const Invariant& inv, const AnalysisInput& in, const EngineConfig& cfg,
                     std::string* why = nullptr);

// Abstract state of a concrete one; every memory byte is tracked.
AbstractState abstract_of(const ConcreteState& s, std::shared_ptr<const FrozenBytes> code);
bool contains(const AbstractState& a, const ConcreteState& s);

// Kernel code bytes [origin, code_end) of an image.
std::shared_ptr<const FrozenBytes> freeze_code(const MachineImage& kernel);

// Canonical text: sorted points, each with its non-⊤ registers and cells.
std::string serialize(const Invariant& inv, const TypeContext* tc = nullptr);

} // namespace u8k
