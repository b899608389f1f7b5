// Copyright (c) u8k-verifier contributors.
// SPDX-License-Identifier: MIT

#include <catch_amalgamated.hpp>

#include <random>

#include "u8k/assembler.hpp"
#include "u8k/engine.hpp"

using namespace u8k;

namespace {

struct System {
    MachineImage kernel;
    MachineImage user;
    ConcreteState s0;
    AnalysisInput in;
};

System example() {
    System s{assemble_file(U8K_CORPUS_DIR "/kernel_fig1.s"), assemble_file(U8K_CORPUS_DIR "/user_fig3.s"), {}, {}};
    s.s0 = load_images(s.kernel, s.user);
    s.in.entries = entries_of(s.kernel);
    s.in.inits.push_back({ProgramPoint{s.in.entries.reset, {}, {}}, abstract_of(s.s0, freeze_code(s.kernel))});
    return s;
}

// A kernel-only program whose three entries all point at `start`.
AnalysisInput program(const std::string& body, bool unknown_regs = false) {
    const auto img = assemble(".org 0\n.entry reset, start\n.entry syscall, start\n.entry timer, start\nstart:\n" + body +
                              "\ncode_end:\n");
    ConcreteState c;
    for (std::size_t i = 0; i < img.bytes.size(); ++i) c.mem[i] = img.bytes[i];
    c.reg(Reg::FLAGS) = kPrivileged;
    auto st = abstract_of(c, freeze_code(img));
    if (unknown_regs) {
        for (Reg r : {Reg::R0, Reg::R1, Reg::R2, Reg::R3}) st.reg(r) = AbstractValue::top();
    }
    AnalysisInput in;
    in.entries = entries_of(img);
    in.inits.push_back({ProgramPoint{0, {}, {}}, st});
    return in;
}

AbstractState join_at(const Invariant& inv, Address a) {
    AbstractState acc;
    for (const auto& [p, s] : inv.states) {
        if (p.addr == a) acc = acc.join(s, nullptr);
    }
    return acc;
}

BitvecAbs set_of(std::initializer_list<Byte> vs) { return BitvecAbs::from_values(vs); }

const AbstractState& exit_state(const Invariant& inv) {
    REQUIRE(inv.exits.size() == 1);
    return inv.states.at(inv.exits.front().point);
}

} // namespace

TEST_CASE("engine: example kernel exit state") {
    auto sys = example();
    const auto inv = analyze(sys.in);
    CHECK(inv.alarms.empty());
    const auto& s = exit_state(inv);
    CHECK(s.mem.get(0xA0).num == set_of({0xA2, 0xA7}));
    CHECK(s.mem.get(0xA1).num == set_of({0xA3, 0xA8}));
    CHECK(s.reg(Reg::MPU1).num == BitvecAbs::constant(0xAE));
    CHECK(s.reg(Reg::MPU2).num == BitvecAbs::constant(0xB0));
    for (Address a : {Address{0xA5}, Address{0xAA}})
        CHECK(s.mem.get(a).num.gamma() == BitvecAbs::urange(0, 0x7F).gamma());
    CHECK(s.reg(Reg::UFLAGS).num.gamma() == BitvecAbs::urange(0, 0x7F).gamma());
    for (unsigned a = 0xC0; a < 0xF0; ++a) {
        const bool segment = a < 0xD0 || a >= 0xE0;
        CHECK(s.mem.tracked(static_cast<Address>(a)) == !segment);
    }
    const auto& e = inv.exits.front();
    CHECK_FALSE(e.total_havoc);
    CHECK(e.havocked == std::vector<std::pair<unsigned, unsigned>>{{0xC0, 0xD0}, {0xE0, 0xF0}});
}

TEST_CASE("engine: other example kernel cells keep their initial value") {
    auto sys = example();
    const auto inv = analyze(sys.in);
    const auto& s = exit_state(inv);
    // Saved-context bytes of the two threads change, as does the kernel stack slot.
    const std::set<unsigned> varying{0xA0, 0xA1, 0xA3, 0xA4, 0xA5, 0xA8, 0xA9, 0xAA, 0x9E};
    for (unsigned a = 0; a < kMemorySize; ++a) {
        const auto at = static_cast<Address>(a);
        if (varying.contains(a) || (a >= 0xC0 && a < 0xD0) || (a >= 0xE0 && a < 0xF0)) continue;
        INFO("address " << a);
        CHECK(s.mem.get(at).num == BitvecAbs::constant(sys.s0.mem[a]));
    }
}

TEST_CASE("engine: straight-line program has one point per instruction") {
    const auto in = program("ldi r0, 1\nldi r1, 2\nhalt");
    const auto inv = analyze(in);
    CHECK(inv.states.size() == 3);
    CHECK(inv.iterations == 3);
    const auto& s = inv.states.at(ProgramPoint{4, {}, {}});
    CHECK(s.reg(Reg::R0).num == BitvecAbs::constant(1));
    CHECK(s.reg(Reg::R1).num == BitvecAbs::constant(2));
}

TEST_CASE("engine: a constant-bound loop is unrolled exactly") {
    const auto in = program("ldi r0, 0\nldi r1, 1\nldi r2, 5\nloop:\nadd r0, r1\ncmp r0, r2\njne loop\nhalt");
    const auto inv = analyze(in);
    CHECK(inv.alarms.empty());
    const auto done = join_at(inv, 12);
    CHECK(done.reg(Reg::R0).num == BitvecAbs::constant(5));
}

TEST_CASE("engine: a symbolic-bound loop is summarized") {
    // i runs from 0 to n with n in [0, 7].
    const auto in = program("ldi r3, 7\nand r2, r3\nldi r0, 0\nldi r1, 1\nloop:\ncmp r0, r2\njge done\nadd r0, r1\njmp loop\n"
                            "done:\nhalt",
                            true);
    const auto inv = analyze(in);
    const auto head = join_at(inv, 8);
    CHECK(head.reg(Reg::R0).num.gamma() == BitvecAbs::urange(0, 7).gamma());
    bool summarized = false;
    for (const auto& [p, s] : inv.states) {
        for (const auto& f : p.loops) summarized = summarized || f.iter == 0;
    }
    CHECK(summarized);
    CHECK(check_inductive(inv, in, {}));
}

TEST_CASE("engine: unroll policy") {
    CHECK_FALSE(unroll_policy(BitvecAbs::constant(2)).summarize);
    CHECK(unroll_policy(BitvecAbs::constant(2)).k == 2);
    CHECK(unroll_policy(BitvecAbs::top()).summarize);
    CHECK(unroll_policy(BitvecAbs::constant(100)).summarize);
    CHECK_FALSE(unroll_policy(BitvecAbs::constant(64)).summarize);
    CHECK(unroll_policy(BitvecAbs::urange(1, 2)).summarize);
}

TEST_CASE("engine: empowered step") {
    auto sys = example();
    const auto inv = analyze(sys.in);
    const auto& s = exit_state(inv);

    auto r = empowered_step(s, nullptr);
    CHECK_FALSE(r.report.total_havoc);
    CHECK(r.state.mem.get(0xA0).num == set_of({0xA2, 0xA7}));
    for (Reg reg : {Reg::R0, Reg::R1, Reg::R2, Reg::R3, Reg::SP, Reg::UPC, Reg::USP})
        CHECK(r.state.reg(reg).is_top());
    CHECK(r.state.reg(Reg::FLAGS).num == BitvecAbs::constant(kPrivileged));
    CHECK(r.state.reg(Reg::MPU1).num == BitvecAbs::constant(0xAE));

    auto privileged = s;
    privileged.reg(Reg::UFLAGS) = AbstractValue::top();
    r = empowered_step(privileged, nullptr);
    CHECK(r.report.total_havoc);
    CHECK(r.report.reason.starts_with("privileged-exit-unproven"));
    CHECK(r.state.trivial());

    auto unknown = s;
    unknown.reg(Reg::MPU1) = AbstractValue::top();
    r = empowered_step(unknown, nullptr);
    CHECK(r.report.total_havoc);
    CHECK(r.report.reason.starts_with("trivial-invariant"));
    CHECK(r.state.trivial());
}

TEST_CASE("engine: example invariant is inductive and deterministic") {
    auto sys = example();
    const auto inv = analyze(sys.in);
    std::string why;
    CHECK(check_inductive(inv, sys.in, {}, &why));
    INFO(why);
    CHECK(serialize(inv) == serialize(analyze(sys.in)));
}

TEST_CASE("engine: budget") {
    auto sys = example();
    EngineConfig cfg;
    cfg.budget = 10;
    CHECK_THROWS_AS(analyze(sys.in, cfg), BudgetExceeded);
}

TEST_CASE("engine: oracle states lie inside the invariant") {
    auto sys = example();
    const auto inv = analyze(sys.in);
    const auto code_end = sys.kernel.code_end();
    std::mt19937_64 rng(2024);
    std::size_t checked = 0, violations = 0;
    for (int run = 0; run < 1000; ++run) {
        std::vector<Event> schedule{{EventKind::Reset}};
        const int n = std::uniform_int_distribution<int>(0, 12)(rng);
        for (int i = 0; i < n; ++i) {
            schedule.push_back({std::uniform_int_distribution<int>(0, 1)(rng) ? EventKind::Timer : EventKind::Syscall,
                                static_cast<std::uint16_t>(std::uniform_int_distribution<int>(0, 8)(rng))});
        }
        const UserModel model{run % 2 ? UserModel::Kind::Adversary : UserModel::Kind::Execute, rng()};
        const auto trace = run_oracle(sys.s0, sys.in.entries, schedule, 20000, model);
        for (std::size_t i = 0; i < trace.states.size(); ++i) {
            const auto& c = trace.states[i];
            if (!c.privileged() || c.reg(Reg::PC) >= code_end) continue;
            AbstractState acc;
            for (const auto& [p, a] : inv.states) {
                if (p.addr == c.reg(Reg::PC) && p.calls == trace.call_sites[i]) acc = acc.join(a, nullptr);
            }
            ++checked;
            if (!contains(acc, c)) ++violations;
        }
    }
    CHECK(checked > 10000);
    CHECK(violations == 0);
}
