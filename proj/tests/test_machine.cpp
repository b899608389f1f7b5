// Copyright (c) u8k-verifier contributors.
// SPDX-License-Identifier: MIT

#include <catch_amalgamated.hpp>

#include "u8k/assembler.hpp"
#include "u8k/machine.hpp"

using namespace u8k;

namespace {

ConcreteState example_system() {
    return load_images(assemble_file(U8K_CORPUS_DIR "/kernel_fig1.s"), assemble_file(U8K_CORPUS_DIR "/user_fig3.s"));
}

KernelEntries example_entries() { return entries_of(assemble_file(U8K_CORPUS_DIR "/kernel_fig1.s")); }

ConcreteState with_program(std::initializer_list<Instruction> prog, Byte flags) {
    ConcreteState s;
    Address a = 0;
    for (const auto& ins : prog) {
        auto b = encode(ins);
        s.mem[a++] = b[0];
        s.mem[a++] = b[1];
    }
    s.reg(Reg::FLAGS) = flags;
    return s;
}

} // namespace

TEST_CASE("halt is the zero encoding") {
    auto r = decode(0x00, 0x00);
    REQUIRE(std::holds_alternative<Instruction>(r));
    CHECK(std::get<Instruction>(r).op == Opcode::Halt);
    CHECK(encode(Instruction{}) == std::array<Byte, 2>{0, 0});
}

TEST_CASE("opcode byte 0xff never decodes") {
    for (unsigned b1 = 0; b1 < 256; ++b1) CHECK(std::holds_alternative<DecodeError>(decode(0xFF, static_cast<Byte>(b1))));
}

TEST_CASE("decode is total and canonical over all windows") {
    std::size_t valid = 0;
    for (unsigned b0 = 0; b0 < 256; ++b0) {
        for (unsigned b1 = 0; b1 < 256; ++b1) {
            auto r = decode(static_cast<Byte>(b0), static_cast<Byte>(b1));
            if (auto* ins = std::get_if<Instruction>(&r)) {
                ++valid;
                auto bytes = encode(*ins);
                REQUIRE(bytes[0] == b0);
                REQUIRE(bytes[1] == b1);
            }
        }
    }
    CHECK(valid > 0);
}

TEST_CASE("jmp through a register round-trips through the assembler") {
    auto img = assemble("jmp r2\n");
    REQUIRE(img.bytes.size() == 2);
    auto r = decode(img.bytes[0], img.bytes[1]);
    REQUIRE(std::holds_alternative<Instruction>(r));
    CHECK(std::get<Instruction>(r) == Instruction{.op = Opcode::JmpInd, .rd = Reg::R2});
}

TEST_CASE("division by zero faults") {
    auto s = with_program({{.op = Opcode::LoadImm, .rd = Reg::R0, .operand = 7},
                           {.op = Opcode::Div, .rd = Reg::R0, .rs = Reg::R1}},
                          kPrivileged);
    s = step(s, {});
    s = step(s, {});
    REQUIRE(s.fault);
    CHECK(*s.fault == FaultKind::DivByZero);
}

TEST_CASE("privileged instructions fault in user mode") {
    for (Opcode op : {Opcode::WrMpu1, Opcode::WrMpu2, Opcode::WrUFlags, Opcode::Iret}) {
        auto s = with_program({{.op = op}}, 0);
        s.mem[0xF0] = 0x00;
        s.mem[0xF1] = 0x0F; // segment [00..0f], so the fetch itself is allowed
        s.reg(Reg::MPU1) = 0xF0;
        s = step(s, {});
        REQUIRE(s.fault);
        CHECK(*s.fault == FaultKind::PrivilegeFault);
    }
}

TEST_CASE("iret enters the banked user context") {
    auto s = with_program({{.op = Opcode::LoadImm, .rd = Reg::R0, .operand = 0x41},
                           {.op = Opcode::WrUFlags, .rd = Reg::R0},
                           {.op = Opcode::Iret}},
                          kPrivileged);
    s.reg(Reg::UPC) = 0xC8;
    s.reg(Reg::USP) = 0xD5;
    for (int i = 0; i < 3; ++i) s = step(s, {});
    REQUIRE_FALSE(s.fault);
    CHECK(s.reg(Reg::PC) == 0xC8);
    CHECK(s.reg(Reg::SP) == 0xD5);
    CHECK(s.reg(Reg::FLAGS) == 0x41);
    CHECK_FALSE(s.privileged());
}

TEST_CASE("user stores are checked against the mpu segments") {
    auto s = example_system();
    s.reg(Reg::MPU1) = 0xAE;
    s.reg(Reg::MPU2) = 0xB0;
    CHECK(mpu_allows(s, 0xC0, true));
    CHECK(mpu_allows(s, 0xCF, true));
    CHECK_FALSE(mpu_allows(s, 0xD0, true));
    CHECK(mpu_allows(s, 0xEF, true));
    CHECK_FALSE(mpu_allows(s, 0xA0, false));
    s.mem[0xB1] = 0x8F;
    CHECK(mpu_allows(s, 0xE0, false));
    CHECK_FALSE(mpu_allows(s, 0xE0, true));
}

TEST_CASE("load_images reproduces the example memory dump") {
    auto s = example_system();
    CHECK(s.mem[0xA0] == 0xA7);
    CHECK(s.mem[0xA1] == 0xA8);
    CHECK(s.mem[0xAC] == 0xA2);
    CHECK(s.mem[0xAD] == 0x02);
    const std::array<Byte, 16> dump{0xAE, 0xC8, 0xD5, 0x01, 0xA7, 0xAE, 0xC8, 0xD8,
                                    0x01, 0xA2, 0xA2, 0x02, 0xC0, 0x0F, 0xE0, 0x0F};
    for (std::size_t i = 0; i < dump.size(); ++i) CHECK(s.mem[0xA2 + i] == dump[i]);
    CHECK(s.privileged());
    CHECK(s.reg(Reg::PC) == example_entries().reset);
}

TEST_CASE("load_images with an empty user image") {
    auto kernel = assemble_file(U8K_CORPUS_DIR "/kernel_fig1.s");
    MachineImage user;
    auto s = load_images(kernel, user);
    for (std::size_t a = kernel.end(); a < kMemorySize; ++a) CHECK(s.mem[a] == 0);
}

TEST_CASE("overlapping images are rejected") {
    auto kernel = assemble_file(U8K_CORPUS_DIR "/kernel_fig1.s");
    MachineImage user{.origin = 0x10, .bytes = {1, 2, 3}};
    CHECK_THROWS_AS(load_images(kernel, user), OverlapError);
}

TEST_CASE("image text format round-trips bit-exactly") {
    auto img = assemble_file(U8K_CORPUS_DIR "/kernel_fig1.s");
    auto text = write_image(img);
    CHECK(text.starts_with("u8k-image v1\n"));
    CHECK(read_image(text) == img);
    CHECK(write_image(read_image(text)) == text);
    CHECK_THROWS_AS(read_image("u8k-image v2\n"), ImageError);
}

TEST_CASE("oracle: reset alone reaches the first kernel exit") {
    auto trace = run_oracle(example_system(), example_entries(), {{EventKind::Reset}}, 10000);
    const auto& last = trace.states.back();
    CHECK_FALSE(last.fault);
    CHECK_FALSE(last.privileged());
    CHECK(last.reg(Reg::MPU1) == 0xAE);
    CHECK(last.reg(Reg::MPU2) == 0xB0);
    CHECK(last.reg(Reg::PC) == 0xC8);
}

TEST_CASE("oracle: empty schedule") {
    auto trace = run_oracle(example_system(), example_entries(), {}, 10000);
    CHECK(trace.states.size() == 1);
}

TEST_CASE("oracle: timers alternate cur between the two threads") {
    auto trace = run_oracle(example_system(), example_entries(),
                            {{EventKind::Reset}, {EventKind::Timer, 3}, {EventKind::Timer, 3}}, 10000);
    std::vector<Byte> at_exit;
    for (std::size_t i = 1; i < trace.states.size(); ++i) {
        if (trace.states[i - 1].privileged() && !trace.states[i].privileged()) at_exit.push_back(trace.states[i].mem[0xA0]);
    }
    // The user task itself issues a syscall, so count only the pattern.
    REQUIRE(at_exit.size() >= 3);
    for (std::size_t i = 0; i < at_exit.size(); ++i) CHECK(at_exit[i] == (i % 2 == 0 ? 0xA2 : 0xA7));
}

TEST_CASE("oracle: random schedules on the example never fault") {
    std::mt19937 rng(7);
    for (int run = 0; run < 200; ++run) {
        std::vector<Event> schedule{{EventKind::Reset}};
        const int n = std::uniform_int_distribution<int>(0, 49)(rng);
        for (int i = 0; i < n; ++i) {
            schedule.push_back({std::uniform_int_distribution<int>(0, 1)(rng) ? EventKind::Timer : EventKind::Syscall,
                                static_cast<std::uint16_t>(std::uniform_int_distribution<int>(0, 6)(rng))});
        }
        const UserModel model{run % 2 ? UserModel::Kind::Adversary : UserModel::Kind::Execute,
                              static_cast<std::uint64_t>(run)};
        auto trace = run_oracle(example_system(), example_entries(), schedule, 100000, model);
        for (const auto& s : trace.states) REQUIRE_FALSE(s.fault);
    }
}

TEST_CASE("user steps never raise privilege except by entering the kernel") {
    auto entries = example_entries();
    std::mt19937 rng(11);
    for (int i = 0; i < 20000; ++i) {
        ConcreteState s;
        for (auto& b : s.mem) b = static_cast<Byte>(rng());
        for (auto& r : s.regs) r = static_cast<Byte>(rng());
        s.reg(Reg::FLAGS) &= static_cast<Byte>(~kPrivileged);
        auto n = step(s, entries);
        if (n.privileged()) {
            CHECK(n.reg(Reg::PC) == entries.syscall);
        }
        if (n.fault && *n.fault == FaultKind::MpuViolation) CHECK_FALSE(s.privileged());
    }
}
