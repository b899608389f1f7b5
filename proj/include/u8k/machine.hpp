// Copyright (c) u8k-verifier contributors.
// SPDX-License-Identifier: MIT
#pragma once

// The u8k toy machine: an 8-bit ISA with a fixed 2-byte encoding, a
// 256-byte address space, banked user registers and a two-segment MPU.

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace u8k {

using Address = std::uint8_t;
using Byte = std::uint8_t;

constexpr std::size_t kMemorySize = 256;
constexpr Byte kPrivileged = 0x80;  // FLAGS / UFLAGS bit 7
constexpr Byte kFlagZero = 0x01;    // set by CMP when lhs == rhs
constexpr Byte kFlagCarry = 0x02;   // set by CMP when lhs < rhs (unsigned)

// Segment descriptor byte 1: low nibble is the last offset (length - 1),
// bit 7 write-protects the segment.
constexpr Byte kSegmentReadOnly = 0x80;
constexpr Byte kSegmentSizeMask = 0x0F;

enum class Reg : std::uint8_t { R0, R1, R2, R3, SP, PC, FLAGS, UPC, USP, UFLAGS, MPU1, MPU2 };
constexpr std::size_t kRegisterCount = 12;
inline constexpr std::array kAllRegisters{Reg::R0,  Reg::R1,  Reg::R2,     Reg::R3,   Reg::SP,   Reg::PC,
                                   Reg::FLAGS, Reg::UPC, Reg::USP, Reg::UFLAGS, Reg::MPU1, Reg::MPU2};

constexpr std::size_t index(Reg r) { return static_cast<std::size_t>(r); }
std::string_view reg_name(Reg r);
std::optional<Reg> reg_from_name(std::string_view name);

// Registers addressable from the 3-bit register field of an instruction.
constexpr std::uint8_t kGeneralRegisterCount = 5; // R0..R3, SP

// Opcode numbers occupy bits 7..3 of the first instruction byte.
enum class Opcode : std::uint8_t {
    Halt = 0,
    LoadImm,
    LoadDir,
    LoadInd,
    StoreDir,
    StoreInd,
    Mov,
    Add,
    Sub,
    And,
    Or,
    Xor,
    Shl,
    Shr,
    Div,
    Cmp,
    JmpAbs,
    JmpInd,
    Jeq,
    Jne,
    Jlt,
    Jge,
    Call,
    Ret,
    Iret,
    Syscall,
    WrMpu1,
    WrMpu2,
    WrUFlags,
    RdUReg,
    WrUReg,
    // 31 is unassigned
};
constexpr std::uint8_t kOpcodeCount = 31;

std::string_view mnemonic(Opcode op);
bool is_privileged(Opcode op);
bool is_alu(Opcode op); // ADD..CMP, the register-register arithmetic group
bool is_conditional_jump(Opcode op);

// Banked user register selector for RDUREG/WRUREG.
enum class UserReg : std::uint8_t { Pc = 0, Sp = 1, Flags = 2 };
Reg banked(UserReg u);

struct Instruction {
    Opcode op{Opcode::Halt};
    Reg rd{Reg::R0};   // register field of byte 0 (destination, source or jump register)
    Reg rs{Reg::R0};   // register operand carried in byte 1
    Byte operand{0};   // immediate, address or user-register selector

    bool operator==(const Instruction&) const = default;
};

struct DecodeError {
    Byte opcode_byte;
    Byte operand_byte;
    std::string reason;
};

using DecodeResult = std::variant<Instruction, DecodeError>;

// Total over all 65536 byte pairs; only canonical encodings decode.
DecodeResult decode(Byte b0, Byte b1);
std::array<Byte, 2> encode(const Instruction& ins);
std::string to_string(const Instruction& ins);

// ---------------------------------------------------------------------------
// Images

struct MachineImage {
    Address origin{0};
    std::vector<Byte> bytes;
    std::optional<Address> entry_reset;
    std::optional<Address> entry_syscall;
    std::optional<Address> entry_timer;
    std::map<std::string, Address> symbols;

    [[nodiscard]] std::size_t end() const { return origin + bytes.size(); }
    [[nodiscard]] bool contains(std::size_t addr) const { return addr >= origin && addr < end(); }
    [[nodiscard]] std::optional<Address> symbol(const std::string& name) const;

    // Kernel code occupies [origin, code_end); code_end is the `code_end`
    // symbol when present, otherwise the whole image.
    [[nodiscard]] std::size_t code_end() const;

    bool operator==(const MachineImage&) const = default;
};

class ImageError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

class OverlapError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

void validate(const MachineImage& img); // throws ImageError
std::string write_image(const MachineImage& img);
MachineImage read_image(std::string_view text); // throws ImageError
MachineImage load_image_file(const std::string& path);
void save_image_file(const MachineImage& img, const std::string& path);

// ---------------------------------------------------------------------------
// Concrete semantics

enum class FaultKind : std::uint8_t { IllegalOpcode, DivByZero, PrivilegeFault, MpuViolation, JumpToUndecodable };
std::string_view fault_name(FaultKind f);

struct ConcreteState {
    std::array<Byte, kMemorySize> mem{};
    std::array<Byte, kRegisterCount> regs{};
    bool halted{false};
    std::optional<FaultKind> fault;

    [[nodiscard]] Byte reg(Reg r) const { return regs[index(r)]; }
    Byte& reg(Reg r) { return regs[index(r)]; }
    [[nodiscard]] bool privileged() const { return (reg(Reg::FLAGS) & kPrivileged) != 0; }
    [[nodiscard]] bool running() const { return !halted && !fault; }

    bool operator==(const ConcreteState&) const = default;
};

struct KernelEntries {
    Address reset;
    Address syscall;
    Address timer;
};

// Builds s0: both images overlaid on zeroed memory, PC at the kernel reset
// entry, privileged. Throws OverlapError / ImageError.
ConcreteState load_images(const MachineImage& kernel, const MachineImage& user);

// One instruction. Faults are recorded in the returned state; SYSCALL traps
// to entries.syscall.
ConcreteState step(const ConcreteState& s, const KernelEntries& entries);

// ADD..SHR and DIV on one operand pair (DIV by zero yields 0; `step` faults first).
Byte concrete_alu(Opcode op, Byte a, Byte b);

// Hardware interrupt/trap entry: banks PC/SP/FLAGS, enters the kernel.
ConcreteState trap(const ConcreteState& s, Address entry, Address resume_pc);

// Whether user mode may access `addr` through MPU1/MPU2.
bool mpu_allows(const ConcreteState& s, Address addr, bool write);

// ---------------------------------------------------------------------------
// Oracle

enum class EventKind : std::uint8_t { Reset, Timer, Syscall };

struct Event {
    EventKind kind{EventKind::Timer};
    // User instructions executed before the event is delivered.
    std::uint16_t user_steps{0};
};

// How user mode is emulated between interrupts: by executing the user image,
// or by an adversary that rewrites registers and MPU-writable memory at will.
struct UserModel {
    enum class Kind : std::uint8_t { Execute, Adversary } kind{Kind::Execute};
    std::uint64_t seed{0};
};

struct Trace {
    std::vector<ConcreteState> states;
    // Shadow call stack (call-site addresses) for each state.
    std::vector<std::vector<Address>> call_sites;
};

Trace run_oracle(const ConcreteState& s0, const KernelEntries& entries, const std::vector<Event>& schedule,
                 std::size_t max_steps, UserModel user = {});

KernelEntries entries_of(const MachineImage& kernel);

} // namespace u8k
