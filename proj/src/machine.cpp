// Copyright (c) u8k-verifier contributors.
// SPDX-License-Identifier: MIT

#include "u8k/machine.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace u8k {

namespace {

constexpr std::array<std::string_view, kRegisterCount> kRegNames{"r0",  "r1",  "r2",     "r3",   "sp",   "pc",
                                                                 "flags", "upc", "usp", "uflags", "mpu1", "mpu2"};

constexpr std::array<std::string_view, kOpcodeCount> kMnemonics{
    "halt", "ldi", "ld",  "ld",  "st",  "st",   "mov",     "add",    "sub",    "and",    "or",
    "xor",  "shl", "shr", "div", "cmp", "jmp",  "jmp",     "jeq",    "jne",    "jlt",    "jge",
    "call", "ret", "iret", "syscall", "wrmpu1", "wrmpu2", "wruflags", "rdureg", "wrureg"};

enum class Shape : std::uint8_t {
    NoOperands,    // reg field 0, byte1 0
    Address,       // reg field 0, byte1 any
    RegImm,        // reg field, byte1 any
    RegReg,        // reg field, byte1 = register
    RegOnly,       // reg field, byte1 0
    RegUserSel,    // reg field, byte1 = user register selector
};

Shape shape_of(Opcode op) {
    switch (op) {
    case Opcode::Halt:
    case Opcode::Ret:
    case Opcode::Iret:
    case Opcode::Syscall: return Shape::NoOperands;
    case Opcode::JmpAbs:
    case Opcode::Jeq:
    case Opcode::Jne:
    case Opcode::Jlt:
    case Opcode::Jge:
    case Opcode::Call: return Shape::Address;
    case Opcode::LoadImm:
    case Opcode::LoadDir:
    case Opcode::StoreDir: return Shape::RegImm;
    case Opcode::JmpInd:
    case Opcode::WrMpu1:
    case Opcode::WrMpu2:
    case Opcode::WrUFlags: return Shape::RegOnly;
    case Opcode::RdUReg:
    case Opcode::WrUReg: return Shape::RegUserSel;
    default: return Shape::RegReg;
    }
}

std::string hex(unsigned v) {
    std::ostringstream os;
    os << "0x" << std::hex;
    if (v < 16) os << '0';
    os << v;
    return os.str();
}

} // namespace

std::string_view reg_name(Reg r) { return kRegNames[index(r)]; }

std::optional<Reg> reg_from_name(std::string_view name) {
    for (std::size_t i = 0; i < kRegNames.size(); ++i) {
        if (kRegNames[i] == name) return static_cast<Reg>(i);
    }
    return std::nullopt;
}

std::string_view mnemonic(Opcode op) { return kMnemonics[static_cast<std::size_t>(op)]; }

bool is_privileged(Opcode op) {
    return op == Opcode::WrMpu1 || op == Opcode::WrMpu2 || op == Opcode::WrUFlags || op == Opcode::Iret;
}

bool is_alu(Opcode op) { return op >= Opcode::Add && op <= Opcode::Cmp; }

bool is_conditional_jump(Opcode op) { return op >= Opcode::Jeq && op <= Opcode::Jge; }

Reg banked(UserReg u) {
    switch (u) {
    case UserReg::Pc: return Reg::UPC;
    case UserReg::Sp: return Reg::USP;
    case UserReg::Flags: return Reg::UFLAGS;
    }
    return Reg::UPC;
}

DecodeResult decode(Byte b0, Byte b1) {
    const auto opnum = static_cast<std::uint8_t>(b0 >> 3);
    const auto regnum = static_cast<std::uint8_t>(b0 & 0x07);
    if (opnum >= kOpcodeCount) return DecodeError{b0, b1, "unassigned opcode"};
    const auto op = static_cast<Opcode>(opnum);
    Instruction ins{.op = op};
    const Shape shape = shape_of(op);
    if (shape == Shape::NoOperands || shape == Shape::Address) {
        if (regnum != 0) return DecodeError{b0, b1, "register field must be zero"};
    } else {
        if (regnum >= kGeneralRegisterCount) return DecodeError{b0, b1, "invalid register"};
        ins.rd = static_cast<Reg>(regnum);
    }
    switch (shape) {
    case Shape::NoOperands:
    case Shape::RegOnly:
        if (b1 != 0) return DecodeError{b0, b1, "operand byte must be zero"};
        break;
    case Shape::Address:
    case Shape::RegImm: ins.operand = b1; break;
    case Shape::RegReg:
        if (b1 >= kGeneralRegisterCount) return DecodeError{b0, b1, "invalid source register"};
        ins.rs = static_cast<Reg>(b1);
        break;
    case Shape::RegUserSel: {
        const Byte limit = op == Opcode::RdUReg ? 3 : 2; // UFLAGS is written by WRUFLAGS only
        if (b1 >= limit) return DecodeError{b0, b1, "invalid user register selector"};
        ins.operand = b1;
        break;
    }
    }
    return ins;
}

std::array<Byte, 2> encode(const Instruction& ins) {
    const Shape shape = shape_of(ins.op);
    Byte b0 = static_cast<Byte>(static_cast<unsigned>(ins.op) << 3);
    if (shape != Shape::NoOperands && shape != Shape::Address) b0 |= static_cast<Byte>(index(ins.rd));
    Byte b1 = 0;
    switch (shape) {
    case Shape::Address:
    case Shape::RegImm:
    case Shape::RegUserSel: b1 = ins.operand; break;
    case Shape::RegReg: b1 = static_cast<Byte>(index(ins.rs)); break;
    default: break;
    }
    return {b0, b1};
}

std::string to_string(const Instruction& ins) {
    static constexpr std::array<std::string_view, 3> kUser{"upc", "usp", "uflags"};
    std::ostringstream os;
    os << mnemonic(ins.op);
    const auto rd = reg_name(ins.rd);
    const auto rs = reg_name(ins.rs);
    switch (ins.op) {
    case Opcode::LoadImm: os << ' ' << rd << ", " << hex(ins.operand); break;
    case Opcode::LoadDir: os << ' ' << rd << ", [" << hex(ins.operand) << ']'; break;
    case Opcode::LoadInd: os << ' ' << rd << ", [" << rs << ']'; break;
    case Opcode::StoreDir: os << " [" << hex(ins.operand) << "], " << rd; break;
    case Opcode::StoreInd: os << " [" << rs << "], " << rd; break;
    case Opcode::RdUReg: os << ' ' << rd << ", " << kUser[ins.operand]; break;
    case Opcode::WrUReg: os << ' ' << kUser[ins.operand] << ", " << rd; break;
    default:
        switch (shape_of(ins.op)) {
        case Shape::Address: os << ' ' << hex(ins.operand); break;
        case Shape::RegReg: os << ' ' << rd << ", " << rs; break;
        case Shape::RegOnly: os << ' ' << rd; break;
        default: break;
        }
    }
    return os.str();
}

// ---------------------------------------------------------------------------
// Images

std::optional<Address> MachineImage::symbol(const std::string& name) const {
    if (auto it = symbols.find(name); it != symbols.end()) return it->second;
    return std::nullopt;
}

std::size_t MachineImage::code_end() const {
    if (auto s = symbol("code_end")) return *s;
    return end();
}

void validate(const MachineImage& img) {
    if (img.end() > kMemorySize) throw ImageError("image extends past the end of the address space");
    for (const auto& e : {img.entry_reset, img.entry_syscall, img.entry_timer}) {
        if (e && !img.contains(*e)) throw ImageError("entry point " + hex(*e) + " lies outside the image");
    }
}

std::string write_image(const MachineImage& img) {
    std::ostringstream os;
    os << "u8k-image v1\n";
    os << "origin=" << hex(img.origin) << '\n';
    if (img.entry_reset) os << "entry.reset=" << hex(*img.entry_reset) << '\n';
    if (img.entry_syscall) os << "entry.syscall=" << hex(*img.entry_syscall) << '\n';
    if (img.entry_timer) os << "entry.timer=" << hex(*img.entry_timer) << '\n';
    for (const auto& [name, addr] : img.symbols) os << "sym " << name << '=' << hex(addr) << '\n';
    for (std::size_t i = 0; i < img.bytes.size(); i += 16) {
        for (std::size_t j = i; j < std::min(img.bytes.size(), i + 16); ++j) {
            if (j != i) os << ' ';
            constexpr char digits[] = "0123456789abcdef";
            os << digits[img.bytes[j] >> 4] << digits[img.bytes[j] & 0xF];
        }
        os << '\n';
    }
    return os.str();
}

namespace {

Address parse_hex_byte(std::string_view s, int line) {
    if (s.size() < 3 || s.size() > 4 || s[0] != '0' || (s[1] != 'x' && s[1] != 'X'))
        throw ImageError("line " + std::to_string(line) + ": expected 0xNN, got '" + std::string(s) + "'");
    unsigned v = 0;
    for (char c : s.substr(2)) {
        v <<= 4;
        if (c >= '0' && c <= '9') v |= static_cast<unsigned>(c - '0');
        else if (c >= 'a' && c <= 'f') v |= static_cast<unsigned>(c - 'a' + 10);
        else if (c >= 'A' && c <= 'F') v |= static_cast<unsigned>(c - 'A' + 10);
        else throw ImageError("line " + std::to_string(line) + ": bad hex digit");
    }
    return static_cast<Address>(v);
}

} // namespace

MachineImage read_image(std::string_view text) {
    MachineImage img;
    std::istringstream is{std::string(text)};
    std::string line;
    int lineno = 0;
    bool header = false;
    bool origin = false;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        if (!header) {
            if (line != "u8k-image v1") throw ImageError("missing 'u8k-image v1' header");
            header = true;
            continue;
        }
        auto value_after = [&](std::string_view prefix) {
            return parse_hex_byte(std::string_view(line).substr(prefix.size()), lineno);
        };
        if (line.starts_with("origin=")) {
            img.origin = value_after("origin=");
            origin = true;
        } else if (line.starts_with("entry.reset=")) {
            img.entry_reset = value_after("entry.reset=");
        } else if (line.starts_with("entry.syscall=")) {
            img.entry_syscall = value_after("entry.syscall=");
        } else if (line.starts_with("entry.timer=")) {
            img.entry_timer = value_after("entry.timer=");
        } else if (line.starts_with("sym ")) {
            const auto eq = line.find('=');
            if (eq == std::string::npos) throw ImageError("line " + std::to_string(lineno) + ": malformed symbol");
            img.symbols[line.substr(4, eq - 4)] = parse_hex_byte(std::string_view(line).substr(eq + 1), lineno);
        } else {
            std::istringstream row(line);
            std::string tok;
            while (row >> tok) {
                if (tok.size() != 2) throw ImageError("line " + std::to_string(lineno) + ": bad byte '" + tok + "'");
                img.bytes.push_back(parse_hex_byte("0x" + tok, lineno));
            }
        }
    }
    if (!header) throw ImageError("empty image");
    if (!origin) throw ImageError("missing origin");
    validate(img);
    return img;
}

MachineImage load_image_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ImageError("cannot open " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return read_image(buf.str());
}

void save_image_file(const MachineImage& img, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ImageError("cannot write " + path);
    out << write_image(img);
}

// ---------------------------------------------------------------------------
// Concrete semantics

std::string_view fault_name(FaultKind f) {
    switch (f) {
    case FaultKind::IllegalOpcode: return "IllegalOpcode";
    case FaultKind::DivByZero: return "DivByZero";
    case FaultKind::PrivilegeFault: return "PrivilegeFault";
    case FaultKind::MpuViolation: return "MpuViolation";
    case FaultKind::JumpToUndecodable: return "JumpToUndecodable";
    }
    return "?";
}

ConcreteState load_images(const MachineImage& kernel, const MachineImage& user) {
    validate(kernel);
    validate(user);
    if (!kernel.entry_reset) throw ImageError("kernel image has no reset entry");
    if (!kernel.bytes.empty() && !user.bytes.empty() && kernel.origin < user.end() && user.origin < kernel.end())
        throw OverlapError("kernel and user images overlap");
    ConcreteState s;
    std::copy(kernel.bytes.begin(), kernel.bytes.end(), s.mem.begin() + kernel.origin);
    std::copy(user.bytes.begin(), user.bytes.end(), s.mem.begin() + user.origin);
    s.reg(Reg::PC) = *kernel.entry_reset;
    s.reg(Reg::FLAGS) = kPrivileged;
    return s;
}

bool mpu_allows(const ConcreteState& s, Address addr, bool write) {
    for (Reg mpu : {Reg::MPU1, Reg::MPU2}) {
        const Address desc = s.reg(mpu);
        const unsigned base = s.mem[desc];
        const Byte rights = s.mem[static_cast<Address>(desc + 1)];
        const unsigned length = (rights & kSegmentSizeMask) + 1u;
        if (addr >= base && addr < base + length && (!write || (rights & kSegmentReadOnly) == 0)) return true;
    }
    return false;
}

ConcreteState trap(const ConcreteState& s, Address entry, Address resume_pc) {
    ConcreteState n = s;
    n.reg(Reg::UPC) = resume_pc;
    n.reg(Reg::USP) = s.reg(Reg::SP);
    n.reg(Reg::UFLAGS) = s.reg(Reg::FLAGS);
    n.reg(Reg::FLAGS) = kPrivileged;
    n.reg(Reg::PC) = entry;
    return n;
}

Byte concrete_alu(Opcode op, Byte a, Byte b) {
    switch (op) {
    case Opcode::Add: return static_cast<Byte>(a + b);
    case Opcode::Sub: return static_cast<Byte>(a - b);
    case Opcode::And: return a & b;
    case Opcode::Or: return a | b;
    case Opcode::Xor: return a ^ b;
    case Opcode::Shl: return b >= 8 ? 0 : static_cast<Byte>(a << b);
    case Opcode::Shr: return b >= 8 ? 0 : static_cast<Byte>(a >> b);
    case Opcode::Div: return b == 0 ? 0 : static_cast<Byte>(a / b);
    default: return 0;
    }
}

ConcreteState step(const ConcreteState& s, const KernelEntries& entries) {
    ConcreteState n = s;
    if (!s.running()) return n;
    const bool user = !s.privileged();
    const Address pc = s.reg(Reg::PC);
    auto fault = [&](FaultKind f) {
        n.fault = f;
        return n;
    };
    if (pc == 0xFF) return fault(FaultKind::JumpToUndecodable);
    if (user && (!mpu_allows(s, pc, false) || !mpu_allows(s, static_cast<Address>(pc + 1), false)))
        return fault(FaultKind::MpuViolation);
    const auto decoded = decode(s.mem[pc], s.mem[pc + 1]);
    if (std::holds_alternative<DecodeError>(decoded)) return fault(FaultKind::IllegalOpcode);
    const auto ins = std::get<Instruction>(decoded);
    if (user && is_privileged(ins.op)) return fault(FaultKind::PrivilegeFault);

    const auto next = static_cast<Address>(pc + 2);
    n.reg(Reg::PC) = next;
    auto load = [&](Address a) -> std::optional<Byte> {
        if (user && !mpu_allows(s, a, false)) return std::nullopt;
        return s.mem[a];
    };
    auto store = [&](Address a, Byte v) {
        if (user && !mpu_allows(s, a, true)) return false;
        n.mem[a] = v;
        return true;
    };

    switch (ins.op) {
    case Opcode::Halt: n.halted = true; break;
    case Opcode::LoadImm: n.reg(ins.rd) = ins.operand; break;
    case Opcode::LoadDir:
    case Opcode::LoadInd: {
        const Address a = ins.op == Opcode::LoadDir ? ins.operand : s.reg(ins.rs);
        const auto v = load(a);
        if (!v) return fault(FaultKind::MpuViolation);
        n.reg(ins.rd) = *v;
        break;
    }
    case Opcode::StoreDir:
    case Opcode::StoreInd: {
        const Address a = ins.op == Opcode::StoreDir ? ins.operand : s.reg(ins.rs);
        if (!store(a, s.reg(ins.rd))) return fault(FaultKind::MpuViolation);
        break;
    }
    case Opcode::Mov: n.reg(ins.rd) = s.reg(ins.rs); break;
    case Opcode::Cmp: {
        const Byte a = s.reg(ins.rd);
        const Byte b = s.reg(ins.rs);
        Byte f = s.reg(Reg::FLAGS) & static_cast<Byte>(~(kFlagZero | kFlagCarry));
        if (a == b) f |= kFlagZero;
        if (a < b) f |= kFlagCarry;
        n.reg(Reg::FLAGS) = f;
        break;
    }
    case Opcode::Div:
        if (s.reg(ins.rs) == 0) return fault(FaultKind::DivByZero);
        n.reg(ins.rd) = concrete_alu(ins.op, s.reg(ins.rd), s.reg(ins.rs));
        break;
    case Opcode::Add:
    case Opcode::Sub:
    case Opcode::And:
    case Opcode::Or:
    case Opcode::Xor:
    case Opcode::Shl:
    case Opcode::Shr: n.reg(ins.rd) = concrete_alu(ins.op, s.reg(ins.rd), s.reg(ins.rs)); break;
    case Opcode::JmpAbs: n.reg(Reg::PC) = ins.operand; break;
    case Opcode::JmpInd: n.reg(Reg::PC) = s.reg(ins.rd); break;
    case Opcode::Jeq:
    case Opcode::Jne:
    case Opcode::Jlt:
    case Opcode::Jge: {
        const Byte f = s.reg(Reg::FLAGS);
        bool taken = false;
        if (ins.op == Opcode::Jeq) taken = (f & kFlagZero) != 0;
        if (ins.op == Opcode::Jne) taken = (f & kFlagZero) == 0;
        if (ins.op == Opcode::Jlt) taken = (f & kFlagCarry) != 0;
        if (ins.op == Opcode::Jge) taken = (f & kFlagCarry) == 0;
        if (taken) n.reg(Reg::PC) = ins.operand;
        break;
    }
    case Opcode::Call: {
        const auto sp = static_cast<Address>(s.reg(Reg::SP) - 1);
        if (!store(sp, next)) return fault(FaultKind::MpuViolation);
        n.reg(Reg::SP) = sp;
        n.reg(Reg::PC) = ins.operand;
        break;
    }
    case Opcode::Ret: {
        const auto v = load(s.reg(Reg::SP));
        if (!v) return fault(FaultKind::MpuViolation);
        n.reg(Reg::PC) = *v;
        n.reg(Reg::SP) = static_cast<Address>(s.reg(Reg::SP) + 1);
        break;
    }
    case Opcode::Iret:
        n.reg(Reg::PC) = s.reg(Reg::UPC);
        n.reg(Reg::SP) = s.reg(Reg::USP);
        n.reg(Reg::FLAGS) = s.reg(Reg::UFLAGS);
        break;
    case Opcode::Syscall: return trap(s, entries.syscall, next);
    case Opcode::WrMpu1: n.reg(Reg::MPU1) = s.reg(ins.rd); break;
    case Opcode::WrMpu2: n.reg(Reg::MPU2) = s.reg(ins.rd); break;
    case Opcode::WrUFlags: n.reg(Reg::UFLAGS) = s.reg(ins.rd); break;
    case Opcode::RdUReg: n.reg(ins.rd) = s.reg(banked(static_cast<UserReg>(ins.operand))); break;
    case Opcode::WrUReg: n.reg(banked(static_cast<UserReg>(ins.operand))) = s.reg(ins.rd); break;
    }
    return n;
}

KernelEntries entries_of(const MachineImage& kernel) {
    if (!kernel.entry_reset || !kernel.entry_syscall || !kernel.entry_timer)
        throw ImageError("kernel image must define reset, syscall and timer entries");
    return {*kernel.entry_reset, *kernel.entry_syscall, *kernel.entry_timer};
}

// ---------------------------------------------------------------------------
// Oracle

namespace {

class OracleRun {
  public:
    OracleRun(const ConcreteState& s0, const KernelEntries& entries, std::size_t max_steps, UserModel user)
        : state_(s0), entries_(entries), max_steps_(max_steps), user_(user), rng_(user.seed) {
        record();
    }

    void deliver(const Event& ev) {
        if (!state_.running() || budget_exhausted()) return;
        if (ev.kind == EventKind::Reset) {
            ConcreteState n = state_;
            n.reg(Reg::PC) = entries_.reset;
            n.reg(Reg::FLAGS) = kPrivileged;
            calls_.clear();
            if (n != state_) {
                state_ = n;
                record();
            }
            run_kernel();
            return;
        }
        run_kernel(); // the kernel is not preemptible
        if (!state_.running() || state_.privileged()) return;
        if (user_.kind == UserModel::Kind::Execute) {
            for (unsigned i = 0; i < ev.user_steps && state_.running() && !state_.privileged(); ++i) {
                advance();
                run_kernel();
            }
        } else {
            perturb();
        }
        if (!state_.running() || state_.privileged() || budget_exhausted()) return;
        const Address entry = ev.kind == EventKind::Timer ? entries_.timer : entries_.syscall;
        state_ = trap(state_, entry, state_.reg(Reg::PC));
        calls_.clear();
        record();
        run_kernel();
    }

    Trace take() { return std::move(trace_); }

  private:
    [[nodiscard]] bool budget_exhausted() const { return trace_.states.size() > max_steps_; }

    void record() {
        trace_.states.push_back(state_);
        trace_.call_sites.push_back(calls_);
    }

    void advance() {
        const Address pc = state_.reg(Reg::PC);
        const bool kernel = state_.privileged();
        const auto decoded = decode(state_.mem[pc], state_.mem[static_cast<Address>(pc + 1)]);
        ConcreteState n = step(state_, entries_);
        if (!n.fault && std::holds_alternative<Instruction>(decoded)) {
            const auto ins = std::get<Instruction>(decoded);
            if (ins.op == Opcode::Syscall) {
                calls_.clear();
            } else if (kernel && ins.op == Opcode::Call) {
                calls_.push_back(pc);
            } else if (kernel && ins.op == Opcode::Ret && !calls_.empty()) {
                calls_.pop_back();
            } else if (ins.op == Opcode::Iret) {
                calls_.clear();
            }
        }
        state_ = n;
        record();
    }

    void run_kernel() {
        while (state_.running() && state_.privileged() && !budget_exhausted()) advance();
    }

    void perturb() {
        auto byte = [&] { return static_cast<Byte>(std::uniform_int_distribution<unsigned>(0, 255)(rng_)); };
        for (Reg r : {Reg::R0, Reg::R1, Reg::R2, Reg::R3, Reg::SP, Reg::PC}) state_.reg(r) = byte();
        state_.reg(Reg::FLAGS) = byte() & static_cast<Byte>(~kPrivileged);
        std::vector<Address> writable;
        for (unsigned a = 0; a < kMemorySize; ++a) {
            if (mpu_allows(state_, static_cast<Address>(a), true)) writable.push_back(static_cast<Address>(a));
        }
        const unsigned writes = std::uniform_int_distribution<unsigned>(0, 8)(rng_);
        for (unsigned i = 0; i < writes && !writable.empty(); ++i) {
            const auto pick = std::uniform_int_distribution<std::size_t>(0, writable.size() - 1)(rng_);
            state_.mem[writable[pick]] = byte();
        }
        record();
    }

    ConcreteState state_;
    KernelEntries entries_;
    std::size_t max_steps_;
    UserModel user_;
    std::mt19937_64 rng_;
    std::vector<Address> calls_;
    Trace trace_;
};

} // namespace

Trace run_oracle(const ConcreteState& s0, const KernelEntries& entries, const std::vector<Event>& schedule,
                 std::size_t max_steps, UserModel user) {
    OracleRun run(s0, entries, max_steps, user);
    for (const auto& ev : schedule) run.deliver(ev);
    return run.take();
}

} // namespace u8k
