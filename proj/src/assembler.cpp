// Copyright (c) u8k-verifier contributors.
// SPDX-License-Identifier: MIT

#include "u8k/assembler.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <map>
#include <sstream>
#include <vector>

namespace u8k {

namespace {

using Kind = AsmError::Kind;

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

std::string lower(std::string s) {
    std::ranges::transform(s, s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

std::vector<std::string> split_operands(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    int depth = 0;
    for (char c : s) {
        if (c == '[') ++depth;
        if (c == ']') --depth;
        if (c == ',' && depth == 0) {
            out.push_back(trim(cur));
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    if (!trim(cur).empty() || !out.empty()) out.push_back(trim(cur));
    return out;
}

bool is_identifier(std::string_view s) {
    if (s.empty() || (!std::isalpha(static_cast<unsigned char>(s[0])) && s[0] != '_' && s[0] != '.')) return false;
    return std::ranges::all_of(s, [](unsigned char c) { return std::isalnum(c) || c == '_' || c == '.'; });
}

struct Line {
    int number;
    std::string label;
    std::string op; // lower-cased mnemonic or directive
    std::vector<std::string> operands;
};

class Assembler {
  public:
    Assembly run(std::string_view source) {
        parse(source);
        layout(); // pass 1: addresses of labels
        emit();   // pass 2: bytes
        return {image_, instructions_};
    }

  private:
    void parse(std::string_view source) {
        std::istringstream in{std::string(source)};
        std::string raw;
        int number = 0;
        while (std::getline(in, raw)) {
            ++number;
            if (auto c = raw.find(';'); c != std::string::npos) raw.resize(c);
            std::string text = trim(raw);
            Line line;
            line.number = number;
            if (auto colon = text.find(':'); colon != std::string::npos && text.find('[') > colon) {
                line.label = trim(text.substr(0, colon));
                if (!is_identifier(line.label)) throw AsmError(Kind::Syntax, number, "bad label '" + line.label + "'");
                text = trim(text.substr(colon + 1));
            }
            if (!text.empty()) {
                const auto sp = text.find_first_of(" \t");
                line.op = lower(text.substr(0, sp));
                if (sp != std::string::npos) line.operands = split_operands(trim(text.substr(sp)));
            }
            if (!line.label.empty() || !line.op.empty()) lines_.push_back(std::move(line));
        }
    }

    static std::size_t size_of(const Line& l) {
        if (l.op.empty() || l.op == ".entry" || l.op == ".equ" || l.op == ".org") return 0;
        if (l.op == ".byte") return l.operands.size();
        return 2;
    }

    void layout() {
        std::size_t loc = 0;
        bool have_origin = false;
        for (const auto& l : lines_) {
            if (l.op == ".equ") {
                expect_count(l, 2);
                if (!is_identifier(l.operands[0])) throw AsmError(Kind::Syntax, l.number, "bad .equ name");
                define(l, l.operands[0], literal(l, l.operands[1]), false);
                continue;
            }
            if (l.op == ".org") {
                expect_count(l, 1);
                const auto target = literal(l, l.operands[0]);
                if (!have_origin) {
                    image_.origin = static_cast<Address>(target);
                    have_origin = true;
                } else if (target < loc) {
                    throw AsmError(Kind::RangeError, l.number, ".org moves backwards");
                }
                loc = target;
            }
            if (!l.label.empty()) define(l, l.label, loc, true);
            if (size_of(l) > 0 && !have_origin) {
                have_origin = true; // default origin 0
            }
            loc += size_of(l);
            if (loc > kMemorySize) throw AsmError(Kind::RangeError, l.number, "program exceeds 256 bytes");
        }
    }

    void define(const Line& l, const std::string& name, std::size_t value, bool is_label) {
        if (value > 0xFF && !(is_label && value == kMemorySize))
            throw AsmError(Kind::RangeError, l.number, "value of '" + name + "' exceeds 0xFF");
        if (!symbols_.emplace(name, value).second)
            throw AsmError(Kind::DuplicateLabel, l.number, "duplicate label '" + name + "'");
        if (is_label && value < kMemorySize) image_.symbols[name] = static_cast<Address>(value);
    }

    static void expect_count(const Line& l, std::size_t n) {
        if (l.operands.size() != n)
            throw AsmError(Kind::Syntax, l.number,
                           "'" + l.op + "' expects " + std::to_string(n) + " operand(s)");
    }

    // Numeric literal only (used by .org/.equ, which must not depend on labels).
    static std::size_t literal(const Line& l, const std::string& s) {
        std::size_t v = 0;
        if (!parse_number(s, v)) throw AsmError(Kind::Syntax, l.number, "expected a number, got '" + s + "'");
        return v;
    }

    static bool parse_number(std::string_view s, std::size_t& out) {
        int base = 10;
        if (s.starts_with("0x") || s.starts_with("0X")) {
            base = 16;
            s.remove_prefix(2);
        }
        if (s.empty()) return false;
        auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out, base);
        return ec == std::errc() && p == s.data() + s.size();
    }

    // number | name | name+number
    Byte value(const Line& l, const std::string& expr) const {
        std::size_t v = 0;
        if (parse_number(expr, v)) {
            if (v > 0xFF) throw AsmError(Kind::RangeError, l.number, "value " + expr + " exceeds 0xFF");
            return static_cast<Byte>(v);
        }
        std::string name = expr;
        std::size_t offset = 0;
        if (auto plus = expr.find('+'); plus != std::string::npos) {
            name = trim(expr.substr(0, plus));
            if (!parse_number(trim(expr.substr(plus + 1)), offset))
                throw AsmError(Kind::Syntax, l.number, "bad offset in '" + expr + "'");
        }
        if (!is_identifier(name)) throw AsmError(Kind::Syntax, l.number, "bad operand '" + expr + "'");
        auto it = symbols_.find(name);
        if (it == symbols_.end()) throw AsmError(Kind::UnresolvedLabel, l.number, "unresolved label '" + name + "'");
        if (it->second + offset > 0xFF) throw AsmError(Kind::RangeError, l.number, "'" + expr + "' exceeds 0xFF");
        return static_cast<Byte>(it->second + offset);
    }

    static std::optional<Reg> general_reg(const std::string& s) {
        auto r = reg_from_name(lower(s));
        if (r && index(*r) < kGeneralRegisterCount) return r;
        return std::nullopt;
    }

    static Reg need_reg(const Line& l, const std::string& s) {
        auto r = general_reg(s);
        if (!r) throw AsmError(Kind::Syntax, l.number, "expected register, got '" + s + "'");
        return *r;
    }

    static std::optional<std::string> bracketed(const std::string& s) {
        if (s.size() >= 2 && s.front() == '[' && s.back() == ']') return trim(s.substr(1, s.size() - 2));
        return std::nullopt;
    }

    static Byte user_selector(const Line& l, const std::string& s, bool allow_flags) {
        const auto n = lower(s);
        if (n == "upc") return 0;
        if (n == "usp") return 1;
        if (n == "uflags" && allow_flags) return 2;
        throw AsmError(Kind::Syntax, l.number, "bad user register '" + s + "'");
    }

    Instruction instruction(const Line& l) const {
        static const std::map<std::string, Opcode> kRegReg{
            {"mov", Opcode::Mov}, {"add", Opcode::Add}, {"sub", Opcode::Sub}, {"and", Opcode::And},
            {"or", Opcode::Or},   {"xor", Opcode::Xor}, {"shl", Opcode::Shl}, {"shr", Opcode::Shr},
            {"div", Opcode::Div}, {"cmp", Opcode::Cmp}};
        static const std::map<std::string, Opcode> kNoOps{
            {"halt", Opcode::Halt}, {"ret", Opcode::Ret}, {"iret", Opcode::Iret}, {"syscall", Opcode::Syscall}};
        static const std::map<std::string, Opcode> kBranch{
            {"jeq", Opcode::Jeq}, {"jne", Opcode::Jne}, {"jlt", Opcode::Jlt}, {"jge", Opcode::Jge}, {"call", Opcode::Call}};
        static const std::map<std::string, Opcode> kRegOnly{
            {"wrmpu1", Opcode::WrMpu1}, {"wrmpu2", Opcode::WrMpu2}, {"wruflags", Opcode::WrUFlags}};

        const auto& ops = l.operands;
        if (auto it = kNoOps.find(l.op); it != kNoOps.end()) {
            expect_count(l, 0);
            return {.op = it->second};
        }
        if (auto it = kRegReg.find(l.op); it != kRegReg.end()) {
            expect_count(l, 2);
            return {.op = it->second, .rd = need_reg(l, ops[0]), .rs = need_reg(l, ops[1])};
        }
        if (auto it = kBranch.find(l.op); it != kBranch.end()) {
            expect_count(l, 1);
            return {.op = it->second, .operand = value(l, ops[0])};
        }
        if (auto it = kRegOnly.find(l.op); it != kRegOnly.end()) {
            expect_count(l, 1);
            return {.op = it->second, .rd = need_reg(l, ops[0])};
        }
        if (l.op == "jmp") {
            expect_count(l, 1);
            if (auto r = general_reg(ops[0])) return {.op = Opcode::JmpInd, .rd = *r};
            return {.op = Opcode::JmpAbs, .operand = value(l, ops[0])};
        }
        if (l.op == "ldi") {
            expect_count(l, 2);
            return {.op = Opcode::LoadImm, .rd = need_reg(l, ops[0]), .operand = value(l, ops[1])};
        }
        if (l.op == "ld") {
            expect_count(l, 2);
            auto inner = bracketed(ops[1]);
            if (!inner) throw AsmError(Kind::Syntax, l.number, "ld expects a [memory] operand");
            if (auto r = general_reg(*inner)) return {.op = Opcode::LoadInd, .rd = need_reg(l, ops[0]), .rs = *r};
            return {.op = Opcode::LoadDir, .rd = need_reg(l, ops[0]), .operand = value(l, *inner)};
        }
        if (l.op == "st") {
            expect_count(l, 2);
            auto inner = bracketed(ops[0]);
            if (!inner) throw AsmError(Kind::Syntax, l.number, "st expects a [memory] operand");
            if (auto r = general_reg(*inner)) return {.op = Opcode::StoreInd, .rd = need_reg(l, ops[1]), .rs = *r};
            return {.op = Opcode::StoreDir, .rd = need_reg(l, ops[1]), .operand = value(l, *inner)};
        }
        if (l.op == "rdureg") {
            expect_count(l, 2);
            return {.op = Opcode::RdUReg, .rd = need_reg(l, ops[0]), .operand = user_selector(l, ops[1], true)};
        }
        if (l.op == "wrureg") {
            expect_count(l, 2);
            return {.op = Opcode::WrUReg, .rd = need_reg(l, ops[1]), .operand = user_selector(l, ops[0], false)};
        }
        throw AsmError(Kind::UnknownMnemonic, l.number, "unknown mnemonic '" + l.op + "'");
    }

    void emit() {
        std::size_t loc = image_.origin;
        auto put = [&](Byte b) {
            const auto off = loc - image_.origin;
            if (image_.bytes.size() <= off) image_.bytes.resize(off + 1, 0);
            image_.bytes[off] = b;
            ++loc;
        };
        bool started = false;
        for (const auto& l : lines_) {
            if (l.op.empty() || l.op == ".equ") continue;
            if (l.op == ".org") {
                const auto target = literal(l, l.operands[0]);
                if (started && target > loc) image_.bytes.resize(target - image_.origin, 0);
                loc = target;
                started = true;
                continue;
            }
            started = true;
            if (l.op == ".entry") {
                expect_count(l, 2);
                const auto which = lower(l.operands[0]);
                const Address target = value(l, l.operands[1]);
                if (which == "reset") image_.entry_reset = target;
                else if (which == "syscall") image_.entry_syscall = target;
                else if (which == "timer") image_.entry_timer = target;
                else throw AsmError(Kind::Syntax, l.number, "unknown entry '" + which + "'");
                continue;
            }
            if (l.op == ".byte") {
                for (const auto& op : l.operands) put(value(l, op));
                continue;
            }
            if (l.op.starts_with('.')) throw AsmError(Kind::UnknownMnemonic, l.number, "unknown directive " + l.op);
            instructions_.push_back(static_cast<Address>(loc));
            const auto bytes = encode(instruction(l));
            put(bytes[0]);
            put(bytes[1]);
        }
        try {
            validate(image_);
        } catch (const ImageError& e) {
            throw AsmError(Kind::RangeError, 0, e.what());
        }
    }

    std::vector<Line> lines_;
    std::map<std::string, std::size_t> symbols_;
    MachineImage image_;
    std::vector<Address> instructions_;
};

} // namespace

Assembly assemble_listing(std::string_view source) { return Assembler{}.run(source); }

MachineImage assemble(std::string_view source) { return assemble_listing(source).image; }

MachineImage assemble_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return assemble(buf.str());
}

} // namespace u8k
