// Copyright (c) u8k-verifier contributors.
// SPDX-License-Identifier: MIT
#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "u8k/machine.hpp"

namespace u8k {

/*
 * Two-pass assembler for u8k source text.
 *
 *   ; comment
 *   .org 0xA0              set location (the first .org fixes the origin)
 *   .entry reset, label    also syscall / timer
 *   .equ NAME, 0xAC        named constant
 *   label: .byte 1, label+2
 *   ldi r0, 0x12   ld r0, [cur]   ld r0, [r1]   st [cur], r0   st [r1], r0
 *   mov|add|sub|and|or|xor|shl|shr|div|cmp rd, rs
 *   jmp target | jmp r2   jeq|jne|jlt|jge target   call target
 *   ret  iret  syscall  halt
 *   wrmpu1|wrmpu2|wruflags rs   rdureg rd, upc|usp|uflags   wrureg upc|usp, rs
 *
 * Every label becomes an image symbol.
 */
class AsmError : public std::runtime_error {
  public:
    enum class Kind { Syntax, UnknownMnemonic, DuplicateLabel, UnresolvedLabel, RangeError };

    AsmError(Kind kind, int line, const std::string& msg)
        : std::runtime_error("line " + std::to_string(line) + ": " + msg), kind_(kind), line_(line) {}

    [[nodiscard]] Kind kind() const { return kind_; }
    [[nodiscard]] int line() const { return line_; }

  private:
    Kind kind_;
    int line_;
};

// Image plus the address of every emitted instruction (data bytes excluded).
struct Assembly {
    MachineImage image;
    std::vector<Address> instructions;
};

Assembly assemble_listing(std::string_view source);
MachineImage assemble(std::string_view source);
MachineImage assemble_file(const std::string& path);

} // namespace u8k
