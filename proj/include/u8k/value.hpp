// Copyright (c) u8k-verifier contributors.
// SPDX-License-Identifier: MIT
#pragma once

// Numeric abstraction of 8-bit values: reduced product of an unsigned
// interval, a signed interval, a congruence and an optional small value set.

#include <bitset>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "u8k/machine.hpp"

namespace u8k {

using ValueSet = std::bitset<kMemorySize>;

struct ValueOptions {
    unsigned vset_k = 16;         // value-set cap
    unsigned weak_update_cap = 16; // candidate cells before a store degrades to range havoc
};

// Per-thread analysis knobs, set by the driver for the duration of a run.
ValueOptions& value_options();

class BitvecAbs {
  public:
    BitvecAbs() = default; // top

    static BitvecAbs top() { return {}; }
    static BitvecAbs bottom();
    static BitvecAbs constant(Byte v);
    static BitvecAbs urange(Byte lo, Byte hi);
    static BitvecAbs srange(std::int8_t lo, std::int8_t hi);
    static BitvecAbs congruent(std::uint16_t modulus, Byte residue);
    // Value set when |s| <= K, otherwise the tightest interval/congruence hull.
    static BitvecAbs from_set(const ValueSet& s);
    static BitvecAbs from_values(std::initializer_list<Byte> vs);
    // Tightest product containing `s`; keeps a value set only if asked and |s| <= K.
    static BitvecAbs from_gamma(const ValueSet& s, bool keep_vset);
    // Reduced product of the given components (no value set).
    static BitvecAbs product(Byte ulo, Byte uhi, std::int8_t slo, std::int8_t shi, std::uint16_t modulus,
                             Byte residue);

    [[nodiscard]] bool is_bottom() const { return bottom_; }
    [[nodiscard]] bool is_top() const;
    [[nodiscard]] bool has_vset() const { return has_vset_; }
    [[nodiscard]] ValueSet gamma() const;
    [[nodiscard]] std::size_t count() const { return gamma().count(); }
    [[nodiscard]] bool contains(Byte v) const;
    [[nodiscard]] std::optional<Byte> singleton() const;
    [[nodiscard]] Byte umin() const { return ulo_; }
    [[nodiscard]] Byte umax() const { return uhi_; }
    [[nodiscard]] std::int8_t smin() const { return slo_; }
    [[nodiscard]] std::int8_t smax() const { return shi_; }
    [[nodiscard]] std::uint16_t modulus() const { return mod_; }
    [[nodiscard]] Byte residue() const { return res_; }
    // Every value in γ has `mask` bits clear.
    [[nodiscard]] bool bits_clear(Byte mask) const;

    [[nodiscard]] bool leq(const BitvecAbs& o) const;
    [[nodiscard]] BitvecAbs join(const BitvecAbs& o) const;
    [[nodiscard]] BitvecAbs meet(const BitvecAbs& o) const;
    // Widening with thresholds; *this is the previous iterate.
    [[nodiscard]] BitvecAbs widen(const BitvecAbs& next) const;

    bool operator==(const BitvecAbs&) const = default;
    [[nodiscard]] std::string str() const;

  private:
    void reduce();
    void set_from_gamma(const ValueSet& g, bool keep_vset);

    bool bottom_{false};
    Byte ulo_{0}, uhi_{255};
    std::int8_t slo_{-128}, shi_{127};
    std::uint16_t mod_{1};
    Byte res_{0};
    bool has_vset_{false};
    ValueSet vset_{};
};

// Unsigned widening thresholds.
inline constexpr std::array<Byte, 5> kWidenThresholds{0, 1, 7, 127, 255};

struct AluResult {
    BitvecAbs value;
    bool maybe_div_zero{false};
};

// ADD..DIV with 8-bit wraparound; CMP yields the set of possible {Z, C} flag
// bit combinations (values in 0..3) instead of a data value.
AluResult transfer_alu(Opcode op, const BitvecAbs& a, const BitvecAbs& b);

// Z/C bits that CMP sets for one operand pair.
Byte concrete_cmp_flags(Byte a, Byte b);

// Branch refinement of the two CMP operands under a taken/not-taken condition.
struct CmpRefinement {
    BitvecAbs lhs, rhs;
};
CmpRefinement refine_compare(Opcode jcc, bool taken, const BitvecAbs& lhs, const BitvecAbs& rhs);

} // namespace u8k
