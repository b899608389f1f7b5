// Copyright (c) u8k-verifier contributors.
// SPDX-License-Identifier: MIT

#include <catch_amalgamated.hpp>

#include "value_gen.hpp"

using namespace u8k;
using u8k::testing::random_abs;

namespace {

constexpr std::array kAluOps{Opcode::Add, Opcode::Sub, Opcode::And, Opcode::Or, Opcode::Xor,
                             Opcode::Shl, Opcode::Shr, Opcode::Div, Opcode::Cmp};

} // namespace

TEST_CASE("join of two constants keeps both values") {
    auto j = BitvecAbs::constant(0xA2).join(BitvecAbs::constant(0xA7));
    CHECK(j.has_vset());
    CHECK(j.gamma() == BitvecAbs::from_values({0xA2, 0xA7}).gamma());
    CHECK(j.count() == 2);
}

TEST_CASE("bottom is neutral for join") {
    std::mt19937_64 rng(1);
    for (int i = 0; i < 200; ++i) {
        auto x = random_abs(rng);
        CHECK(x.join(BitvecAbs::bottom()) == x);
        CHECK(BitvecAbs::bottom().join(x) == x);
    }
}

TEST_CASE("join of even intervals keeps the congruence") {
    auto a = BitvecAbs::product(0, 10, -128, 127, 2, 0);
    auto b = BitvecAbs::product(20, 30, -128, 127, 2, 0);
    auto j = a.join(b);
    CHECK(j.umin() == 0);
    CHECK(j.umax() == 30);
    CHECK(j.modulus() == 2);
    CHECK(j.residue() == 0);
    const auto g = j.gamma();
    for (unsigned v = 0; v < 256; ++v) CHECK(g[v] == (v <= 30 && v % 2 == 0));
}

TEST_CASE("widening jumps to the next threshold") {
    auto w = BitvecAbs::urange(0, 4).widen(BitvecAbs::urange(0, 5));
    CHECK(w == BitvecAbs::urange(0, 127));
    std::mt19937_64 rng(2);
    for (int i = 0; i < 200; ++i) {
        auto x = random_abs(rng);
        CHECK(x.widen(x) == x);
    }
    CHECK(BitvecAbs::bottom().widen(BitvecAbs::constant(3)) == BitvecAbs::constant(3));
}

TEST_CASE("widening chains stabilize within twelve steps") {
    std::mt19937_64 rng(3);
    for (int run = 0; run < 500; ++run) {
        auto x = random_abs(rng, 8);
        int strict = 0;
        for (int i = 0; i < 100; ++i) {
            auto next = x.join(random_abs(rng, 8));
            auto w = x.widen(next);
            REQUIRE(next.leq(w));
            REQUIRE(x.leq(w));
            if (!(w == x)) ++strict;
            x = w;
        }
        CHECK(strict <= 12);
    }
}

TEST_CASE("and with 0x7f bounds the result") {
    auto r = transfer_alu(Opcode::And, BitvecAbs::top(), BitvecAbs::constant(0x7F));
    CHECK(r.value == BitvecAbs::urange(0, 127));
    CHECK(r.value.bits_clear(kPrivileged));
}

TEST_CASE("addition wraps around") {
    CHECK(transfer_alu(Opcode::Add, BitvecAbs::constant(0xFF), BitvecAbs::constant(1)).value == BitvecAbs::constant(0));
}

TEST_CASE("division by a range containing zero is flagged") {
    auto r = transfer_alu(Opcode::Div, BitvecAbs::top(), BitvecAbs::urange(0, 3));
    CHECK(r.maybe_div_zero);
    CHECK_FALSE(transfer_alu(Opcode::Div, BitvecAbs::top(), BitvecAbs::urange(1, 3)).maybe_div_zero);
}

TEST_CASE("transfer functions contain every concrete result") {
    std::mt19937_64 rng(4);
    std::size_t cases = 0;
    for (int i = 0; i < 2000; ++i) {
        auto a = random_abs(rng, 32);
        auto b = random_abs(rng, 32);
        if (i % 3 == 0) a = random_abs(rng);
        if (i % 5 == 0) b = random_abs(rng);
        const auto ga = a.gamma();
        const auto gb = b.gamma();
        for (Opcode op : kAluOps) {
            ++cases;
            const auto r = transfer_alu(op, a, b);
            bool saw_zero = false;
            for (unsigned x = 0; x < 256; ++x) {
                if (!ga[x]) continue;
                for (unsigned y = 0; y < 256; ++y) {
                    if (!gb[y]) continue;
                    if (op == Opcode::Cmp) {
                        REQUIRE(r.value.contains(concrete_cmp_flags(static_cast<Byte>(x), static_cast<Byte>(y))));
                    } else if (op == Opcode::Div && y == 0) {
                        saw_zero = true;
                    } else {
                        REQUIRE(r.value.contains(concrete_alu(op, static_cast<Byte>(x), static_cast<Byte>(y))));
                    }
                }
            }
            REQUIRE(r.maybe_div_zero == saw_zero);
        }
    }
    CHECK(cases >= 10000);
}

TEST_CASE("lattice laws on random samples") {
    std::mt19937_64 rng(5);
    for (int i = 0; i < 2000; ++i) {
        auto a = random_abs(rng);
        auto b = random_abs(rng);
        auto c = random_abs(rng);
        CHECK(a.join(b).gamma() == b.join(a).gamma());
        CHECK(a.join(a) == a);
        CHECK(a.leq(a.join(b)));
        CHECK(b.leq(a.join(b)));
        if (a.leq(b)) CHECK(a.join(c).leq(b.join(c)));
        auto m = a.meet(b);
        CHECK(m.leq(a));
        CHECK(m.leq(b));
        CHECK((a.gamma() & b.gamma() & ~m.gamma()).none());
    }
}

TEST_CASE("reduction preserves the concretization") {
    std::mt19937_64 rng(6);
    for (int i = 0; i < 2000; ++i) {
        const unsigned ulo = rng() % 256;
        const unsigned uhi = ulo + rng() % (256 - ulo);
        const int s1 = static_cast<int>(rng() % 256) - 128;
        const int s2 = static_cast<int>(rng() % 256) - 128;
        const unsigned m = 1 + rng() % 40;
        const unsigned r = rng() % m;
        auto x = BitvecAbs::product(static_cast<Byte>(ulo), static_cast<Byte>(uhi),
                                    static_cast<std::int8_t>(std::min(s1, s2)), static_cast<std::int8_t>(std::max(s1, s2)),
                                    static_cast<std::uint16_t>(m), static_cast<Byte>(r));
        ValueSet expect;
        for (unsigned v = ulo; v <= uhi; ++v) {
            const int sv = static_cast<std::int8_t>(v);
            if (sv >= std::min(s1, s2) && sv <= std::max(s1, s2) && v % m == r) expect.set(v);
        }
        if (expect.none()) {
            CHECK(x.is_bottom());
        } else {
            CHECK(x.gamma() == expect);
        }
    }
}

TEST_CASE("value sets collapse beyond the cap") {
    ValueSet s;
    for (unsigned v = 0; v < 17; ++v) s.set(v * 3);
    auto x = BitvecAbs::from_set(s);
    CHECK_FALSE(x.has_vset());
    CHECK(x.modulus() == 3);
    value_options().vset_k = 32;
    CHECK(BitvecAbs::from_set(s).has_vset());
    value_options().vset_k = 16;
}

TEST_CASE("branch refinement is sound") {
    std::mt19937_64 rng(7);
    for (int i = 0; i < 3000; ++i) {
        auto a = random_abs(rng, 40);
        auto b = random_abs(rng, 40);
        const auto ga = a.gamma();
        const auto gb = b.gamma();
        for (Opcode j : {Opcode::Jeq, Opcode::Jne, Opcode::Jlt, Opcode::Jge}) {
            for (bool taken : {true, false}) {
                auto r = refine_compare(j, taken, a, b);
                for (unsigned x = 0; x < 256; ++x) {
                    if (!ga[x]) continue;
                    for (unsigned y = 0; y < 256; ++y) {
                        if (!gb[y]) continue;
                        const Byte f = concrete_cmp_flags(static_cast<Byte>(x), static_cast<Byte>(y));
                        bool t = false;
                        if (j == Opcode::Jeq) t = f & kFlagZero;
                        if (j == Opcode::Jne) t = !(f & kFlagZero);
                        if (j == Opcode::Jlt) t = f & kFlagCarry;
                        if (j == Opcode::Jge) t = !(f & kFlagCarry);
                        if (t != taken) continue;
                        REQUIRE(r.lhs.contains(static_cast<Byte>(x)));
                        REQUIRE(r.rhs.contains(static_cast<Byte>(y)));
                    }
                }
            }
        }
    }
}
