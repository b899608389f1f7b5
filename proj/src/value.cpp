// Copyright (c) u8k-verifier contributors.
// SPDX-License-Identifier: MIT

#include "u8k/value.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

namespace u8k {

ValueOptions& value_options() {
    thread_local ValueOptions opts;
    return opts;
}

namespace {

std::int8_t as_signed(unsigned v) { return static_cast<std::int8_t>(static_cast<Byte>(v)); }

unsigned first_set(const ValueSet& g) {
    for (unsigned v = 0; v < kMemorySize; ++v) {
        if (g[v]) return v;
    }
    return kMemorySize;
}

unsigned last_set(const ValueSet& g) {
    for (unsigned v = kMemorySize; v-- > 0;) {
        if (g[v]) return v;
    }
    return kMemorySize;
}

std::string hex2(unsigned v) {
    static const char* digits = "0123456789abcdef";
    return std::string("0x") + digits[(v >> 4) & 0xF] + digits[v & 0xF];
}

// Smallest threshold >= v.
unsigned ceil_threshold(unsigned v) {
    for (Byte t : kWidenThresholds) {
        if (t >= v) return t;
    }
    return 255;
}

// Largest threshold <= v.
unsigned floor_threshold(unsigned v) {
    unsigned best = 0;
    for (Byte t : kWidenThresholds) {
        if (t <= v) best = t;
    }
    return best;
}

} // namespace

BitvecAbs BitvecAbs::bottom() {
    BitvecAbs b;
    b.bottom_ = true;
    return b;
}

BitvecAbs BitvecAbs::constant(Byte v) {
    BitvecAbs b;
    b.ulo_ = b.uhi_ = v;
    b.slo_ = b.shi_ = as_signed(v);
    b.mod_ = 256;
    b.res_ = v;
    return b;
}

BitvecAbs BitvecAbs::urange(Byte lo, Byte hi) {
    if (lo > hi) return bottom();
    return product(lo, hi, -128, 127, 1, 0);
}

BitvecAbs BitvecAbs::srange(std::int8_t lo, std::int8_t hi) {
    if (lo > hi) return bottom();
    return product(0, 255, lo, hi, 1, 0);
}

BitvecAbs BitvecAbs::congruent(std::uint16_t modulus, Byte residue) {
    return product(0, 255, -128, 127, modulus, static_cast<Byte>(residue % modulus));
}

BitvecAbs BitvecAbs::from_set(const ValueSet& s) { return from_gamma(s, true); }

BitvecAbs BitvecAbs::from_values(std::initializer_list<Byte> vs) {
    ValueSet s;
    for (Byte v : vs) s.set(v);
    return from_set(s);
}

BitvecAbs BitvecAbs::from_gamma(const ValueSet& s, bool keep_vset) {
    BitvecAbs b;
    b.set_from_gamma(s, keep_vset);
    return b;
}

BitvecAbs BitvecAbs::product(Byte ulo, Byte uhi, std::int8_t slo, std::int8_t shi, std::uint16_t modulus,
                             Byte residue) {
    BitvecAbs b;
    b.ulo_ = ulo;
    b.uhi_ = uhi;
    b.slo_ = slo;
    b.shi_ = shi;
    b.mod_ = std::clamp<std::uint16_t>(modulus, 1, 256);
    b.res_ = static_cast<Byte>(residue % b.mod_);
    b.reduce();
    return b;
}

bool BitvecAbs::is_top() const {
    return !bottom_ && !has_vset_ && ulo_ == 0 && uhi_ == 255 && slo_ == -128 && shi_ == 127 && mod_ == 1;
}

bool BitvecAbs::contains(Byte v) const {
    if (bottom_) return false;
    if (has_vset_) return vset_[v];
    return v >= ulo_ && v <= uhi_ && as_signed(v) >= slo_ && as_signed(v) <= shi_ && v % mod_ == res_;
}

ValueSet BitvecAbs::gamma() const {
    if (bottom_) return {};
    if (has_vset_) return vset_;
    ValueSet g;
    for (unsigned v = ulo_; v <= uhi_; ++v) {
        if (contains(static_cast<Byte>(v))) g.set(v);
    }
    return g;
}

std::optional<Byte> BitvecAbs::singleton() const {
    if (bottom_ || ulo_ != uhi_) return std::nullopt;
    return ulo_;
}

bool BitvecAbs::bits_clear(Byte mask) const {
    if (bottom_) return true;
    if (mask == kPrivileged && !has_vset_) return uhi_ < kPrivileged;
    const auto g = gamma();
    for (unsigned v = 0; v < kMemorySize; ++v) {
        if (g[v] && (v & mask) != 0) return false;
    }
    return true;
}

void BitvecAbs::set_from_gamma(const ValueSet& g, bool keep_vset) {
    *this = BitvecAbs{};
    if (g.none()) {
        bottom_ = true;
        return;
    }
    ulo_ = static_cast<Byte>(first_set(g));
    uhi_ = static_cast<Byte>(last_set(g));
    int smin = 127;
    int smax = -128;
    unsigned step = 0;
    for (unsigned v = ulo_; v <= uhi_; ++v) {
        if (!g[v]) continue;
        smin = std::min<int>(smin, as_signed(v));
        smax = std::max<int>(smax, as_signed(v));
        step = std::gcd(step, v - ulo_);
    }
    slo_ = static_cast<std::int8_t>(smin);
    shi_ = static_cast<std::int8_t>(smax);
    mod_ = step == 0 ? 256 : static_cast<std::uint16_t>(step);
    res_ = static_cast<Byte>(ulo_ % mod_);
    const auto n = g.count();
    if (keep_vset && n > 1 && n <= value_options().vset_k) {
        has_vset_ = true;
        vset_ = g;
    }
}

void BitvecAbs::reduce() {
    if (bottom_) {
        *this = bottom();
        return;
    }
    const bool keep = has_vset_;
    ValueSet g;
    for (unsigned v = ulo_; v <= uhi_; ++v) {
        const auto b = static_cast<Byte>(v);
        if (as_signed(b) >= slo_ && as_signed(b) <= shi_ && b % mod_ == res_ && (!keep || vset_[b])) g.set(v);
    }
    set_from_gamma(g, keep);
}

bool BitvecAbs::leq(const BitvecAbs& o) const {
    if (bottom_) return true;
    if (o.bottom_) return false;
    if (o.is_top()) return true;
    return (gamma() & ~o.gamma()).none();
}

BitvecAbs BitvecAbs::join(const BitvecAbs& o) const {
    if (bottom_) return o;
    if (o.bottom_) return *this;
    const bool set_like = (has_vset_ || singleton()) && (o.has_vset_ || o.singleton());
    if (set_like) {
        const auto u = gamma() | o.gamma();
        if (u.count() <= value_options().vset_k) return from_gamma(u, true);
    }
    // Congruence join: gcd of both moduli and the residue distance.
    const unsigned dist = res_ > o.res_ ? res_ - o.res_ : o.res_ - res_;
    unsigned m = std::gcd(std::gcd(unsigned{mod_}, unsigned{o.mod_}), dist);
    if (m == 0) m = 256;
    return product(std::min(ulo_, o.ulo_), std::max(uhi_, o.uhi_), std::min(slo_, o.slo_), std::max(shi_, o.shi_),
                   static_cast<std::uint16_t>(m), static_cast<Byte>(res_ % m));
}

BitvecAbs BitvecAbs::meet(const BitvecAbs& o) const {
    if (bottom_ || o.bottom_) return bottom();
    if (o.is_top()) return *this;
    if (is_top()) return o;
    return from_gamma(gamma() & o.gamma(), has_vset_ || o.has_vset_);
}

BitvecAbs BitvecAbs::widen(const BitvecAbs& next) const {
    if (bottom_) return next;
    if (next.leq(*this)) return *this;
    const BitvecAbs j = join(next);

    unsigned hi = uhi_;
    if (j.uhi_ > uhi_) {
        const unsigned above = ceil_threshold(uhi_);
        hi = 255;
        for (Byte t : kWidenThresholds) {
            if (t >= j.uhi_ && t > above) {
                hi = t;
                break;
            }
        }
    }
    unsigned lo = ulo_;
    if (j.ulo_ < ulo_) {
        const unsigned below = floor_threshold(ulo_);
        lo = 0;
        for (Byte t : kWidenThresholds) {
            if (t <= j.ulo_ && t < below) lo = t;
        }
    }
    const std::int8_t slo = j.slo_ < slo_ ? std::int8_t{-128} : slo_;
    const std::int8_t shi = j.shi_ > shi_ ? std::int8_t{127} : shi_;
    const bool same_cong = j.mod_ == mod_ && j.res_ == res_;
    return product(static_cast<Byte>(lo), static_cast<Byte>(hi), slo, shi, same_cong ? mod_ : 1,
                   same_cong ? res_ : 0);
}

std::string BitvecAbs::str() const {
    if (bottom_) return "bot";
    if (is_top()) return "top";
    std::ostringstream os;
    if (has_vset_ || singleton()) {
        os << '{';
        bool first = true;
        const auto g = gamma();
        for (unsigned v = 0; v < kMemorySize; ++v) {
            if (!g[v]) continue;
            os << (first ? "" : ",") << hex2(v);
            first = false;
        }
        os << '}';
        return os.str();
    }
    std::string sep;
    if (ulo_ != 0 || uhi_ != 255) {
        os << "u[" << hex2(ulo_) << ',' << hex2(uhi_) << ']';
        sep = " ";
    }
    if (slo_ != -128 || shi_ != 127) {
        os << sep << "s[" << int{slo_} << ',' << int{shi_} << ']';
        sep = " ";
    }
    if (mod_ > 1) os << sep << "=" << int{res_} << " mod " << mod_;
    return os.str();
}

// ---------------------------------------------------------------------------
// Transfer functions

Byte concrete_cmp_flags(Byte a, Byte b) {
    Byte f = 0;
    if (a == b) f |= kFlagZero;
    if (a < b) f |= kFlagCarry;
    return f;
}

namespace {

unsigned mask_above(unsigned v) {
    unsigned m = 0;
    while (m < v) m = (m << 1) | 1u;
    return m;
}

unsigned trailing_zeros(unsigned v) {
    if (v == 0) return 8;
    unsigned n = 0;
    while ((v & 1u) == 0) {
        v >>= 1;
        ++n;
    }
    return n;
}

BitvecAbs signed_hull(int lo, int hi) {
    if (lo >= -128 && hi <= 127) return BitvecAbs::srange(static_cast<std::int8_t>(lo), static_cast<std::int8_t>(hi));
    if (lo > 127) return BitvecAbs::srange(static_cast<std::int8_t>(lo - 256), static_cast<std::int8_t>(hi - 256));
    if (hi < -128) return BitvecAbs::srange(static_cast<std::int8_t>(lo + 256), static_cast<std::int8_t>(hi + 256));
    return BitvecAbs::top();
}

BitvecAbs unsigned_hull(int lo, int hi) {
    if (lo >= 0 && hi <= 255) return BitvecAbs::urange(static_cast<Byte>(lo), static_cast<Byte>(hi));
    if (lo > 255) return BitvecAbs::urange(static_cast<Byte>(lo - 256), static_cast<Byte>(hi - 256));
    if (hi < 0) return BitvecAbs::urange(static_cast<Byte>(lo + 256), static_cast<Byte>(hi + 256));
    return BitvecAbs::top();
}

BitvecAbs additive(Opcode op, const BitvecAbs& a, const BitvecAbs& b) {
    const bool add = op == Opcode::Add;
    const int ulo = add ? a.umin() + b.umin() : a.umin() - b.umax();
    const int uhi = add ? a.umax() + b.umax() : a.umax() - b.umin();
    const int slo = add ? a.smin() + b.smin() : a.smin() - b.smax();
    const int shi = add ? a.smax() + b.smax() : a.smax() - b.smin();
    const bool wraps = ulo < 0 || uhi > 255;
    unsigned m = std::gcd(unsigned{a.modulus()}, unsigned{b.modulus()});
    if (wraps) m = std::gcd(m, 256u);
    const int r = add ? a.residue() + b.residue() : a.residue() - b.residue();
    const auto cong = BitvecAbs::congruent(static_cast<std::uint16_t>(m), static_cast<Byte>(((r % int(m)) + int(m)) % int(m)));
    return unsigned_hull(ulo, uhi).meet(signed_hull(slo, shi)).meet(cong);
}

BitvecAbs shift_by(Opcode op, const BitvecAbs& a, unsigned k) {
    if (k >= 8) return BitvecAbs::constant(0);
    if (op == Opcode::Shr) return BitvecAbs::urange(static_cast<Byte>(a.umin() >> k), static_cast<Byte>(a.umax() >> k));
    const unsigned hi = unsigned{a.umax()} << k;
    const unsigned m = unsigned{a.modulus()} << k;
    const unsigned r = unsigned{a.residue()} << k;
    if (hi <= 255) {
        const unsigned mm = std::min(m, 256u);
        return BitvecAbs::urange(static_cast<Byte>(a.umin() << k), static_cast<Byte>(hi))
            .meet(BitvecAbs::congruent(static_cast<std::uint16_t>(mm), static_cast<Byte>(r % mm)));
    }
    const unsigned mm = std::gcd(m, 256u);
    return BitvecAbs::congruent(static_cast<std::uint16_t>(mm), static_cast<Byte>(r % mm));
}

} // namespace

AluResult transfer_alu(Opcode op, const BitvecAbs& a, const BitvecAbs& b) {
    if (a.is_bottom() || b.is_bottom()) return {BitvecAbs::bottom(), false};
    const ValueSet ga = a.gamma();
    const ValueSet gb = b.gamma();

    if (op == Opcode::Cmp) {
        ValueSet flags;
        if ((ga & gb).any()) flags.set(kFlagZero);
        if (first_set(ga) < last_set(gb)) flags.set(kFlagCarry);
        if (last_set(ga) > first_set(gb)) flags.set(0);
        return {BitvecAbs::from_set(flags), false};
    }

    const bool div = op == Opcode::Div;
    const bool maybe_zero = div && gb[0];
    if (ga.count() * gb.count() <= kMemorySize) {
        ValueSet out;
        for (unsigned x = 0; x < kMemorySize; ++x) {
            if (!ga[x]) continue;
            for (unsigned y = 0; y < kMemorySize; ++y) {
                if (!gb[y] || (div && y == 0)) continue;
                out.set(concrete_alu(op, static_cast<Byte>(x), static_cast<Byte>(y)));
            }
        }
        return {BitvecAbs::from_set(out), maybe_zero};
    }

    switch (op) {
    case Opcode::Add:
    case Opcode::Sub: return {additive(op, a, b), false};
    case Opcode::And: {
        auto r = BitvecAbs::urange(0, std::min(a.umax(), b.umax()));
        for (const auto* c : {&a, &b}) {
            if (auto v = c->singleton()) {
                const unsigned tz = trailing_zeros(*v);
                if (tz > 0) r = r.meet(BitvecAbs::congruent(static_cast<std::uint16_t>(1u << tz), 0));
            }
        }
        return {r, false};
    }
    case Opcode::Or:
        return {BitvecAbs::urange(std::max(a.umin(), b.umin()),
                                  static_cast<Byte>(mask_above(std::max(a.umax(), b.umax())))),
                false};
    case Opcode::Xor:
        return {BitvecAbs::urange(0, static_cast<Byte>(mask_above(std::max(a.umax(), b.umax())))), false};
    case Opcode::Shl:
    case Opcode::Shr: {
        if (gb.count() > 16) {
            return {op == Opcode::Shr ? BitvecAbs::urange(0, a.umax()) : BitvecAbs::top(), false};
        }
        auto r = BitvecAbs::bottom();
        for (unsigned k = 0; k < kMemorySize; ++k) {
            if (gb[k]) r = r.join(shift_by(op, a, k));
        }
        return {r, false};
    }
    case Opcode::Div: {
        ValueSet nz = gb;
        nz.reset(0);
        if (nz.none()) return {BitvecAbs::bottom(), true};
        const unsigned lo = first_set(nz);
        const unsigned hi = last_set(nz);
        return {BitvecAbs::urange(static_cast<Byte>(a.umin() / hi), static_cast<Byte>(a.umax() / lo)), maybe_zero};
    }
    default: return {BitvecAbs::top(), false};
    }
}

CmpRefinement refine_compare(Opcode jcc, bool taken, const BitvecAbs& lhs, const BitvecAbs& rhs) {
    enum class Cond { Eq, Ne, Lt, Ge } cond{};
    switch (jcc) {
    case Opcode::Jeq: cond = taken ? Cond::Eq : Cond::Ne; break;
    case Opcode::Jne: cond = taken ? Cond::Ne : Cond::Eq; break;
    case Opcode::Jlt: cond = taken ? Cond::Lt : Cond::Ge; break;
    case Opcode::Jge: cond = taken ? Cond::Ge : Cond::Lt; break;
    default: return {lhs, rhs};
    }
    if (lhs.is_bottom() || rhs.is_bottom()) return {BitvecAbs::bottom(), BitvecAbs::bottom()};
    switch (cond) {
    case Cond::Eq: {
        auto m = lhs.meet(rhs);
        return {m, m};
    }
    case Cond::Ne: {
        CmpRefinement r{lhs, rhs};
        if (auto c = rhs.singleton()) {
            auto g = lhs.gamma();
            g.reset(*c);
            r.lhs = BitvecAbs::from_gamma(g, lhs.has_vset());
        }
        if (auto c = lhs.singleton()) {
            auto g = rhs.gamma();
            g.reset(*c);
            r.rhs = BitvecAbs::from_gamma(g, rhs.has_vset());
        }
        return r;
    }
    case Cond::Lt: {
        auto l = rhs.umax() == 0 ? BitvecAbs::bottom() : lhs.meet(BitvecAbs::urange(0, rhs.umax() - 1));
        auto r = lhs.umin() == 255 ? BitvecAbs::bottom() : rhs.meet(BitvecAbs::urange(lhs.umin() + 1, 255));
        return {l, r};
    }
    case Cond::Ge:
        return {lhs.meet(BitvecAbs::urange(rhs.umin(), 255)), rhs.meet(BitvecAbs::urange(0, lhs.umax()))};
    }
    return {lhs, rhs};
}

} // namespace u8k
