// Copyright (c) u8k-verifier contributors.
// SPDX-License-Identifier: MIT

#include "u8k/engine.hpp"

#include <algorithm>
#include <cstdio>
#include <functional>
#include <sstream>

namespace u8k {

std::string_view alarm_name(AlarmKind k) {
    switch (k) {
    case AlarmKind::IllegalOpcodeSite: return "IllegalOpcodeSite";
    case AlarmKind::MaybeDivZero: return "MaybeDivZero";
    case AlarmKind::UnresolvedJump: return "UnresolvedJump";
    case AlarmKind::WildStore: return "WildStore";
    case AlarmKind::SelfModification: return "SelfModification";
    case AlarmKind::TypingViolationStore: return "TypingViolationStore";
    case AlarmKind::MaybeNullDeref: return "MaybeNullDeref";
    case AlarmKind::PrivilegedExitUnproven: return "PrivilegedExitUnproven";
    case AlarmKind::BaseCaseViolation: return "BaseCaseViolation";
    }
    return "?";
}

namespace {

std::string hex(unsigned v) {
    char buf[8];
    std::snprintf(buf, sizeof buf, "0x%02x", v);
    return buf;
}

} // namespace

std::string ProgramPoint::str() const {
    std::string s = hex(addr);
    if (!calls.empty()) {
        s += " [";
        for (std::size_t i = 0; i < calls.size(); ++i) s += (i ? "," : "") + hex(calls[i]);
        s += "]";
    }
    for (const auto& l : loops) s += " {" + hex(l.head) + "#" + (l.iter ? std::to_string(l.iter) : "*") + "}";
    return s;
}

// ---------------------------------------------------------------------------
// AbstractState

void AbstractState::write(Reg r, AbstractValue v) {
    reg(r) = std::move(v);
    if (cmp && (cmp->first == r || cmp->second == r || r == Reg::FLAGS)) cmp.reset();
}

bool AbstractState::leq(const AbstractState& o, const TypeContext* tc) const {
    if (bottom) return true;
    if (o.bottom) return false;
    if (o.cmp && cmp != o.cmp) return false;
    for (std::size_t i = 0; i < kRegisterCount; ++i) {
        if (!regs[i].leq(o.regs[i], tc)) return false;
    }
    return mem.leq(o.mem, tc);
}

AbstractState AbstractState::join(const AbstractState& o, const TypeContext* tc) const {
    if (bottom) return o;
    if (o.bottom) return *this;
    AbstractState r;
    r.bottom = false;
    for (std::size_t i = 0; i < kRegisterCount; ++i) r.regs[i] = regs[i].join(o.regs[i], tc);
    r.mem = mem.join(o.mem, tc);
    if (cmp == o.cmp) r.cmp = cmp;
    return r;
}

AbstractState AbstractState::widen(const AbstractState& next, const TypeContext* tc) const {
    if (bottom) return next;
    if (next.bottom) return *this;
    AbstractState r;
    r.bottom = false;
    for (std::size_t i = 0; i < kRegisterCount; ++i) r.regs[i] = regs[i].widen(next.regs[i], tc);
    r.mem = mem.widen(next.mem, tc);
    if (cmp == next.cmp) r.cmp = cmp;
    return r;
}

AbstractState AbstractState::meet(const AbstractState& o) const {
    if (bottom || o.bottom) return {};
    AbstractState r;
    r.bottom = false;
    for (std::size_t i = 0; i < kRegisterCount; ++i) {
        r.regs[i] = regs[i].meet(o.regs[i]);
        if (r.regs[i].is_bottom()) return {};
    }
    r.mem = mem.meet(o.mem);
    for (const auto& [a, v] : r.mem.cells()) {
        if (v.is_bottom()) return {};
    }
    r.cmp = cmp ? cmp : o.cmp;
    return r;
}

bool AbstractState::operator==(const AbstractState& o) const {
    if (bottom || o.bottom) return bottom == o.bottom;
    return regs == o.regs && mem == o.mem && cmp == o.cmp;
}

bool AbstractState::trivial() const {
    if (bottom) return false;
    for (Reg r : kAllRegisters) {
        if (r == Reg::PC || r == Reg::FLAGS) continue;
        if (!reg(r).is_top()) return false;
    }
    return mem.cells().empty();
}

// ---------------------------------------------------------------------------
// Transfer

UnrollDecision unroll_policy(const BitvecAbs& bound, unsigned cap) {
    if (auto k = bound.singleton(); k && *k <= cap) return {false, *k};
    return {true, 0};
}

namespace {

using AlarmFn = std::function<void(AlarmKind, const std::string&)>;

AbstractValue load_value(const AbstractState& s, const AbstractValue& addr, const TypeContext* tc, const AlarmFn& alarm) {
    if (tc && addr.typed && addr.typed->role == TypedValue::Role::PointerTo) {
        if (addr.typed->nullable && addr.num.contains(0)) alarm(AlarmKind::MaybeNullDeref, "load");
        return tc->typed_load(addr.typed->label);
    }
    return s.mem.load(addr.num, tc);
}

void store_value(AbstractState& s, const AbstractValue& addr, const AbstractValue& v, const TypeContext* tc,
                 const AlarmFn& alarm) {
    if (tc && addr.typed && addr.typed->role == TypedValue::Role::PointerTo) {
        if (addr.typed->nullable && addr.num.contains(0)) alarm(AlarmKind::MaybeNullDeref, "store");
        if (!tc->store_ok(addr.typed->label, v))
            alarm(AlarmKind::TypingViolationStore,
                  v.str(tc) + " into " + tc->env().label_name(addr.typed->label));
        return; // typed memory is not tracked
    }
    if (tc) {
        const auto g = addr.num.gamma();
        const auto& sym = tc->system().symbolic();
        bool untyped_user = false;
        for (unsigned a = 0; a < kMemorySize; ++a) {
            if (!g[a]) continue;
            if (auto l = tc->root_label(static_cast<Address>(a))) {
                if (!tc->store_ok(*l, v))
                    alarm(AlarmKind::TypingViolationStore, v.str(tc) + " into " + tc->env().label_name(*l));
            } else if (a < sym.kernel_begin || a >= sym.kernel_end) {
                untyped_user = true;
            }
        }
        if (untyped_user) alarm(AlarmKind::TypingViolationStore, "untyped store outside the kernel image");
    }
    const auto fx = s.mem.store(addr.num, v, tc);
    if (fx.wild) alarm(AlarmKind::WildStore, "store address " + addr.num.str());
    if (fx.self_modification) alarm(AlarmKind::SelfModification, "store address " + addr.num.str());
}

bool cond_holds(Opcode op, unsigned flags) {
    switch (op) {
    case Opcode::Jeq: return (flags & kFlagZero) != 0;
    case Opcode::Jne: return (flags & kFlagZero) == 0;
    case Opcode::Jlt: return (flags & kFlagCarry) != 0;
    case Opcode::Jge: return (flags & kFlagCarry) == 0;
    default: return false;
    }
}

// Writable byte ranges a segment descriptor may denote.
void segment_range(const AbstractValue& base, const AbstractValue& rights,
                   std::vector<std::pair<unsigned, unsigned>>& out) {
    if (base.is_bottom() || rights.is_bottom()) return;
    const auto g = rights.num.gamma();
    unsigned maxlen = 0;
    for (unsigned r = 0; r < kMemorySize; ++r) {
        if (g[r] && (r & kSegmentReadOnly) == 0) maxlen = std::max(maxlen, (r & kSegmentSizeMask) + 1u);
    }
    if (maxlen == 0) return;
    out.emplace_back(base.num.umin(), std::min<unsigned>(base.num.umax() + maxlen, kMemorySize));
}

// nullopt: the segments cannot be bounded.
std::optional<std::vector<std::pair<unsigned, unsigned>>> mpu_ranges(const AbstractState& s, const TypeContext* tc,
                                                                      std::string& why) {
    std::vector<std::pair<unsigned, unsigned>> ranges;
    std::vector<unsigned> descriptors;
    for (Reg mpu : {Reg::MPU1, Reg::MPU2}) {
        const auto& v = s.reg(mpu);
        if (tc && v.typed && v.typed->role == TypedValue::Role::PointerTo && !v.typed->nullable) {
            // Typed descriptors live in labeled memory; the base case checks
            // that no writable segment covers labeled memory.
            const auto rights = tc->offset(*v.typed, 1);
            if (!rights) {
                why = std::string(reg_name(mpu)) + " descriptor has no typed rights byte";
                return std::nullopt;
            }
            segment_range(tc->typed_load(v.typed->label), tc->typed_load(rights->label), ranges);
            continue;
        }
        const auto g = v.num.gamma();
        if (g.count() > 64) {
            why = std::string(reg_name(mpu)) + " is unbounded";
            return std::nullopt;
        }
        for (unsigned d = 0; d < kMemorySize; ++d) {
            if (!g[d]) continue;
            const auto base = s.mem.load(BitvecAbs::constant(static_cast<Byte>(d)), tc);
            const auto rights = s.mem.load(BitvecAbs::constant(static_cast<Byte>(d + 1)), tc);
            segment_range(base, rights, ranges);
            descriptors.push_back(d);
            descriptors.push_back((d + 1) & 0xFF);
        }
    }
    for (const auto& [b, e] : ranges) {
        for (unsigned d : descriptors) {
            if (d >= b && d < e) {
                why = "segment descriptor at " + hex(d) + " is user-writable";
                return std::nullopt;
            }
        }
    }
    return ranges;
}

} // namespace

EmpoweredResult empowered_step(const AbstractState& s, const TypeContext* tc) {
    EmpoweredResult r;
    r.state = s;
    auto& st = r.state;
    auto total = [&](const std::string& reason, const std::string& detail) {
        AbstractState t;
        t.bottom = false;
        t.mem = s.mem;
        t.mem.havoc_all();
        t.reg(Reg::FLAGS) = AbstractValue::constant(kPrivileged);
        st = t;
        r.report.total_havoc = true;
        r.report.reason = reason + (detail.empty() ? "" : ": " + detail);
        r.report.havocked = {{0, kMemorySize}};
        return r;
    };
    if (s.bottom) return r;
    if (!s.reg(Reg::UFLAGS).num.bits_clear(kPrivileged))
        return total("privileged-exit-unproven", "user flags " + s.reg(Reg::UFLAGS).num.str());
    std::string why;
    auto ranges = mpu_ranges(s, tc, why);
    if (!ranges) return total("trivial-invariant", why);
    if (const auto* fz = s.mem.frozen()) {
        for (const auto& [b, e] : *ranges) {
            if (b < fz->end && fz->begin < e) return total("trivial-invariant", "segment covers kernel code");
        }
    }
    st.mem.havoc_range(*ranges);
    r.report.havocked = *ranges;
    for (Reg reg : {Reg::R0, Reg::R1, Reg::R2, Reg::R3, Reg::SP, Reg::PC, Reg::UPC, Reg::USP})
        st.reg(reg) = AbstractValue::top();
    st.reg(Reg::UFLAGS) = AbstractValue::numeric(BitvecAbs::urange(0, kPrivileged - 1));
    st.reg(Reg::FLAGS) = AbstractValue::constant(kPrivileged);
    st.cmp.reset();
    return r;
}

std::vector<Successor> transfer(const ProgramPoint& p, const AbstractState& s, const AnalysisInput& in,
                                const EngineConfig& cfg, std::vector<Alarm>* alarms, std::vector<ExitReport>* exits) {
    std::vector<Successor> out;
    if (s.bottom) return out;
    const TypeContext* tc = in.types;
    AlarmFn alarm = [&](AlarmKind k, const std::string& d) {
        if (alarms) alarms->push_back({k, p, d});
    };
    const Address pc = p.addr;
    if (pc == 0xFF) {
        alarm(AlarmKind::IllegalOpcodeSite, "instruction straddles the end of memory");
        return out;
    }
    if (const auto* fz = s.mem.frozen(); fz && !(pc >= fz->begin && pc + 2u <= fz->end)) {
        alarm(AlarmKind::IllegalOpcodeSite, "fetch outside kernel code");
        return out;
    }
    const auto b0 = s.mem.get(pc).num.singleton();
    const auto b1 = s.mem.get(static_cast<Address>(pc + 1)).num.singleton();
    if (!b0 || !b1) {
        alarm(AlarmKind::IllegalOpcodeSite, "fetch from non-constant memory");
        return out;
    }
    const auto decoded = decode(*b0, *b1);
    if (const auto* err = std::get_if<DecodeError>(&decoded)) {
        alarm(AlarmKind::IllegalOpcodeSite, err->reason);
        return out;
    }
    const auto ins = std::get<Instruction>(decoded);
    const auto next = static_cast<Address>(pc + 2);
    const auto depth = static_cast<unsigned>(p.calls.size());

    // Successor in the same call context, maintaining the loop stack.
    auto local = [&](Address target, AbstractState st, std::optional<BitvecAbs> bound = std::nullopt) {
        ProgramPoint q{target, p.calls, p.loops};
        while (!q.loops.empty() && q.loops.back().depth == depth &&
               !(target >= q.loops.back().head && target <= q.loops.back().latch))
            q.loops.pop_back();
        if (target <= pc) {
            const auto d = bound ? unroll_policy(*bound, cfg.unroll_cap) : UnrollDecision{};
            if (!q.loops.empty() && q.loops.back().depth == depth && q.loops.back().head == target) {
                auto& f = q.loops.back();
                f.latch = std::max(f.latch, pc);
                if (d.summarize || f.iter == 0 || f.iter + 1 > d.k + 1) {
                    f.iter = 0;
                } else {
                    ++f.iter;
                }
            } else {
                q.loops.push_back({target, pc, d.summarize ? 0u : 1u, depth});
            }
        }
        out.push_back({std::move(q), std::move(st)});
    };
    auto entry_point = [](Address a) { return ProgramPoint{a, {}, {}}; };

    AbstractState st = s;
    switch (ins.op) {
    case Opcode::Halt: break;
    case Opcode::LoadImm:
        st.write(ins.rd, AbstractValue::constant(ins.operand));
        local(next, st);
        break;
    case Opcode::LoadDir:
    case Opcode::LoadInd: {
        const auto addr = ins.op == Opcode::LoadDir ? AbstractValue::constant(ins.operand) : s.reg(ins.rs);
        auto v = load_value(s, addr, tc, alarm);
        if (v.is_bottom()) break;
        st.write(ins.rd, v);
        local(next, st);
        break;
    }
    case Opcode::StoreDir:
    case Opcode::StoreInd: {
        const auto addr = ins.op == Opcode::StoreDir ? AbstractValue::constant(ins.operand) : s.reg(ins.rs);
        if (addr.is_bottom()) break;
        store_value(st, addr, s.reg(ins.rd), tc, alarm);
        local(next, st);
        break;
    }
    case Opcode::Mov:
        st.write(ins.rd, s.reg(ins.rs));
        local(next, st);
        break;
    case Opcode::Cmp: {
        const auto f = transfer_alu(Opcode::Cmp, s.reg(ins.rd).num, s.reg(ins.rs).num).value;
        const auto kept =
            transfer_alu(Opcode::And, s.reg(Reg::FLAGS).num, BitvecAbs::constant(static_cast<Byte>(~(kFlagZero | kFlagCarry))))
                .value;
        st.write(Reg::FLAGS, AbstractValue::numeric(transfer_alu(Opcode::Or, kept, f).value));
        st.cmp = std::pair{ins.rd, ins.rs};
        local(next, st);
        break;
    }
    case Opcode::Add:
    case Opcode::Sub:
    case Opcode::And:
    case Opcode::Or:
    case Opcode::Xor:
    case Opcode::Shl:
    case Opcode::Shr:
    case Opcode::Div: {
        const auto& a = s.reg(ins.rd);
        auto b = s.reg(ins.rs);
        if (ins.op == Opcode::Div && b.num.contains(0)) {
            alarm(AlarmKind::MaybeDivZero, "divisor " + b.num.str());
            auto g = b.num.gamma();
            g.reset(0);
            if (g.none()) break;
            b.num = BitvecAbs::from_gamma(g, b.num.has_vset());
            st.write(ins.rs, b);
        }
        AbstractValue r = AbstractValue::numeric(transfer_alu(ins.op, a.num, b.num).value);
        if (tc && (ins.op == Opcode::Add || ins.op == Opcode::Sub)) {
            auto shifted = [&](const AbstractValue& ptr, const AbstractValue& k, int sign) -> std::optional<TypedValue> {
                if (!ptr.typed || ptr.typed->role != TypedValue::Role::PointerTo) return std::nullopt;
                const auto c = k.num.singleton();
                if (!c) return std::nullopt;
                const int delta = *c < 128 ? *c : static_cast<int>(*c) - 256;
                return tc->offset(*ptr.typed, sign * delta);
            };
            r.typed = shifted(a, b, ins.op == Opcode::Add ? 1 : -1);
            if (!r.typed && ins.op == Opcode::Add) r.typed = shifted(b, a, 1);
        }
        st.write(ins.rd, r);
        local(next, st);
        break;
    }
    case Opcode::JmpAbs: local(ins.operand, st); break;
    case Opcode::JmpInd: {
        const auto g = s.reg(ins.rd).num.gamma();
        if (g.count() > 64 || s.reg(ins.rd).typed) {
            alarm(AlarmKind::UnresolvedJump, "target " + s.reg(ins.rd).str(tc));
            break;
        }
        for (unsigned t = 0; t < kMemorySize; ++t) {
            if (!g[t]) continue;
            AbstractState b = st;
            b.write(ins.rd, AbstractValue::constant(static_cast<Byte>(t)));
            local(static_cast<Address>(t), b);
        }
        break;
    }
    case Opcode::Jeq:
    case Opcode::Jne:
    case Opcode::Jlt:
    case Opcode::Jge: {
        const auto fg = s.reg(Reg::FLAGS).num.gamma();
        std::optional<BitvecAbs> bound;
        if (s.cmp) {
            const auto& rhs = s.reg(s.cmp->second).num;
            const auto& lhs = s.reg(s.cmp->first).num;
            bound = (!rhs.singleton() && lhs.singleton()) ? lhs : rhs;
        }
        for (bool taken : {false, true}) {
            ValueSet keep;
            for (unsigned f = 0; f < kMemorySize; ++f) {
                if (fg[f] && cond_holds(ins.op, f) == taken) keep.set(f);
            }
            if (keep.none()) continue;
            AbstractState b = st;
            b.reg(Reg::FLAGS).num = BitvecAbs::from_gamma(keep, true);
            if (s.cmp) {
                const auto [lr, rr] = *s.cmp;
                const auto ref = refine_compare(ins.op, taken, s.reg(lr).num, s.reg(rr).num);
                if (ref.lhs.is_bottom() || ref.rhs.is_bottom()) continue;
                b.reg(lr).num = lr == rr ? ref.lhs.meet(ref.rhs) : ref.lhs;
                if (lr != rr) b.reg(rr).num = ref.rhs;
                for (Reg r : {lr, rr}) {
                    auto& t = b.reg(r).typed;
                    if (t && t->nullable && !b.reg(r).num.contains(0)) t->nullable = false;
                }
            }
            local(taken ? ins.operand : next, b, bound);
        }
        break;
    }
    case Opcode::Call: {
        if (std::ranges::find(p.calls, pc) != p.calls.end()) {
            alarm(AlarmKind::UnresolvedJump, "recursive call");
            break;
        }
        if (depth >= cfg.max_call_depth) {
            alarm(AlarmKind::UnresolvedJump, "call depth exceeds " + std::to_string(cfg.max_call_depth));
            break;
        }
        const auto sp = transfer_alu(Opcode::Sub, s.reg(Reg::SP).num, BitvecAbs::constant(1)).value;
        store_value(st, AbstractValue::numeric(sp), AbstractValue::constant(next), tc, alarm);
        st.write(Reg::SP, AbstractValue::numeric(sp));
        ProgramPoint q{ins.operand, p.calls, p.loops};
        q.calls.push_back(pc);
        out.push_back({std::move(q), std::move(st)});
        break;
    }
    case Opcode::Ret: {
        const auto ret = load_value(s, s.reg(Reg::SP), tc, alarm);
        st.write(Reg::SP, AbstractValue::numeric(transfer_alu(Opcode::Add, s.reg(Reg::SP).num, BitvecAbs::constant(1)).value));
        std::vector<Address> calls = p.calls;
        if (!calls.empty()) calls.pop_back();
        std::vector<LoopFrame> loops;
        for (const auto& f : p.loops) {
            if (f.depth <= calls.size()) loops.push_back(f);
        }
        const auto g = ret.num.gamma();
        if (g.count() > 64 || ret.typed) {
            alarm(AlarmKind::UnresolvedJump, "return address " + ret.str(tc));
            break;
        }
        for (unsigned t = 0; t < kMemorySize; ++t) {
            if (g[t]) out.push_back({ProgramPoint{static_cast<Address>(t), calls, loops}, st});
        }
        break;
    }
    case Opcode::Iret: {
        if (cfg.stop_at && *cfg.stop_at == pc) break;
        auto er = empowered_step(s, tc);
        er.report.point = p;
        if (er.report.total_havoc && er.report.reason.starts_with("privileged-exit-unproven"))
            alarm(AlarmKind::PrivilegedExitUnproven, er.report.reason);
        if (exits) exits->push_back(er.report);
        out.push_back({entry_point(in.entries.syscall), er.state});
        if (in.entries.timer != in.entries.syscall) out.push_back({entry_point(in.entries.timer), er.state});
        break;
    }
    case Opcode::Syscall: {
        st.write(Reg::UPC, AbstractValue::constant(next));
        st.write(Reg::USP, s.reg(Reg::SP));
        st.write(Reg::UFLAGS, s.reg(Reg::FLAGS));
        st.write(Reg::FLAGS, AbstractValue::constant(kPrivileged));
        st.cmp.reset();
        out.push_back({entry_point(in.entries.syscall), st});
        break;
    }
    case Opcode::WrMpu1:
        st.write(Reg::MPU1, s.reg(ins.rd));
        local(next, st);
        break;
    case Opcode::WrMpu2:
        st.write(Reg::MPU2, s.reg(ins.rd));
        local(next, st);
        break;
    case Opcode::WrUFlags:
        st.write(Reg::UFLAGS, s.reg(ins.rd));
        local(next, st);
        break;
    case Opcode::RdUReg:
        st.write(ins.rd, s.reg(banked(static_cast<UserReg>(ins.operand))));
        local(next, st);
        break;
    case Opcode::WrUReg:
        st.write(banked(static_cast<UserReg>(ins.operand)), s.reg(ins.rd));
        local(next, st);
        break;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Fixpoint

namespace {

// Deeper call strings first, then program order.
struct WorkOrder {
    bool operator()(const ProgramPoint& a, const ProgramPoint& b) const {
        if (a.calls.size() != b.calls.size()) return a.calls.size() > b.calls.size();
        return a < b;
    }
};

std::map<ProgramPoint, AbstractState> incoming(const std::map<ProgramPoint, AbstractState>& states,
                                               const AnalysisInput& in, const EngineConfig& cfg) {
    std::map<ProgramPoint, AbstractState> acc;
    for (const auto& [p, s] : in.inits) acc[p] = acc[p].join(s, in.types);
    for (const auto& [p, s] : states) {
        for (auto& succ : transfer(p, s, in, cfg)) {
            auto& slot = acc[succ.to];
            slot = slot.join(succ.state, in.types);
        }
    }
    return acc;
}

bool inductive(const std::map<ProgramPoint, AbstractState>& states, const AnalysisInput& in, const EngineConfig& cfg,
               std::string* why) {
    for (const auto& [q, s] : incoming(states, in, cfg)) {
        auto it = states.find(q);
        if (s.bottom) continue;
        if (it == states.end() || !s.leq(it->second, in.types)) {
            if (why) *why = "successor state escapes the invariant at " + q.str();
            return false;
        }
    }
    return true;
}

} // namespace

Invariant analyze(const AnalysisInput& in, const EngineConfig& cfg) {
    Invariant inv;
    const TypeContext* tc = in.types;
    std::map<ProgramPoint, unsigned> updates;
    std::set<ProgramPoint, WorkOrder> work;

    // Widening points: targets of backward edges within a context and the
    // kernel entries, which together cut every cycle.
    std::set<ProgramPoint> heads;
    auto update = [&](const ProgramPoint& q, const AbstractState& s) {
        if (s.bottom) return;
        auto it = inv.states.find(q);
        if (it == inv.states.end()) {
            inv.states.emplace(q, s);
            work.insert(q);
            return;
        }
        if (s.leq(it->second, tc)) return;
        auto joined = it->second.join(s, tc);
        if (heads.contains(q) && ++updates[q] > cfg.widen_delay) joined = it->second.widen(joined, tc);
        it->second = std::move(joined);
        work.insert(q);
    };

    for (const auto& [p, s] : in.inits) update(p, s);
    while (!work.empty()) {
        const ProgramPoint p = *work.begin();
        work.erase(work.begin());
        if (++inv.iterations > cfg.budget)
            throw BudgetExceeded("worklist budget of " + std::to_string(cfg.budget) + " exhausted");
        const AbstractState s = inv.states.at(p);
        for (const auto& succ : transfer(p, s, in, cfg)) {
            const auto& q = succ.to;
            const bool entry = q.calls.empty() && (q.addr == in.entries.syscall || q.addr == in.entries.timer);
            if (entry || (q.addr <= p.addr && q.calls == p.calls)) heads.insert(q);
            update(q, succ.state);
        }
    }

    if (cfg.narrowing) {
        auto inc = incoming(inv.states, in, cfg);
        auto narrowed = inv.states;
        for (auto& [q, s] : narrowed) {
            auto it = inc.find(q);
            s = it == inc.end() ? AbstractState{} : s.meet(it->second);
        }
        std::erase_if(narrowed, [](const auto& kv) { return kv.second.bottom; });
        if (narrowed != inv.states && inductive(narrowed, in, cfg, nullptr)) {
            inv.states = std::move(narrowed);
            inv.narrowed = true;
        }
    }

    for (const auto& [p, s] : inv.states) {
        for (const auto& succ : transfer(p, s, in, cfg, &inv.alarms, &inv.exits)) inv.cfg.insert({p, succ.to});
    }
    std::ranges::sort(inv.alarms);
    inv.alarms.erase(std::unique(inv.alarms.begin(), inv.alarms.end()), inv.alarms.end());
    return inv;
}

bool check_inductive(const Invariant& inv, const AnalysisInput& in, const EngineConfig& cfg, std::string* why) {
    return inductive(inv.states, in, cfg, why);
}

// ---------------------------------------------------------------------------
// Concrete states, code and serialization

std::shared_ptr<const FrozenBytes> freeze_code(const MachineImage& kernel) {
    auto fz = std::make_shared<FrozenBytes>();
    fz->begin = kernel.origin;
    fz->end = static_cast<unsigned>(kernel.code_end());
    for (std::size_t i = 0; i < kernel.bytes.size(); ++i) fz->bytes[(kernel.origin + i) & 0xFF] = kernel.bytes[i];
    return fz;
}

AbstractState abstract_of(const ConcreteState& s, std::shared_ptr<const FrozenBytes> code) {
    AbstractState a;
    a.bottom = false;
    for (Reg r : kAllRegisters) a.reg(r) = AbstractValue::constant(s.reg(r));
    a.reg(Reg::PC) = AbstractValue::top();
    a.mem = AbsMemory(std::move(code));
    for (unsigned i = 0; i < kMemorySize; ++i) {
        const auto at = static_cast<Address>(i);
        if (!a.mem.frozen_at(at)) a.mem.set(at, AbstractValue::constant(s.mem[i]));
    }
    return a;
}

bool contains(const AbstractState& a, const ConcreteState& s) {
    if (a.bottom) return false;
    for (Reg r : kAllRegisters) {
        if (r != Reg::PC && !a.reg(r).num.contains(s.reg(r))) return false;
    }
    for (const auto& [addr, v] : a.mem.cells()) {
        if (!v.num.contains(s.mem[addr])) return false;
    }
    if (const auto* fz = a.mem.frozen()) {
        for (unsigned i = fz->begin; i < fz->end; ++i) {
            if (s.mem[i] != fz->bytes[i]) return false;
        }
    }
    return true;
}

std::string serialize(const Invariant& inv, const TypeContext* tc) {
    std::ostringstream os;
    for (const auto& [p, s] : inv.states) {
        os << "point " << p.str() << "\n";
        if (s.bottom) {
            os << "  unreachable\n";
            continue;
        }
        for (Reg r : kAllRegisters) {
            if (r == Reg::PC || s.reg(r).is_top()) continue;
            os << "  " << reg_name(r) << " = " << s.reg(r).str(tc) << "\n";
        }
        for (const auto& [a, v] : s.mem.cells()) os << "  [" << hex(a) << "] = " << v.str(tc) << "\n";
        if (s.cmp) os << "  cmp " << reg_name(s.cmp->first) << ", " << reg_name(s.cmp->second) << "\n";
    }
    for (const auto& al : inv.alarms)
        os << "alarm " << alarm_name(al.kind) << " at " << al.point.str() << ": " << al.detail << "\n";
    return os.str();
}

} // namespace u8k
