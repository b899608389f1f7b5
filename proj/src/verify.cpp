// Copyright (c) u8k-verifier contributors.
// SPDX-License-Identifier: MIT

#include "u8k/verify.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <deque>
#include <random>

namespace u8k {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

std::string hex(unsigned v) {
    char buf[8];
    std::snprintf(buf, sizeof buf, "0x%02x", v);
    return buf;
}

bool is_typing_alarm(AlarmKind k) {
    return k == AlarmKind::TypingViolationStore || k == AlarmKind::MaybeNullDeref || k == AlarmKind::BaseCaseViolation;
}

ProgramPoint at(Address a) { return ProgramPoint{a, {}, {}}; }

// Join of every state stored at `addr` in the outermost call context.
AbstractState state_at(const Invariant& inv, Address addr, const TypeContext* tc) {
    AbstractState acc;
    for (const auto& [p, s] : inv.states) {
        if (p.addr == addr && p.calls.empty()) acc = acc.join(s, tc);
    }
    return acc;
}

// Labels the pointee of a typed pointer may carry under a concrete labeling;
// symbolic-length arrays resolve to their instance.
bool pointee_ok(const TypeEnv& env, const Labeling& lab, Label target, Address a) {
    if (!lab.at[a]) return false;
    const auto& d = env.def(target.type);
    if (d.kind == TypeDef::Kind::Array && !d.count) {
        auto n = lab.params.find(d.length_param);
        if (n == lab.params.end()) return false;
        auto inst = env.find(env.def(d.target).name + "[" + std::to_string(n->second) + "]");
        if (!inst) return false;
        const unsigned elem = env.size_of(d.target);
        for (unsigned i = 0; i < n->second; ++i) {
            if (env.subtype(*lab.at[a], Label{*inst, target.offset + i * elem})) return true;
        }
        return false;
    }
    return env.subtype(*lab.at[a], target);
}

std::string value_str(const ValueSet& g) {
    std::string s = "{";
    unsigned n = 0;
    for (unsigned v = 0; v < kMemorySize; ++v) {
        if (!g[v]) continue;
        if (n++ == 8) {
            s += ",...";
            break;
        }
        s += (n > 1 ? "," : "") + hex(v);
    }
    return s + "}";
}

Alarm base_alarm(Address a, std::string detail) {
    return Alarm{AlarmKind::BaseCaseViolation, at(a), std::move(detail)};
}

struct ParamSetup {
    std::shared_ptr<const FrozenBytes> code;
    SymbolicMemory sym;
    Bindings bindings;
    std::map<Address, Label> roots;
};

ParamSetup param_setup(const MachineImage& kernel, const TypeEnv& env) {
    ParamSetup p;
    p.code = freeze_code(kernel);
    p.sym = {kernel.origin, kernel.end()};
    // The first address past the kernel image.
    p.bindings["kernel_last_addr"] = BitvecAbs::constant(static_cast<Byte>(std::min<std::size_t>(kernel.end(), 0xFF)));
    for (const auto& r : env.regions()) {
        if (!r.address) continue;
        const unsigned n = env.size_of(r.type);
        for (unsigned k = 0; k < n; ++k) p.roots[static_cast<Address>(*r.address + k)] = Label{r.type, k};
    }
    return p;
}

// Ī's entry: every register unknown but privilege, kernel data as in the image.
AbstractState param_entry(const MachineImage& kernel, const std::shared_ptr<const FrozenBytes>& code) {
    AbstractState s;
    s.bottom = false;
    for (Reg r : kAllRegisters) s.reg(r) = AbstractValue::top();
    s.reg(Reg::FLAGS) = AbstractValue::constant(kPrivileged);
    s.mem = AbsMemory(code);
    for (std::size_t i = 0; i < kernel.bytes.size(); ++i) {
        const auto a = static_cast<Address>(kernel.origin + i);
        if (!s.mem.frozen_at(a)) s.mem.set(a, AbstractValue::constant(kernel.bytes[i]));
    }
    return s;
}

// Points reachable from the runtime entries (and the boot exit itself).
std::set<ProgramPoint> runtime_points(const Invariant& inv, const KernelEntries& e, Address exit) {
    std::map<ProgramPoint, std::vector<ProgramPoint>> succ;
    for (const auto& [a, b] : inv.cfg) succ[a].push_back(b);
    std::set<ProgramPoint> seen;
    std::deque<ProgramPoint> work;
    for (const auto& [p, s] : inv.states) {
        if (p.calls.empty() && (p.addr == e.syscall || p.addr == e.timer || p.addr == exit)) {
            if (seen.insert(p).second) work.push_back(p);
        }
    }
    while (!work.empty()) {
        const auto p = work.front();
        work.pop_front();
        for (const auto& q : succ[p]) {
            if (seen.insert(q).second) work.push_back(q);
        }
    }
    return seen;
}

// Base-case obligations shared by both parameterized modes, over `view`
// (the concrete s0, or the boot invariant at the exit point).
void check_initial_memory(RunResult& r, TypeEnv env, const ParamSetup& ps, const MemoryView& view,
                          const MachineImage& kernel, Address exit, const AbstractState* at_exit,
                          const AbstractState* param_exit, const TypeContext& tc) {
    auto& out = r.base_case;
    out.checked = true;
    auto lr = build_labeling(env, view);
    for (const auto& v : lr.violations) out.violations.push_back(base_alarm(v.address, v.reason + " (" + v.value + ")"));
    out.labeling = lr.labeling;
    const auto& lab = out.labeling;

    Bindings b = ps.bindings;
    for (const auto& [n, v] : lab.params) b[n] = BitvecAbs::constant(static_cast<Byte>(v));
    const TypeSystem ts_c(env, b, ps.sym);

    for (const auto& v : check_welltyped(ts_c, lab, view)) {
        out.violations.push_back(base_alarm(v.address, env.label_name(v.label) + " holds " + v.value +
                                                           ", admissible " + v.admissible));
    }
    for (const auto& [x, y] : check_separation(env, lab))
        out.violations.push_back(base_alarm(x, "aliases " + hex(y)));
    for (unsigned a = 0; a < kMemorySize; ++a) {
        if (lab.at[a] && kernel.contains(a)) out.violations.push_back(base_alarm(static_cast<Address>(a), "labeled memory inside the kernel image"));
    }

    // Writable segments the kernel may install stay clear of labeled memory
    // and of the kernel image.
    std::set<Address> descriptors;
    for (const auto& e : r.invariant.exits) {
        auto it = r.invariant.states.find(e.point);
        if (it == r.invariant.states.end()) continue;
        for (Reg mpu : {Reg::MPU1, Reg::MPU2}) {
            const auto& v = it->second.reg(mpu);
            if (!v.typed || v.typed->role != TypedValue::Role::PointerTo) continue;
            for (unsigned a = 0; a < kMemorySize; ++a) {
                if (pointee_ok(env, lab, v.typed->label, static_cast<Address>(a))) descriptors.insert(static_cast<Address>(a));
            }
        }
    }
    for (Address d : descriptors) {
        const auto base = view(d).singleton();
        const auto rights = view(static_cast<Address>(d + 1)).singleton();
        if (!base || !rights) {
            out.violations.push_back(base_alarm(d, "segment descriptor is not a constant"));
            continue;
        }
        if (*rights & 0x80) continue; // read-only
        const unsigned lo = *base, hi = std::min<unsigned>(lo + (*rights & 0x0F) + 1u, kMemorySize);
        for (unsigned a = lo; a < hi; ++a) {
            const auto x = static_cast<Address>(a);
            if (lab.at[x] || kernel.contains(x)) {
                out.violations.push_back(base_alarm(d, "writable segment [" + hex(lo) + "," + hex(hi) +
                                                           ") covers " + hex(x)));
                break;
            }
        }
    }

    if (at_exit && param_exit) {
        for (const auto& msg : implication_check(*at_exit, *param_exit, tc, ts_c, lab))
            out.violations.push_back(base_alarm(exit, msg));
    }
}

Verdict make_verdict(const Invariant& inv, bool inductive, const std::vector<Alarm>& alarms,
                     const std::set<ProgramPoint>* scope) {
    Verdict v;
    v.arte = check_arte(alarms);
    v.ape = check_ape(inv, alarms, scope);
    v.invariant_trivial = !invariant_nontrivial(inv);
    // Neither property follows from a state set that is not closed.
    for (auto* p : {&v.arte, &v.ape}) {
        if (!inductive && p->proved) {
            p->proved = false;
            p->reason = "not-inductive";
        }
    }
    return v;
}

} // namespace

bool is_arte_alarm(AlarmKind k) {
    switch (k) {
    case AlarmKind::IllegalOpcodeSite:
    case AlarmKind::MaybeDivZero:
    case AlarmKind::UnresolvedJump:
    case AlarmKind::WildStore:
    case AlarmKind::SelfModification: return true;
    default: return false;
    }
}

PropertyVerdict check_arte(const std::vector<Alarm>& alarms) {
    PropertyVerdict v;
    for (const auto& a : alarms) {
        if (is_arte_alarm(a.kind) || is_typing_alarm(a.kind)) v.alarms.push_back(a);
    }
    v.proved = v.alarms.empty();
    if (!v.proved) {
        const bool typing = std::ranges::all_of(v.alarms, [](const Alarm& a) { return is_typing_alarm(a.kind); });
        v.reason = typing ? "typing-unproven" : "alarms";
    }
    return v;
}

bool invariant_nontrivial(const Invariant& inv) {
    if (std::ranges::any_of(inv.exits, [](const ExitReport& e) { return e.total_havoc; })) return false;
    return std::ranges::any_of(inv.states, [](const auto& kv) { return !kv.second.bottom && !kv.second.trivial(); });
}

PropertyVerdict check_ape(const Invariant& inv, const std::vector<Alarm>& alarms, const std::set<ProgramPoint>* scope) {
    PropertyVerdict v;
    auto fail = [&](std::string reason, AlarmKind k) {
        v.proved = false;
        v.reason = std::move(reason);
        for (const auto& a : alarms) {
            if (a.kind == k) v.alarms.push_back(a);
        }
        return v;
    };
    bool privileged = false, total = false;
    for (const auto& e : inv.exits) {
        if (scope && !scope->contains(e.point)) continue;
        if (!e.total_havoc) continue;
        (e.reason.starts_with("privileged-exit-unproven") ? privileged : total) = true;
    }
    auto any = [&](AlarmKind k) { return std::ranges::any_of(alarms, [&](const Alarm& a) { return a.kind == k; }); };
    if (privileged || any(AlarmKind::PrivilegedExitUnproven))
        return fail("privileged-exit-unproven", AlarmKind::PrivilegedExitUnproven);
    if (total || any(AlarmKind::SelfModification)) return fail("trivial-invariant", AlarmKind::SelfModification);
    if (!std::ranges::any_of(inv.states, [](const auto& kv) { return !kv.second.bottom && !kv.second.trivial(); }))
        return fail("trivial-invariant", AlarmKind::SelfModification);
    if (any(AlarmKind::UnresolvedJump)) return fail("incomplete-control-flow", AlarmKind::UnresolvedJump);
    if (any(AlarmKind::IllegalOpcodeSite)) return fail("incomplete-control-flow", AlarmKind::IllegalOpcodeSite);
    for (AlarmKind k : {AlarmKind::BaseCaseViolation, AlarmKind::TypingViolationStore, AlarmKind::MaybeNullDeref}) {
        if (any(k)) return fail("typing-unproven", k);
    }
    v.proved = true;
    return v;
}

std::string_view mode_name(Mode m) {
    switch (m) {
    case Mode::InContext: return "in-context";
    case Mode::Param: return "param";
    case Mode::ParamBootDiff: return "param-bootdiff";
    }
    return "?";
}

RunResult run_in_context(const MachineImage& kernel, const MachineImage& user, const EngineConfig& cfg) {
    const auto t0 = Clock::now();
    RunResult r;
    r.mode = Mode::InContext;
    const auto s0 = load_images(kernel, user);
    AnalysisInput in;
    in.entries = entries_of(kernel);
    in.inits.push_back({at(in.entries.reset), abstract_of(s0, freeze_code(kernel))});
    r.invariant = analyze(in, cfg);
    r.invariant_seconds = seconds_since(t0);
    r.inductive = check_inductive(r.invariant, in, cfg);
    r.verdict = make_verdict(r.invariant, r.inductive, r.invariant.alarms, nullptr);
    r.serialized = serialize(r.invariant);
    r.total_seconds = seconds_since(t0);
    return r;
}

RunResult run_parameterized(const MachineImage& kernel, const TypeEnv& annotations,
                            const std::optional<MachineImage>& user, const ParamOptions& opts,
                            const EngineConfig& cfg) {
    const auto t0 = Clock::now();
    RunResult r;
    r.mode = opts.differentiated ? Mode::ParamBootDiff : Mode::Param;
    const auto ps = param_setup(kernel, annotations);
    const TypeSystem ts(annotations, ps.bindings, ps.sym);
    const TypeContext tc(ts, ps.roots);

    AnalysisInput in;
    in.entries = entries_of(kernel);
    in.types = &tc;
    in.inits.push_back({at(in.entries.reset), param_entry(kernel, ps.code)});
    r.invariant = analyze(in, cfg);
    r.invariant_seconds = seconds_since(t0);
    r.serialized = serialize(r.invariant, &tc);
    r.inductive = check_inductive(r.invariant, in, cfg);

    const auto t1 = Clock::now();
    std::vector<Alarm> alarms;
    std::optional<std::set<ProgramPoint>> scope;
    if (opts.differentiated) {
        if (!user) throw std::invalid_argument("boot-differentiated mode needs a user image");
        const auto exit = opts.exitpoint ? opts.exitpoint : annotations.exitpoint();
        if (!exit) throw std::invalid_argument("boot-differentiated mode needs an exit point");
        const auto s0 = load_images(kernel, *user);
        AnalysisInput boot;
        boot.entries = in.entries;
        boot.inits.push_back({at(in.entries.reset), abstract_of(s0, ps.code)});
        auto bcfg = cfg;
        bcfg.stop_at = *exit;
        r.boot = analyze(boot, bcfg);
        alarms = r.boot->alarms;

        scope = runtime_points(r.invariant, in.entries, *exit);
        for (const auto& a : r.invariant.alarms) {
            if (scope->contains(a.point)) alarms.push_back(a);
        }
        const auto concrete = state_at(*r.boot, *exit, nullptr);
        const auto param = state_at(r.invariant, *exit, &tc);
        if (concrete.bottom) {
            r.base_case.checked = true;
            r.base_case.violations.push_back(base_alarm(*exit, "boot never reaches the exit point"));
        } else {
            const MemoryView view = [&](Address a) { return concrete.mem.get(a).num; };
            check_initial_memory(r, annotations, ps, view, kernel, *exit, &concrete, &param, tc);
        }
    } else {
        alarms = r.invariant.alarms;
        if (user) {
            const auto s0 = load_images(kernel, *user);
            check_initial_memory(r, annotations, ps, concrete_view(s0.mem), kernel, in.entries.reset, nullptr, nullptr, tc);
        }
    }
    r.base_case_seconds = seconds_since(t1);
    alarms.insert(alarms.end(), r.base_case.violations.begin(), r.base_case.violations.end());
    r.verdict = make_verdict(r.invariant, r.inductive, alarms, scope ? &*scope : nullptr);
    r.total_seconds = seconds_since(t0);
    return r;
}

std::vector<std::string> implication_check(const AbstractState& concrete, const AbstractState& param,
                                           const TypeContext& tc, const TypeSystem& concrete_types,
                                           const Labeling& lab) {
    std::vector<std::string> out;
    if (concrete.bottom) return out;
    if (param.bottom) {
        out.emplace_back("implication: parameterized invariant is empty at the exit point");
        return out;
    }
    const auto& env = concrete_types.env();
    auto check = [&](const std::string& where, const AbstractValue& c, const AbstractValue& p) {
        if (c.is_bottom()) return;
        const auto g = c.num.gamma();
        if ((g & ~p.num.gamma()).any()) {
            out.push_back("implication: " + where + " " + value_str(g) + " not within " + p.num.str());
            return;
        }
        if (!p.typed) return;
        const auto& t = *p.typed;
        for (unsigned x = 0; x < kMemorySize; ++x) {
            if (!g[x]) continue;
            bool ok;
            if (t.role == TypedValue::Role::PointerTo) {
                ok = (x == 0 && t.nullable) || pointee_ok(env, lab, t.label, static_cast<Address>(x));
            } else {
                ok = concrete_types.interpret(t.label, &lab).must[x];
            }
            if (!ok) {
                out.push_back("implication: " + where + " = " + hex(x) + " is not a " + tc.str(t));
                return;
            }
        }
    };
    for (Reg r : kAllRegisters) {
        if (r == Reg::PC) continue;
        check(std::string(reg_name(r)), concrete.reg(r), param.reg(r));
    }
    for (const auto& [a, v] : param.mem.cells()) check("[" + hex(a) + "]", concrete.mem.get(a), v);
    return out;
}

OracleSummary oracle_check(const MachineImage& kernel, const MachineImage& user, const Invariant* inv, unsigned runs,
                           std::uint64_t seed) {
    OracleSummary out{runs, seed, 0, 0, 0};
    const auto s0 = load_images(kernel, user);
    const auto entries = entries_of(kernel);
    const auto code_end = kernel.code_end();
    std::mt19937_64 rng(seed);
    for (unsigned run = 0; run < runs; ++run) {
        std::vector<Event> schedule{{EventKind::Reset}};
        const auto n = rng() % 24;
        for (std::uint64_t i = 0; i < n; ++i)
            schedule.push_back({rng() % 2 ? EventKind::Timer : EventKind::Syscall, static_cast<std::uint16_t>(rng() % 12)});
        const UserModel model{run % 2 ? UserModel::Kind::Adversary : UserModel::Kind::Execute, rng()};
        const auto trace = run_oracle(s0, entries, schedule, 20000, model);
        for (std::size_t i = 0; i < trace.states.size(); ++i) {
            const auto& c = trace.states[i];
            if (!c.privileged()) continue;
            const auto pc = c.reg(Reg::PC);
            ++out.states_checked;
            if (pc >= code_end) {
                ++out.escapes;
                continue;
            }
            if (!inv) continue;
            AbstractState acc;
            for (const auto& [p, a] : inv->states) {
                if (p.addr == pc && p.calls == trace.call_sites[i]) acc = acc.join(a, nullptr);
            }
            if (!contains(acc, c)) ++out.uncontained;
        }
    }
    return out;
}

} // namespace u8k
