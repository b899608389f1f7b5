// Copyright (c) u8k-verifier contributors.
// SPDX-License-Identifier: MIT

// One PASS/FAIL line per acceptance criterion; exits non-zero if any fails.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <random>
#include <ranges>
#include <sstream>

#include "u8k/assembler.hpp"
#include "u8k/bench.hpp"
#include "u8k/verify.hpp"
#include "value_gen.hpp"

using namespace u8k;

namespace {

// Pinned tolerances.
constexpr double kExampleSeconds = 5.0;
constexpr double kParamTimeSpread = 2.0;    // max/min invariant time across N
constexpr double kInContextGrowth = 8.0;    // t(128)/t(16) must exceed this
constexpr unsigned kTransferCases = 12'000; // per operation
constexpr unsigned kOracleRuns = 1000;
constexpr unsigned kMaxAnnotationLines = 20;
constexpr int kTimingRepeats = 3;

MachineImage corpus(const std::string& name) { return assemble_file(U8K_CORPUS_DIR "/" + name); }
TypeEnv fig2() { return load_annotations(U8K_CORPUS_DIR "/fig2_types.ann"); }

struct Check {
    bool ok{true};
    std::ostringstream why;
    void expect(bool cond, const std::string& what) {
        if (!cond) {
            if (!ok) why << "; ";
            why << what;
            ok = false;
        }
    }
};

int failures = 0;

void report(int n, const std::string& title, const std::function<void(Check&)>& body) {
    Check c;
    try {
        body(c);
    } catch (const std::exception& e) {
        c.expect(false, std::string("exception: ") + e.what());
    }
    if (!c.ok) ++failures;
    std::cout << (c.ok ? "PASS" : "FAIL") << " criterion " << n << ": " << title;
    if (!c.ok) std::cout << " -- " << c.why.str();
    std::cout << std::endl;
}

std::string hex(unsigned v) {
    char buf[8];
    std::snprintf(buf, sizeof buf, "0x%02x", v);
    return buf;
}

std::string set_str(const ValueSet& g) {
    std::string s;
    for (unsigned v = 0; v < kMemorySize; ++v) {
        if (g[v]) s += (s.empty() ? "" : ",") + hex(v);
    }
    return "{" + s + "}";
}

ValueSet values(std::initializer_list<unsigned> vs) {
    ValueSet g;
    for (unsigned v : vs) g.set(v);
    return g;
}

ValueSet range(unsigned lo, unsigned hi) {
    ValueSet g;
    for (unsigned v = lo; v <= hi; ++v) g.set(v);
    return g;
}

AbstractState state_at(const Invariant& inv, Address addr) {
    AbstractState acc;
    for (const auto& [p, s] : inv.states) {
        if (p.addr == addr && p.calls.empty()) acc = acc.join(s, nullptr);
    }
    return acc;
}

double seconds(const std::function<void()>& f) {
    const auto t = std::chrono::steady_clock::now();
    f();
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count();
}

// 1 ---------------------------------------------------------------------------

void in_context_reproduction(Check& c) {
    const auto kernel = corpus("kernel_fig1.s");
    const auto user = corpus("user_fig3.s");
    const auto s0 = load_images(kernel, user);
    RunResult r;
    const double t = seconds([&] { r = run_in_context(kernel, user); });
    c.expect(t < kExampleSeconds, "took " + std::to_string(t) + " s");
    c.expect(r.verdict.proved(), "verdict not proved");
    c.expect(r.invariant.exits.size() == 1, "expected one kernel exit");
    if (r.invariant.exits.empty()) return;
    const auto& s = r.invariant.states.at(r.invariant.exits.front().point);
    auto eq = [&](const std::string& what, const BitvecAbs& v, const ValueSet& want) {
        c.expect(v.gamma() == want, what + " = " + set_str(v.gamma()) + ", want " + set_str(want));
    };
    eq("cur", s.mem.get(0xA0).num, values({0xA2, 0xA7}));
    eq("ctx", s.mem.get(0xA1).num, values({0xA3, 0xA8}));
    eq("mpu1", s.reg(Reg::MPU1).num, values({0xAE}));
    eq("mpu2", s.reg(Reg::MPU2).num, values({0xB0}));
    eq("[0xa5]", s.mem.get(0xA5).num, range(0, 0x7F));
    eq("[0xaa]", s.mem.get(0xAA).num, range(0, 0x7F));
    eq("flags'", s.reg(Reg::UFLAGS).num, range(0, 0x7F));
    // Saved pc/sp of the contexts and the kernel stack slot also vary.
    const std::set<unsigned> varying{0x9E, 0xA0, 0xA1, 0xA3, 0xA4, 0xA5, 0xA8, 0xA9, 0xAA};
    for (unsigned a = 0; a < kMemorySize; ++a) {
        const auto at = static_cast<Address>(a);
        const bool segment = (a >= 0xC0 && a < 0xD0) || (a >= 0xE0 && a < 0xF0);
        if (segment) {
            c.expect(!s.mem.tracked(at), hex(a) + " should be untracked");
        } else if (!varying.contains(a)) {
            c.expect(s.mem.get(at).num == BitvecAbs::constant(s0.mem[a]), hex(a) + " should keep its initial value");
        }
    }
}

// 2 ---------------------------------------------------------------------------

void parameterized_reproduction(Check& c) {
    const auto kernel = corpus("kernel_fig1.s");
    const auto user = corpus("user_fig3.s");
    RunResult r;
    const double t = seconds([&] { r = run_parameterized(kernel, fig2(), user); });
    c.expect(t < kExampleSeconds, "took " + std::to_string(t) + " s");
    c.expect(r.verdict.proved(), "verdict not proved");
    c.expect(r.base_case.checked && r.base_case.violations.empty(), "base case of the example dump failed");

    // Admissible values of each typed fact under the example's labeling.
    auto env = fig2();
    const auto s0 = load_images(kernel, user);
    const auto lr = build_labeling(env, concrete_view(s0.mem));
    Bindings b{{"kernel_last_addr", BitvecAbs::constant(0xA2)}};
    for (const auto& [n, v] : lr.labeling.params) b[n] = BitvecAbs::constant(static_cast<Byte>(v));
    const TypeSystem ts(env, b, {0, 0xA2});
    auto admissible = [&](const AbstractValue& v) -> std::optional<ValueSet> {
        if (!v.typed) return std::nullopt;
        if (v.typed->role == TypedValue::Role::ScalarOf) return ts.interpret(v.typed->label, &lr.labeling).must;
        ValueSet g;
        for (unsigned a = 0; a < kMemorySize; ++a) {
            if (lr.labeling.at[a] && env.subtype(*lr.labeling.at[a], v.typed->label)) g.set(a);
        }
        if (v.typed->nullable) g.set(0);
        return g;
    };
    const auto s = state_at(r.invariant, 0x10);
    c.expect(!s.bottom, "no state at the exit point");
    auto fact = [&](const std::string& what, const AbstractValue& v, const ValueSet& want,
                    std::optional<Label> above = std::nullopt) {
        const auto g = admissible(v);
        if (!g) {
            c.expect(false, what + " is not typed");
            return;
        }
        c.expect(*g == want, what + " admits " + set_str(*g) + ", want " + set_str(want));
        if (above) c.expect(env.subtype(v.typed->label, *above), what + " is not below " + env.label_name(*above));
    };
    const Label context{env.id("Context"), 0}, segment{env.id("Segment"), 0}, thread{env.id("Thread"), 0};
    fact("cur", s.mem.get(0xA0), values({0xA2, 0xA7}), thread);
    fact("ctx", s.mem.get(0xA1), values({0xA3, 0xA8}), context);
    fact("mpu1", s.reg(Reg::MPU1), values({0xAE}), segment);
    fact("mpu2", s.reg(Reg::MPU2), values({0xB0}), segment);
    fact("flags'", s.reg(Reg::UFLAGS), range(0, 0x7F));

    auto bad = user;
    bad.bytes[0xA6 - bad.origin] = 0xAE;
    const auto rb = run_parameterized(kernel, fig2(), bad);
    const auto& v = rb.base_case.violations;
    c.expect(v.size() == 1, "corrupted dump gave " + std::to_string(v.size()) + " violations, want 1");
    c.expect(!v.empty() && v.front().kind == AlarmKind::BaseCaseViolation && v.front().point.addr == 0xA6,
             "violation not at 0xa6");
}

// 3 ---------------------------------------------------------------------------

void seeded_defects(Check& c) {
    struct Case {
        const char* file;
        bool privilege;
    };
    const Case cases[] = {
        {"rq0_priv_jump.s", true},       {"rq0_priv_grant.s", true},     {"rq0_arbitrary_write.s", true},
        {"rq0_mpu_kernel.s", true},      {"rq0_arbitrary_read.s", false}, {"rq0_illegal_opcode.s", false},
        {"rq0_div_zero.s", false},
    };
    const auto user = corpus("user_fig3.s");
    int missed = 0;
    for (const auto& k : cases) {
        const auto r = run_in_context(corpus(k.file), user);
        const auto& prop = k.privilege ? r.verdict.ape : r.verdict.arte;
        if (prop.proved) {
            ++missed;
            c.expect(false, std::string(k.file) + " verified");
        }
    }
    c.expect(missed == 0, std::to_string(missed) + " of 7 falsely verified");
}

// 4 ---------------------------------------------------------------------------

void scalability(Check& c) {
    const BenchInputs in{corpus("kernel_rr.s"), load_annotations(U8K_CORPUS_DIR "/rr_types.ann"), {}};
    const unsigned ns[] = {2, 16, 128};
    std::map<unsigned, double> param_time, ic_time;
    std::map<unsigned, std::string> digests;
    for (unsigned n : ns) {
        double best_p = 1e9, best_i = 1e9;
        for (int k = 0; k < kTimingRepeats; ++k) {
            const auto p = bench_one(in, n, Mode::Param);
            const auto i = bench_one(in, n, Mode::InContext);
            if (!p.ok || !i.ok) {
                c.expect(false, "N=" + std::to_string(n) + ": " + (p.ok ? i.error : p.error));
                break;
            }
            c.expect(p.ape && p.arte, "N=" + std::to_string(n) + " parameterized not proved");
            best_p = std::min(best_p, p.invariant_seconds);
            best_i = std::min(best_i, i.total_seconds);
            digests[n] = p.invariant_digest;
        }
        if (digests.contains(n)) {
            param_time[n] = best_p;
            ic_time[n] = best_i;
        }
    }
    std::ostringstream m;
    for (const auto& [n, t] : param_time)
        m << " N=" << n << " param " << t << " s, in-context " << ic_time[n] << " s, digest " << digests[n] << ";";
    std::cout << "  measured:" << m.str() << std::endl;
    if (param_time.size() >= 2) {
        const auto [lo, hi] = std::ranges::minmax(param_time | std::views::values);
        c.expect(hi / lo < kParamTimeSpread, "parameterized time spread " + std::to_string(hi / lo));
        const auto d = digests.begin()->second;
        c.expect(std::ranges::all_of(digests, [&](const auto& kv) { return kv.second == d; }),
                 "parameterized invariants differ across N");
    }
    if (ic_time.contains(16) && ic_time.contains(128)) {
        c.expect(ic_time[128] / ic_time[16] > kInContextGrowth, "in-context growth not supra-linear");
    }
}

// 5 ---------------------------------------------------------------------------

void soundness(Check& c) {
    // (a) transfer functions against exhaustive enumeration.
    std::mt19937_64 rng(U8K_ACCEPTANCE_SEED);
    std::size_t cases = 0, bad = 0;
    for (auto op : {Opcode::Add, Opcode::Sub, Opcode::And, Opcode::Or, Opcode::Xor, Opcode::Shl, Opcode::Shr,
                    Opcode::Div, Opcode::Cmp}) {
        for (unsigned i = 0; i < kTransferCases; ++i) {
            const auto a = testing::random_abs(rng, 32);
            const auto b = testing::random_abs(rng, 32);
            const auto r = transfer_alu(op, a, b);
            const auto ga = a.gamma(), gb = b.gamma(), gr = r.value.gamma();
            ++cases;
            for (unsigned x = 0; x < kMemorySize; ++x) {
                if (!ga[x]) continue;
                for (unsigned y = 0; y < kMemorySize; ++y) {
                    if (!gb[y]) continue;
                    if (op == Opcode::Div && y == 0) {
                        if (!r.maybe_div_zero) ++bad;
                        continue;
                    }
                    const auto z = op == Opcode::Cmp ? concrete_cmp_flags(static_cast<Byte>(x), static_cast<Byte>(y))
                                                     : concrete_alu(op, static_cast<Byte>(x), static_cast<Byte>(y));
                    if (!gr[z]) ++bad;
                }
            }
        }
    }
    c.expect(cases >= 10'000, "only " + std::to_string(cases) + " transfer cases");
    c.expect(bad == 0, std::to_string(bad) + " transfer containment violations");

    // (b) oracle containment on the verified corpus.
    const auto fig1 = corpus("kernel_fig1.s");
    const auto user = corpus("user_fig3.s");
    const auto rr = corpus("kernel_rr.s");
    const auto rr_user = generate_rr_user(3);
    for (const auto& [k, u] : {std::pair{fig1, user}, std::pair{rr, rr_user}}) {
        const auto r = run_in_context(k, u);
        const auto o = oracle_check(k, u, &r.invariant, kOracleRuns, U8K_ACCEPTANCE_SEED);
        c.expect(o.states_checked > 0, "oracle checked no states");
        c.expect(o.escapes == 0 && o.uncontained == 0,
                 std::to_string(o.escapes + o.uncontained) + " oracle states outside the invariant");
    }

    // (c) every emitted invariant is inductive.
    const auto rr_ann = load_annotations(U8K_CORPUS_DIR "/rr_types.ann");
    std::vector<std::pair<std::string, RunResult>> runs;
    runs.emplace_back("fig1 in-context", run_in_context(fig1, user));
    runs.emplace_back("fig1 param", run_parameterized(fig1, fig2(), user));
    runs.emplace_back("fig1 bootdiff", run_parameterized(fig1, fig2(), user, {.differentiated = true, .exitpoint = 0x10}));
    runs.emplace_back("rr in-context", run_in_context(rr, rr_user));
    runs.emplace_back("rr param", run_parameterized(rr, rr_ann, rr_user));
    for (const char* f : {"rq0_div_zero.s", "kernel_jumptable.s", "rq0_priv_grant.s"})
        runs.emplace_back(f, run_in_context(corpus(f), user));
    for (const auto& [name, r] : runs) c.expect(r.inductive, name + " invariant is not inductive");
}

// 6 ---------------------------------------------------------------------------

void type_system(Check& c) {
    auto env = fig2();
    const auto t2 = env.array_of(env.id("Thread"), 2u);
    std::vector<Label> roots;
    for (unsigned k = 0; k < 10; ++k) roots.push_back({t2, k});
    std::set<std::pair<std::string, std::string>> got;
    for (const auto& [a, b] : env.hasse_above(roots)) got.insert({env.label_name(a), env.label_name(b)});
    std::set<std::pair<std::string, std::string>> want{
        {"Int8", "Word"},          {"Memory_Table*", "Word"},     {"Thread*", "Word"},
        {"Flags", "Int8"},         {"Context_0", "Int8"},         {"Context_1", "Int8"},
        {"Context_2", "Flags"},    {"Thread_0", "Memory_Table*"}, {"Thread_4", "Thread*"},
        {"Thread_1", "Context_0"}, {"Thread_2", "Context_1"},     {"Thread_3", "Context_2"},
    };
    for (unsigned k = 0; k < 10; ++k) want.insert({"Thread[2]_" + std::to_string(k), "Thread_" + std::to_string(k % 5)});
    c.expect(got == want, "Hasse edges differ from the golden set (" + std::to_string(got.size()) + " edges)");

    auto env2 = fig2();
    const auto s0 = load_images(corpus("kernel_fig1.s"), corpus("user_fig3.s"));
    const auto lr = build_labeling(env2, concrete_view(s0.mem));
    c.expect(lr.violations.empty(), "example labeling has violations");
    Bindings b{{"kernel_last_addr", BitvecAbs::constant(0xA2)}};
    for (const auto& [n, v] : lr.labeling.params) b[n] = BitvecAbs::constant(static_cast<Byte>(v));
    const auto ctxp = env2.pointer_to(env2.id("Context"));
    const TypeSystem ts(env2, b, {0, 0xA2});
    const auto ctx = ts.interpret({ctxp, 0}, &lr.labeling);
    c.expect(ctx.must == values({0xA3, 0xA8}) && ctx.may == ctx.must, "[[Context_0*]] = " + set_str(ctx.may));
    c.expect(check_separation(ts.env(), lr.labeling).empty(), "separation fails on the example labeling");
}

// 7 ---------------------------------------------------------------------------

void annotation_burden(Check& c) {
    const auto env = fig2();
    const unsigned lines = env.extra_annotation_lines();
    std::cout << "  annotation lines beyond the interface types: " << lines << std::endl;
    c.expect(lines <= kMaxAnnotationLines, std::to_string(lines) + " annotation lines");
    const auto r = run_parameterized(corpus("kernel_fig1.s"), env, corpus("user_fig3.s"));
    c.expect(r.verdict.proved(), "example kernel not verified in parameterized mode");
}

} // namespace

int main() {
    report(1, "in-context invariant reproduction", in_context_reproduction);
    report(2, "parameterized invariant reproduction and base case", parameterized_reproduction);
    report(3, "seeded defects yield NotProved", seeded_defects);
    report(4, "scalability shape across N in {2, 16, 128}", scalability);
    report(5, "soundness property suite", soundness);
    report(6, "type-system golden tests", type_system);
    report(7, "annotation burden", annotation_burden);
    std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
    return failures == 0 ? 0 : 1;
}
