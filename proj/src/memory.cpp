// Copyright (c) u8k-verifier contributors.
// SPDX-License-Identifier: MIT

#include "u8k/memory.hpp"

#include <algorithm>

namespace u8k {

// ---------------------------------------------------------------------------
// AbstractValue

bool AbstractValue::leq(const AbstractValue& o, const TypeContext* tc) const {
    if (is_bottom()) return true;
    if (!num.leq(o.num)) return false;
    if (!o.typed) return true;
    return typed && tc && tc->leq(*typed, *o.typed);
}

AbstractValue AbstractValue::join(const AbstractValue& o, const TypeContext* tc) const {
    if (is_bottom()) return o;
    if (o.is_bottom()) return *this;
    AbstractValue r{num.join(o.num), std::nullopt};
    if (typed && o.typed && tc) r.typed = tc->join(*typed, *o.typed);
    return r;
}

AbstractValue AbstractValue::widen(const AbstractValue& next, const TypeContext* tc) const {
    if (is_bottom()) return next;
    // Sets of at most K values form a finite chain; widen once they overflow.
    const auto j = num.join(next.num);
    AbstractValue r{j.has_vset() ? j : num.widen(next.num), std::nullopt};
    if (typed && next.typed && tc) r.typed = tc->join(*typed, *next.typed);
    return r;
}

AbstractValue AbstractValue::meet(const AbstractValue& o) const {
    AbstractValue r{num.meet(o.num), typed ? typed : o.typed};
    return r;
}

std::string AbstractValue::str(const TypeContext* tc) const {
    std::string s = num.str();
    if (typed) s += " : " + (tc ? tc->str(*typed) : std::string("typed"));
    return s;
}

// ---------------------------------------------------------------------------
// TypeContext

TypeContext::TypeContext(const TypeSystem& ts, std::map<Address, Label> roots) : ts_(&ts), roots_(std::move(roots)) {}

std::optional<Label> TypeContext::root_label(Address a) const {
    auto it = roots_.find(a);
    if (it == roots_.end()) return std::nullopt;
    return it->second;
}

AbstractValue TypeContext::pointer(Label target, bool nullable) const {
    ValueSet g;
    for (std::size_t a = ts_->symbolic().kernel_end; a < kMemorySize; ++a) g.set(a);
    for (std::size_t a = 0; a < ts_->symbolic().kernel_begin; ++a) g.set(a);
    if (nullable) g.set(0);
    return {BitvecAbs::from_gamma(g, false), TypedValue{TypedValue::Role::PointerTo, target, nullable}};
}

AbstractValue TypeContext::typed_load(Label l) const {
    if (auto it = load_cache_.find(l); it != load_cache_.end()) return it->second;
    const auto& env = this->env();
    const auto cons = ts_->constraints(l);
    const std::set<Label> want(cons.begin(), cons.end());
    AbstractValue out = AbstractValue::top();
    if (!want.empty()) {
        std::vector<Label> candidates;
        for (const auto& u : env.supertypes(l)) {
            const auto c = ts_->constraints(u);
            if (std::set<Label>(c.begin(), c.end()) == want) candidates.push_back(u);
        }
        std::vector<Label> maximal;
        for (const auto& u : candidates) {
            const bool top_most =
                std::ranges::none_of(candidates, [&](const Label& v) { return v != u && env.subtype(u, v); });
            if (top_most) maximal.push_back(u);
        }
        const Label u = maximal.size() == 1 ? maximal.front() : l;
        const auto& d = env.def(u.type);
        if (d.kind == TypeDef::Kind::Pointer) {
            out = pointer(Label{d.target, 0}, d.nullable);
        } else {
            out = {BitvecAbs::from_gamma(ts_->interpret(u, nullptr).may, false),
                   TypedValue{TypedValue::Role::ScalarOf, u, false}};
        }
    }
    load_cache_[l] = out;
    return out;
}

std::optional<TypedValue> TypeContext::offset(const TypedValue& p, int delta) const {
    if (p.role != TypedValue::Role::PointerTo || p.nullable) return std::nullopt;
    const int o = static_cast<int>(p.label.offset) + delta;
    if (o < 0 || o >= static_cast<int>(env().label_extent(p.label.type))) return std::nullopt;
    return TypedValue{p.role, Label{p.label.type, static_cast<unsigned>(o)}, false};
}

bool TypeContext::leq(const TypedValue& a, const TypedValue& b) const {
    return a.role == b.role && (!a.nullable || b.nullable) && env().subtype(a.label, b.label);
}

std::optional<TypedValue> TypeContext::join(const TypedValue& a, const TypedValue& b) const {
    if (a == b) return a;
    if (a.role != b.role) return std::nullopt;
    const auto l = env().lub(a.label, b.label);
    if (!l) return std::nullopt;
    if (a.role == TypedValue::Role::PointerTo) return TypedValue{a.role, *l, a.nullable || b.nullable};
    return typed_load(*l).typed;
}

std::string TypeContext::str(const TypedValue& t) const {
    const auto name = env().label_name(t.label);
    if (t.role == TypedValue::Role::ScalarOf) return name;
    return std::string(t.nullable ? "nullable " : "") + "&" + name;
}

bool TypeContext::satisfies(const AbstractValue& v, Label u) const {
    const auto& env = this->env();
    if (v.typed) {
        const auto& t = *v.typed;
        if (t.role == TypedValue::Role::ScalarOf && env.subtype(t.label, u)) return true;
        const auto& d = env.def(u.type);
        if (t.role == TypedValue::Role::PointerTo && d.kind == TypeDef::Kind::Pointer &&
            env.subtype(t.label, Label{d.target, 0}) && (!t.nullable || d.nullable))
            return true;
    }
    auto it = must_cache_.find(u);
    if (it == must_cache_.end()) it = must_cache_.emplace(u, ts_->interpret(u, nullptr).must).first;
    return (v.num.gamma() & ~it->second).none();
}

bool TypeContext::store_ok(Label l, const AbstractValue& v) const {
    if (v.is_bottom()) return true;
    std::set<Label> cons;
    for (const auto& s : env().subtypes(l)) {
        for (const auto& u : ts_->constraints(s)) cons.insert(u);
    }
    return std::ranges::all_of(cons, [&](const Label& u) { return satisfies(v, u); });
}

// ---------------------------------------------------------------------------
// AbsMemory

AbstractValue AbsMemory::get(Address a) const {
    if (frozen_at(a)) return AbstractValue::constant(frozen_->bytes[a]);
    auto it = cells_.find(a);
    return it == cells_.end() ? AbstractValue::top() : it->second;
}

void AbsMemory::set(Address a, AbstractValue v) {
    if (frozen_at(a)) return;
    if (v.is_top()) {
        cells_.erase(a);
    } else {
        cells_[a] = std::move(v);
    }
}

AbstractValue AbsMemory::load(const BitvecAbs& addr, const TypeContext* tc) const {
    if (addr.is_bottom()) return AbstractValue::bottom();
    const auto g = addr.gamma();
    AbstractValue acc = AbstractValue::bottom();
    for (unsigned a = 0; a < kMemorySize; ++a) {
        if (!g[a]) continue;
        const auto at = static_cast<Address>(a);
        AbstractValue v = get(at);
        if (tc && !tracked(at)) {
            if (auto l = tc->root_label(at)) v = tc->typed_load(*l);
        }
        acc = acc.join(v, tc);
        if (acc.is_top()) break;
    }
    return acc;
}

StoreEffects AbsMemory::store(const BitvecAbs& addr, const AbstractValue& v, const TypeContext* tc) {
    StoreEffects fx;
    if (addr.is_bottom() || v.is_bottom()) return fx;
    const auto g = addr.gamma();
    const auto n = g.count();
    for (unsigned a = 0; a < kMemorySize; ++a) {
        if (g[a] && frozen_at(static_cast<Address>(a))) fx.self_modification = true;
    }
    if (n == kMemorySize) {
        fx.wild = true;
        havoc_all();
        return fx;
    }
    if (n == 1) {
        set(*addr.singleton(), v);
        return fx;
    }
    const bool weak = n <= value_options().weak_update_cap;
    for (unsigned a = 0; a < kMemorySize; ++a) {
        if (!g[a]) continue;
        const auto at = static_cast<Address>(a);
        if (weak) {
            set(at, get(at).join(v, tc));
        } else {
            cells_.erase(at);
        }
    }
    return fx;
}

void AbsMemory::havoc_range(const std::vector<std::pair<unsigned, unsigned>>& ranges) {
    for (const auto& [b, e] : ranges) {
        for (auto it = cells_.lower_bound(static_cast<Address>(std::min(b, 255u))); it != cells_.end() && it->first < e;)
            it = it->first >= b ? cells_.erase(it) : std::next(it);
    }
}

bool AbsMemory::leq(const AbsMemory& o, const TypeContext* tc) const {
    return std::ranges::all_of(o.cells_, [&](const auto& kv) { return get(kv.first).leq(kv.second, tc); });
}

AbsMemory AbsMemory::join(const AbsMemory& o, const TypeContext* tc) const {
    AbsMemory r(frozen_);
    for (const auto& [a, v] : cells_) {
        auto it = o.cells_.find(a);
        if (it == o.cells_.end()) continue;
        r.set(a, v.join(it->second, tc));
    }
    return r;
}

AbsMemory AbsMemory::widen(const AbsMemory& next, const TypeContext* tc) const {
    AbsMemory r(frozen_);
    for (const auto& [a, v] : cells_) {
        auto it = next.cells_.find(a);
        if (it == next.cells_.end()) continue;
        r.set(a, v.widen(it->second, tc));
    }
    return r;
}

AbsMemory AbsMemory::meet(const AbsMemory& o) const {
    AbsMemory r = *this;
    for (const auto& [a, v] : o.cells_) {
        auto it = r.cells_.find(a);
        if (it == r.cells_.end()) {
            r.cells_[a] = v;
        } else {
            it->second = it->second.meet(v);
        }
    }
    return r;
}

} // namespace u8k
