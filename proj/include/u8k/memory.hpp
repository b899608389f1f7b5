// Copyright (c) u8k-verifier contributors.
// SPDX-License-Identifier: MIT
#pragma once

// Abstract values (numeric part plus an optional type fact) and the
// byte-level abstract memory of kernel-tracked cells.

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "u8k/shape.hpp"
#include "u8k/value.hpp"

namespace u8k {

// PointerTo(l): addresses a with ℒ(a) ⊑ l (plus 0 when nullable).
// ScalarOf(l): values in ⟦l⟧.
struct TypedValue {
    enum class Role : std::uint8_t { PointerTo, ScalarOf };
    Role role{Role::ScalarOf};
    Label label;
    bool nullable{false};

    bool operator==(const TypedValue&) const = default;
};

class TypeContext;

// γ(v) = γ(num) ∩ γ(typed). The numeric part alone is always sound.
struct AbstractValue {
    BitvecAbs num;
    std::optional<TypedValue> typed;

    static AbstractValue top() { return {}; }
    static AbstractValue bottom() { return {BitvecAbs::bottom(), std::nullopt}; }
    static AbstractValue constant(Byte b) { return {BitvecAbs::constant(b), std::nullopt}; }
    static AbstractValue numeric(BitvecAbs v) { return {std::move(v), std::nullopt}; }

    [[nodiscard]] bool is_top() const { return num.is_top() && !typed; }
    [[nodiscard]] bool is_bottom() const { return num.is_bottom(); }

    [[nodiscard]] bool leq(const AbstractValue& o, const TypeContext* tc) const;
    [[nodiscard]] AbstractValue join(const AbstractValue& o, const TypeContext* tc) const;
    [[nodiscard]] AbstractValue widen(const AbstractValue& next, const TypeContext* tc) const;
    [[nodiscard]] AbstractValue meet(const AbstractValue& o) const;

    bool operator==(const AbstractValue&) const = default;
    [[nodiscard]] std::string str(const TypeContext* tc = nullptr) const;
};

// Type facts of the parameterized analysis: symbolic interpretation of
// labels, the labels of the concretely placed root regions, and the
// typed load/store rules.
class TypeContext {
  public:
    TypeContext(const TypeSystem& ts, std::map<Address, Label> roots);

    [[nodiscard]] const TypeSystem& system() const { return *ts_; }
    [[nodiscard]] const TypeEnv& env() const { return ts_->env(); }
    [[nodiscard]] const std::map<Address, Label>& roots() const { return roots_; }
    [[nodiscard]] std::optional<Label> root_label(Address a) const;

    // Abstraction of a value read from a location labeled l.
    [[nodiscard]] AbstractValue typed_load(Label l) const;
    // Abstraction of a pointer to locations labeled ⊑ target.
    [[nodiscard]] AbstractValue pointer(Label target, bool nullable) const;
    // Whether storing v into a location labeled l keeps memory well-typed.
    [[nodiscard]] bool store_ok(Label l, const AbstractValue& v) const;
    // Pointer arithmetic within the pointee's extent; nullopt leaves the typed world.
    [[nodiscard]] std::optional<TypedValue> offset(const TypedValue& p, int delta) const;

    [[nodiscard]] bool leq(const TypedValue& a, const TypedValue& b) const;
    [[nodiscard]] std::optional<TypedValue> join(const TypedValue& a, const TypedValue& b) const;
    [[nodiscard]] std::string str(const TypedValue& t) const;

  private:
    [[nodiscard]] bool satisfies(const AbstractValue& v, Label constraint) const;

    const TypeSystem* ts_;
    std::map<Address, Label> roots_;
    mutable std::map<Label, AbstractValue> load_cache_;
    mutable std::map<Label, ValueSet> must_cache_;
};

// Bytes that stay constant for the whole analysis (kernel code).
struct FrozenBytes {
    unsigned begin{0};
    unsigned end{0};
    std::array<Byte, kMemorySize> bytes{};

    [[nodiscard]] bool contains(unsigned a) const { return a >= begin && a < end; }
};

struct StoreEffects {
    bool wild{false};          // address unbounded: every cell havocked
    bool self_modification{false};
};

class AbsMemory {
  public:
    AbsMemory() = default;
    explicit AbsMemory(std::shared_ptr<const FrozenBytes> frozen) : frozen_(std::move(frozen)) {}

    [[nodiscard]] const FrozenBytes* frozen() const { return frozen_.get(); }
    [[nodiscard]] bool frozen_at(Address a) const { return frozen_ && frozen_->contains(a); }
    [[nodiscard]] bool tracked(Address a) const { return frozen_at(a) || cells_.contains(a); }
    // Value of one cell (⊤ when untracked).
    [[nodiscard]] AbstractValue get(Address a) const;
    // Sets one tracked cell; ⊤ removes it.
    void set(Address a, AbstractValue v);
    [[nodiscard]] const std::map<Address, AbstractValue>& cells() const { return cells_; }

    // Join of the cells γ(addr) may denote.
    [[nodiscard]] AbstractValue load(const BitvecAbs& addr, const TypeContext* tc = nullptr) const;
    // Strong update on a singleton, weak update up to the cap, range havoc
    // beyond it and total havoc for an unbounded address.
    StoreEffects store(const BitvecAbs& addr, const AbstractValue& v, const TypeContext* tc = nullptr);
    // [begin, end) ranges become untracked.
    void havoc_range(const std::vector<std::pair<unsigned, unsigned>>& ranges);
    void havoc_all() { cells_.clear(); }

    [[nodiscard]] bool leq(const AbsMemory& o, const TypeContext* tc) const;
    [[nodiscard]] AbsMemory join(const AbsMemory& o, const TypeContext* tc) const;
    [[nodiscard]] AbsMemory widen(const AbsMemory& next, const TypeContext* tc) const;
    [[nodiscard]] AbsMemory meet(const AbsMemory& o) const;
    bool operator==(const AbsMemory& o) const { return cells_ == o.cells_; }

  private:
    std::shared_ptr<const FrozenBytes> frozen_;
    std::map<Address, AbstractValue> cells_;
};

} // namespace u8k
