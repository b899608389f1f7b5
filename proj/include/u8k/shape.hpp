// Copyright (c) u8k-verifier contributors.
// SPDX-License-Identifier: MIT
#pragma once

// Type-based weak shape domain: annotated interface types, labels
// (type, offset), subtyping, interpretation of labels as value sets,
// labelings of concrete memory and well-typedness.

#include <array>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "u8k/value.hpp"

namespace u8k {

using TypeId = std::uint16_t;

class AnnotationError : public std::runtime_error {
  public:
    enum class Kind { Parse, UndefinedTypeName, IllFormedPredicate, RecursiveType };
    AnnotationError(Kind kind, int line, int column, const std::string& msg);
    [[nodiscard]] Kind kind() const { return kind_; }
    [[nodiscard]] int line() const { return line_; }
    [[nodiscard]] int column() const { return column_; }

  private:
    Kind kind_;
    int line_;
    int column_;
};

// Predicate / expression tree over `self`, `self.field`, params and constants.
struct Expr {
    enum class Op { Const, Self, Field, Param, Add, Sub, And, Or, Eq, Ne, Lt, Le, Gt, Ge, LAnd };
    Op op{Op::Const};
    Byte value{0};
    std::string name; // field or param name
    std::shared_ptr<const Expr> lhs, rhs;

    [[nodiscard]] std::string str() const;
};
using ExprPtr = std::shared_ptr<const Expr>;

// Param name -> abstract value; unbound params are unconstrained.
using Bindings = std::map<std::string, BitvecAbs>;

struct Field {
    std::string name;
    TypeId type;
    unsigned offset;
};

struct TypeDef {
    enum class Kind { Int8, Word, Pointer, Struct, Array, Refined };
    Kind kind{Kind::Int8};
    std::string name;
    bool named{false};      // introduced by a `type` declaration
    TypeId target{0};       // pointee, element or refined base
    bool nullable{false};   // pointers only
    std::vector<Field> fields;
    std::optional<unsigned> count; // arrays: concrete length
    std::string length_param;      // arrays: symbolic length
    ExprPtr pred;                  // Refined, or a struct `with` clause
};

struct Label {
    TypeId type{0};
    unsigned offset{0};
    auto operator<=>(const Label&) const = default;
};

struct RegionDecl {
    std::string name;
    TypeId type;
    std::optional<Address> address; // concrete root vs symbolic region
};

class TypeEnv {
  public:
    TypeEnv();

    static constexpr TypeId kInt8 = 0;
    static constexpr TypeId kWord = 1;

    [[nodiscard]] const TypeDef& def(TypeId t) const { return types_.at(t); }
    [[nodiscard]] std::size_t type_count() const { return types_.size(); }
    [[nodiscard]] std::optional<TypeId> find(const std::string& name) const;
    [[nodiscard]] TypeId id(const std::string& name) const; // throws if absent
    [[nodiscard]] std::vector<std::string> named_types() const;
    [[nodiscard]] unsigned size_of(TypeId t) const;
    // Number of distinct label offsets of t (symbolic arrays fold onto one element).
    [[nodiscard]] unsigned label_extent(TypeId t) const;

    TypeId pointer_to(TypeId t, bool nullable = false);
    TypeId array_of(TypeId elem, unsigned count);
    TypeId array_of(TypeId elem, const std::string& param);
    TypeId add(TypeDef d);

    // Replaces symbolic array lengths bound in `values` by concrete arrays,
    // reachable from t; returns the instantiated type.
    TypeId instantiate(TypeId t, const std::map<std::string, unsigned>& values);

    [[nodiscard]] const std::vector<RegionDecl>& regions() const { return regions_; }
    [[nodiscard]] const std::set<std::string>& params() const { return params_; }
    [[nodiscard]] std::optional<Address> exitpoint() const { return exitpoint_; }
    // Lines of the annotation file that are not type definitions.
    [[nodiscard]] unsigned extra_annotation_lines() const { return extra_lines_; }

    [[nodiscard]] std::string label_name(Label l) const;
    [[nodiscard]] std::vector<Label> all_labels() const;

    // Direct subtyping edges (sub, super) from containment, refinement and
    // the scalar/pointer ⊑ Word rule.
    [[nodiscard]] std::vector<std::pair<Label, Label>> direct_edges() const;
    // Reflexive-transitive closure.
    [[nodiscard]] bool subtype(Label a, Label b) const;
    [[nodiscard]] std::vector<Label> supertypes(Label l) const; // includes l
    [[nodiscard]] std::vector<Label> subtypes(Label l) const;   // includes l
    // Least common supertype, when unique.
    [[nodiscard]] std::optional<Label> lub(Label a, Label b) const;
    // Transitive reduction of ⊑ restricted to the labels above `roots`.
    [[nodiscard]] std::set<std::pair<Label, Label>> hasse_above(const std::vector<Label>& roots) const;

  private:
    friend TypeEnv parse_annotations(const std::string& text);
    friend class AnnotationParser;

    void invalidate() { closure_.reset(); }
    struct Closure;
    const Closure& closure() const;

    std::vector<TypeDef> types_;
    std::vector<RegionDecl> regions_;
    std::set<std::string> params_;
    std::optional<Address> exitpoint_;
    unsigned extra_lines_{0};
    mutable std::shared_ptr<const Closure> closure_;
};

TypeEnv parse_annotations(const std::string& text);
TypeEnv load_annotations(const std::string& path);

// Concrete labeling of memory plus the parameter values discovered while
// building it.
struct Labeling {
    std::array<std::optional<Label>, kMemorySize> at{};
    std::map<std::string, unsigned> params;
    struct Region {
        std::string name;
        TypeId type;
        Address base;
        unsigned size;
    };
    std::vector<Region> regions;

    [[nodiscard]] bool labeled(Address a) const { return at[a].has_value(); }
};

// Interpretation ⟦l⟧: `may` over-approximates and `must` under-approximates
// the admissible values when params are only known abstractly; both agree
// when every param is bound to a single value.
struct Admissible {
    ValueSet may;
    ValueSet must;
};

// What pointers denote when there is no concrete labeling: any address
// outside the kernel image.
struct SymbolicMemory {
    Address kernel_begin{0};
    std::size_t kernel_end{0};
};

class TypeSystem {
  public:
    TypeSystem(TypeEnv env, Bindings bindings, SymbolicMemory sym);

    [[nodiscard]] const TypeEnv& env() const { return env_; }
    TypeEnv& env() { return env_; }
    [[nodiscard]] const Bindings& bindings() const { return bindings_; }
    [[nodiscard]] const SymbolicMemory& symbolic() const { return sym_; }

    // ⟦l⟧ against a concrete labeling (nullptr: symbolic).
    [[nodiscard]] Admissible interpret(Label l, const Labeling* lab) const;

    // Admissible values that every location whose label is ⊑ l accepts.
    [[nodiscard]] ValueSet store_must(Label l, const Labeling* lab) const;

    // Labels above l that carry a constraint of their own.
    [[nodiscard]] std::vector<Label> constraints(Label l) const;

  private:
    [[nodiscard]] Admissible local(Label u, const Labeling* lab) const;

    TypeEnv env_;
    Bindings bindings_;
    SymbolicMemory sym_;
};

// Predicate evaluation for one candidate `self` value; returns the possible
// truth values as a subset of {0, 1}.
BitvecAbs eval_expr(const Expr& e, const BitvecAbs& self, const Bindings& b,
                    const std::function<std::optional<BitvecAbs>(const std::string&)>& field = {});

// ---------------------------------------------------------------------------
// Base-case machinery over a byte-valued memory view.

using MemoryView = std::function<BitvecAbs(Address)>;

struct TypingViolation {
    Address address;
    Label label;
    std::string value;
    std::string admissible;
    std::string reason;
};

struct LabelingResult {
    Labeling labeling;
    std::vector<TypingViolation> violations; // pointers that could not be followed
};

// Labels the concrete root regions and everything reachable from them by
// pointer fields, binding params from `self = P` predicates on the way.
LabelingResult build_labeling(TypeEnv& env, const MemoryView& mem);

// ∀ labeled a: mem[a] ∈ ⟦ℒ(a)⟧.
std::vector<TypingViolation> check_welltyped(const TypeSystem& ts, const Labeling& lab, const MemoryView& mem);

// Pairs of distinct addresses whose labels are ⊑-incomparable are distinct;
// returns violating pairs (always empty for a functional labeling).
std::vector<std::pair<Address, Address>> check_separation(const TypeEnv& env, const Labeling& lab);

MemoryView concrete_view(const std::array<Byte, kMemorySize>& mem);

} // namespace u8k
