// Copyright (c) u8k-verifier contributors.
// SPDX-License-Identifier: MIT

#include "u8k/shape.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <deque>
#include <fstream>
#include <sstream>

namespace u8k {

AnnotationError::AnnotationError(Kind kind, int line, int column, const std::string& msg)
    : std::runtime_error(std::to_string(line) + ":" + std::to_string(column) + ": " + msg), kind_(kind),
      line_(line), column_(column) {}

std::string Expr::str() const {
    static const std::map<Op, const char*> kSym{{Op::Add, "+"}, {Op::Sub, "-"}, {Op::And, "&"}, {Op::Or, "|"},
                                                {Op::Eq, "=="}, {Op::Ne, "!="}, {Op::Lt, "<"},  {Op::Le, "<="},
                                                {Op::Gt, ">"},  {Op::Ge, ">="}, {Op::LAnd, "&&"}};
    switch (op) {
    case Op::Const: return std::to_string(value);
    case Op::Self: return "self";
    case Op::Field: return "self." + name;
    case Op::Param: return name;
    default: return "(" + lhs->str() + " " + kSym.at(op) + " " + rhs->str() + ")";
    }
}

// ---------------------------------------------------------------------------
// TypeEnv

struct TypeEnv::Closure {
    std::vector<Label> labels;
    std::map<Label, std::size_t> index;
    std::vector<std::vector<bool>> up; // up[i][j]: labels[i] ⊑ labels[j]
};

TypeEnv::TypeEnv() {
    types_.push_back({.kind = TypeDef::Kind::Int8, .name = "Int8"});
    types_.push_back({.kind = TypeDef::Kind::Word, .name = "Word"});
}

std::optional<TypeId> TypeEnv::find(const std::string& name) const {
    for (std::size_t i = 0; i < types_.size(); ++i) {
        if (types_[i].name == name) return static_cast<TypeId>(i);
    }
    return std::nullopt;
}

TypeId TypeEnv::id(const std::string& name) const {
    if (auto t = find(name)) return *t;
    throw std::out_of_range("unknown type " + name);
}

std::vector<std::string> TypeEnv::named_types() const {
    std::vector<std::string> out;
    for (const auto& t : types_) {
        if (t.named) out.push_back(t.name);
    }
    return out;
}

unsigned TypeEnv::size_of(TypeId t) const {
    const auto& d = def(t);
    switch (d.kind) {
    case TypeDef::Kind::Int8:
    case TypeDef::Kind::Word:
    case TypeDef::Kind::Pointer: return 1;
    case TypeDef::Kind::Refined: return size_of(d.target);
    case TypeDef::Kind::Struct: {
        unsigned n = 0;
        for (const auto& f : d.fields) n += size_of(f.type);
        return n;
    }
    case TypeDef::Kind::Array: return size_of(d.target) * d.count.value_or(1);
    }
    return 1;
}

unsigned TypeEnv::label_extent(TypeId t) const { return size_of(t); }

TypeId TypeEnv::add(TypeDef d) {
    types_.push_back(std::move(d));
    invalidate();
    return static_cast<TypeId>(types_.size() - 1);
}

TypeId TypeEnv::pointer_to(TypeId t, bool nullable) {
    const std::string name = (nullable ? "nullable " : "") + def(t).name + "*";
    if (auto id = find(name)) return *id;
    return add({.kind = TypeDef::Kind::Pointer, .name = name, .target = t, .nullable = nullable});
}

TypeId TypeEnv::array_of(TypeId elem, unsigned count) {
    const std::string name = def(elem).name + "[" + std::to_string(count) + "]";
    if (auto id = find(name)) return *id;
    return add({.kind = TypeDef::Kind::Array, .name = name, .target = elem, .count = count});
}

TypeId TypeEnv::array_of(TypeId elem, const std::string& param) {
    const std::string name = def(elem).name + "[" + param + "]";
    if (auto id = find(name)) return *id;
    return add({.kind = TypeDef::Kind::Array, .name = name, .target = elem, .length_param = param});
}

TypeId TypeEnv::instantiate(TypeId t, const std::map<std::string, unsigned>& values) {
    const TypeDef d = def(t);
    if (d.kind == TypeDef::Kind::Array && !d.count) {
        auto it = values.find(d.length_param);
        if (it == values.end()) return t;
        return array_of(instantiate(d.target, values), it->second);
    }
    if (d.kind == TypeDef::Kind::Array) {
        const TypeId e = instantiate(d.target, values);
        return e == d.target ? t : array_of(e, *d.count);
    }
    return t;
}

std::string TypeEnv::label_name(Label l) const {
    const auto& d = def(l.type);
    if (d.kind == TypeDef::Kind::Pointer || d.kind == TypeDef::Kind::Int8 || d.kind == TypeDef::Kind::Word ||
        (d.kind == TypeDef::Kind::Refined && size_of(l.type) == 1)) {
        return d.name + (l.offset == 0 ? "" : "_" + std::to_string(l.offset));
    }
    return d.name + "_" + std::to_string(l.offset);
}

std::vector<Label> TypeEnv::all_labels() const {
    std::vector<Label> out;
    for (std::size_t t = 0; t < types_.size(); ++t) {
        const unsigned n = label_extent(static_cast<TypeId>(t));
        for (unsigned k = 0; k < n; ++k) out.push_back({static_cast<TypeId>(t), k});
    }
    return out;
}

std::vector<std::pair<Label, Label>> TypeEnv::direct_edges() const {
    std::vector<std::pair<Label, Label>> e;
    for (std::size_t i = 0; i < types_.size(); ++i) {
        const auto t = static_cast<TypeId>(i);
        const auto& d = types_[i];
        switch (d.kind) {
        case TypeDef::Kind::Int8:
        case TypeDef::Kind::Pointer: e.push_back({{t, 0}, {kWord, 0}}); break;
        case TypeDef::Kind::Word: break;
        case TypeDef::Kind::Refined:
            for (unsigned k = 0; k < size_of(d.target); ++k) e.push_back({{t, k}, {d.target, k}});
            break;
        case TypeDef::Kind::Struct:
            for (const auto& f : d.fields) {
                for (unsigned k = 0; k < size_of(f.type); ++k) e.push_back({{t, f.offset + k}, {f.type, k}});
            }
            break;
        case TypeDef::Kind::Array: {
            const unsigned se = size_of(d.target);
            const unsigned n = d.count.value_or(1);
            for (unsigned j = 0; j < n; ++j) {
                for (unsigned k = 0; k < se; ++k) e.push_back({{t, j * se + k}, {d.target, k}});
            }
            break;
        }
        }
    }
    return e;
}

const TypeEnv::Closure& TypeEnv::closure() const {
    if (closure_) return *closure_;
    auto c = std::make_shared<Closure>();
    c->labels = all_labels();
    for (std::size_t i = 0; i < c->labels.size(); ++i) c->index[c->labels[i]] = i;
    const std::size_t n = c->labels.size();
    std::vector<std::vector<std::size_t>> succ(n);
    for (const auto& [a, b] : direct_edges()) succ[c->index.at(a)].push_back(c->index.at(b));
    c->up.assign(n, std::vector<bool>(n, false));
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<std::size_t> stack{i};
        while (!stack.empty()) {
            const auto x = stack.back();
            stack.pop_back();
            if (c->up[i][x]) continue;
            c->up[i][x] = true;
            for (auto y : succ[x]) stack.push_back(y);
        }
    }
    closure_ = c;
    return *closure_;
}

bool TypeEnv::subtype(Label a, Label b) const {
    const auto& c = closure();
    auto ia = c.index.find(a);
    auto ib = c.index.find(b);
    if (ia == c.index.end() || ib == c.index.end()) return a == b;
    return c.up[ia->second][ib->second];
}

std::vector<Label> TypeEnv::supertypes(Label l) const {
    const auto& c = closure();
    std::vector<Label> out;
    auto it = c.index.find(l);
    if (it == c.index.end()) return {l};
    for (std::size_t j = 0; j < c.labels.size(); ++j) {
        if (c.up[it->second][j]) out.push_back(c.labels[j]);
    }
    return out;
}

std::vector<Label> TypeEnv::subtypes(Label l) const {
    const auto& c = closure();
    std::vector<Label> out;
    auto it = c.index.find(l);
    if (it == c.index.end()) return {l};
    for (std::size_t i = 0; i < c.labels.size(); ++i) {
        if (c.up[i][it->second]) out.push_back(c.labels[i]);
    }
    return out;
}

std::optional<Label> TypeEnv::lub(Label a, Label b) const {
    if (subtype(a, b)) return b;
    if (subtype(b, a)) return a;
    std::vector<Label> common;
    for (const auto& u : supertypes(a)) {
        if (subtype(b, u)) common.push_back(u);
    }
    std::vector<Label> minimal;
    for (const auto& u : common) {
        const bool is_min = std::ranges::none_of(common, [&](const Label& v) { return v != u && subtype(v, u); });
        if (is_min) minimal.push_back(u);
    }
    if (minimal.size() == 1) return minimal.front();
    return std::nullopt;
}

std::set<std::pair<Label, Label>> TypeEnv::hasse_above(const std::vector<Label>& roots) const {
    std::set<Label> universe;
    for (const auto& r : roots) {
        for (const auto& u : supertypes(r)) universe.insert(u);
    }
    std::set<std::pair<Label, Label>> edges;
    for (const auto& x : universe) {
        for (const auto& y : universe) {
            if (x == y || !subtype(x, y)) continue;
            const bool covered = std::ranges::any_of(universe, [&](const Label& z) {
                return z != x && z != y && subtype(x, z) && subtype(z, y);
            });
            if (!covered) edges.insert({x, y});
        }
    }
    return edges;
}

// ---------------------------------------------------------------------------
// Annotation parser

namespace {

struct Token {
    enum class Kind { Ident, Number, Punct, End } kind{Kind::End};
    std::string text;
    unsigned value{0};
    int line{0};
    int column{0};
};

std::vector<Token> tokenize(const std::string& src) {
    std::vector<Token> out;
    int line = 1;
    int col = 1;
    std::size_t i = 0;
    auto advance = [&](std::size_t n) {
        for (std::size_t k = 0; k < n; ++k) {
            if (src[i] == '\n') {
                ++line;
                col = 1;
            } else if ((static_cast<unsigned char>(src[i]) & 0xC0) != 0x80) {
                ++col;
            }
            ++i;
        }
    };
    while (i < src.size()) {
        const char c = src[i];
        if (std::isspace(static_cast<unsigned char>(c))) {
            advance(1);
            continue;
        }
        if (src.compare(i, 2, "//") == 0) {
            while (i < src.size() && src[i] != '\n') advance(1);
            continue;
        }
        Token t{.line = line, .column = col};
        if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
            std::size_t j = i;
            while (j < src.size() && (std::isalnum(static_cast<unsigned char>(src[j])) || src[j] == '_')) ++j;
            t.kind = Token::Kind::Ident;
            t.text = src.substr(i, j - i);
            advance(j - i);
        } else if (std::isdigit(static_cast<unsigned char>(c))) {
            std::size_t j = i;
            int base = 10;
            if (src.compare(i, 2, "0x") == 0 || src.compare(i, 2, "0X") == 0) {
                base = 16;
                j += 2;
            }
            const std::size_t start = j;
            while (j < src.size() && std::isxdigit(static_cast<unsigned char>(src[j]))) ++j;
            t.kind = Token::Kind::Number;
            t.text = src.substr(i, j - i);
            auto [p, ec] = std::from_chars(src.data() + start, src.data() + j, t.value, base);
            if (ec != std::errc() || t.value > 0xFF)
                throw AnnotationError(AnnotationError::Kind::Parse, line, col, "bad number '" + t.text + "'");
            advance(j - i);
        } else {
            static const std::vector<std::pair<std::string, std::string>> kMulti{
                {"\xE2\x89\xA5", ">="}, {"\xE2\x89\xA4", "<="}, {"==", "=="}, {"!=", "!="},
                {"<=", "<="},           {">=", ">="},           {"&&", "&&"}};
            bool matched = false;
            for (const auto& [spelling, canon] : kMulti) {
                if (src.compare(i, spelling.size(), spelling) == 0) {
                    t.kind = Token::Kind::Punct;
                    t.text = canon;
                    advance(spelling.size());
                    matched = true;
                    break;
                }
            }
            if (!matched) {
                if (std::string("{}[]()*;=<>&|+-.:@,").find(c) == std::string::npos)
                    throw AnnotationError(AnnotationError::Kind::Parse, line, col, std::string("unexpected '") + c + "'");
                t.kind = Token::Kind::Punct;
                t.text = std::string(1, c);
                advance(1);
            }
        }
        out.push_back(t);
    }
    out.push_back({.kind = Token::Kind::End, .text = "<end>", .line = line, .column = col});
    return out;
}

} // namespace

class AnnotationParser {
  public:
    AnnotationParser(TypeEnv& env, std::vector<Token> toks) : env_(env), toks_(std::move(toks)) {}

    void run() {
        declare_named_types();
        std::set<int> annotation_lines;
        while (peek().kind != Token::Kind::End) {
            const Token& t = peek();
            if (is("type")) {
                type_decl(annotation_lines);
            } else if (is("param")) {
                annotation_lines.insert(t.line);
                next();
                env_.params_.insert(ident());
            } else if (is("region")) {
                annotation_lines.insert(t.line);
                next();
                RegionDecl r;
                r.name = ident();
                expect(":");
                r.type = type_expr("<" + r.name + ">");
                if (accept("@")) r.address = static_cast<Address>(number());
                env_.regions_.push_back(r);
            } else if (is("exitpoint")) {
                annotation_lines.insert(t.line);
                next();
                env_.exitpoint_ = static_cast<Address>(number());
            } else {
                fail(AnnotationError::Kind::Parse, t, "expected a declaration, got '" + t.text + "'");
            }
            accept(";");
        }
        env_.extra_lines_ = static_cast<unsigned>(annotation_lines.size());
        check_recursion();
        layout_structs();
        check_predicates();
    }

  private:
    void declare_named_types() {
        for (std::size_t i = 0; i + 2 < toks_.size(); ++i) {
            if (toks_[i].kind == Token::Kind::Ident && toks_[i].text == "type" &&
                toks_[i + 1].kind == Token::Kind::Ident && toks_[i + 2].text == "=") {
                const auto& name = toks_[i + 1].text;
                if (env_.find(name)) fail(AnnotationError::Kind::Parse, toks_[i + 1], "duplicate type '" + name + "'");
                // Placeholder, filled in when the definition is parsed.
                env_.add({.kind = TypeDef::Kind::Int8, .name = name, .named = true});
            }
        }
    }

    void type_decl(std::set<int>& annotation_lines) {
        next();
        const std::string name = ident();
        expect("=");
        const TypeId self = env_.id(name);
        TypeDef d;
        if (is("struct")) {
            d = struct_body(name);
        } else {
            d.kind = TypeDef::Kind::Refined;
            d.target = type_expr("<" + name + ">");
        }
        if (accept("with")) {
            annotation_lines.insert(prev().line);
            d.pred = predicate();
        }
        for (int l : symbolic_lines_) annotation_lines.insert(l);
        symbolic_lines_.clear();
        d.name = name;
        d.named = true;
        env_.types_[self] = d;
        env_.invalidate();
    }

    TypeDef struct_body(const std::string& owner) {
        next(); // struct
        expect("{");
        TypeDef d{.kind = TypeDef::Kind::Struct};
        while (!accept("}")) {
            std::string fname;
            const TypeId ft = type_expr_for_field(owner, fname);
            d.fields.push_back({fname, ft, 0}); // offsets set by layout_structs
            expect(";");
        }
        return d;
    }

    // Fields are written `T name;`; the name is needed for anonymous types.
    TypeId type_expr_for_field(const std::string& owner, std::string& fname) {
        // Look ahead for the field name: the identifier right before ';'.
        std::size_t j = pos_;
        while (toks_[j].text != ";" && toks_[j].kind != Token::Kind::End) ++j;
        if (j == pos_ || toks_[j - 1].kind != Token::Kind::Ident) fail(AnnotationError::Kind::Parse, peek(), "expected a field");
        fname = toks_[j - 1].text;
        const TypeId t = type_expr("<" + owner + "." + fname + ">");
        const std::string got = ident();
        if (got != fname) fail(AnnotationError::Kind::Parse, prev(), "expected field name");
        return t;
    }

    TypeId type_expr(const std::string& hint) {
        bool nullable = false;
        if (accept("nullable")) {
            nullable = true;
            symbolic_lines_.insert(prev().line);
        }
        TypeId t = primary_type(hint);
        for (;;) {
            if (accept("*")) {
                t = env_.pointer_to(t);
            } else if (accept("[")) {
                const Token& len = peek();
                if (len.kind == Token::Kind::Number) {
                    t = env_.array_of(t, number());
                } else {
                    symbolic_lines_.insert(len.line);
                    const std::string p = ident();
                    if (p != "PRIVILEGED") env_.params_.insert(p);
                    t = env_.array_of(t, p);
                }
                expect("]");
            } else {
                break;
            }
        }
        if (nullable) {
            if (env_.def(t).kind != TypeDef::Kind::Pointer)
                fail(AnnotationError::Kind::Parse, prev(), "nullable applies to pointer types only");
            t = env_.pointer_to(env_.def(t).target, true);
        }
        return t;
    }

    TypeId primary_type(const std::string& hint) {
        if (is("struct")) {
            TypeDef d = struct_body(hint);
            d.name = hint;
            return env_.add(d);
        }
        if (accept("(")) {
            const TypeId base = type_expr(hint);
            if (accept("with")) {
                symbolic_lines_.insert(prev().line);
                auto pred = predicate();
                expect(")");
                return env_.add({.kind = TypeDef::Kind::Refined, .name = hint, .target = base, .pred = pred});
            }
            expect(")");
            return base;
        }
        const Token tok = peek();
        const std::string name = ident();
        if (auto t = env_.find(name)) return *t;
        fail(AnnotationError::Kind::UndefinedTypeName, tok, "undefined type name '" + name + "'");
    }

    // pred := cmp ('&&' cmp)*
    ExprPtr predicate() {
        auto e = comparison();
        while (accept("&&")) e = binary(Expr::Op::LAnd, e, comparison());
        return e;
    }

    ExprPtr comparison() {
        auto e = arith();
        static const std::map<std::string, Expr::Op> kCmp{{"==", Expr::Op::Eq}, {"=", Expr::Op::Eq},
                                                          {"!=", Expr::Op::Ne}, {"<", Expr::Op::Lt},
                                                          {"<=", Expr::Op::Le}, {">", Expr::Op::Gt},
                                                          {">=", Expr::Op::Ge}};
        if (peek().kind == Token::Kind::Punct) {
            if (auto it = kCmp.find(peek().text); it != kCmp.end()) {
                next();
                e = binary(it->second, e, arith());
            }
        }
        return e;
    }

    ExprPtr arith() {
        auto e = atom();
        static const std::map<std::string, Expr::Op> kOps{
            {"+", Expr::Op::Add}, {"-", Expr::Op::Sub}, {"&", Expr::Op::And}, {"|", Expr::Op::Or}};
        while (peek().kind == Token::Kind::Punct && kOps.contains(peek().text)) {
            const auto op = kOps.at(next().text);
            e = binary(op, e, atom());
        }
        return e;
    }

    ExprPtr atom() {
        const Token t = peek();
        if (accept("(")) {
            auto e = predicate();
            expect(")");
            return e;
        }
        if (t.kind == Token::Kind::Number) {
            next();
            return std::make_shared<Expr>(Expr{.op = Expr::Op::Const, .value = static_cast<Byte>(t.value)});
        }
        if (t.kind == Token::Kind::Ident) {
            next();
            if (t.text == "self") {
                if (accept(".")) return std::make_shared<Expr>(Expr{.op = Expr::Op::Field, .name = ident()});
                return std::make_shared<Expr>(Expr{.op = Expr::Op::Self});
            }
            if (t.text == "PRIVILEGED") return std::make_shared<Expr>(Expr{.op = Expr::Op::Const, .value = kPrivileged});
            env_.params_.insert(t.text);
            return std::make_shared<Expr>(Expr{.op = Expr::Op::Param, .name = t.text});
        }
        fail(AnnotationError::Kind::IllFormedPredicate, t, "unexpected '" + t.text + "' in predicate");
    }

    static ExprPtr binary(Expr::Op op, ExprPtr l, ExprPtr r) {
        return std::make_shared<Expr>(Expr{.op = op, .lhs = std::move(l), .rhs = std::move(r)});
    }

    // Field offsets are computed once every named type is known.
    void layout_structs() {
        for (std::size_t i = 0; i < env_.types_.size(); ++i) {
            auto& d = env_.types_[i];
            if (d.kind != TypeDef::Kind::Struct) continue;
            unsigned off = 0;
            for (auto& f : d.fields) {
                f.offset = off;
                off += env_.size_of(f.type);
            }
        }
        env_.invalidate();
    }

    static void collect_fields(const Expr& e, std::set<std::string>& fields, bool& self) {
        if (e.op == Expr::Op::Field) fields.insert(e.name);
        if (e.op == Expr::Op::Self) self = true;
        if (e.lhs) collect_fields(*e.lhs, fields, self);
        if (e.rhs) collect_fields(*e.rhs, fields, self);
    }

    static void conjuncts(const ExprPtr& e, std::vector<ExprPtr>& out) {
        if (e->op == Expr::Op::LAnd) {
            conjuncts(e->lhs, out);
            conjuncts(e->rhs, out);
        } else {
            out.push_back(e);
        }
    }

    void check_predicates() {
        const Token at = toks_.back();
        for (const auto& d : env_.types_) {
            if (!d.pred) continue;
            std::vector<ExprPtr> parts;
            conjuncts(d.pred, parts);
            const TypeDef* s = &d;
            while (s->kind == TypeDef::Kind::Refined) s = &env_.def(s->target);
            for (const auto& c : parts) {
                std::set<std::string> fields;
                bool self = false;
                collect_fields(*c, fields, self);
                if (s->kind == TypeDef::Kind::Struct) {
                    if (self) fail(AnnotationError::Kind::IllFormedPredicate, at, d.name + ": bare self on a struct");
                    if (fields.size() != 1)
                        fail(AnnotationError::Kind::IllFormedPredicate, at,
                             d.name + ": each conjunct must name exactly one field");
                    const auto& fname = *fields.begin();
                    auto it = std::ranges::find_if(s->fields, [&](const Field& f) { return f.name == fname; });
                    if (it == s->fields.end() || env_.size_of(it->type) != 1 ||
                        env_.def(it->type).kind == TypeDef::Kind::Struct)
                        fail(AnnotationError::Kind::IllFormedPredicate, at, d.name + ": no scalar field '" + fname + "'");
                } else {
                    if (!fields.empty())
                        fail(AnnotationError::Kind::IllFormedPredicate, at, d.name + ": field access on a scalar");
                }
            }
        }
    }

    void check_recursion() {
        // By-value containment must be acyclic.
        const std::size_t n = env_.types_.size();
        std::vector<int> state(n, 0);
        std::function<void(std::size_t)> visit = [&](std::size_t t) {
            if (state[t] == 2) return;
            if (state[t] == 1)
                fail(AnnotationError::Kind::RecursiveType, toks_.back(), "type '" + env_.types_[t].name + "' contains itself");
            state[t] = 1;
            const auto& d = env_.types_[t];
            if (d.kind == TypeDef::Kind::Struct) {
                for (const auto& f : d.fields) visit(f.type);
            } else if (d.kind == TypeDef::Kind::Array || d.kind == TypeDef::Kind::Refined) {
                visit(d.target);
            }
            state[t] = 2;
        };
        for (std::size_t t = 0; t < n; ++t) visit(t);
    }

    const Token& peek() const { return toks_[pos_]; }
    const Token& prev() const { return toks_[pos_ - 1]; }
    const Token& next() { return toks_[pos_++]; }
    bool is(const std::string& s) const { return peek().text == s && peek().kind != Token::Kind::End; }
    bool accept(const std::string& s) {
        if (!is(s)) return false;
        ++pos_;
        return true;
    }
    void expect(const std::string& s) {
        if (!accept(s)) fail(AnnotationError::Kind::Parse, peek(), "expected '" + s + "', got '" + peek().text + "'");
    }
    std::string ident() {
        if (peek().kind != Token::Kind::Ident) fail(AnnotationError::Kind::Parse, peek(), "expected a name, got '" + peek().text + "'");
        return next().text;
    }
    unsigned number() {
        if (peek().kind != Token::Kind::Number) fail(AnnotationError::Kind::Parse, peek(), "expected a number");
        return next().value;
    }
    [[noreturn]] static void fail(AnnotationError::Kind k, const Token& t, const std::string& msg) {
        throw AnnotationError(k, t.line, t.column, msg);
    }

    TypeEnv& env_;
    std::vector<Token> toks_;
    std::size_t pos_{0};
    std::set<int> symbolic_lines_;
};

TypeEnv parse_annotations(const std::string& text) {
    TypeEnv env;
    AnnotationParser p(env, tokenize(text));
    p.run();
    return env;
}

TypeEnv load_annotations(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_annotations(buf.str());
}

// ---------------------------------------------------------------------------
// Predicate evaluation

namespace {

BitvecAbs truth(bool can_true, bool can_false) {
    if (can_true && can_false) return BitvecAbs::from_values({0, 1});
    if (can_true) return BitvecAbs::constant(1);
    if (can_false) return BitvecAbs::constant(0);
    return BitvecAbs::bottom();
}

} // namespace

BitvecAbs eval_expr(const Expr& e, const BitvecAbs& self, const Bindings& b,
                    const std::function<std::optional<BitvecAbs>(const std::string&)>& field) {
    auto sub = [&](const ExprPtr& x) { return eval_expr(*x, self, b, field); };
    switch (e.op) {
    case Expr::Op::Const: return BitvecAbs::constant(e.value);
    case Expr::Op::Self: return self;
    case Expr::Op::Field: {
        if (field) {
            if (auto v = field(e.name)) return *v;
        }
        return BitvecAbs::top();
    }
    case Expr::Op::Param: {
        auto it = b.find(e.name);
        return it == b.end() ? BitvecAbs::top() : it->second;
    }
    case Expr::Op::Add: return transfer_alu(Opcode::Add, sub(e.lhs), sub(e.rhs)).value;
    case Expr::Op::Sub: return transfer_alu(Opcode::Sub, sub(e.lhs), sub(e.rhs)).value;
    case Expr::Op::And: return transfer_alu(Opcode::And, sub(e.lhs), sub(e.rhs)).value;
    case Expr::Op::Or: return transfer_alu(Opcode::Or, sub(e.lhs), sub(e.rhs)).value;
    case Expr::Op::LAnd: {
        const auto l = sub(e.lhs);
        const auto r = sub(e.rhs);
        return truth(l.contains(1) && r.contains(1), l.contains(0) || r.contains(0));
    }
    default: break;
    }
    const auto l = sub(e.lhs);
    const auto r = sub(e.rhs);
    if (l.is_bottom() || r.is_bottom()) return BitvecAbs::bottom();
    const auto gl = l.gamma();
    const auto gr = r.gamma();
    const bool can_eq = (gl & gr).any();
    const bool must_eq = l.singleton() && r.singleton() && *l.singleton() == *r.singleton();
    const unsigned lmin = l.umin(), lmax = l.umax(), rmin = r.umin(), rmax = r.umax();
    switch (e.op) {
    case Expr::Op::Eq: return truth(can_eq, !must_eq);
    case Expr::Op::Ne: return truth(!must_eq, can_eq);
    case Expr::Op::Lt: return truth(lmin < rmax, lmax >= rmin);
    case Expr::Op::Le: return truth(lmin <= rmax, lmax > rmin);
    case Expr::Op::Gt: return truth(lmax > rmin, lmin <= rmax);
    case Expr::Op::Ge: return truth(lmax >= rmin, lmin < rmax);
    default: return BitvecAbs::top();
    }
}

// ---------------------------------------------------------------------------
// TypeSystem

TypeSystem::TypeSystem(TypeEnv env, Bindings bindings, SymbolicMemory sym)
    : env_(std::move(env)), bindings_(std::move(bindings)), sym_(sym) {}

namespace {

// The struct underlying a (possibly refined) type.
const TypeDef* underlying_struct(const TypeEnv& env, TypeId t) {
    const TypeDef* d = &env.def(t);
    while (d->kind == TypeDef::Kind::Refined) d = &env.def(d->target);
    return d->kind == TypeDef::Kind::Struct ? d : nullptr;
}

void split_conjuncts(const ExprPtr& e, std::vector<ExprPtr>& out) {
    if (e->op == Expr::Op::LAnd) {
        split_conjuncts(e->lhs, out);
        split_conjuncts(e->rhs, out);
    } else {
        out.push_back(e);
    }
}

bool mentions_field(const Expr& e, const std::string& f) {
    if (e.op == Expr::Op::Field && e.name == f) return true;
    return (e.lhs && mentions_field(*e.lhs, f)) || (e.rhs && mentions_field(*e.rhs, f));
}

// The predicate conjuncts of u's type that constrain the byte at u's offset.
std::vector<ExprPtr> local_predicates(const TypeEnv& env, Label u) {
    const auto& d = env.def(u.type);
    if (!d.pred) return {};
    std::vector<ExprPtr> parts;
    split_conjuncts(d.pred, parts);
    const TypeDef* s = underlying_struct(env, u.type);
    if (!s) return env.size_of(u.type) == 1 ? parts : std::vector<ExprPtr>{};
    std::vector<ExprPtr> out;
    for (const auto& f : s->fields) {
        if (f.offset != u.offset) continue;
        for (const auto& c : parts) {
            if (mentions_field(*c, f.name)) out.push_back(c);
        }
    }
    return out;
}

ValueSet all_values() { return ValueSet{}.set(); }

} // namespace

std::vector<Label> TypeSystem::constraints(Label l) const {
    std::vector<Label> out;
    for (const auto& u : env_.supertypes(l)) {
        const auto& d = env_.def(u.type);
        if (d.kind == TypeDef::Kind::Pointer || !local_predicates(env_, u).empty()) out.push_back(u);
    }
    return out;
}

Admissible TypeSystem::local(Label u, const Labeling* lab) const {
    const auto& d = env_.def(u.type);
    if (d.kind == TypeDef::Kind::Pointer) {
        ValueSet s;
        if (lab) {
            // A symbolic-length target denotes its instance under the labeling's params.
            TypeId target = d.target;
            const auto& td = env_.def(target);
            if (td.kind == TypeDef::Kind::Array && !td.count) {
                if (auto it = lab->params.find(td.length_param); it != lab->params.end()) {
                    const auto inst = env_.find(env_.def(td.target).name + "[" + std::to_string(it->second) + "]");
                    if (inst) target = *inst;
                }
            }
            for (unsigned a = 0; a < kMemorySize; ++a) {
                if (lab->at[a] && env_.subtype(*lab->at[a], Label{target, 0})) s.set(a);
            }
            if (d.nullable) s.set(0);
            return {s, s};
        }
        ValueSet may = all_values();
        for (std::size_t a = sym_.kernel_begin; a < sym_.kernel_end; ++a) may.reset(a);
        ValueSet must;
        if (d.nullable) {
            may.set(0);
            must.set(0);
        }
        return {may, must};
    }
    Admissible r{all_values(), all_values()};
    const auto preds = local_predicates(env_, u);
    if (preds.empty()) return r;
    const TypeDef* s = underlying_struct(env_, u.type);
    std::string fname;
    if (s) {
        for (const auto& f : s->fields) {
            if (f.offset == u.offset) fname = f.name;
        }
    }
    for (unsigned x = 0; x < kMemorySize; ++x) {
        const auto self = BitvecAbs::constant(static_cast<Byte>(x));
        auto field = [&](const std::string& n) -> std::optional<BitvecAbs> {
            if (n == fname) return self;
            return std::nullopt;
        };
        for (const auto& p : preds) {
            const auto t = eval_expr(*p, self, bindings_, field);
            if (!t.contains(1)) r.may.reset(x);
            if (t.contains(0) || !t.contains(1)) r.must.reset(x);
        }
    }
    return r;
}

Admissible TypeSystem::interpret(Label l, const Labeling* lab) const {
    Admissible r{all_values(), all_values()};
    for (const auto& u : env_.supertypes(l)) {
        const auto a = local(u, lab);
        r.may &= a.may;
        r.must &= a.must;
    }
    return r;
}

ValueSet TypeSystem::store_must(Label l, const Labeling* lab) const {
    ValueSet m = all_values();
    for (const auto& s : env_.subtypes(l)) m &= interpret(s, lab).must;
    return m;
}

// ---------------------------------------------------------------------------
// Labeling and base-case checks

MemoryView concrete_view(const std::array<Byte, kMemorySize>& mem) {
    return [&mem](Address a) { return BitvecAbs::constant(mem[a]); };
}

namespace {

std::string describe(const ValueSet& s) {
    if (s.none()) return "{}";
    if (s.all()) return "any";
    return BitvecAbs::from_gamma(s, s.count() <= 32).str();
}

} // namespace

LabelingResult build_labeling(TypeEnv& env, const MemoryView& mem) {
    LabelingResult out;
    auto& lab = out.labeling;
    struct Pending {
        std::string name;
        TypeId type;
        Address base;
        std::optional<Address> from;
    };
    std::deque<Pending> queue;
    for (const auto& r : env.regions()) {
        if (r.address) queue.push_back({r.name, r.type, *r.address, std::nullopt});
    }
    auto violation = [&](Address a, const std::string& why) {
        out.violations.push_back({.address = a, .label = lab.at[a].value_or(Label{}), .value = mem(a).str(),
                                  .admissible = "", .reason = why});
    };

    while (!queue.empty()) {
        auto p = queue.front();
        queue.pop_front();
        const TypeId t = env.instantiate(p.type, lab.params);
        const auto& d = env.def(t);
        if (d.kind == TypeDef::Kind::Array && !d.count) {
            if (p.from) violation(*p.from, "array length '" + d.length_param + "' is unbound");
            continue;
        }
        const unsigned size = env.size_of(t);
        if (p.base + size > kMemorySize) {
            if (p.from) violation(*p.from, "region does not fit in memory");
            continue;
        }
        bool free = true;
        for (unsigned k = 0; k < size; ++k) free = free && !lab.at[p.base + k];
        if (!free) {
            if (!p.from) violation(p.base, "root region overlaps another region");
            continue; // the pointer's admissibility is judged by check_welltyped
        }
        for (unsigned k = 0; k < size; ++k) lab.at[p.base + k] = Label{t, k};
        lab.regions.push_back({p.name, t, p.base, size});

        // Bind params from `self = P` constraints first: array lengths of
        // pointer targets in this region may depend on them.
        for (unsigned k = 0; k < size; ++k) {
            const Address a = static_cast<Address>(p.base + k);
            for (const auto& u : env.supertypes(*lab.at[a])) {
                for (const auto& c : local_predicates(env, u)) {
                    if (c->op != Expr::Op::Eq) continue;
                    const bool lhs_self = c->lhs->op == Expr::Op::Self || c->lhs->op == Expr::Op::Field;
                    if (!lhs_self || c->rhs->op != Expr::Op::Param || lab.params.contains(c->rhs->name)) continue;
                    if (auto v = mem(a).singleton()) lab.params[c->rhs->name] = *v;
                }
            }
        }
        for (unsigned k = 0; k < size; ++k) {
            const Address a = static_cast<Address>(p.base + k);
            for (const auto& u : env.supertypes(*lab.at[a])) {
                const auto& ud = env.def(u.type);
                if (ud.kind != TypeDef::Kind::Pointer) continue;
                const auto v = mem(a).singleton();
                if (!v) {
                    violation(a, "pointer value is not a single address");
                    break;
                }
                if (*v == 0) break;
                queue.push_back({env.def(ud.target).name + "@" + std::to_string(*v), ud.target, *v, a});
                break;
            }
        }
    }
    return out;
}

std::vector<TypingViolation> check_welltyped(const TypeSystem& ts, const Labeling& lab, const MemoryView& mem) {
    std::vector<TypingViolation> out;
    for (unsigned a = 0; a < kMemorySize; ++a) {
        if (!lab.at[a]) continue;
        const auto adm = ts.interpret(*lab.at[a], &lab);
        const auto v = mem(static_cast<Address>(a));
        if ((v.gamma() & ~adm.must).any()) {
            out.push_back({.address = static_cast<Address>(a), .label = *lab.at[a], .value = v.str(),
                           .admissible = describe(adm.must),
                           .reason = ts.env().label_name(*lab.at[a]) + " does not admit " + v.str()});
        }
    }
    return out;
}

std::vector<std::pair<Address, Address>> check_separation(const TypeEnv& env, const Labeling& lab) {
    std::vector<std::pair<Address, Address>> out;
    for (unsigned a = 0; a < kMemorySize; ++a) {
        if (!lab.at[a]) continue;
        for (unsigned b = 0; b < kMemorySize; ++b) {
            if (!lab.at[b]) continue;
            const bool related = env.subtype(*lab.at[a], *lab.at[b]) || env.subtype(*lab.at[b], *lab.at[a]);
            if (!related && a == b) out.push_back({static_cast<Address>(a), static_cast<Address>(b)});
        }
    }
    return out;
}

} // namespace u8k
