#pragma once

#include <algorithm>
#include <cctype>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "scenekg/algebra.hpp"
#include "scenekg/config.hpp"
#include "scenekg/error.hpp"
#include "scenekg/scene_kg.hpp"

namespace scenekg::dsl {

// ---------------------------------------------------------------- lexer

enum class Tok { ident, string, lparen, rparen, comma, semicolon, equals, end };

struct Token {
    Tok kind;
    std::string text;
    int line;
    int column;
};

inline std::vector<Token> lex(std::string_view src) {
    std::vector<Token> out;
    int line = 1, col = 1;
    std::size_t i = 0;
    auto advance = [&](std::size_t n = 1) {
        for (std::size_t k = 0; k < n; ++k, ++i) {
            if (src[i] == '\n') {
                ++line;
                col = 1;
            } else {
                ++col;
            }
        }
    };
    while (i < src.size()) {
        const char c = src[i];
        if (std::isspace(static_cast<unsigned char>(c))) {
            advance();
            continue;
        }
        const int l = line, cl = col;
        if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
            std::size_t j = i;
            while (j < src.size() && (std::isalnum(static_cast<unsigned char>(src[j])) || src[j] == '_')) ++j;
            out.push_back({Tok::ident, std::string(src.substr(i, j - i)), l, cl});
            advance(j - i);
            continue;
        }
        if (c == '\'') {
            std::size_t j = i + 1;
            while (j < src.size() && src[j] != '\'' && src[j] != '\n') ++j;
            if (j >= src.size() || src[j] != '\'') throw ParseError("unterminated string literal", l, cl);
            out.push_back({Tok::string, std::string(src.substr(i + 1, j - i - 1)), l, cl});
            advance(j - i + 1);
            continue;
        }
        Tok k;
        switch (c) {
            case '(': k = Tok::lparen; break;
            case ')': k = Tok::rparen; break;
            case ',': k = Tok::comma; break;
            case ';': k = Tok::semicolon; break;
            case '=': k = Tok::equals; break;
            default: throw ParseError(std::string("unexpected character '") + c + "'", l, cl);
        }
        out.push_back({k, std::string(1, c), l, cl});
        advance();
    }
    out.push_back({Tok::end, "", line, col});
    return out;
}

// ---------------------------------------------------------------- AST

enum class Op { resolve, rel_select, intersect, count, exists, get_type, get_status, same_status };

inline constexpr std::array<std::string_view, 8> op_names{"Resolve", "RelSelect", "Intersect", "Count",
                                                          "Exists",  "GetType",   "GetStatus", "SameStatus"};

inline std::string_view to_string(Op op) { return op_names[static_cast<int>(op)]; }

inline std::optional<Op> op_from_string(std::string_view s) {
    for (std::size_t i = 0; i < op_names.size(); ++i)
        if (op_names[i] == s) return static_cast<Op>(i);
    return std::nullopt;
}

inline bool is_scalar_op(Op op) { return op != Op::resolve && op != Op::rel_select && op != Op::intersect; }

// Number of set-valued positional arguments each operator takes.
inline int set_arity(Op op) {
    switch (op) {
        case Op::resolve: return 0;
        case Op::rel_select: return 1;
        case Op::intersect:
        case Op::same_status: return 2;
        default: return 1;
    }
}

struct Call;

/// A set-valued argument: a variable reference or a nested call.
struct SetArg {
    std::string var;              // empty when `call` is set
    std::shared_ptr<Call> call;
    int line = 0;
    int column = 0;
};

struct Call {
    Op op{};
    std::vector<SetArg> sets;
    std::optional<std::string> relation;  // RelSelect only
    std::optional<std::string> type;
    std::optional<std::string> status;
    int line = 0;
    int column = 0;
};

struct Statement {
    std::optional<std::string> target;
    Call call;
    int line = 0;
    int column = 0;
};

struct Program {
    std::vector<Statement> statements;
};

// Structural equality ignores source positions.
inline bool same_structure(const Call& a, const Call& b);

inline bool same_structure(const SetArg& a, const SetArg& b) {
    if (static_cast<bool>(a.call) != static_cast<bool>(b.call)) return false;
    return a.call ? same_structure(*a.call, *b.call) : a.var == b.var;
}

inline bool same_structure(const Call& a, const Call& b) {
    if (a.op != b.op || a.relation != b.relation || a.type != b.type || a.status != b.status) return false;
    if (a.sets.size() != b.sets.size()) return false;
    for (std::size_t i = 0; i < a.sets.size(); ++i)
        if (!same_structure(a.sets[i], b.sets[i])) return false;
    return true;
}

inline bool same_structure(const Program& a, const Program& b) {
    if (a.statements.size() != b.statements.size()) return false;
    for (std::size_t i = 0; i < a.statements.size(); ++i)
        if (a.statements[i].target != b.statements[i].target ||
            !same_structure(a.statements[i].call, b.statements[i].call))
            return false;
    return true;
}

inline std::string unparse(const Call& c) {
    std::string out = std::string(to_string(c.op)) + "(";
    std::vector<std::string> parts;
    for (const auto& s : c.sets) parts.push_back(s.call ? unparse(*s.call) : s.var);
    if (c.relation) parts.push_back("'" + *c.relation + "'");
    if (c.type) parts.push_back("type='" + *c.type + "'");
    if (c.status) parts.push_back("status='" + *c.status + "'");
    for (std::size_t i = 0; i < parts.size(); ++i) out += (i ? ", " : "") + parts[i];
    return out + ")";
}

inline std::string unparse(const Statement& s) { return (s.target ? *s.target + " = " : std::string()) + unparse(s.call); }

inline std::string unparse(const Program& p) {
    std::string out;
    for (const auto& s : p.statements) out += unparse(s) + ";\n";
    return out;
}

// ---------------------------------------------------------------- parser

/// Variable kinds visible to a program: sets or scalar answers.
enum class ValueType { set, scalar };
using TypeEnv = std::map<std::string, ValueType>;

namespace detail {

class Parser {
public:
    Parser(std::string_view src, const TypeEnv& prebound) : toks_(lex(src)), bound_(prebound) {}

    Program program() {
        Program p;
        if (peek().kind == Tok::end) throw ParseError("empty program", peek().line, peek().column);
        p.statements.push_back(statement());
        while (peek().kind == Tok::semicolon) {
            take();
            if (peek().kind == Tok::end) break;
            p.statements.push_back(statement());
        }
        if (peek().kind != Tok::end) error("expected ';' between statements");
        return p;
    }

private:
    std::vector<Token> toks_;
    std::size_t pos_ = 0;
    TypeEnv bound_;

    const Token& peek(std::size_t ahead = 0) const { return toks_[std::min(pos_ + ahead, toks_.size() - 1)]; }
    const Token& take() { return toks_[pos_ < toks_.size() - 1 ? pos_++ : pos_]; }

    [[noreturn]] void error(const std::string& msg) const { throw ParseError(msg, peek().line, peek().column); }
    [[noreturn]] static void error_at(const Token& t, const std::string& msg) { throw ParseError(msg, t.line, t.column); }

    void expect(Tok k, const char* what) {
        if (peek().kind != k) error(std::string("expected ") + what);
        take();
    }

    Statement statement() {
        Statement s;
        s.line = peek().line;
        s.column = peek().column;
        if (peek().kind == Tok::ident && peek(1).kind == Tok::equals) {
            const Token& name = take();
            if (op_from_string(name.text)) error_at(name, "operator name '" + name.text + "' cannot be a variable");
            take();
            s.target = name.text;
        }
        if (peek().kind != Tok::ident) error("expected an operator call");
        s.call = call();
        // The target becomes visible to later statements only.
        if (s.target) bound_[*s.target] = is_scalar_op(s.call.op) ? ValueType::scalar : ValueType::set;
        return s;
    }

    Call call() {
        const Token& name = take();
        const auto op = op_from_string(name.text);
        if (!op) error_at(name, "unknown operator '" + name.text + "'");
        Call c;
        c.op = *op;
        c.line = name.line;
        c.column = name.column;
        expect(Tok::lparen, "'(' after operator name");
        bool seen_keyword = false;
        if (peek().kind != Tok::rparen) {
            while (true) {
                argument(c, seen_keyword);
                if (peek().kind == Tok::comma) {
                    take();
                    continue;
                }
                break;
            }
        }
        if (peek().kind != Tok::rparen) error("expected ',' or ')' in argument list");
        take();

        const int want = set_arity(c.op);
        if (static_cast<int>(c.sets.size()) != want)
            error_at(name, std::string(to_string(c.op)) + " takes " + std::to_string(want) + " set argument" +
                               (want == 1 ? "" : "s") + ", got " + std::to_string(c.sets.size()));
        if (c.op == Op::rel_select && !c.relation) error_at(name, "RelSelect needs a quoted relation argument");
        if (c.op == Op::resolve && !c.type && !c.status) error_at(name, "Resolve needs type= or status=");
        return c;
    }

    void argument(Call& c, bool& seen_keyword) {
        const Token& t = peek();
        if (t.kind == Tok::ident && peek(1).kind == Tok::equals) {
            take();
            take();
            if (peek().kind != Tok::string) error("expected a quoted value after '" + t.text + "='");
            const std::string value = take().text;
            std::optional<std::string>* slot = nullptr;
            if (t.text == "type") slot = &c.type;
            else if (t.text == "status") slot = &c.status;
            else error_at(t, "unknown keyword '" + t.text + "' (expected type or status)");
            if (c.op != Op::resolve && c.op != Op::rel_select)
                error_at(t, std::string(to_string(c.op)) + " takes no keyword filters");
            if (*slot) error_at(t, "keyword '" + t.text + "' given twice");
            *slot = value;
            seen_keyword = true;
            return;
        }
        if (seen_keyword) error("positional argument after keyword argument");
        if (t.kind == Tok::string) {
            if (c.op != Op::rel_select) error_at(t, std::string(to_string(c.op)) + " takes no relation literal");
            if (c.relation) error_at(t, "RelSelect takes a single relation literal");
            if (c.sets.empty()) error_at(t, "relation literal must follow the reference set");
            c.relation = take().text;
            return;
        }
        if (t.kind != Tok::ident) error("expected an argument");
        if (c.relation) error_at(t, "set argument after the relation literal");
        SetArg a;
        a.line = t.line;
        a.column = t.column;
        if (peek(1).kind == Tok::lparen) {
            a.call = std::make_shared<Call>(call());
        } else {
            take();
            if (op_from_string(t.text)) error_at(t, "operator '" + t.text + "' used without arguments");
            if (!bound_.count(t.text)) error_at(t, "unbound variable '" + t.text + "'");
            a.var = t.text;
        }
        c.sets.push_back(std::move(a));
    }
};

}  // namespace detail

/// Parses program text. `prebound` names are treated as already defined.
inline Program parse(std::string_view text, const TypeEnv& prebound = {}) {
    return detail::Parser(text, prebound).program();
}

// ---------------------------------------------------------------- type checker

struct TypeCheckOptions {
    bool require_scalar_result = false;
};

namespace detail {

inline std::string statement_label(std::size_t index) { return "statement " + std::to_string(index + 1); }

inline ValueType check_call(const Call& c, const Schema& schema, TypeEnv& env, std::size_t index) {
    const auto where = [&]() { return statement_label(index) + " (" + std::string(to_string(c.op)) + ")"; };
    for (const auto& a : c.sets) {
        ValueType t;
        if (a.call) {
            t = check_call(*a.call, schema, env, index);
        } else {
            auto it = env.find(a.var);
            if (it == env.end()) fail(ErrorKind::type, where() + ": unbound variable '" + a.var + "'");
            t = it->second;
        }
        if (t != ValueType::set) {
            const std::string what = a.call ? std::string(to_string(a.call->op)) + "(...)" : "'" + a.var + "'";
            fail(ErrorKind::type, where() + ": scalar " + what + " used where a set is required");
        }
    }
    if (c.relation && !relation_from_string(*c.relation)) {
        std::string list;
        for (auto r : relation_names) list += (list.empty() ? "" : ", ") + std::string(r);
        fail(ErrorKind::schema, where() + ": unknown relation '" + *c.relation + "'; valid relations are " + list);
    }
    if (c.type && !schema.has_category(*c.type))
        fail(ErrorKind::schema, where() + ": unknown category '" + *c.type + "'");
    if (c.status && !schema.has_status(*c.status))
        fail(ErrorKind::schema, where() + ": unknown status '" + *c.status + "'");
    return is_scalar_op(c.op) ? ValueType::scalar : ValueType::set;
}

}  // namespace detail

/// Checks set/scalar usage and vocabulary. Returns the environment after the
/// program's assignments.
inline TypeEnv typecheck(const Program& p, const Schema& schema, TypeEnv env = {}, TypeCheckOptions opts = {}) {
    if (p.statements.empty()) fail(ErrorKind::type, "empty program");
    for (std::size_t i = 0; i < p.statements.size(); ++i) {
        const auto& s = p.statements[i];
        const ValueType t = detail::check_call(s.call, schema, env, i);
        if (s.target) env[*s.target] = t;
    }
    if (opts.require_scalar_result && !is_scalar_op(p.statements.back().call.op))
        fail(ErrorKind::type, "the final statement must produce an answer, not a set");
    return env;
}

// ---------------------------------------------------------------- desugaring

/// One operator application over variables only.
struct FlatStatement {
    std::string target;
    Op op{};
    std::vector<std::string> inputs;
    std::optional<std::string> relation;
    std::optional<std::string> type;
    std::optional<std::string> status;
    std::size_t source_index = 0;  // index of the statement it came from
};

namespace detail {

inline std::string flatten(const Call& c, std::size_t index, std::optional<std::string> target, int& temp,
                           std::vector<FlatStatement>& out) {
    FlatStatement f;
    for (const auto& a : c.sets) f.inputs.push_back(a.call ? flatten(*a.call, index, std::nullopt, temp, out) : a.var);
    f.op = c.op;
    f.relation = c.relation;
    f.type = c.type;
    f.status = c.status;
    f.source_index = index;
    // '$' cannot appear in identifiers, so temporaries never clash with user names.
    f.target = target ? *target : "$" + std::to_string(++temp);
    out.push_back(f);
    return out.back().target;
}

}  // namespace detail

/// Nested calls become implicit temporaries named $1, $2, ...
inline std::vector<FlatStatement> desugar(const Program& p, int first_temp = 0) {
    std::vector<FlatStatement> out;
    int temp = first_temp;
    for (std::size_t i = 0; i < p.statements.size(); ++i)
        detail::flatten(p.statements[i].call, i, p.statements[i].target, temp, out);
    return out;
}

// ---------------------------------------------------------------- interpreter

using Value = std::variant<EntitySet, Answer>;
using Env = std::map<std::string, Value>;

inline TypeEnv type_env(const Env& env) {
    TypeEnv t;
    for (const auto& [k, v] : env) t[k] = std::holds_alternative<EntitySet>(v) ? ValueType::set : ValueType::scalar;
    return t;
}

struct TraceEntry {
    std::size_t statement = 0;  // 1-based source statement
    std::string target;
    std::string op;
    std::vector<std::string> inputs;
    std::string output;

    std::string render() const {
        std::string in;
        for (const auto& s : inputs) in += (in.empty() ? "" : ", ") + s;
        return target + " = " + op + "(" + in + ") -> " + output;
    }
};

struct ExecResult {
    Answer answer;                   // error answer when the program failed or ended in a set
    std::optional<EntitySet> final_set;
    std::vector<TraceEntry> trace;
    bool failed = false;
};

inline std::string summarize(const SceneKg& kg, const EntitySet& u) {
    std::string out = "set(" + std::to_string(u.size()) + ")";
    if (u.empty()) return out;
    out += " [";
    const std::size_t shown = std::min<std::size_t>(5, u.size());
    for (std::size_t i = 0; i < shown; ++i) {
        const auto& n = kg.node(u.node_ids[i]);
        out += (i ? ", " : "") + std::to_string(n.node_id) + ":" + n.class_label + "/" + n.status_label;
    }
    if (shown < u.size()) out += ", ...";
    return out + "]";
}

namespace detail {

inline AttributePredicate predicate_of(const FlatStatement& f) {
    if (!f.type && !f.status) return AttributePredicate::any();
    return {f.type, f.status, false};
}

inline Value apply(const FlatStatement& f, const std::vector<const Value*>& in, const SceneKg& kg,
                   const EngineConfig& cfg) {
    auto set = [&](std::size_t i) -> const EntitySet& { return std::get<EntitySet>(*in[i]); };
    switch (f.op) {
        case Op::resolve: return resolve(kg, predicate_of(f));
        case Op::rel_select: return rel_select(kg, set(0), *relation_from_string(*f.relation), predicate_of(f));
        case Op::intersect: return intersect(set(0), set(1));
        case Op::count: return count(set(0));
        case Op::exists: return exists(set(0));
        case Op::get_type: return get_type(kg, set(0));
        case Op::get_status: return get_status(kg, set(0));
        case Op::same_status: return same_status(kg, set(0), set(1), cfg.same_status_mode);
    }
    fail(ErrorKind::invalid_argument, "unknown operator");
}

}  // namespace detail

/// Runs a type-checked program, binding results into `env`. Empty-reference
/// failures stop the program and yield an error answer naming the statement.
inline ExecResult execute_flat(const std::vector<FlatStatement>& flat, const SceneKg& kg, const EngineConfig& cfg,
                               Env& env) {
    ExecResult r;
    for (const auto& f : flat) {
        std::vector<const Value*> in;
        for (const auto& name : f.inputs) {
            auto it = env.find(name);
            if (it == env.end()) fail(ErrorKind::type, "unbound variable '" + name + "'");
            in.push_back(&it->second);
        }
        TraceEntry t;
        t.statement = f.source_index + 1;
        t.target = f.target;
        t.op = std::string(to_string(f.op));
        t.inputs = f.inputs;
        if (f.relation) t.inputs.push_back("'" + *f.relation + "'");
        if (f.type) t.inputs.push_back("type='" + *f.type + "'");
        if (f.status) t.inputs.push_back("status='" + *f.status + "'");
        Value v;
        try {
            v = detail::apply(f, in, kg, cfg);
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::empty_reference) throw;
            r.failed = true;
            r.answer = Answer::of_error("empty reference at statement " + std::to_string(t.statement));
            t.output = r.answer.render();
            r.trace.push_back(std::move(t));
            return r;
        }
        if (const auto* s = std::get_if<EntitySet>(&v)) {
            t.output = summarize(kg, *s);
        } else {
            t.output = "answer: " + std::get<Answer>(v).render();
        }
        r.trace.push_back(std::move(t));
        env[f.target] = std::move(v);
    }
    const Value& last = env.at(flat.back().target);
    if (const auto* a = std::get_if<Answer>(&last)) {
        r.answer = *a;
    } else {
        r.final_set = std::get<EntitySet>(last);
        r.answer = Answer::of_error("program result is a set, not an answer");
    }
    return r;
}

inline ExecResult execute(const Program& p, const SceneKg& kg, const EngineConfig& cfg) {
    typecheck(p, kg.schema());
    Env env;
    return execute_flat(desugar(p), kg, cfg, env);
}

/// Parse, check and run in one step.
inline ExecResult run_program(std::string_view text, const SceneKg& kg, const EngineConfig& cfg) {
    return execute(parse(text), kg, cfg);
}

}  // namespace scenekg::dsl
