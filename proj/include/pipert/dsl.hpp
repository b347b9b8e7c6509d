#pragma once

#include <charconv>
#include <cmath>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "pipert/errors.hpp"
#include "pipert/pipeline.hpp"
#include "pipert/transformers.hpp"
#include "pipert/weighting.hpp"

namespace pipert::dsl {

/// Names a program may refer to besides its own bindings.
struct Environment {
    std::map<std::string, IndexRef> indexes;
    /// Relative weight-file paths resolve against this directory when set.
    std::optional<std::filesystem::path> base_dir;
};

struct Program {
    std::vector<std::pair<std::string, NodePtr>> bindings;
    NodePtr final_expression;           // trailing bare expression, if any
    std::vector<std::string> compare;   // from a `compare a, b` line

    [[nodiscard]] NodePtr binding(const std::string& name) const
    {
        for (const auto& [n, node] : bindings) {
            if (n == name) {
                return node;
            }
        }
        return nullptr;
    }

    /// The pipeline a `run` executes: `main`, else the final expression, else the last binding.
    [[nodiscard]] NodePtr target() const
    {
        if (auto m = binding("main")) {
            return m;
        }
        if (final_expression) {
            return final_expression;
        }
        if (bindings.empty()) {
            throw SyntaxError("program defines no pipeline");
        }
        return bindings.back().second;
    }

    /// Named pipelines an experiment compares.
    [[nodiscard]] std::vector<std::pair<std::string, NodePtr>> comparisons() const
    {
        if (!compare.empty()) {
            std::vector<std::pair<std::string, NodePtr>> out;
            for (const auto& name : compare) {
                out.emplace_back(name, binding(name));
            }
            return out;
        }
        auto out = bindings;
        if (final_expression) {
            out.emplace_back("main", final_expression);
        }
        if (out.empty()) {
            throw SyntaxError("program defines no pipeline");
        }
        return out;
    }
};

namespace detail {

enum class Tok { ident, number, string, lparen, rparen, lbracket, rbracket, comma, assign, op, newline, end };

struct Token {
    Tok type;
    std::string text;
    double number = 0.0;
    int line = 1;
    int column = 1;
};

inline std::string where(int line, int column)
{
    return "line " + std::to_string(line) + ", column " + std::to_string(column) + ": ";
}

/// Splits source into tokens. Newlines inside brackets are dropped; `#` starts a comment.
inline std::vector<Token> lex(std::string_view src)
{
    std::vector<Token> out;
    int line = 1;
    int col = 1;
    int depth = 0;
    std::size_t i = 0;
    auto advance = [&](std::size_t n) {
        for (std::size_t j = 0; j < n; ++j) {
            if (src[i] == '\n') {
                ++line;
                col = 1;
            } else {
                ++col;
            }
            ++i;
        }
    };
    auto is_digit = [](char c) { return c >= '0' && c <= '9'; };
    auto is_ident_start = [](char c) { return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c == '_'; };
    while (i < src.size()) {
        char c = src[i];
        int tl = line;
        int tc = col;
        if (c == '#') {
            while (i < src.size() && src[i] != '\n') {
                advance(1);
            }
            continue;
        }
        if (c == '\n' || c == ';') {
            if (depth == 0 && (out.empty() || out.back().type != Tok::newline)) {
                out.push_back({Tok::newline, "\n", 0.0, tl, tc});
            }
            advance(1);
            continue;
        }
        if (c == ' ' || c == '\t' || c == '\r') {
            advance(1);
            continue;
        }
        bool signed_number = c == '-' && i + 1 < src.size() && (is_digit(src[i + 1]) || src[i + 1] == '.');
        if (is_digit(c) || (c == '.' && i + 1 < src.size() && is_digit(src[i + 1])) || signed_number) {
            std::size_t j = i + (signed_number ? 1 : 0);
            while (j < src.size() && (is_digit(src[j]) || src[j] == '.')) {
                ++j;
            }
            if (j < src.size() && (src[j] == 'e' || src[j] == 'E')) {
                std::size_t e = j + 1;
                if (e < src.size() && (src[e] == '+' || src[e] == '-')) {
                    ++e;
                }
                if (e < src.size() && is_digit(src[e])) {
                    j = e;
                    while (j < src.size() && is_digit(src[j])) {
                        ++j;
                    }
                }
            }
            std::string text(src.substr(i, j - i));
            double value = 0.0;
            auto res = std::from_chars(text.data(), text.data() + text.size(), value);
            if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
                throw SyntaxError(where(tl, tc) + "malformed number '" + text + "'");
            }
            out.push_back({Tok::number, text, value, tl, tc});
            advance(j - i);
            continue;
        }
        if (is_ident_start(c)) {
            std::size_t j = i;
            while (j < src.size() && (is_ident_start(src[j]) || is_digit(src[j]))) {
                ++j;
            }
            out.push_back({Tok::ident, std::string(src.substr(i, j - i)), 0.0, tl, tc});
            advance(j - i);
            continue;
        }
        if (c == '"') {
            std::string text;
            advance(1);
            while (true) {
                if (i >= src.size() || src[i] == '\n') {
                    throw SyntaxError(where(tl, tc) + "unterminated string");
                }
                if (src[i] == '"') {
                    advance(1);
                    break;
                }
                if (src[i] == '\\' && i + 1 < src.size()) {
                    advance(1);
                }
                text.push_back(src[i]);
                advance(1);
            }
            out.push_back({Tok::string, text, 0.0, tl, tc});
            continue;
        }
        auto two = src.substr(i, 2);
        if (two == ">>" || two == "**") {
            out.push_back({Tok::op, std::string(two), 0.0, tl, tc});
            advance(2);
            continue;
        }
        Tok single = Tok::end;
        switch (c) {
        case '(': single = Tok::lparen; ++depth; break;
        case ')': single = Tok::rparen; --depth; break;
        case '[': single = Tok::lbracket; ++depth; break;
        case ']': single = Tok::rbracket; --depth; break;
        case ',': single = Tok::comma; break;
        case '=': single = Tok::assign; break;
        case '*':
        case '+':
        case '%':
        case '|':
        case '&':
        case '^': single = Tok::op; break;
        default:
            throw SyntaxError(where(tl, tc) + "unexpected character '" + std::string(1, c) + "'");
        }
        depth = std::max(depth, 0);
        out.push_back({single, std::string(1, c), 0.0, tl, tc});
        advance(1);
    }
    out.push_back({Tok::end, "", 0.0, line, col});
    return out;
}

/// Argument of a constructor call, parsed before it is interpreted.
struct Arg {
    enum class Kind { ident, number, string, list, call } kind = Kind::ident;
    std::string text;
    double number = 0.0;
    std::vector<Arg> items;                                   // list elements
    std::vector<std::pair<std::string, Arg>> call_args;       // call: keyword ("" if positional) and value
    int line = 1;
    int column = 1;
};

/// Operand on the expression stack: a pipeline or a bare number.
struct Value {
    NodePtr node;
    std::optional<double> number;
    int line = 1;
    int column = 1;
};

inline int binary_precedence(const std::string& op)
{
    if (op == "|") return 1;
    if (op == "^") return 2;
    if (op == "&") return 3;
    if (op == ">>") return 4;
    if (op == "+") return 5;
    if (op == "*" || op == "%") return 6;
    if (op == "**") return 7;
    return -1;
}

class Parser {
  public:
    Parser(std::string_view src, const Environment& env) : m_tokens(lex(src)), m_env(env) {}

    Program program()
    {
        Program prog;
        while (true) {
            skip_newlines();
            if (peek().type == Tok::end) {
                break;
            }
            if (peek().type == Tok::ident && peek().text == "compare" && peek(1).type == Tok::ident) {
                next();
                do {
                    const auto& name = expect(Tok::ident, "pipeline name");
                    if (std::none_of(m_bindings.begin(), m_bindings.end(),
                                     [&](const auto& b) { return b.first == name.text; })) {
                        throw UnboundName(where(name.line, name.column) + "'" + name.text + "' is not bound");
                    }
                    prog.compare.push_back(name.text);
                } while (accept(Tok::comma));
                end_of_statement();
                continue;
            }
            if (peek().type == Tok::ident && peek(1).type == Tok::assign) {
                auto name = next().text;
                next();
                auto node = pipeline_expression();
                bool replaced = false;
                for (auto& [n, existing] : m_bindings) {
                    if (n == name) {
                        existing = node;
                        replaced = true;
                    }
                }
                if (!replaced) {
                    m_bindings.emplace_back(name, node);
                }
                end_of_statement();
                prog.final_expression = nullptr;
                continue;
            }
            prog.final_expression = pipeline_expression();
            end_of_statement();
        }
        prog.bindings = m_bindings;
        return prog;
    }

    NodePtr pipeline_expression()
    {
        auto v = expression(0);
        if (!v.node) {
            throw BadArity(where(v.line, v.column) + "expected a pipeline, found a number");
        }
        return v.node;
    }

  private:
    const Token& peek(std::size_t ahead = 0) const
    {
        return m_tokens[std::min(m_pos + ahead, m_tokens.size() - 1)];
    }
    const Token& next() { return m_tokens[std::min(m_pos++, m_tokens.size() - 1)]; }
    bool accept(Tok t)
    {
        if (peek().type == t) {
            ++m_pos;
            return true;
        }
        return false;
    }
    const Token& expect(Tok t, const char* what)
    {
        if (peek().type != t) {
            fail(std::string("expected ") + what);
        }
        return next();
    }
    [[noreturn]] void fail(const std::string& msg) const
    {
        const auto& t = peek();
        auto found = t.type == Tok::end ? std::string("end of input")
                     : t.type == Tok::newline ? std::string("end of line")
                                              : "'" + t.text + "'";
        throw SyntaxError(where(t.line, t.column) + msg + ", found " + found);
    }
    void skip_newlines()
    {
        while (accept(Tok::newline)) {
        }
    }
    void end_of_statement()
    {
        if (peek().type != Tok::end) {
            expect(Tok::newline, "end of line");
        }
    }

    Value expression(int min_prec)
    {
        auto lhs = primary();
        while (peek().type == Tok::op) {
            auto op = peek().text;
            int prec = binary_precedence(op);
            if (prec < min_prec) {
                break;
            }
            const auto& tok = next();
            auto rhs = expression(op == "**" ? prec : prec + 1);
            lhs = combine(op, lhs, rhs, tok);
        }
        return lhs;
    }

    static Value combine(const std::string& op, const Value& a, const Value& b, const Token& at)
    {
        auto err = [&](const std::string& msg) { return BadArity(where(at.line, at.column) + msg); };
        Value out{nullptr, std::nullopt, a.line, a.column};
        if (op == "*") {
            if (a.node && b.number) {
                out.node = scalar_product(*b.number, a.node);
            } else if (a.number && b.node) {
                out.node = scalar_product(*a.number, b.node);
            } else {
                throw err("'*' needs one number and one pipeline");
            }
            return out;
        }
        if (op == "%") {
            if (!a.node || !b.number) {
                throw err("'%' needs a pipeline on the left and a rank on the right");
            }
            double k = *b.number;
            if (k < 1.0 || k != std::floor(k) || k > 1e15) {
                throw err("rank cutoff must be a positive integer");
            }
            out.node = rank_cutoff(a.node, static_cast<long long>(k));
            return out;
        }
        if (!a.node || !b.node) {
            throw err("'" + op + "' needs pipelines on both sides");
        }
        if (op == ">>") {
            out.node = then(a.node, b.node);
        } else if (op == "+") {
            out.node = linear_combine(a.node, b.node);
        } else if (op == "**") {
            out.node = feature_union(a.node, b.node);
        } else if (op == "|") {
            out.node = set_union(a.node, b.node);
        } else if (op == "&") {
            out.node = set_intersect(a.node, b.node);
        } else {
            out.node = concatenate(a.node, b.node);
        }
        return out;
    }

    Value primary()
    {
        const auto& t = peek();
        if (t.type == Tok::number) {
            next();
            return Value{nullptr, t.number, t.line, t.column};
        }
        if (t.type == Tok::lparen) {
            next();
            auto v = expression(0);
            expect(Tok::rparen, "')'");
            return v;
        }
        if (t.type == Tok::ident) {
            if (peek(1).type == Tok::lparen) {
                auto call = argument();
                return Value{construct(call), std::nullopt, t.line, t.column};
            }
            next();
            for (const auto& [name, node] : m_bindings) {
                if (name == t.text) {
                    return Value{node, std::nullopt, t.line, t.column};
                }
            }
            throw UnboundName(where(t.line, t.column) + "'" + t.text + "' is not bound");
        }
        fail("expected an expression");
    }

    Arg argument()
    {
        const auto& t = peek();
        Arg a;
        a.line = t.line;
        a.column = t.column;
        switch (t.type) {
        case Tok::number:
            a.kind = Arg::Kind::number;
            a.number = t.number;
            a.text = t.text;
            next();
            return a;
        case Tok::string:
            a.kind = Arg::Kind::string;
            a.text = t.text;
            next();
            return a;
        case Tok::lbracket:
            next();
            a.kind = Arg::Kind::list;
            if (!accept(Tok::rbracket)) {
                do {
                    a.items.push_back(argument());
                } while (accept(Tok::comma));
                expect(Tok::rbracket, "']'");
            }
            return a;
        case Tok::ident:
            a.text = t.text;
            next();
            if (!accept(Tok::lparen)) {
                return a;
            }
            a.kind = Arg::Kind::call;
            if (!accept(Tok::rparen)) {
                do {
                    std::string key;
                    if (peek().type == Tok::ident && peek(1).type == Tok::assign) {
                        key = next().text;
                        next();
                    }
                    a.call_args.emplace_back(key, argument());
                } while (accept(Tok::comma));
                expect(Tok::rparen, "')'");
            }
            return a;
        default:
            fail("expected an argument");
        }
    }

    [[noreturn]] static void bad(const Arg& at, const std::string& msg)
    {
        throw BadArity(where(at.line, at.column) + msg);
    }

    IndexRef index_arg(const Arg& a) const
    {
        if (a.kind != Arg::Kind::ident && a.kind != Arg::Kind::string) {
            bad(a, "expected an index name");
        }
        auto it = m_env.indexes.find(a.text);
        if (it == m_env.indexes.end()) {
            throw UnboundName(where(a.line, a.column) + "index '" + a.text + "' is not bound");
        }
        return it->second;
    }

    static double number_arg(const Arg& a)
    {
        if (a.kind != Arg::Kind::number) {
            bad(a, "expected a number");
        }
        return a.number;
    }

    static long long integer_arg(const Arg& a)
    {
        double v = number_arg(a);
        if (v != std::floor(v) || std::abs(v) > 1e15) {
            bad(a, "expected an integer");
        }
        return static_cast<long long>(v);
    }

    static WeightingModel model_arg(const Arg& a, const Environment& env)
    {
        if (a.kind == Arg::Kind::string) {
            Parser sub(a.text, env);
            auto inner = sub.argument();
            inner.line = a.line;
            inner.column = a.column;
            if (sub.peek().type != Tok::end) {
                bad(a, "malformed model name '" + a.text + "'");
            }
            return model_arg(inner, env);
        }
        if (a.kind != Arg::Kind::ident && a.kind != Arg::Kind::call) {
            bad(a, "expected a weighting model");
        }
        std::map<std::string, double> params;
        for (const auto& [key, value] : a.call_args) {
            if (key.empty()) {
                bad(value, "model parameters are given by name");
            }
            params[key] = number_arg(value);
        }
        auto take = [&](const char* key, double fallback) {
            auto it = params.find(key);
            if (it == params.end()) {
                return fallback;
            }
            double v = it->second;
            params.erase(it);
            return v;
        };
        std::optional<WeightingModel> m;
        if (a.text == "BM25") {
            BM25 d;
            double k1 = take("k1", d.k1);
            double b = take("b", d.b);
            m.emplace(BM25{k1, b});
        } else if (a.text == "TFIDF" || a.text == "TF_IDF") {
            m.emplace(TFIDF{});
        } else if (a.text == "QL" || a.text == "DirichletLM") {
            m.emplace(QLDirichlet{take("mu", QLDirichlet{}.mu)});
        } else {
            bad(a, "unknown weighting model '" + a.text + "'");
        }
        if (!params.empty()) {
            bad(a, "unknown parameter '" + params.begin()->first + "' for " + a.text);
        }
        return *m;
    }

    NodePtr construct(const Arg& call) const
    {
        std::vector<const Arg*> positional;
        std::map<std::string, const Arg*> named;
        for (const auto& [key, value] : call.call_args) {
            if (key.empty()) {
                if (!named.empty()) {
                    bad(value, "positional argument after a named one");
                }
                positional.push_back(&value);
            } else if (!named.emplace(key, &value).second) {
                bad(value, "repeated argument '" + key + "'");
            }
        }
        auto arity = [&](std::size_t lo, std::size_t hi, std::initializer_list<const char*> keys) {
            if (positional.size() < lo || positional.size() > hi) {
                bad(call, call.text + " takes " + std::to_string(lo)
                              + (hi != lo ? " to " + std::to_string(hi) : std::string()) + " positional arguments");
            }
            for (const auto& [key, value] : named) {
                if (std::find_if(keys.begin(), keys.end(), [&](const char* k) { return key == k; }) == keys.end()) {
                    bad(*value, "unknown argument '" + key + "' for " + call.text);
                }
            }
        };
        auto named_or = [&](const char* key, auto fallback, auto convert) {
            auto it = named.find(key);
            return it == named.end() ? fallback : convert(*it->second);
        };
        const auto& name = call.text;
        if (name == "retrieve") {
            arity(2, 2, {"k"});
            return leaf(make_retrieve(index_arg(*positional[0]), model_arg(*positional[1], m_env),
                                      named_or("k", 1000LL, integer_arg)));
        }
        if (name == "rewrite") {
            arity(0, 1, {});
            return positional.empty() ? leaf(make_rewrite()) : leaf(make_rewrite(index_arg(*positional[0])));
        }
        if (name == "expand") {
            arity(1, 1, {"fb_docs", "fb_terms", "lambda"});
            RM3Params p;
            p.fb_docs = static_cast<int>(named_or("fb_docs", static_cast<long long>(p.fb_docs), integer_arg));
            p.fb_terms = static_cast<int>(named_or("fb_terms", static_cast<long long>(p.fb_terms), integer_arg));
            p.lambda = named_or("lambda", p.lambda, number_arg);
            if (p.fb_docs < 1 || p.fb_terms < 0 || !(p.lambda >= 0.0 && p.lambda <= 1.0)) {
                bad(call, "expand needs fb_docs >= 1, fb_terms >= 0 and lambda in [0, 1]");
            }
            return leaf(make_expand(index_arg(*positional[0]), p));
        }
        if (name == "extract") {
            arity(2, 2, {});
            if (positional[1]->kind != Arg::Kind::list) {
                bad(*positional[1], "extract takes a list of features");
            }
            std::vector<FeatureSpec> features;
            for (const auto& item : positional[1]->items) {
                if (item.kind == Arg::Kind::ident && item.text == "doclen") {
                    features.push_back(FeatureSpec::doclen());
                } else {
                    features.push_back(FeatureSpec{model_arg(item, m_env)});
                }
            }
            return leaf(make_extract(index_arg(*positional[0]), std::move(features)));
        }
        if (name == "rerank_linear") {
            arity(0, 1, {});
            auto r = make_rerank_linear();
            if (!positional.empty()) {
                const auto& a = *positional[0];
                if (a.kind != Arg::Kind::string) {
                    bad(a, "rerank_linear takes a weights file path string");
                }
                std::filesystem::path path(a.text);
                if (path.is_relative() && m_env.base_dir && !std::filesystem::exists(path)) {
                    path = *m_env.base_dir / path;
                }
                r->load_file(path.string());
                r->set_source(a.text);
            }
            return leaf(r);
        }
        if (name == "fused_retrieve_topk") {
            arity(2, 2, {"k"});
            return fused_retrieve_topk(index_arg(*positional[0]), model_arg(*positional[1], m_env),
                                       named_or("k", 1000LL, integer_arg));
        }
        if (name == "fused_feature_retrieve") {
            arity(3, 3, {"k"});
            if (positional[2]->kind != Arg::Kind::list) {
                bad(*positional[2], "expected a list of feature models");
            }
            std::vector<WeightingModel> models;
            for (const auto& item : positional[2]->items) {
                models.push_back(model_arg(item, m_env));
            }
            return fused_feature_retrieve(index_arg(*positional[0]), model_arg(*positional[1], m_env),
                                          named_or("k", 1000LL, integer_arg), std::move(models));
        }
        throw UnboundName(where(call.line, call.column) + "unknown constructor '" + name + "'");
    }

    std::vector<Token> m_tokens;
    std::size_t m_pos = 0;
    const Environment& m_env;
    std::vector<std::pair<std::string, NodePtr>> m_bindings;
};

}  // namespace detail

inline Program parse_program(std::string_view src, const Environment& env)
{
    detail::Parser p(src, env);
    return p.program();
}

/// Parses a program and returns its run target.
inline NodePtr parse_pipeline(std::string_view src, const Environment& env)
{
    return parse_program(src, env).target();
}

}  // namespace pipert::dsl
