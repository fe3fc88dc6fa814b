#include "sqlprov/parser.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <map>
#include <set>
#include <unordered_set>

namespace sqlprov {

namespace {

enum class Tok {
    End,
    Ident,      // lowercased unquoted or verbatim quoted
    Keyword,    // uppercased canonical text
    Int,
    Float,
    String,
    Symbol,     // punctuation and operators, verbatim
};

struct Token {
    Tok kind = Tok::End;
    std::string text;
    SourceSpan span;
};

const std::unordered_set<std::string> kKeywords = {
    "SELECT", "FROM",   "WHERE",  "GROUP",    "BY",        "HAVING", "WINDOW",   "ORDER",
    "OFFSET", "LIMIT",  "ALL",    "DISTINCT", "ON",        "AS",     "WITH",     "RECURSIVE",
    "UNION",  "LEFT",   "OUTER",  "JOIN",     "CROSS",     "LATERAL", "BIND",    "CASE",
    "WHEN",   "THEN",   "ELSE",   "END",      "EXISTS",    "IN",     "NOT",      "AND",
    "OR",     "IS",     "NULL",   "TRUE",     "FALSE",     "ROW",    "ASC",      "DESC",
    "PARTITION", "OVER", "ROWS",  "RANGE",    "BETWEEN",   "UNBOUNDED", "PRECEDING",
    "FOLLOWING", "CURRENT", "CREATE", "FUNCTION", "RETURNS", "TABLE", "LANGUAGE", "SQL",
};

class Lexer {
public:
    explicit Lexer(const std::string& text) : text_(text) { next(); }

    const Token& peek() const { return tok_; }
    Token take() {
        Token t = tok_;
        next();
        return t;
    }

    [[noreturn]] void error(const std::string& msg, SourceSpan span) const {
        throw SqlError(ErrorKind::Syntax, msg, span);
    }

    /// Raw scan for a $$...$$ quoted body starting at the current token.
    std::string take_dollar_body();

private:
    void next();
    char cur() const { return pos_ < text_.size() ? text_[pos_] : '\0'; }

    const std::string& text_;
    size_t pos_ = 0;
    Token tok_;
};

void Lexer::next() {
    for (;;) {
        while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
        if (pos_ + 1 < text_.size() && text_[pos_] == '-' && text_[pos_ + 1] == '-') {
            while (pos_ < text_.size() && text_[pos_] != '\n') ++pos_;
            continue;
        }
        break;
    }
    uint32_t start = static_cast<uint32_t>(pos_);
    tok_ = Token{};
    tok_.span = {start, start};
    if (pos_ >= text_.size()) {
        tok_.kind = Tok::End;
        return;
    }
    char c = text_[pos_];
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
        size_t begin = pos_;
        while (pos_ < text_.size() &&
               (std::isalnum(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '_'))
            ++pos_;
        std::string word = text_.substr(begin, pos_ - begin);
        std::string upper = word;
        std::transform(upper.begin(), upper.end(), upper.begin(),
                       [](unsigned char ch) { return std::toupper(ch); });
        tok_.span = {start, static_cast<uint32_t>(pos_)};
        if (kKeywords.count(upper)) {
            tok_.kind = Tok::Keyword;
            tok_.text = upper;
        } else {
            tok_.kind = Tok::Ident;
            std::transform(word.begin(), word.end(), word.begin(),
                           [](unsigned char ch) { return std::tolower(ch); });
            tok_.text = word;
        }
        return;
    }
    if (c == '"') {
        size_t begin = ++pos_;
        std::string out;
        while (pos_ < text_.size() && text_[pos_] != '"') out.push_back(text_[pos_++]);
        if (pos_ >= text_.size()) error("unterminated quoted identifier", {start, static_cast<uint32_t>(pos_)});
        ++pos_;
        (void)begin;
        tok_ = Token{Tok::Ident, out, {start, static_cast<uint32_t>(pos_)}};
        return;
    }
    if (c == '\'') {
        ++pos_;
        std::string out;
        for (;;) {
            if (pos_ >= text_.size()) error("unterminated string literal", {start, static_cast<uint32_t>(pos_)});
            if (text_[pos_] == '\'') {
                if (pos_ + 1 < text_.size() && text_[pos_ + 1] == '\'') {
                    out.push_back('\'');
                    pos_ += 2;
                    continue;
                }
                ++pos_;
                break;
            }
            out.push_back(text_[pos_++]);
        }
        tok_ = Token{Tok::String, out, {start, static_cast<uint32_t>(pos_)}};
        return;
    }
    if (std::isdigit(static_cast<unsigned char>(c))) {
        size_t begin = pos_;
        bool is_float = false;
        while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) ++pos_;
        if (pos_ + 1 < text_.size() && text_[pos_] == '.' &&
            std::isdigit(static_cast<unsigned char>(text_[pos_ + 1]))) {
            is_float = true;
            ++pos_;
            while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) ++pos_;
        }
        if (pos_ < text_.size() && (text_[pos_] == 'e' || text_[pos_] == 'E')) {
            size_t save = pos_;
            ++pos_;
            if (pos_ < text_.size() && (text_[pos_] == '+' || text_[pos_] == '-')) ++pos_;
            if (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) {
                is_float = true;
                while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) ++pos_;
            } else {
                pos_ = save;
            }
        }
        tok_ = Token{is_float ? Tok::Float : Tok::Int, text_.substr(begin, pos_ - begin),
                     {start, static_cast<uint32_t>(pos_)}};
        return;
    }
    // symbols
    static const char* two[] = {"<>", "<=", ">=", "!=", "$$"};
    for (const char* s : two) {
        if (text_.compare(pos_, 2, s) == 0) {
            pos_ += 2;
            tok_ = Token{Tok::Symbol, s, {start, static_cast<uint32_t>(pos_)}};
            if (tok_.text == "!=") tok_.text = "<>";
            return;
        }
    }
    static const std::string one = "()+-*/%^=<>,.;";
    if (one.find(c) != std::string::npos) {
        ++pos_;
        tok_ = Token{Tok::Symbol, std::string(1, c), {start, static_cast<uint32_t>(pos_)}};
        return;
    }
    error("unexpected character '" + std::string(1, c) + "'", {start, start + 1});
}

std::string Lexer::take_dollar_body() {
    if (!(tok_.kind == Tok::Symbol && tok_.text == "$$"))
        error("expected $$-quoted function body", tok_.span);
    size_t begin = pos_;
    size_t end = text_.find("$$", begin);
    if (end == std::string::npos) error("unterminated $$ body", tok_.span);
    std::string body = text_.substr(begin, end - begin);
    pos_ = end + 2;
    next();
    return body;
}

// ---------------------------------------------------------------------------

class Parser {
public:
    explicit Parser(const std::string& text) : lex_(text) {}

    QueryPtr parse_statement() {
        auto q = parse_query_expr();
        accept_symbol(";");
        expect_end();
        return q;
    }

    std::vector<Udf> parse_prelude_statements();

private:
    Lexer lex_;

    // -- token helpers
    bool peek_keyword(const char* kw) const {
        return lex_.peek().kind == Tok::Keyword && lex_.peek().text == kw;
    }
    bool peek_symbol(const char* s) const {
        return lex_.peek().kind == Tok::Symbol && lex_.peek().text == s;
    }
    bool accept_keyword(const char* kw) {
        if (!peek_keyword(kw)) return false;
        lex_.take();
        return true;
    }
    bool accept_symbol(const char* s) {
        if (!peek_symbol(s)) return false;
        lex_.take();
        return true;
    }
    Token expect_keyword(const char* kw) {
        if (!peek_keyword(kw))
            lex_.error(std::string("expected ") + kw, lex_.peek().span);
        return lex_.take();
    }
    Token expect_symbol(const char* s) {
        if (!peek_symbol(s))
            lex_.error(std::string("expected '") + s + "'", lex_.peek().span);
        return lex_.take();
    }
    std::string expect_ident() {
        if (lex_.peek().kind != Tok::Ident)
            lex_.error("expected identifier", lex_.peek().span);
        return lex_.take().text;
    }
    void expect_end() {
        if (lex_.peek().kind != Tok::End)
            lex_.error("unexpected trailing input", lex_.peek().span);
    }
    bool at_query_start() const {
        return peek_keyword("SELECT") || peek_keyword("WITH");
    }

    // -- grammar
    QueryPtr parse_query_expr();
    QueryPtr parse_set_query();
    QueryPtr parse_select_or_paren();
    QueryPtr parse_select_block();
    FromStep parse_from_step(bool first);
    FromItem parse_from_item();
    void parse_alias(FromItem& item);
    WindowDef parse_window_def(const std::string& name);
    std::optional<Frame> parse_frame_opt();
    FrameBound parse_frame_bound();
    OrderItem parse_order_item();
    int64_t parse_int_literal();

    ExprPtr parse_expr() { return parse_or(); }
    ExprPtr parse_or();
    ExprPtr parse_and();
    ExprPtr parse_not();
    ExprPtr parse_comparison();
    ExprPtr parse_additive();
    ExprPtr parse_multiplicative();
    ExprPtr parse_unary();
    ExprPtr parse_power();
    ExprPtr parse_primary();
    ExprPtr parse_call(const std::string& name, SourceSpan start);
    WindowSpec parse_over();

    ExprPtr mk(SourceSpan span, auto node) {
        auto e = std::make_unique<Expr>();
        e->span = span;
        e->node = std::move(node);
        return e;
    }
    SourceSpan span_from(SourceSpan start) const {
        return SourceSpan{start.begin, lex_.peek().span.begin};
    }
};

QueryPtr Parser::parse_query_expr() {
    SourceSpan start = lex_.peek().span;
    if (accept_keyword("WITH")) {
        WithQuery with;
        with.recursive = accept_keyword("RECURSIVE");
        do {
            WithQuery::Binding b;
            b.span = lex_.peek().span;
            b.name = expect_ident();
            if (accept_symbol("(")) {
                do b.columns.push_back(expect_ident());
                while (accept_symbol(","));
                expect_symbol(")");
            }
            expect_keyword("AS");
            expect_symbol("(");
            b.query = parse_query_expr();
            expect_symbol(")");
            with.bindings.push_back(std::move(b));
        } while (accept_symbol(","));
        with.body = parse_set_query();
        auto q = std::make_unique<Query>();
        q->span = span_from(start);
        q->node = std::move(with);
        return q;
    }
    return parse_set_query();
}

QueryPtr Parser::parse_set_query() {
    SourceSpan start = lex_.peek().span;
    QueryPtr first = parse_select_or_paren();
    if (!peek_keyword("UNION")) return first;
    SetOpQuery setop;
    setop.arms.push_back(std::move(first));
    while (accept_keyword("UNION")) {
        expect_keyword("ALL");
        setop.arms.push_back(parse_select_or_paren());
    }
    auto q = std::make_unique<Query>();
    q->span = span_from(start);
    q->node = std::move(setop);
    return q;
}

QueryPtr Parser::parse_select_or_paren() {
    if (accept_symbol("(")) {
        auto q = parse_query_expr();
        expect_symbol(")");
        return q;
    }
    return parse_select_block();
}

QueryPtr Parser::parse_select_block() {
    SourceSpan start = lex_.peek().span;
    expect_keyword("SELECT");
    SelectBlock b;
    if (accept_keyword("DISTINCT")) {
        if (accept_keyword("ON")) {
            expect_symbol("(");
            do b.distinct_on.push_back(parse_expr());
            while (accept_symbol(","));
            expect_symbol(")");
        } else {
            b.distinct = true;
        }
    }
    if (accept_symbol("*")) {
        b.select_star = true;
    } else {
        do {
            SelectItem item;
            item.span = lex_.peek().span;
            item.expr = parse_expr();
            if (accept_keyword("AS")) {
                item.alias = expect_ident();
            } else if (lex_.peek().kind == Tok::Ident) {
                item.alias = lex_.take().text;
            }
            item.span.end = lex_.peek().span.begin;
            b.items.push_back(std::move(item));
        } while (accept_symbol(","));
    }
    if (accept_keyword("FROM")) {
        b.from.push_back(parse_from_step(true));
        for (;;) {
            if (accept_symbol(",")) {
                b.from.push_back(parse_from_step(false));
            } else if (peek_keyword("LEFT") || peek_keyword("CROSS")) {
                b.from.push_back(parse_from_step(false));
            } else {
                break;
            }
        }
    }
    if (accept_keyword("WHERE")) b.where = parse_expr();
    if (accept_keyword("GROUP")) {
        expect_keyword("BY");
        std::vector<ExprPtr> keys;
        if (accept_symbol("(")) {
            if (!accept_symbol(")")) { // GROUP BY () is the empty criteria list
                keys.push_back(parse_expr());
                while (accept_symbol(",")) keys.push_back(parse_expr());
                expect_symbol(")");
            }
        } else {
            do keys.push_back(parse_expr());
            while (accept_symbol(","));
        }
        b.group_by = std::move(keys);
    }
    if (accept_keyword("HAVING")) b.having = parse_expr();
    if (accept_keyword("WINDOW")) {
        do {
            std::string name = expect_ident();
            expect_keyword("AS");
            b.windows.push_back(parse_window_def(name));
        } while (accept_symbol(","));
    }
    if (accept_keyword("ORDER")) {
        expect_keyword("BY");
        do b.order_by.push_back(parse_order_item());
        while (accept_symbol(","));
    }
    if (accept_keyword("OFFSET")) b.offset = parse_int_literal();
    if (accept_keyword("LIMIT")) {
        LimitClause lim;
        if (!accept_keyword("ALL")) lim.count = parse_int_literal();
        b.limit = lim;
    }
    auto q = std::make_unique<Query>();
    q->span = span_from(start);
    q->node = std::move(b);
    return q;
}

FromStep Parser::parse_from_step(bool first) {
    FromStep step;
    if (!first) {
        if (accept_keyword("LEFT")) {
            accept_keyword("OUTER");
            expect_keyword("JOIN");
            step.join = FromStep::Join::Left;
            step.item = parse_from_item();
            expect_keyword("ON");
            bool paren = accept_symbol("(");
            step.on = parse_expr();
            if (paren) expect_symbol(")");
            return step;
        }
        if (accept_keyword("CROSS")) {
            expect_keyword("JOIN");
        }
    }
    step.lateral = accept_keyword("LATERAL");
    step.item = parse_from_item();
    return step;
}

FromItem Parser::parse_from_item() {
    FromItem item;
    item.span = lex_.peek().span;
    if (accept_symbol("(")) {
        if (accept_keyword("BIND")) {
            item.kind = FromItem::Kind::Bind;
            do item.bind_columns.push_back(expect_ident());
            while (accept_symbol(","));
            expect_symbol(")");
        } else {
            item.kind = FromItem::Kind::Subquery;
            item.subquery = parse_query_expr();
            expect_symbol(")");
        }
        parse_alias(item);
        return item;
    }
    std::string name = expect_ident();
    if (accept_symbol("(")) {
        item.kind = FromItem::Kind::TableFunc;
        item.func = name;
        if (!accept_symbol(")")) {
            do item.args.push_back(parse_expr());
            while (accept_symbol(","));
            expect_symbol(")");
        }
    } else {
        item.kind = FromItem::Kind::Table;
        item.table = name;
    }
    parse_alias(item);
    return item;
}

void Parser::parse_alias(FromItem& item) {
    if (accept_keyword("AS")) {
        item.alias = expect_ident();
    } else if (lex_.peek().kind == Tok::Ident) {
        item.alias = lex_.take().text;
    } else if (item.kind == FromItem::Kind::Table) {
        item.alias = item.table; // implicit self-alias
    } else if (item.kind == FromItem::Kind::TableFunc) {
        item.alias = item.func;
    } else {
        lex_.error("from item requires an alias", item.span);
    }
    if (accept_symbol("(")) {
        do item.column_aliases.push_back(expect_ident());
        while (accept_symbol(","));
        expect_symbol(")");
    }
    item.span.end = lex_.peek().span.begin;
}

WindowDef Parser::parse_window_def(const std::string& name) {
    WindowDef def;
    def.name = name;
    expect_symbol("(");
    if (accept_keyword("PARTITION")) {
        expect_keyword("BY");
        do def.partition.push_back(parse_expr());
        while (accept_symbol(","));
    }
    if (accept_keyword("ORDER")) {
        expect_keyword("BY");
        do def.order.push_back(parse_order_item());
        while (accept_symbol(","));
    }
    expect_symbol(")");
    return def;
}

std::optional<Frame> Parser::parse_frame_opt() {
    Frame frame;
    if (accept_keyword("ROWS")) {
        frame.unit = Frame::Unit::Rows;
    } else if (accept_keyword("RANGE")) {
        frame.unit = Frame::Unit::Range;
    } else {
        return std::nullopt;
    }
    if (accept_keyword("BETWEEN")) {
        frame.lo = parse_frame_bound();
        expect_keyword("AND");
        frame.hi = parse_frame_bound();
    } else {
        frame.lo = parse_frame_bound();
        frame.hi = FrameBound{FrameBound::Kind::CurrentRow, 0};
    }
    return frame;
}

FrameBound Parser::parse_frame_bound() {
    FrameBound b;
    if (accept_keyword("UNBOUNDED")) {
        if (accept_keyword("PRECEDING")) {
            b.kind = FrameBound::Kind::UnboundedPreceding;
        } else {
            expect_keyword("FOLLOWING");
            b.kind = FrameBound::Kind::UnboundedFollowing;
        }
        return b;
    }
    if (accept_keyword("CURRENT")) {
        expect_keyword("ROW");
        b.kind = FrameBound::Kind::CurrentRow;
        return b;
    }
    b.offset = parse_int_literal();
    if (accept_keyword("PRECEDING")) {
        b.kind = FrameBound::Kind::Preceding;
    } else {
        expect_keyword("FOLLOWING");
        b.kind = FrameBound::Kind::Following;
    }
    return b;
}

OrderItem Parser::parse_order_item() {
    OrderItem o;
    o.expr = parse_expr();
    if (accept_keyword("DESC")) {
        o.desc = true;
    } else {
        accept_keyword("ASC");
    }
    return o;
}

int64_t Parser::parse_int_literal() {
    if (lex_.peek().kind != Tok::Int)
        lex_.error("expected integer", lex_.peek().span);
    Token t = lex_.take();
    int64_t v = 0;
    std::from_chars(t.text.data(), t.text.data() + t.text.size(), v);
    return v;
}

// -- expressions ------------------------------------------------------------

ExprPtr Parser::parse_or() {
    SourceSpan start = lex_.peek().span;
    auto lhs = parse_and();
    while (accept_keyword("OR"))
        lhs = mk(span_from(start), BinaryExpr{BinOp::Or, std::move(lhs), parse_and()});
    return lhs;
}

ExprPtr Parser::parse_and() {
    SourceSpan start = lex_.peek().span;
    auto lhs = parse_not();
    while (accept_keyword("AND"))
        lhs = mk(span_from(start), BinaryExpr{BinOp::And, std::move(lhs), parse_not()});
    return lhs;
}

ExprPtr Parser::parse_not() {
    SourceSpan start = lex_.peek().span;
    if (peek_keyword("NOT")) {
        // NOT EXISTS / NOT IN are handled in parse_comparison via lookahead;
        // a bare NOT here negates a boolean expression.
        lex_.take();
        if (peek_keyword("EXISTS")) {
            lex_.take();
            expect_symbol("(");
            auto q = parse_query_expr();
            expect_symbol(")");
            return mk(span_from(start), ExistsExpr{std::move(q), true});
        }
        return mk(span_from(start), UnaryExpr{UnOp::Not, parse_not()});
    }
    return parse_comparison();
}

ExprPtr Parser::parse_comparison() {
    SourceSpan start = lex_.peek().span;
    auto lhs = parse_additive();
    for (;;) {
        BinOp op;
        if (accept_symbol("=")) op = BinOp::Eq;
        else if (accept_symbol("<>")) op = BinOp::Ne;
        else if (accept_symbol("<=")) op = BinOp::Le;
        else if (accept_symbol(">=")) op = BinOp::Ge;
        else if (accept_symbol("<")) op = BinOp::Lt;
        else if (accept_symbol(">")) op = BinOp::Gt;
        else if (peek_keyword("IS")) {
            lex_.take();
            bool neg = accept_keyword("NOT");
            expect_keyword("NULL");
            lhs = mk(span_from(start), UnaryExpr{neg ? UnOp::IsNotNull : UnOp::IsNull, std::move(lhs)});
            continue;
        } else if (peek_keyword("NOT") || peek_keyword("IN")) {
            bool neg = accept_keyword("NOT");
            if (!accept_keyword("IN")) {
                if (neg) lex_.error("expected IN after NOT", lex_.peek().span);
                break;
            }
            expect_symbol("(");
            if (at_query_start()) {
                auto q = parse_query_expr();
                expect_symbol(")");
                lhs = mk(span_from(start), InSubqueryExpr{std::move(lhs), std::move(q), neg});
            } else {
                InListExpr in;
                in.probe = std::move(lhs);
                in.negated = neg;
                do in.items.push_back(parse_expr());
                while (accept_symbol(","));
                expect_symbol(")");
                lhs = mk(span_from(start), std::move(in));
            }
            continue;
        } else {
            break;
        }
        lhs = mk(span_from(start), BinaryExpr{op, std::move(lhs), parse_additive()});
    }
    return lhs;
}

ExprPtr Parser::parse_additive() {
    SourceSpan start = lex_.peek().span;
    auto lhs = parse_multiplicative();
    for (;;) {
        BinOp op;
        if (accept_symbol("+")) op = BinOp::Add;
        else if (accept_symbol("-")) op = BinOp::Sub;
        else break;
        lhs = mk(span_from(start), BinaryExpr{op, std::move(lhs), parse_multiplicative()});
    }
    return lhs;
}

ExprPtr Parser::parse_multiplicative() {
    SourceSpan start = lex_.peek().span;
    auto lhs = parse_unary();
    for (;;) {
        BinOp op;
        if (accept_symbol("*")) op = BinOp::Mul;
        else if (accept_symbol("/")) op = BinOp::Div;
        else if (accept_symbol("%")) op = BinOp::Mod;
        else break;
        lhs = mk(span_from(start), BinaryExpr{op, std::move(lhs), parse_unary()});
    }
    return lhs;
}

ExprPtr Parser::parse_unary() {
    SourceSpan start = lex_.peek().span;
    if (accept_symbol("-"))
        return mk(span_from(start), UnaryExpr{UnOp::Neg, parse_unary()});
    accept_symbol("+");
    return parse_power();
}

ExprPtr Parser::parse_power() {
    SourceSpan start = lex_.peek().span;
    auto lhs = parse_primary();
    if (accept_symbol("^")) // right-associative
        return mk(span_from(start), BinaryExpr{BinOp::Pow, std::move(lhs), parse_power()});
    return lhs;
}

ExprPtr Parser::parse_primary() {
    SourceSpan start = lex_.peek().span;
    const Token& t = lex_.peek();
    if (t.kind == Tok::Int) {
        Token tok = lex_.take();
        int64_t v = 0;
        std::from_chars(tok.text.data(), tok.text.data() + tok.text.size(), v);
        return mk(tok.span, Literal{v});
    }
    if (t.kind == Tok::Float) {
        Token tok = lex_.take();
        return mk(tok.span, Literal{std::stod(tok.text)});
    }
    if (t.kind == Tok::String) {
        Token tok = lex_.take();
        return mk(tok.span, Literal{tok.text});
    }
    if (peek_keyword("NULL")) return mk(lex_.take().span, Literal{std::monostate{}});
    if (peek_keyword("TRUE")) return mk(lex_.take().span, Literal{true});
    if (peek_keyword("FALSE")) return mk(lex_.take().span, Literal{false});
    if (peek_keyword("ROW")) {
        lex_.take();
        expect_symbol("(");
        RowExpr row;
        do row.items.push_back(parse_expr());
        while (accept_symbol(","));
        expect_symbol(")");
        return mk(span_from(start), std::move(row));
    }
    if (peek_keyword("EXISTS")) {
        lex_.take();
        expect_symbol("(");
        auto q = parse_query_expr();
        expect_symbol(")");
        return mk(span_from(start), ExistsExpr{std::move(q), false});
    }
    if (peek_keyword("CASE")) {
        lex_.take();
        CaseExpr c;
        if (!peek_keyword("WHEN")) c.operand = parse_expr();
        while (accept_keyword("WHEN")) {
            CaseExpr::Arm arm;
            arm.when = parse_expr();
            expect_keyword("THEN");
            arm.then = parse_expr();
            c.arms.push_back(std::move(arm));
        }
        if (c.arms.empty()) lex_.error("CASE requires at least one WHEN", lex_.peek().span);
        if (accept_keyword("ELSE")) c.else_arm = parse_expr();
        expect_keyword("END");
        return mk(span_from(start), std::move(c));
    }
    if (accept_symbol("(")) {
        if (at_query_start()) {
            auto q = parse_query_expr();
            expect_symbol(")");
            return mk(span_from(start), SubqueryExpr{std::move(q)});
        }
        auto e = parse_expr();
        expect_symbol(")");
        return e;
    }
    if (t.kind == Tok::Ident) {
        std::string name = lex_.take().text;
        if (peek_symbol("(")) return parse_call(name, start);
        if (accept_symbol(".")) {
            std::string col = expect_ident();
            return mk(span_from(start), ColumnRef{name, col});
        }
        return mk(span_from(start), ColumnRef{"", name});
    }
    lex_.error("expected expression", t.span);
}

ExprPtr Parser::parse_call(const std::string& name, SourceSpan start) {
    expect_symbol("(");
    bool star = false;
    std::vector<ExprPtr> args;
    if (accept_symbol("*")) {
        star = true;
        expect_symbol(")");
    } else if (!accept_symbol(")")) {
        do args.push_back(parse_expr());
        while (accept_symbol(","));
        expect_symbol(")");
    }
    bool has_over = peek_keyword("OVER");
    if (star && !(name == "count"))
        lex_.error("'*' argument is only valid in count(*)", span_from(start));
    if (has_over) {
        lex_.take();
        if (!is_window_func_name(name))
            throw SqlError(ErrorKind::Unsupported, "unsupported window function: " + name,
                           span_from(start));
        WindowFuncExpr w;
        w.func = name;
        if (star) w.args.push_back(make_literal_int(1));
        else w.args = std::move(args);
        w.over = parse_over();
        return mk(span_from(start), std::move(w));
    }
    if (is_plain_aggregate_name(name)) {
        AggregateExpr agg;
        agg.func = name;
        agg.star = star;
        if (!star) {
            if (args.size() != 1)
                lex_.error("aggregate " + name + " takes one argument", span_from(start));
            agg.arg = std::move(args[0]);
        }
        return mk(span_from(start), std::move(agg));
    }
    if (name == "rank" || name == "first_value")
        throw SqlError(ErrorKind::Unsupported, name + " requires an OVER clause", span_from(start));
    return mk(span_from(start), FuncCallExpr{name, std::move(args)});
}

WindowSpec Parser::parse_over() {
    WindowSpec spec;
    if (lex_.peek().kind == Tok::Ident) {
        spec.name = lex_.take().text;
        return spec;
    }
    expect_symbol("(");
    if (lex_.peek().kind == Tok::Ident) spec.name = lex_.take().text;
    if (accept_keyword("PARTITION")) {
        expect_keyword("BY");
        do spec.partition.push_back(parse_expr());
        while (accept_symbol(","));
    }
    if (accept_keyword("ORDER")) {
        expect_keyword("BY");
        do spec.order.push_back(parse_order_item());
        while (accept_symbol(","));
    }
    spec.frame = parse_frame_opt();
    expect_symbol(")");
    return spec;
}

// -- prelude ----------------------------------------------------------------

std::vector<Udf> Parser::parse_prelude_statements() {
    std::vector<Udf> udfs;
    while (lex_.peek().kind != Tok::End) {
        SourceSpan start = lex_.peek().span;
        expect_keyword("CREATE");
        expect_keyword("FUNCTION");
        Udf udf;
        udf.span = start;
        udf.name = expect_ident();
        expect_symbol("(");
        if (!accept_symbol(")")) {
            do {
                Column p;
                p.name = expect_ident();
                std::string ty = expect_ident();
                auto t = col_type_from_name(ty);
                if (!t) throw SqlError(ErrorKind::Unsupported, "unsupported type: " + ty, start);
                p.type = *t;
                udf.params.push_back(std::move(p));
            } while (accept_symbol(","));
            expect_symbol(")");
        }
        expect_keyword("RETURNS");
        if (accept_keyword("TABLE")) {
            udf.returns_table = true;
            expect_symbol("(");
            do {
                Column c;
                c.name = expect_ident();
                std::string ty = expect_ident();
                auto t = col_type_from_name(ty);
                if (!t) throw SqlError(ErrorKind::Unsupported, "unsupported type: " + ty, start);
                c.type = *t;
                udf.table_columns.push_back(std::move(c));
            } while (accept_symbol(","));
            expect_symbol(")");
        } else {
            std::string ty = expect_ident();
            auto t = col_type_from_name(ty);
            if (!t) throw SqlError(ErrorKind::Unsupported, "unsupported type: " + ty, start);
            udf.scalar_type = *t;
        }
        expect_keyword("AS");
        std::string body = lex_.take_dollar_body();
        expect_keyword("LANGUAGE");
        expect_keyword("SQL");
        accept_symbol(";");
        udf.body = sqlprov::parse_query(body);
        udf.span.end = lex_.peek().span.begin;
        udfs.push_back(std::move(udf));
    }
    return udfs;
}

std::set<std::string> called_functions(const Query& q) {
    std::set<std::string> out;
    walk_exprs(q, [&](const Expr& e) {
        if (const auto* f = std::get_if<FuncCallExpr>(&e.node)) out.insert(f->name);
        return true;
    });
    std::function<void(const Query&)> rec = [&](const Query& query) {
        std::visit(
            [&](const auto& n) {
                using T = std::decay_t<decltype(n)>;
                if constexpr (std::is_same_v<T, SelectBlock>) {
                    for (const auto& s : n.from) {
                        if (s.item.kind == FromItem::Kind::TableFunc) out.insert(s.item.func);
                        if (s.item.subquery) rec(*s.item.subquery);
                    }
                } else if constexpr (std::is_same_v<T, SetOpQuery>) {
                    for (const auto& a : n.arms) rec(*a);
                } else {
                    for (const auto& b : n.bindings) rec(*b.query);
                    rec(*n.body);
                }
            },
            query.node);
    };
    rec(q);
    walk_exprs(q, [&](const Expr& e) {
        const Query* sub = nullptr;
        if (const auto* s = std::get_if<SubqueryExpr>(&e.node)) sub = s->query.get();
        else if (const auto* s2 = std::get_if<InSubqueryExpr>(&e.node)) sub = s2->query.get();
        else if (const auto* s3 = std::get_if<ExistsExpr>(&e.node)) sub = s3->query.get();
        if (sub)
            for (const auto& name : called_functions(*sub)) out.insert(name);
        return true;
    });
    return out;
}

// The dialect forbids (mutually) recursive UDFs: reject cycles in the call
// graph, where calls may appear as scalar calls or table functions.
void check_udf_recursion(const std::vector<Udf>& udfs) {
    std::map<std::string, std::set<std::string>> graph;
    for (const auto& u : udfs) graph[u.name] = called_functions(*u.body);
    for (const auto& start : udfs) {
        std::set<std::string> seen;
        std::vector<std::string> stack{start.name};
        while (!stack.empty()) {
            std::string cur = stack.back();
            stack.pop_back();
            auto it = graph.find(cur);
            if (it == graph.end()) continue;
            for (const auto& next : it->second) {
                if (next == start.name)
                    throw SqlError(ErrorKind::Unsupported, "recursive UDF: " + start.name,
                                   start.span);
                if (seen.insert(next).second) stack.push_back(next);
            }
        }
    }
}

} // namespace

QueryPtr parse_query(const std::string& text) {
    Parser p(text);
    return p.parse_statement();
}

std::vector<Udf> parse_prelude(const std::string& text) {
    Parser p(text);
    auto udfs = p.parse_prelude_statements();
    check_udf_recursion(udfs);
    return udfs;
}

} // namespace sqlprov
