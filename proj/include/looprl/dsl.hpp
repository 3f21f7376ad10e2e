#pragma once

// Text format for programs.
//
//   program blur;
//   buffer img[130][130] float;
//   buffer out[128][128] float;
//   for i in 0..128 {
//     for j in 0..128 {
//       S0: out[i][j] = (img[i][j] + img[i + 1][j] + img[i + 2][j]) / 3.0;
//     }
//   }
//
// Every statement becomes one computation whose nest is the stack of loops
// enclosing it. Consecutive statements whose enclosing loops have identical
// headers (name and bounds) share those loops, so two adjacent loops written
// with the same header are fused.

#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "looprl/ir.hpp"

namespace looprl {

class ParseError : public Error {
 public:
  ParseError(const std::string& msg, int line, int column)
      : Error(std::to_string(line) + ":" + std::to_string(column) + ": " + msg),
        line_(line),
        column_(column) {}
  int line() const { return line_; }
  int column() const { return column_; }

 private:
  int line_;
  int column_;
};

namespace dsl_detail {

enum class Tok {
  kIdent, kInt, kFloat, kLBracket, kRBracket, kLBrace, kRBrace, kLParen, kRParen,
  kSemi, kColon, kComma, kAssign, kPlus, kMinus, kStar, kSlash, kDotDot, kEnd
};

struct Token {
  Tok kind = Tok::kEnd;
  std::string text;
  int line = 1;
  int column = 1;
};

inline std::vector<Token> tokenize(std::string_view src) {
  std::vector<Token> out;
  int line = 1;
  int col = 1;
  std::size_t i = 0;
  auto advance = [&](std::size_t n) {
    for (std::size_t k = 0; k < n; ++k) {
      if (src[i] == '\n') {
        ++line;
        col = 1;
      } else {
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
    if (c == '#' || (c == '/' && i + 1 < src.size() && src[i + 1] == '/')) {
      while (i < src.size() && src[i] != '\n') advance(1);
      continue;
    }
    Token t;
    t.line = line;
    t.column = col;
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      std::size_t j = i;
      while (j < src.size() && (std::isalnum(static_cast<unsigned char>(src[j])) || src[j] == '_')) ++j;
      t.kind = Tok::kIdent;
      t.text = std::string(src.substr(i, j - i));
      advance(j - i);
    } else if (std::isdigit(static_cast<unsigned char>(c))) {
      std::size_t j = i;
      while (j < src.size() && std::isdigit(static_cast<unsigned char>(src[j]))) ++j;
      bool is_float = false;
      if (j + 1 < src.size() && src[j] == '.' && std::isdigit(static_cast<unsigned char>(src[j + 1]))) {
        is_float = true;
        ++j;
        while (j < src.size() && std::isdigit(static_cast<unsigned char>(src[j]))) ++j;
      }
      if (j < src.size() && (src[j] == 'e' || src[j] == 'E')) {
        std::size_t k = j + 1;
        if (k < src.size() && (src[k] == '+' || src[k] == '-')) ++k;
        if (k < src.size() && std::isdigit(static_cast<unsigned char>(src[k]))) {
          is_float = true;
          j = k;
          while (j < src.size() && std::isdigit(static_cast<unsigned char>(src[j]))) ++j;
        }
      }
      t.kind = is_float ? Tok::kFloat : Tok::kInt;
      t.text = std::string(src.substr(i, j - i));
      advance(j - i);
    } else {
      std::size_t len = 1;
      switch (c) {
        case '[': t.kind = Tok::kLBracket; break;
        case ']': t.kind = Tok::kRBracket; break;
        case '{': t.kind = Tok::kLBrace; break;
        case '}': t.kind = Tok::kRBrace; break;
        case '(': t.kind = Tok::kLParen; break;
        case ')': t.kind = Tok::kRParen; break;
        case ';': t.kind = Tok::kSemi; break;
        case ':': t.kind = Tok::kColon; break;
        case ',': t.kind = Tok::kComma; break;
        case '=': t.kind = Tok::kAssign; break;
        case '+': t.kind = Tok::kPlus; break;
        case '-': t.kind = Tok::kMinus; break;
        case '*': t.kind = Tok::kStar; break;
        case '/': t.kind = Tok::kSlash; break;
        case '.':
          if (i + 1 < src.size() && src[i + 1] == '.') {
            t.kind = Tok::kDotDot;
            len = 2;
            break;
          }
          [[fallthrough]];
        default:
          throw ParseError(std::string("unexpected character '") + c + "'", line, col);
      }
      t.text = std::string(src.substr(i, len));
      advance(len);
    }
    out.push_back(std::move(t));
  }
  Token end;
  end.kind = Tok::kEnd;
  end.line = line;
  end.column = col;
  out.push_back(end);
  return out;
}

inline bool is_keyword(const std::string& s) {
  return s == "for" || s == "in" || s == "buffer" || s == "program" || s == "float" ||
         s == "int" || s == "min" || s == "max";
}

class Parser {
 public:
  explicit Parser(std::string_view src) : toks_(tokenize(src)) {}

  Program parse() {
    Program p;
    p.name = "main";
    if (peek_ident("program")) {
      next();
      p.name = expect_name("program name");
      expect(Tok::kSemi, "';'");
    }
    program_ = &p;
    while (peek().kind != Tok::kEnd) {
      if (peek_ident("buffer")) {
        parse_buffer();
      } else if (peek_ident("for")) {
        parse_loop();
      } else {
        fail("expected 'buffer' or 'for'");
      }
    }
    if (p.computations.empty()) {
      const Token& t = peek();
      throw ParseError("no computations", t.line, t.column);
    }
    return p;
  }

 private:
  const Token& peek(std::size_t ahead = 0) const {
    return toks_[std::min(pos_ + ahead, toks_.size() - 1)];
  }
  const Token& next() { return toks_[pos_ < toks_.size() - 1 ? pos_++ : pos_]; }
  bool peek_ident(const char* word) const {
    return peek().kind == Tok::kIdent && peek().text == word;
  }
  [[noreturn]] void fail(const std::string& msg) const {
    const Token& t = peek();
    throw ParseError(msg + (t.kind == Tok::kEnd ? " at end of input" : ", found '" + t.text + "'"),
                     t.line, t.column);
  }
  const Token& expect(Tok kind, const char* what) {
    if (peek().kind != kind) fail(std::string("expected ") + what);
    return next();
  }
  void expect_word(const char* word) {
    if (!peek_ident(word)) fail(std::string("expected '") + word + "'");
    next();
  }
  std::string expect_name(const char* what) {
    if (peek().kind != Tok::kIdent || is_keyword(peek().text)) fail(std::string("expected ") + what);
    return next().text;
  }
  std::int64_t expect_int() {
    bool neg = false;
    if (peek().kind == Tok::kMinus) {
      next();
      neg = true;
    }
    const Token& t = expect(Tok::kInt, "integer");
    const std::int64_t v = std::strtoll(t.text.c_str(), nullptr, 10);
    return neg ? -v : v;
  }

  void parse_buffer() {
    const Token& start = next();
    Buffer b;
    b.name = expect_name("buffer name");
    if (program_->buffer_index(b.name) >= 0)
      throw ParseError("duplicate buffer '" + b.name + "'", start.line, start.column);
    while (peek().kind == Tok::kLBracket) {
      next();
      const Token& t = peek();
      const std::int64_t d = expect_int();
      if (d <= 0) throw ParseError("buffer extent must be positive", t.line, t.column);
      b.dims.push_back(d);
      expect(Tok::kRBracket, "']'");
    }
    if (b.dims.empty()) fail("expected '['");
    if (peek_ident("float")) {
      b.kind = ElementKind::kFloat;
    } else if (peek_ident("int")) {
      b.kind = ElementKind::kInt;
    } else {
      fail("expected element kind 'float' or 'int'");
    }
    next();
    expect(Tok::kSemi, "';'");
    program_->buffers.push_back(std::move(b));
  }

  void parse_loop() {
    const Token& start = next();  // 'for'
    Iterator it;
    it.name = expect_name("iterator name");
    for (const auto& open : nest_)
      if (open.name == it.name)
        throw ParseError("iterator '" + it.name + "' already bound in this nest", start.line, start.column);
    expect_word("in");
    it.lower = expect_int();
    expect(Tok::kDotDot, "'..'");
    it.upper = expect_int();
    if (it.upper <= it.lower)
      throw ParseError("empty loop range for '" + it.name + "'", start.line, start.column);
    it.level = static_cast<int>(nest_.size());
    expect(Tok::kLBrace, "'{'");
    nest_.push_back(it);
    while (peek().kind != Tok::kRBrace) {
      if (peek().kind == Tok::kEnd) fail("expected '}'");
      if (peek_ident("for")) {
        parse_loop();
      } else {
        parse_statement();
      }
    }
    next();
    nest_.pop_back();
  }

  void parse_statement() {
    Computation c;
    c.nest = nest_;
    if (peek().kind == Tok::kIdent && peek(1).kind == Tok::kColon) {
      c.id = expect_name("statement label");
      next();
    } else {
      c.id = "S" + std::to_string(program_->computations.size());
    }
    for (const auto& other : program_->computations)
      if (other.id == c.id) fail("duplicate statement label '" + c.id + "'");
    comp_ = &c;
    c.write = parse_access();
    expect(Tok::kAssign, "'='");
    c.root = parse_expr();
    expect(Tok::kSemi, "';'");
    comp_ = nullptr;
    program_->computations.push_back(std::move(c));
  }

  Access parse_access() {
    const Token& name_tok = peek();
    const std::string name = expect_name("buffer name");
    const int idx = program_->buffer_index(name);
    if (idx < 0) throw ParseError("undeclared buffer '" + name + "'", name_tok.line, name_tok.column);
    Access a;
    a.buffer = idx;
    while (peek().kind == Tok::kLBracket) {
      next();
      a.subscripts.push_back(parse_affine());
      expect(Tok::kRBracket, "']'");
    }
    const auto& buf = program_->buffers[static_cast<std::size_t>(idx)];
    if (static_cast<int>(a.subscripts.size()) != buf.rank())
      throw ParseError("buffer '" + name + "' has rank " + std::to_string(buf.rank()) + " but " +
                           std::to_string(a.subscripts.size()) + " subscripts were given",
                       name_tok.line, name_tok.column);
    return a;
  }

  // Affine sub-language: an AffineForm plus a flag telling whether the value
  // is a pure constant.
  struct AffineValue {
    AffineForm form;
    bool constant() const {
      for (auto c : form.coeffs)
        if (c != 0) return false;
      return true;
    }
  };

  AffineValue affine_zero() const {
    AffineValue v;
    v.form.coeffs.assign(nest_.size(), 0);
    return v;
  }

  AffineForm parse_affine() {
    AffineValue v = parse_affine_sum();
    if (peek().kind == Tok::kSlash) fail("non-affine subscript (division)");
    return v.form;
  }

  AffineValue parse_affine_sum() {
    AffineValue acc = parse_affine_product();
    while (peek().kind == Tok::kPlus || peek().kind == Tok::kMinus) {
      const bool minus = next().kind == Tok::kMinus;
      AffineValue rhs = parse_affine_product();
      for (std::size_t k = 0; k < acc.form.coeffs.size(); ++k)
        acc.form.coeffs[k] += minus ? -rhs.form.coeffs[k] : rhs.form.coeffs[k];
      acc.form.constant += minus ? -rhs.form.constant : rhs.form.constant;
    }
    return acc;
  }

  AffineValue parse_affine_product() {
    AffineValue acc = parse_affine_factor();
    while (peek().kind == Tok::kStar) {
      const Token& op = next();
      AffineValue rhs = parse_affine_factor();
      if (!acc.constant() && !rhs.constant())
        throw ParseError("non-affine subscript (product of iterators)", op.line, op.column);
      if (acc.constant()) std::swap(acc, rhs);
      const std::int64_t s = rhs.form.constant;
      for (auto& c : acc.form.coeffs) c *= s;
      acc.form.constant *= s;
    }
    return acc;
  }

  AffineValue parse_affine_factor() {
    const Token& t = peek();
    if (t.kind == Tok::kMinus) {
      next();
      AffineValue v = parse_affine_factor();
      for (auto& c : v.form.coeffs) c = -c;
      v.form.constant = -v.form.constant;
      return v;
    }
    if (t.kind == Tok::kInt) {
      AffineValue v = affine_zero();
      v.form.constant = std::strtoll(next().text.c_str(), nullptr, 10);
      return v;
    }
    if (t.kind == Tok::kLParen) {
      next();
      AffineValue v = parse_affine_sum();
      expect(Tok::kRParen, "')'");
      return v;
    }
    if (t.kind == Tok::kIdent) {
      for (std::size_t k = 0; k < nest_.size(); ++k) {
        if (nest_[k].name == t.text) {
          next();
          AffineValue v = affine_zero();
          v.form.coeffs[k] = 1;
          return v;
        }
      }
      throw ParseError("unknown iterator '" + t.text + "' in subscript", t.line, t.column);
    }
    if (t.kind == Tok::kFloat) throw ParseError("non-affine subscript (non-integer constant)", t.line, t.column);
    fail("expected affine subscript");
  }

  int add_node(ExprNode n) {
    comp_->expr.push_back(n);
    return static_cast<int>(comp_->expr.size()) - 1;
  }

  int parse_expr() {
    int lhs = parse_term();
    while (peek().kind == Tok::kPlus || peek().kind == Tok::kMinus) {
      const BinaryOp op = next().kind == Tok::kPlus ? BinaryOp::kAdd : BinaryOp::kSub;
      const int rhs = parse_term();
      lhs = add_binary(op, lhs, rhs);
    }
    return lhs;
  }

  int parse_term() {
    int lhs = parse_unary();
    while (peek().kind == Tok::kStar || peek().kind == Tok::kSlash) {
      const BinaryOp op = next().kind == Tok::kStar ? BinaryOp::kMul : BinaryOp::kDiv;
      const int rhs = parse_unary();
      lhs = add_binary(op, lhs, rhs);
    }
    return lhs;
  }

  int add_binary(BinaryOp op, int lhs, int rhs) {
    ExprNode n;
    n.kind = ExprKind::kBinary;
    n.op = op;
    n.lhs = lhs;
    n.rhs = rhs;
    return add_node(n);
  }

  int parse_unary() {
    if (peek().kind == Tok::kMinus) {
      next();
      if (peek().kind == Tok::kInt || peek().kind == Tok::kFloat) {
        const int idx = parse_number();
        comp_->expr[static_cast<std::size_t>(idx)].value = -comp_->expr[static_cast<std::size_t>(idx)].value;
        return idx;
      }
      ExprNode zero;
      zero.kind = ExprKind::kConstant;
      zero.integer_literal = true;
      const int z = add_node(zero);
      const int operand = parse_unary();
      return add_binary(BinaryOp::kSub, z, operand);
    }
    return parse_primary();
  }

  int parse_number() {
    const Token& t = next();
    ExprNode n;
    n.kind = ExprKind::kConstant;
    n.integer_literal = t.kind == Tok::kInt;
    n.value = std::strtod(t.text.c_str(), nullptr);
    return add_node(n);
  }

  int parse_primary() {
    const Token& t = peek();
    if (t.kind == Tok::kInt || t.kind == Tok::kFloat) return parse_number();
    if (t.kind == Tok::kLParen) {
      next();
      const int e = parse_expr();
      expect(Tok::kRParen, "')'");
      return e;
    }
    if (t.kind == Tok::kIdent && (t.text == "min" || t.text == "max")) {
      const BinaryOp op = t.text == "min" ? BinaryOp::kMin : BinaryOp::kMax;
      next();
      expect(Tok::kLParen, "'('");
      const int a = parse_expr();
      expect(Tok::kComma, "','");
      const int b = parse_expr();
      expect(Tok::kRParen, "')'");
      return add_binary(op, a, b);
    }
    if (t.kind == Tok::kIdent) {
      for (const auto& it : nest_)
        if (it.name == t.text)
          throw ParseError("iterator '" + t.text + "' used as a value", t.line, t.column);
      Access a = parse_access();
      int read = -1;
      for (std::size_t r = 0; r < comp_->reads.size(); ++r)
        if (comp_->reads[r] == a) read = static_cast<int>(r);
      if (read < 0) {
        comp_->reads.push_back(std::move(a));
        read = static_cast<int>(comp_->reads.size()) - 1;
      }
      ExprNode n;
      n.kind = ExprKind::kRead;
      n.read = read;
      return add_node(n);
    }
    fail("expected expression");
  }

  std::vector<Token> toks_;
  std::size_t pos_ = 0;
  Program* program_ = nullptr;
  Computation* comp_ = nullptr;
  std::vector<Iterator> nest_;
};

inline std::string format_float(double v) {
  char buf[64];
  for (int prec = 1; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  std::string s(buf);
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return s;
}

inline std::string format_affine(const AffineForm& f, const std::vector<Iterator>& nest) {
  std::string out;
  for (std::size_t k = 0; k < f.coeffs.size(); ++k) {
    const std::int64_t c = f.coeffs[k];
    if (c == 0) continue;
    const std::int64_t mag = c < 0 ? -c : c;
    if (out.empty()) {
      if (c < 0) out += "-";
    } else {
      out += c < 0 ? " - " : " + ";
    }
    if (mag != 1) out += std::to_string(mag) + "*";
    out += nest[k].name;
  }
  if (out.empty()) return std::to_string(f.constant);
  if (f.constant > 0) out += " + " + std::to_string(f.constant);
  if (f.constant < 0) out += " - " + std::to_string(-f.constant);
  return out;
}

inline std::string format_access(const Program& p, const Access& a, const std::vector<Iterator>& nest) {
  std::string out = p.buffers[static_cast<std::size_t>(a.buffer)].name;
  for (const auto& s : a.subscripts) out += "[" + format_affine(s, nest) + "]";
  return out;
}

inline int precedence(const ExprNode& n) {
  if (n.kind != ExprKind::kBinary) return 3;
  switch (n.op) {
    case BinaryOp::kAdd:
    case BinaryOp::kSub: return 1;
    case BinaryOp::kMul:
    case BinaryOp::kDiv: return 2;
    default: return 3;
  }
}

inline std::string format_expr(const Program& p, const Computation& c, int idx) {
  const ExprNode& n = c.expr[static_cast<std::size_t>(idx)];
  switch (n.kind) {
    case ExprKind::kConstant:
      if (n.integer_literal) return std::to_string(static_cast<long long>(n.value));
      return format_float(n.value);
    case ExprKind::kRead:
      return format_access(p, c.reads[static_cast<std::size_t>(n.read)], c.nest);
    case ExprKind::kBinary: break;
  }
  const std::string a = format_expr(p, c, n.lhs);
  const std::string b = format_expr(p, c, n.rhs);
  if (n.op == BinaryOp::kMin || n.op == BinaryOp::kMax)
    return std::string(op_symbol(n.op)) + "(" + a + ", " + b + ")";
  const int prec = precedence(n);
  const auto& ln = c.expr[static_cast<std::size_t>(n.lhs)];
  const auto& rn = c.expr[static_cast<std::size_t>(n.rhs)];
  // A leading negative literal on the right-hand side would print as "a - -1";
  // that is valid input, so only precedence decides on parentheses.
  const bool lp = precedence(ln) < prec;
  const bool rp = precedence(rn) <= prec;
  return (lp ? "(" + a + ")" : a) + " " + op_symbol(n.op) + " " + (rp ? "(" + b + ")" : b);
}

}  // namespace dsl_detail

/// Parses program text. Throws ParseError (with line/column) on malformed
/// input and Error when the result violates the program invariants.
inline Program parse_program(std::string_view text) {
  dsl_detail::Parser parser(text);
  Program p = parser.parse();
  validate_program(p, ProgramCaps{64, 64, 1 << 20});
  return p;
}

/// Canonical text form. Loops shared by consecutive computations are printed
/// once, matching how the AST merges them.
inline std::string serialize_program(const Program& p) {
  using dsl_detail::format_access;
  using dsl_detail::format_expr;
  std::ostringstream os;
  os << "program " << p.name << ";\n";
  for (const auto& b : p.buffers) {
    os << "buffer " << b.name;
    for (auto d : b.dims) os << "[" << d << "]";
    os << (b.kind == ElementKind::kFloat ? " float" : " int") << ";\n";
  }
  std::vector<Iterator> open;
  auto indent = [&](std::size_t n) {
    for (std::size_t k = 0; k < n; ++k) os << "  ";
  };
  auto same_header = [](const Iterator& a, const Iterator& b) {
    return a.name == b.name && a.lower == b.lower && a.upper == b.upper;
  };
  for (const auto& c : p.computations) {
    std::size_t common = 0;
    while (common < open.size() && common < c.nest.size() && same_header(open[common], c.nest[common])) ++common;
    while (open.size() > common) {
      open.pop_back();
      indent(open.size());
      os << "}\n";
    }
    for (std::size_t k = common; k < c.nest.size(); ++k) {
      indent(open.size());
      os << "for " << c.nest[k].name << " in " << c.nest[k].lower << ".." << c.nest[k].upper << " {\n";
      open.push_back(c.nest[k]);
    }
    indent(open.size());
    os << c.id << ": " << format_access(p, c.write, c.nest) << " = " << format_expr(p, c, c.root) << ";\n";
  }
  while (!open.empty()) {
    open.pop_back();
    indent(open.size());
    os << "}\n";
  }
  return os.str();
}

/// Stable content id: hash of the canonical serialization.
inline std::string program_id(const Program& p) { return hex64(fnv1a64(serialize_program(p))); }

}  // namespace looprl
