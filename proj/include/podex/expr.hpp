#pragma once

#include <cmath>
#include <cstddef>
#include <map>
#include <memory>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "podex/series.hpp"

namespace podex {

/// Domain error (log/sqrt of a nonpositive argument etc.) carrying the
/// offending subexpression.
class EvalDomainError : public std::runtime_error {
 public:
  EvalDomainError(const std::string& what, const std::string& subexpr)
      : std::runtime_error(what + " in subexpression: " + subexpr) {}
};

class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t pos, const std::string& msg)
      : std::runtime_error("parse error at position " + std::to_string(pos) + ": " + msg), pos_(pos) {}
  std::size_t position() const { return pos_; }

 private:
  std::size_t pos_;
};

/// Immutable scalar expression over named variables.  Closed under
/// {+, -, *, /, pow, sin, cos, exp, log, sqrt} plus the compactly supported
/// primitive cexp(u) = exp(-1/u) for u > 0, 0 otherwise (used for smooth
/// cutoffs).  Exact symbolic derivatives of any order.
class Expr {
 public:
  enum class Kind { Const, Var, Add, Sub, Mul, Div, Neg, Pow, Sin, Cos, Exp, Log, Sqrt, CExpPow };

  struct Node {
    Kind kind;
    double value = 0.0;      // Const value or Pow exponent
    int ipar = 0;            // CExpPow power of 1/u
    int var = -1;            // Var index
    std::string name;        // Var name
    std::vector<Expr> args;
  };

  Expr() : node_(constant_node(0.0)) {}
  explicit Expr(double v) : node_(constant_node(v)) {}

  static Expr constant(double v) { return Expr(constant_node(v)); }
  static Expr variable(int index, std::string name) {
    auto n = std::make_shared<Node>();
    n->kind = Kind::Var;
    n->var = index;
    n->name = std::move(name);
    return Expr(std::move(n));
  }

  Kind kind() const { return node_->kind; }
  double value() const { return node_->value; }
  int var_index() const { return node_->var; }
  const std::vector<Expr>& args() const { return node_->args; }
  const Node* raw() const { return node_.get(); }
  bool is_const(double v) const { return node_->kind == Kind::Const && node_->value == v; }
  bool is_const() const { return node_->kind == Kind::Const; }

  friend Expr operator+(const Expr& a, const Expr& b) {
    if (a.is_const() && b.is_const()) return Expr(a.value() + b.value());
    if (a.is_const(0.0)) return b;
    if (b.is_const(0.0)) return a;
    return make(Kind::Add, {a, b});
  }
  friend Expr operator-(const Expr& a, const Expr& b) {
    if (a.is_const() && b.is_const()) return Expr(a.value() - b.value());
    if (b.is_const(0.0)) return a;
    if (a.is_const(0.0)) return -b;
    return make(Kind::Sub, {a, b});
  }
  friend Expr operator*(const Expr& a, const Expr& b) {
    if (a.is_const() && b.is_const()) return Expr(a.value() * b.value());
    if (a.is_const(0.0) || b.is_const(0.0)) return Expr(0.0);
    if (a.is_const(1.0)) return b;
    if (b.is_const(1.0)) return a;
    return make(Kind::Mul, {a, b});
  }
  friend Expr operator/(const Expr& a, const Expr& b) {
    if (b.is_const(1.0)) return a;
    if (a.is_const(0.0) && !b.is_const(0.0)) return Expr(0.0);
    if (a.is_const() && b.is_const() && b.value() != 0.0) return Expr(a.value() / b.value());
    return make(Kind::Div, {a, b});
  }
  friend Expr operator-(const Expr& a) {
    if (a.is_const()) return Expr(-a.value());
    if (a.kind() == Kind::Neg) return a.args()[0];
    return make(Kind::Neg, {a});
  }
  friend Expr operator+(const Expr& a, double b) { return a + Expr(b); }
  friend Expr operator+(double a, const Expr& b) { return Expr(a) + b; }
  friend Expr operator-(const Expr& a, double b) { return a - Expr(b); }
  friend Expr operator-(double a, const Expr& b) { return Expr(a) - b; }
  friend Expr operator*(const Expr& a, double b) { return a * Expr(b); }
  friend Expr operator*(double a, const Expr& b) { return Expr(a) * b; }
  friend Expr operator/(const Expr& a, double b) { return a / Expr(b); }
  friend Expr operator/(double a, const Expr& b) { return Expr(a) / b; }

  friend Expr sin(const Expr& a) {
    if (a.is_const()) return Expr(std::sin(a.value()));
    return make(Kind::Sin, {a});
  }
  friend Expr cos(const Expr& a) {
    if (a.is_const()) return Expr(std::cos(a.value()));
    return make(Kind::Cos, {a});
  }
  friend Expr exp(const Expr& a) {
    if (a.is_const()) return Expr(std::exp(a.value()));
    return make(Kind::Exp, {a});
  }
  friend Expr log(const Expr& a) {
    if (a.is_const() && a.value() > 0.0) return Expr(std::log(a.value()));
    return make(Kind::Log, {a});
  }
  friend Expr sqrt(const Expr& a) {
    if (a.is_const() && a.value() > 0.0) return Expr(std::sqrt(a.value()));
    return make(Kind::Sqrt, {a});
  }
  friend Expr pow(const Expr& a, double e) {
    if (e == 0.0) return Expr(1.0);
    if (e == 1.0) return a;
    if (a.is_const() && (a.value() > 0.0 || e == std::round(e))) return Expr(std::pow(a.value(), e));
    Expr r = make(Kind::Pow, {a});
    const_cast<Node*>(r.node_.get())->value = e;
    return r;
  }
  /// cexp(u) = exp(-1/u)/u^j for u > 0, 0 otherwise.  Smooth in u.
  friend Expr cexp_pow(const Expr& a, int j) {
    Expr r = make(Kind::CExpPow, {a});
    const_cast<Node*>(r.node_.get())->ipar = j;
    return r;
  }
  friend Expr cexp(const Expr& a) { return cexp_pow(a, 0); }

  /// Exact symbolic partial derivative with respect to variable index.
  Expr diff(int var) const {
    switch (kind()) {
      case Kind::Const: return Expr(0.0);
      case Kind::Var: return Expr(node_->var == var ? 1.0 : 0.0);
      case Kind::Add: return args()[0].diff(var) + args()[1].diff(var);
      case Kind::Sub: return args()[0].diff(var) - args()[1].diff(var);
      case Kind::Mul: return args()[0].diff(var) * args()[1] + args()[0] * args()[1].diff(var);
      case Kind::Div: {
        const Expr &f = args()[0], &g = args()[1];
        return (f.diff(var) * g - f * g.diff(var)) / (g * g);
      }
      case Kind::Neg: return -args()[0].diff(var);
      case Kind::Pow: {
        const Expr& f = args()[0];
        return value() * pow(f, value() - 1.0) * f.diff(var);
      }
      case Kind::Sin: return cos(args()[0]) * args()[0].diff(var);
      case Kind::Cos: return -(sin(args()[0]) * args()[0].diff(var));
      case Kind::Exp: return *this * args()[0].diff(var);
      case Kind::Log: return args()[0].diff(var) / args()[0];
      case Kind::Sqrt: return args()[0].diff(var) / (2.0 * *this);
      case Kind::CExpPow: {
        const Expr& u = args()[0];
        int j = node_->ipar;
        // d/du [exp(-1/u) u^-j] = exp(-1/u) u^-(j+2) - j exp(-1/u) u^-(j+1)
        Expr d = cexp_pow(u, j + 2) - double(j) * cexp_pow(u, j + 1);
        return d * u.diff(var);
      }
    }
    return Expr(0.0);
  }

  int max_var_index() const {
    int m = node_->var;
    for (const Expr& a : args()) m = std::max(m, a.max_var_index());
    return m;
  }

  std::string to_string() const {
    std::ostringstream os;
    print(os);
    return os.str();
  }

  template <class T>
  T eval(std::span<const T> vars) const;

  /// eval with a caller-owned memo table, so evaluations of several trees
  /// that share subexpressions (e.g. all partials of one Hamiltonian at the
  /// same point) reuse each other's work.
  template <class T>
  T eval_shared(std::span<const T> vars, std::unordered_map<const Node*, T>& memo) const;

  double eval(std::span<const double> vars) const { return eval<double>(vars); }
  double eval(const std::vector<double>& vars) const { return eval<double>(std::span<const double>(vars)); }

 private:
  explicit Expr(std::shared_ptr<const Node> n) : node_(std::move(n)) {}
  static std::shared_ptr<const Node> constant_node(double v) {
    auto n = std::make_shared<Node>();
    n->kind = Kind::Const;
    n->value = v;
    return n;
  }
  static Expr make(Kind k, std::vector<Expr> args) {
    auto n = std::make_shared<Node>();
    n->kind = k;
    n->args = std::move(args);
    return Expr(std::move(n));
  }

  void print(std::ostringstream& os) const {
    switch (kind()) {
      case Kind::Const: os << value(); break;
      case Kind::Var: os << node_->name; break;
      case Kind::Add: os << '('; args()[0].print(os); os << " + "; args()[1].print(os); os << ')'; break;
      case Kind::Sub: os << '('; args()[0].print(os); os << " - "; args()[1].print(os); os << ')'; break;
      case Kind::Mul: os << '('; args()[0].print(os); os << " * "; args()[1].print(os); os << ')'; break;
      case Kind::Div: os << '('; args()[0].print(os); os << " / "; args()[1].print(os); os << ')'; break;
      case Kind::Neg: os << "(-"; args()[0].print(os); os << ')'; break;
      case Kind::Pow: args()[0].print(os); os << '^' << value(); break;
      case Kind::Sin: os << "sin("; args()[0].print(os); os << ')'; break;
      case Kind::Cos: os << "cos("; args()[0].print(os); os << ')'; break;
      case Kind::Exp: os << "exp("; args()[0].print(os); os << ')'; break;
      case Kind::Log: os << "log("; args()[0].print(os); os << ')'; break;
      case Kind::Sqrt: os << "sqrt("; args()[0].print(os); os << ')'; break;
      case Kind::CExpPow:
        os << "cexp(";
        args()[0].print(os);
        os << ')';
        if (node_->ipar != 0) { os << "/("; args()[0].print(os); os << ")^" << node_->ipar; }
        break;
    }
  }

  std::shared_ptr<const Node> node_;

  friend class ExprParser;
};

namespace detail {

inline double cexp_eval(double u, int j) {
  if (u <= 0.0) return 0.0;
  return std::exp(-1.0 / u) / std::pow(u, double(j));
}

inline Series cexp_eval(const Series& u, int j) {
  if (u[0] <= 0.0) return Series(u.order(), 0.0);
  Series r = exp(-(1.0 / u));
  for (int i = 0; i < j; ++i) r = r / u;
  return r;
}

template <class T>
T apply_unary(Expr::Kind k, const T& a, const Expr::Node* node) {
  using std::cos;
  using std::exp;
  using std::log;
  using std::sin;
  using std::sqrt;
  switch (k) {
    case Expr::Kind::Neg: return -a;
    case Expr::Kind::Sin: return sin(a);
    case Expr::Kind::Cos: return cos(a);
    case Expr::Kind::Exp: return exp(a);
    case Expr::Kind::Log:
      if constexpr (std::is_same_v<T, double>) {
        if (a <= 0.0) throw EvalDomainError("log of nonpositive argument", Expr::Kind::Log == k ? node->args[0].to_string() : "");
      }
      return log(a);
    case Expr::Kind::Sqrt:
      if constexpr (std::is_same_v<T, double>) {
        if (a <= 0.0) throw EvalDomainError("sqrt of nonpositive argument", node->args[0].to_string());
      }
      return sqrt(a);
    default: throw std::logic_error("bad unary kind");
  }
}

}  // namespace detail

template <class T>
T Expr::eval(std::span<const T> vars) const {
  std::unordered_map<const Node*, T> memo;
  return eval_shared(vars, memo);
}

template <class T>
T Expr::eval_shared(std::span<const T> vars, std::unordered_map<const Node*, T>& memo) const {
  // post-order evaluation with sharing-aware memoization
  struct Frame { const Node* n; std::size_t next; };
  std::vector<Frame> stack;
  stack.push_back({node_.get(), 0});
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (memo.count(f.n)) { stack.pop_back(); continue; }
    if (f.next < f.n->args.size()) {
      const Node* c = f.n->args[f.next++].raw();
      if (!memo.count(c)) stack.push_back({c, 0});
      continue;
    }
    T v{};
    switch (f.n->kind) {
      case Kind::Const:
        if constexpr (std::is_same_v<T, double>) v = f.n->value;
        else v = T(vars[0].order(), f.n->value);
        break;
      case Kind::Var: v = vars[std::size_t(f.n->var)]; break;
      case Kind::Add: v = memo.at(f.n->args[0].raw()) + memo.at(f.n->args[1].raw()); break;
      case Kind::Sub: v = memo.at(f.n->args[0].raw()) - memo.at(f.n->args[1].raw()); break;
      case Kind::Mul: v = memo.at(f.n->args[0].raw()) * memo.at(f.n->args[1].raw()); break;
      case Kind::Div: {
        const T& den = memo.at(f.n->args[1].raw());
        if constexpr (std::is_same_v<T, double>) {
          if (den == 0.0) throw EvalDomainError("division by zero", f.n->args[1].to_string());
        }
        v = memo.at(f.n->args[0].raw()) / den;
        break;
      }
      case Kind::Pow: {
        const T& b = memo.at(f.n->args[0].raw());
        if constexpr (std::is_same_v<T, double>) {
          if (b < 0.0 && f.n->value != std::round(f.n->value))
            throw EvalDomainError("non-integer power of negative base", f.n->args[0].to_string());
          v = std::pow(b, f.n->value);
        } else {
          double e = f.n->value;
          if (e == std::round(e) && e >= 0.0 && e <= 16.0) {
            v = T(b.order(), 1.0);
            for (int i = 0; i < int(e); ++i) v = v * b;
          } else {
            v = pow(b, e);
          }
        }
        break;
      }
      case Kind::CExpPow: v = detail::cexp_eval(memo.at(f.n->args[0].raw()), f.n->ipar); break;
      default: v = detail::apply_unary(f.n->kind, memo.at(f.n->args[0].raw()), f.n); break;
    }
    memo.emplace(f.n, std::move(v));
    stack.pop_back();
  }
  return memo.at(node_.get());
}

/// Recursive-descent parser for the infix config syntax.
/// Grammar: expr := term (('+'|'-') term)*; term := factor (('*'|'/') factor)*;
/// factor := unary ('^' unary)?; unary := '-' unary | primary;
/// primary := number | ident | ident '(' expr ')' | '(' expr ')'.
class ExprParser {
 public:
  /// vocab maps variable name -> index.
  ExprParser(std::string text, std::map<std::string, int> vocab)
      : text_(std::move(text)), vocab_(std::move(vocab)) {}

  Expr parse() {
    Expr e = parse_expr();
    skip_ws();
    if (pos_ != text_.size()) throw ParseError(pos_, "unexpected trailing input");
    return e;
  }

 private:
  void skip_ws() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }
  bool eat(char c) {
    skip_ws();
    if (pos_ < text_.size() && text_[pos_] == c) { ++pos_; return true; }
    return false;
  }

  Expr parse_expr() {
    Expr e = parse_term();
    for (;;) {
      if (eat('+')) e = e + parse_term();
      else if (eat('-')) e = e - parse_term();
      else return e;
    }
  }
  Expr parse_term() {
    Expr e = parse_factor();
    for (;;) {
      if (eat('*')) e = e * parse_factor();
      else if (eat('/')) e = e / parse_factor();
      else return e;
    }
  }
  Expr parse_factor() {
    Expr base = parse_unary();
    if (eat('^')) {
      Expr ex = parse_unary();
      if (ex.is_const()) return pow(base, ex.value());
      return exp(ex * log(base));
    }
    return base;
  }
  Expr parse_unary() {
    if (eat('-')) return -parse_unary();
    return parse_primary();
  }
  Expr parse_primary() {
    skip_ws();
    if (pos_ >= text_.size()) throw ParseError(pos_, "unexpected end of input");
    char c = text_[pos_];
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
      std::size_t used = 0;
      double v;
      try {
        v = std::stod(text_.substr(pos_), &used);
      } catch (const std::exception&) {
        throw ParseError(pos_, "invalid number");
      }
      pos_ += used;
      return Expr(v);
    }
    if (c == '(') {
      ++pos_;
      Expr e = parse_expr();
      if (!eat(')')) throw ParseError(pos_, "expected ')'");
      return e;
    }
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      std::size_t start = pos_;
      while (pos_ < text_.size() &&
             (std::isalnum(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '_'))
        ++pos_;
      std::string id = text_.substr(start, pos_ - start);
      if (eat('(')) {
        Expr a = parse_expr();
        if (!eat(')')) throw ParseError(pos_, "expected ')'");
        if (id == "sin") return sin(a);
        if (id == "cos") return cos(a);
        if (id == "exp") return exp(a);
        if (id == "log") return log(a);
        if (id == "sqrt") return sqrt(a);
        if (id == "cexp") return cexp(a);
        throw ParseError(start, "unknown function '" + id + "'");
      }
      auto it = vocab_.find(id);
      if (it == vocab_.end()) throw ParseError(start, "unknown variable '" + id + "'");
      return Expr::variable(it->second, id);
    }
    throw ParseError(pos_, std::string("unexpected character '") + c + "'");
  }

  std::string text_;
  std::map<std::string, int> vocab_;
  std::size_t pos_ = 0;
};

/// Variable convention for phase-space expressions: q1..qn at indices 0..n-1,
/// p1..pn at indices n..2n-1.
inline std::map<std::string, int> phase_vocab(std::size_t n) {
  std::map<std::string, int> v;
  for (std::size_t i = 0; i < n; ++i) {
    v["q" + std::to_string(i + 1)] = int(i);
    v["p" + std::to_string(i + 1)] = int(n + i);
  }
  return v;
}

/// Chart coordinate vocabulary x1..xm.
inline std::map<std::string, int> chart_vocab(std::size_t m) {
  std::map<std::string, int> v;
  for (std::size_t i = 0; i < m; ++i) v["x" + std::to_string(i + 1)] = int(i);
  return v;
}

inline Expr parse_expr(const std::string& text, const std::map<std::string, int>& vocab) {
  return ExprParser(text, vocab).parse();
}

}  // namespace podex
