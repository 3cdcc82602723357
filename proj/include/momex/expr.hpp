#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace momex {

enum class ExprKind : std::uint8_t {
  Constant,
  StateVar,
  TimeVar,
  Add,
  Sub,
  Mul,
  Div,
  Pow,
  Neg,
  Exp,
  Log,
  Sqrt,
  NormCdf,
  NormPdf,
  Erf,
  Abs,
};

const char* kind_name(ExprKind k);
bool is_binary(ExprKind k);
bool is_unary(ExprKind k);

struct ExprNode;

/// Immutable symbolic expression over state variables x0..x{d-1} and the
/// time variable t. Nodes are hash-consed: structurally identical subtrees
/// built through any constructor are the same node, so structural equality
/// is pointer equality and shared subexpressions are evaluated once.
class Expr {
public:
  Expr();  // constant 0
  static Expr constant(double v);
  static Expr state(int index);
  static Expr time();

  ExprKind kind() const;
  double value() const;  // Constant nodes only
  int index() const;     // StateVar nodes only
  int arity() const;
  Expr child(int i) const;

  std::uint64_t id() const;
  bool same(const Expr& o) const { return node_ == o.node_; }
  bool is_constant() const { return kind() == ExprKind::Constant; }
  bool is_constant(double v) const;

  std::size_t dag_size() const;    // number of distinct nodes
  int max_state_index() const;     // -1 if no state variable occurs
  bool depends_on_time() const;
  bool contains_kind(ExprKind k) const;

  const ExprNode* raw() const { return node_.get(); }

private:
  explicit Expr(std::shared_ptr<const ExprNode> n) : node_(std::move(n)) {}
  std::shared_ptr<const ExprNode> node_;

  friend Expr make_expr(ExprKind k, double value, int index, const Expr* a,
                        const Expr* b);
};

Expr operator+(const Expr& a, const Expr& b);
Expr operator-(const Expr& a, const Expr& b);
Expr operator*(const Expr& a, const Expr& b);
Expr operator/(const Expr& a, const Expr& b);
Expr operator-(const Expr& a);
inline Expr operator+(const Expr& a, double b) { return a + Expr::constant(b); }
inline Expr operator+(double a, const Expr& b) { return Expr::constant(a) + b; }
inline Expr operator-(const Expr& a, double b) { return a - Expr::constant(b); }
inline Expr operator-(double a, const Expr& b) { return Expr::constant(a) - b; }
inline Expr operator*(const Expr& a, double b) { return a * Expr::constant(b); }
inline Expr operator*(double a, const Expr& b) { return Expr::constant(a) * b; }
inline Expr operator/(const Expr& a, double b) { return a / Expr::constant(b); }
inline Expr operator/(double a, const Expr& b) { return Expr::constant(a) / b; }

Expr pow(const Expr& base, const Expr& exponent);
Expr pow(const Expr& base, double exponent);
Expr exp(const Expr& a);
Expr log(const Expr& a);
Expr sqrt(const Expr& a);
Expr normal_cdf(const Expr& a);
Expr normal_pdf(const Expr& a);
Expr erf(const Expr& a);
Expr abs(const Expr& a);

/// State vector plus time-to-horizon at which an expression is evaluated.
struct EvalPoint {
  std::vector<double> x;
  double t = 0.0;
};

/// Domain failure during numeric evaluation (log/sqrt of a negative number,
/// division by zero, non-finite intermediate); carries the offending node kind.
class EvalError : public std::runtime_error {
public:
  EvalError(ExprKind k, const std::string& what)
      : std::runtime_error(what), kind_(k) {}
  ExprKind node_kind() const { return kind_; }

private:
  ExprKind kind_;
};

struct EvalStats {
  std::size_t node_evals = 0;
};

double evaluate(const Expr& e, const EvalPoint& p, EvalStats* stats = nullptr);

/// Differentiation variable: a state index, or the time variable.
struct Var {
  int state_index = -1;  // -1 means time
  static Var state(int i) { return Var{i}; }
  static Var time() { return Var{-1}; }
  bool is_time() const { return state_index < 0; }
};

Expr differentiate(const Expr& e, Var v);
Expr shift(const Expr& e, std::span<const double> c);
Expr simplify(const Expr& e);

// Simplifying node builders: apply constant folding and the 0/1 identities
// locally. Used internally by differentiate/shift/simplify; exposed because
// higher layers build large sums and want compact results immediately.
Expr s_add(const Expr& a, const Expr& b);
Expr s_sub(const Expr& a, const Expr& b);
Expr s_mul(const Expr& a, const Expr& b);
Expr s_div(const Expr& a, const Expr& b);
Expr s_pow(const Expr& a, const Expr& b);
Expr s_neg(const Expr& a);

/// Balanced sum of a list of terms (empty list yields 0).
Expr balanced_sum(std::span<const Expr> terms);

class ParseError : public std::runtime_error {
public:
  ParseError(std::size_t pos, const std::string& what)
      : std::runtime_error(what), pos_(pos) {}
  std::size_t position() const { return pos_; }

private:
  std::size_t pos_;
};

/// Round-trippable s-expression form, e.g. "(+ (pow x0 2) t)".
std::string to_string(const Expr& e);
Expr parse_expr(std::string_view text);

/// Expression flattened to a topologically ordered instruction tape for
/// repeated numeric evaluation (no hashing or allocation per call when the
/// caller supplies the scratch buffer).
class CompiledExpr {
public:
  CompiledExpr() = default;
  explicit CompiledExpr(const Expr& e);

  double operator()(std::span<const double> x, double t) const;
  double operator()(std::span<const double> x, double t,
                    std::vector<double>& scratch) const;
  double operator()(const EvalPoint& p) const {
    return (*this)(p.x, p.t);
  }
  std::size_t size() const { return code_.size(); }

private:
  struct Instr {
    ExprKind kind;
    std::uint32_t a = 0;
    std::uint32_t b = 0;
    double imm = 0.0;  // Constant value or StateVar index
  };
  std::vector<Instr> code_;
};

// Numeric kernels shared by evaluation and constant folding.
double normal_cdf(double z);
double normal_pdf(double z);

/// Total number of expression nodes created so far in this process; used by
/// expansion builders to enforce node budgets.
std::uint64_t nodes_created();
/// Number of live entries in the hash-cons table (diagnostics).
std::size_t intern_table_size();

}  // namespace momex
