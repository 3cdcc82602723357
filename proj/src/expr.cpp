#include "momex/expr.hpp"

#include <array>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstring>
#include <mutex>
#include <unordered_map>

namespace momex {

struct ExprNode {
  ExprKind kind;
  double value = 0.0;  // Constant
  int index = 0;       // StateVar
  std::uint64_t id = 0;
  std::size_t hash = 0;
  std::shared_ptr<const ExprNode> a;
  std::shared_ptr<const ExprNode> b;
};

const char* kind_name(ExprKind k) {
  switch (k) {
    case ExprKind::Constant: return "constant";
    case ExprKind::StateVar: return "state-var";
    case ExprKind::TimeVar: return "time-var";
    case ExprKind::Add: return "+";
    case ExprKind::Sub: return "-";
    case ExprKind::Mul: return "*";
    case ExprKind::Div: return "/";
    case ExprKind::Pow: return "pow";
    case ExprKind::Neg: return "neg";
    case ExprKind::Exp: return "exp";
    case ExprKind::Log: return "log";
    case ExprKind::Sqrt: return "sqrt";
    case ExprKind::NormCdf: return "normcdf";
    case ExprKind::NormPdf: return "normpdf";
    case ExprKind::Erf: return "erf";
    case ExprKind::Abs: return "abs";
  }
  return "?";
}

bool is_binary(ExprKind k) {
  switch (k) {
    case ExprKind::Add:
    case ExprKind::Sub:
    case ExprKind::Mul:
    case ExprKind::Div:
    case ExprKind::Pow:
      return true;
    default:
      return false;
  }
}

bool is_unary(ExprKind k) {
  switch (k) {
    case ExprKind::Neg:
    case ExprKind::Exp:
    case ExprKind::Log:
    case ExprKind::Sqrt:
    case ExprKind::NormCdf:
    case ExprKind::NormPdf:
    case ExprKind::Erf:
    case ExprKind::Abs:
      return true;
    default:
      return false;
  }
}

namespace {

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

struct NodeKey {
  ExprKind kind;
  std::uint64_t payload;  // value bits or index
  std::uint64_t a_id;
  std::uint64_t b_id;

  bool operator==(const NodeKey& o) const {
    return kind == o.kind && payload == o.payload && a_id == o.a_id &&
           b_id == o.b_id;
  }
};

struct NodeKeyHash {
  std::size_t operator()(const NodeKey& k) const {
    std::uint64_t h = mix64(static_cast<std::uint64_t>(k.kind));
    h = mix64(h ^ k.payload);
    h = mix64(h ^ k.a_id);
    h = mix64(h ^ k.b_id);
    return static_cast<std::size_t>(h);
  }
};

// Hash-cons table. Construction is serialized behind the mutex; evaluation
// never touches the table, so concurrent reads of finished expressions are
// lock-free. Entries hold weak references and are swept when the table has
// grown far past the live set.
struct InternTable {
  std::mutex mu;
  std::unordered_map<NodeKey, std::weak_ptr<const ExprNode>, NodeKeyHash> map;
  std::uint64_t next_id = 1;
  std::atomic<std::uint64_t> created{0};
  std::size_t sweep_at = 1 << 20;

  void sweep_locked() {
    for (auto it = map.begin(); it != map.end();) {
      if (it->second.expired())
        it = map.erase(it);
      else
        ++it;
    }
    sweep_at = std::max<std::size_t>(map.size() * 2, 1 << 20);
  }
};

InternTable& table() {
  static InternTable t;
  return t;
}

std::uint64_t payload_of(ExprKind k, double value, int index) {
  if (k == ExprKind::Constant) {
    std::uint64_t bits;
    std::memcpy(&bits, &value, sizeof bits);
    return bits;
  }
  if (k == ExprKind::StateVar) return static_cast<std::uint64_t>(index);
  return 0;
}

}  // namespace

Expr make_expr(ExprKind k, double value, int index, const Expr* a,
               const Expr* b) {
  NodeKey key{k, payload_of(k, value, index), a ? a->id() : 0,
              b ? b->id() : 0};
  InternTable& t = table();
  std::lock_guard<std::mutex> lock(t.mu);
  auto it = t.map.find(key);
  if (it != t.map.end()) {
    if (auto existing = it->second.lock()) return Expr(std::move(existing));
  }
  auto node = std::make_shared<ExprNode>();
  node->kind = k;
  node->value = value;
  node->index = index;
  node->id = t.next_id++;
  node->hash = NodeKeyHash{}(key);
  if (a) node->a = a->node_;
  if (b) node->b = b->node_;
  t.map[key] = node;
  t.created.fetch_add(1, std::memory_order_relaxed);
  if (t.map.size() >= t.sweep_at) t.sweep_locked();
  return Expr(std::move(node));
}

std::uint64_t nodes_created() {
  return table().created.load(std::memory_order_relaxed);
}

std::size_t intern_table_size() {
  InternTable& t = table();
  std::lock_guard<std::mutex> lock(t.mu);
  return t.map.size();
}

Expr::Expr() : Expr(constant(0.0)) {}

Expr Expr::constant(double v) {
  return make_expr(ExprKind::Constant, v, 0, nullptr, nullptr);
}

Expr Expr::state(int index) {
  if (index < 0) throw std::invalid_argument("Expr::state: negative index");
  return make_expr(ExprKind::StateVar, 0.0, index, nullptr, nullptr);
}

Expr Expr::time() { return make_expr(ExprKind::TimeVar, 0.0, 0, nullptr, nullptr); }

ExprKind Expr::kind() const { return node_->kind; }
double Expr::value() const { return node_->value; }
int Expr::index() const { return node_->index; }
std::uint64_t Expr::id() const { return node_->id; }

bool Expr::is_constant(double v) const {
  return kind() == ExprKind::Constant && value() == v;
}

int Expr::arity() const {
  if (is_binary(node_->kind)) return 2;
  if (is_unary(node_->kind)) return 1;
  return 0;
}

Expr Expr::child(int i) const {
  if (i == 0 && node_->a) return Expr(node_->a);
  if (i == 1 && node_->b) return Expr(node_->b);
  throw std::out_of_range("Expr::child");
}

namespace {

// Children-before-parents order over the distinct nodes of a DAG, computed
// without recursion so arbitrarily deep expressions are safe.
std::vector<const ExprNode*> topo_order(const ExprNode* root) {
  std::vector<const ExprNode*> order;
  std::unordered_map<const ExprNode*, bool> visited;  // true once emitted
  std::vector<std::pair<const ExprNode*, bool>> stack;
  stack.emplace_back(root, false);
  while (!stack.empty()) {
    auto [n, expanded] = stack.back();
    stack.pop_back();
    auto it = visited.find(n);
    if (it != visited.end() && it->second) continue;
    if (expanded) {
      visited[n] = true;
      order.push_back(n);
      continue;
    }
    if (it != visited.end()) continue;  // already scheduled
    visited[n] = false;
    stack.emplace_back(n, true);
    if (n->a) stack.emplace_back(n->a.get(), false);
    if (n->b) stack.emplace_back(n->b.get(), false);
  }
  return order;
}

}  // namespace

std::size_t Expr::dag_size() const { return topo_order(node_.get()).size(); }

int Expr::max_state_index() const {
  int mx = -1;
  for (const ExprNode* n : topo_order(node_.get()))
    if (n->kind == ExprKind::StateVar) mx = std::max(mx, n->index);
  return mx;
}

bool Expr::depends_on_time() const { return contains_kind(ExprKind::TimeVar); }

bool Expr::contains_kind(ExprKind k) const {
  for (const ExprNode* n : topo_order(node_.get()))
    if (n->kind == k) return true;
  return false;
}

// ---------------------------------------------------------------------------
// Construction

namespace {
Expr raw_binary(ExprKind k, const Expr& a, const Expr& b) {
  return make_expr(k, 0.0, 0, &a, &b);
}
Expr raw_unary(ExprKind k, const Expr& a) {
  return make_expr(k, 0.0, 0, &a, nullptr);
}
}  // namespace

Expr operator+(const Expr& a, const Expr& b) { return raw_binary(ExprKind::Add, a, b); }
Expr operator-(const Expr& a, const Expr& b) { return raw_binary(ExprKind::Sub, a, b); }
Expr operator*(const Expr& a, const Expr& b) { return raw_binary(ExprKind::Mul, a, b); }
Expr operator/(const Expr& a, const Expr& b) { return raw_binary(ExprKind::Div, a, b); }
Expr operator-(const Expr& a) { return raw_unary(ExprKind::Neg, a); }
Expr pow(const Expr& base, const Expr& exponent) {
  return raw_binary(ExprKind::Pow, base, exponent);
}
Expr pow(const Expr& base, double exponent) {
  return pow(base, Expr::constant(exponent));
}
Expr exp(const Expr& a) { return raw_unary(ExprKind::Exp, a); }
Expr log(const Expr& a) { return raw_unary(ExprKind::Log, a); }
Expr sqrt(const Expr& a) { return raw_unary(ExprKind::Sqrt, a); }
Expr normal_cdf(const Expr& a) { return raw_unary(ExprKind::NormCdf, a); }
Expr normal_pdf(const Expr& a) { return raw_unary(ExprKind::NormPdf, a); }
Expr erf(const Expr& a) { return raw_unary(ExprKind::Erf, a); }
Expr abs(const Expr& a) { return raw_unary(ExprKind::Abs, a); }

// ---------------------------------------------------------------------------
// Numeric kernels

double normal_pdf(double z) {
  static constexpr double inv_sqrt_2pi = 0.3989422804014326779;
  return inv_sqrt_2pi * std::exp(-0.5 * z * z);
}

double normal_cdf(double z) {
  static constexpr double inv_sqrt2 = 0.7071067811865475244;
  return 0.5 * std::erfc(-z * inv_sqrt2);
}

namespace {

double apply_unary_numeric(ExprKind k, double a) {
  switch (k) {
    case ExprKind::Neg: return -a;
    case ExprKind::Exp: return std::exp(a);
    case ExprKind::Log:
      if (a <= 0.0) throw EvalError(k, "log of non-positive value");
      return std::log(a);
    case ExprKind::Sqrt:
      if (a < 0.0) throw EvalError(k, "sqrt of negative value");
      return std::sqrt(a);
    case ExprKind::NormCdf: return normal_cdf(a);
    case ExprKind::NormPdf: return normal_pdf(a);
    case ExprKind::Erf: return std::erf(a);
    case ExprKind::Abs: return std::abs(a);
    default: throw std::logic_error("apply_unary_numeric");
  }
}

double apply_binary_numeric(ExprKind k, double a, double b) {
  switch (k) {
    case ExprKind::Add: return a + b;
    case ExprKind::Sub: return a - b;
    case ExprKind::Mul: return a * b;
    case ExprKind::Div:
      if (b == 0.0) throw EvalError(k, "division by zero");
      return a / b;
    case ExprKind::Pow: return std::pow(a, b);
    default: throw std::logic_error("apply_binary_numeric");
  }
}

}  // namespace

double evaluate(const Expr& e, const EvalPoint& p, EvalStats* stats) {
  const auto order = topo_order(e.raw());
  std::unordered_map<const ExprNode*, double> val;
  val.reserve(order.size());
  for (const ExprNode* n : order) {
    double v = 0.0;
    switch (n->kind) {
      case ExprKind::Constant:
        v = n->value;
        break;
      case ExprKind::StateVar:
        if (n->index >= static_cast<int>(p.x.size()))
          throw EvalError(n->kind, "state variable x" +
                                       std::to_string(n->index) +
                                       " not defined at evaluation point");
        v = p.x[static_cast<std::size_t>(n->index)];
        break;
      case ExprKind::TimeVar:
        v = p.t;
        break;
      default:
        if (is_unary(n->kind)) {
          v = apply_unary_numeric(n->kind, val[n->a.get()]);
        } else {
          v = apply_binary_numeric(n->kind, val[n->a.get()], val[n->b.get()]);
        }
    }
    if (!std::isfinite(v))
      throw EvalError(n->kind, std::string("non-finite value at node '") +
                                   kind_name(n->kind) + "'");
    val[n] = v;
    if (stats) stats->node_evals++;
  }
  return val[e.raw()];
}

// ---------------------------------------------------------------------------
// Simplifying builders

namespace {

bool const_val(const Expr& e, double* out) {
  if (e.kind() != ExprKind::Constant) return false;
  *out = e.value();
  return true;
}

}  // namespace

Expr s_add(const Expr& a0, const Expr& b0) {
  Expr a = a0, b = b0;
  double ca, cb;
  if (const_val(a, &ca) && const_val(b, &cb)) return Expr::constant(ca + cb);
  if (a.kind() == ExprKind::Constant) std::swap(a, b);  // constants last
  if (const_val(b, &cb)) {
    if (cb == 0.0) return a;
    // fold constant tails: (e + c1) + c2 -> e + (c1 + c2)
    if (a.kind() == ExprKind::Add && a.child(1).kind() == ExprKind::Constant)
      return s_add(a.child(0), Expr::constant(a.child(1).value() + cb));
  }
  return a + b;
}

Expr s_sub(const Expr& a, const Expr& b) {
  double ca, cb;
  if (const_val(a, &ca) && const_val(b, &cb)) return Expr::constant(ca - cb);
  if (const_val(b, &cb) && cb == 0.0) return a;
  if (const_val(a, &ca) && ca == 0.0) return s_neg(b);
  return a - b;
}

Expr s_mul(const Expr& a0, const Expr& b0) {
  Expr a = a0, b = b0;
  double ca, cb;
  if (const_val(a, &ca) && const_val(b, &cb)) return Expr::constant(ca * cb);
  if (a.kind() == ExprKind::Constant) std::swap(a, b);
  if (const_val(b, &cb)) {
    if (cb == 0.0) return Expr::constant(0.0);
    if (cb == 1.0) return a;
    if (a.kind() == ExprKind::Mul && a.child(1).kind() == ExprKind::Constant)
      return s_mul(a.child(0), Expr::constant(a.child(1).value() * cb));
  }
  return a * b;
}

Expr s_div(const Expr& a, const Expr& b) {
  double ca, cb;
  if (const_val(b, &cb) && cb != 0.0) {
    if (const_val(a, &ca)) return Expr::constant(ca / cb);
    if (cb == 1.0) return a;
  }
  if (const_val(a, &ca) && ca == 0.0) return Expr::constant(0.0);
  return a / b;
}

Expr s_pow(const Expr& a, const Expr& b) {
  double ca, cb;
  if (const_val(b, &cb)) {
    if (cb == 0.0) return Expr::constant(1.0);
    if (cb == 1.0) return a;
    if (const_val(a, &ca)) {
      double v = std::pow(ca, cb);
      if (std::isfinite(v)) return Expr::constant(v);
    }
  }
  return pow(a, b);
}

Expr s_neg(const Expr& a) {
  double ca;
  if (const_val(a, &ca)) return Expr::constant(-ca);
  if (a.kind() == ExprKind::Neg) return a.child(0);
  return -a;
}

namespace {

Expr s_unary(ExprKind k, const Expr& a) {
  if (k == ExprKind::Neg) return s_neg(a);
  double ca;
  if (const_val(a, &ca)) {
    try {
      double v = apply_unary_numeric(k, ca);
      if (std::isfinite(v)) return Expr::constant(v);
    } catch (const EvalError&) {
      // leave the node in place; evaluation will report the domain error
    }
  }
  return raw_unary(k, a);
}

Expr s_binary(ExprKind k, const Expr& a, const Expr& b) {
  switch (k) {
    case ExprKind::Add: return s_add(a, b);
    case ExprKind::Sub: return s_sub(a, b);
    case ExprKind::Mul: return s_mul(a, b);
    case ExprKind::Div: return s_div(a, b);
    case ExprKind::Pow: return s_pow(a, b);
    default: throw std::logic_error("s_binary");
  }
}

}  // namespace

Expr balanced_sum(std::span<const Expr> terms) {
  if (terms.empty()) return Expr::constant(0.0);
  std::vector<Expr> level(terms.begin(), terms.end());
  while (level.size() > 1) {
    std::vector<Expr> next;
    next.reserve((level.size() + 1) / 2);
    for (std::size_t i = 0; i + 1 < level.size(); i += 2)
      next.push_back(s_add(level[i], level[i + 1]));
    if (level.size() % 2) next.push_back(level.back());
    level = std::move(next);
  }
  return level[0];
}

// ---------------------------------------------------------------------------
// DAG transforms (iterative, memoized over distinct nodes)

namespace {

template <typename LeafFn, typename RebuildFn>
Expr transform(const Expr& root, LeafFn&& leaf, RebuildFn&& rebuild) {
  const auto order = topo_order(root.raw());
  std::unordered_map<const ExprNode*, Expr> out;
  out.reserve(order.size());
  for (const ExprNode* n : order) {
    switch (n->kind) {
      case ExprKind::Constant:
      case ExprKind::StateVar:
      case ExprKind::TimeVar:
        out.emplace(n, leaf(n));
        break;
      default: {
        const Expr* a = n->a ? &out.at(n->a.get()) : nullptr;
        const Expr* b = n->b ? &out.at(n->b.get()) : nullptr;
        out.emplace(n, rebuild(n, a, b));
      }
    }
  }
  return out.at(root.raw());
}

}  // namespace

Expr simplify(const Expr& e) {
  return transform(
      e,
      [](const ExprNode* n) {
        switch (n->kind) {
          case ExprKind::Constant: return Expr::constant(n->value);
          case ExprKind::StateVar: return Expr::state(n->index);
          default: return Expr::time();
        }
      },
      [](const ExprNode* n, const Expr* a, const Expr* b) {
        if (is_unary(n->kind)) return s_unary(n->kind, *a);
        return s_binary(n->kind, *a, *b);
      });
}

Expr shift(const Expr& e, std::span<const double> c) {
  const int mx = e.max_state_index();
  if (mx >= static_cast<int>(c.size()))
    throw std::invalid_argument(
        "shift: offset vector shorter than the highest state index used");
  return transform(
      e,
      [&](const ExprNode* n) {
        switch (n->kind) {
          case ExprKind::Constant: return Expr::constant(n->value);
          case ExprKind::StateVar: {
            double off = c[static_cast<std::size_t>(n->index)];
            Expr x = Expr::state(n->index);
            return off == 0.0 ? x : s_add(x, Expr::constant(off));
          }
          default: return Expr::time();
        }
      },
      [](const ExprNode* n, const Expr* a, const Expr* b) {
        if (is_unary(n->kind)) return s_unary(n->kind, *a);
        return s_binary(n->kind, *a, *b);
      });
}

Expr differentiate(const Expr& root, Var v) {
  // Handles to original subexpressions are rebuilt through the intern table,
  // which returns the identical shared nodes (d exp(u) = exp(u) * du reuses
  // the original exp node).
  const auto order = topo_order(root.raw());
  std::unordered_map<const ExprNode*, Expr> orig;   // node -> handle
  std::unordered_map<const ExprNode*, Expr> deriv;  // node -> derivative
  orig.reserve(order.size());
  deriv.reserve(order.size());
  const Expr zero = Expr::constant(0.0);
  const Expr one = Expr::constant(1.0);

  for (const ExprNode* n : order) {
    Expr self = zero;
    switch (n->kind) {
      case ExprKind::Constant: self = Expr::constant(n->value); break;
      case ExprKind::StateVar: self = Expr::state(n->index); break;
      case ExprKind::TimeVar: self = Expr::time(); break;
      default: {
        const Expr& a = orig.at(n->a.get());
        if (is_unary(n->kind)) {
          self = raw_unary(n->kind, a);
        } else {
          self = raw_binary(n->kind, a, orig.at(n->b.get()));
        }
      }
    }
    orig.emplace(n, self);

    Expr d = zero;
    switch (n->kind) {
      case ExprKind::Constant:
        d = zero;
        break;
      case ExprKind::StateVar:
        d = (!v.is_time() && n->index == v.state_index) ? one : zero;
        break;
      case ExprKind::TimeVar:
        d = v.is_time() ? one : zero;
        break;
      case ExprKind::Add:
        d = s_add(deriv.at(n->a.get()), deriv.at(n->b.get()));
        break;
      case ExprKind::Sub:
        d = s_sub(deriv.at(n->a.get()), deriv.at(n->b.get()));
        break;
      case ExprKind::Mul: {
        const Expr& a = orig.at(n->a.get());
        const Expr& b = orig.at(n->b.get());
        d = s_add(s_mul(deriv.at(n->a.get()), b),
                  s_mul(a, deriv.at(n->b.get())));
        break;
      }
      case ExprKind::Div: {
        const Expr& a = orig.at(n->a.get());
        const Expr& b = orig.at(n->b.get());
        const Expr& da = deriv.at(n->a.get());
        const Expr& db = deriv.at(n->b.get());
        d = s_div(s_sub(s_mul(da, b), s_mul(a, db)), s_mul(b, b));
        break;
      }
      case ExprKind::Pow: {
        const Expr& a = orig.at(n->a.get());
        const Expr& b = orig.at(n->b.get());
        const Expr& da = deriv.at(n->a.get());
        const Expr& db = deriv.at(n->b.get());
        if (b.kind() == ExprKind::Constant) {
          double c = b.value();
          d = s_mul(s_mul(Expr::constant(c), s_pow(a, Expr::constant(c - 1))),
                    da);
        } else {
          // d a^b = a^b (db log a + b da / a)
          Expr self = orig.at(n);
          d = s_mul(self, s_add(s_mul(db, log(a)), s_div(s_mul(b, da), a)));
        }
        break;
      }
      case ExprKind::Neg:
        d = s_neg(deriv.at(n->a.get()));
        break;
      case ExprKind::Exp:
        d = s_mul(orig.at(n), deriv.at(n->a.get()));
        break;
      case ExprKind::Log:
        d = s_div(deriv.at(n->a.get()), orig.at(n->a.get()));
        break;
      case ExprKind::Sqrt:
        d = s_div(deriv.at(n->a.get()),
                  s_mul(Expr::constant(2.0), orig.at(n)));
        break;
      case ExprKind::NormCdf:
        d = s_mul(normal_pdf(orig.at(n->a.get())), deriv.at(n->a.get()));
        break;
      case ExprKind::NormPdf: {
        const Expr& a = orig.at(n->a.get());
        d = s_mul(s_mul(s_neg(a), orig.at(n)), deriv.at(n->a.get()));
        break;
      }
      case ExprKind::Erf: {
        static const double two_over_sqrt_pi = 1.1283791670955125739;
        const Expr& a = orig.at(n->a.get());
        d = s_mul(s_mul(Expr::constant(two_over_sqrt_pi),
                        exp(s_neg(s_mul(a, a)))),
                  deriv.at(n->a.get()));
        break;
      }
      case ExprKind::Abs:
        throw std::invalid_argument(
            "differentiate: abs is evaluation-only and cannot be "
            "differentiated symbolically");
    }
    deriv.emplace(n, d);
  }
  return deriv.at(root.raw());
}

// ---------------------------------------------------------------------------
// Printing and parsing

namespace {

void append_double(std::string& out, double v) {
  std::array<char, 32> buf;
  auto [p, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  (void)ec;
  out.append(buf.data(), p);
}

}  // namespace

std::string to_string(const Expr& root) {
  // Iterative print with per-node memoized strings would blow memory on big
  // DAGs; serialization is meant for model specs and coefficient caches,
  // which are modest, so a straightforward stack printer suffices.
  std::string out;
  struct Frame {
    const ExprNode* n;
    int phase;
  };
  std::vector<Frame> stack{{root.raw(), 0}};
  while (!stack.empty()) {
    auto& f = stack.back();
    const ExprNode* n = f.n;
    switch (n->kind) {
      case ExprKind::Constant:
        append_double(out, n->value);
        stack.pop_back();
        continue;
      case ExprKind::StateVar:
        out += "x" + std::to_string(n->index);
        stack.pop_back();
        continue;
      case ExprKind::TimeVar:
        out += "t";
        stack.pop_back();
        continue;
      default:
        break;
    }
    if (f.phase == 0) {
      out += "(";
      out += kind_name(n->kind);
      out += " ";
      f.phase = 1;
      stack.push_back({n->a.get(), 0});
    } else if (f.phase == 1 && n->b) {
      out += " ";
      f.phase = 2;
      stack.push_back({n->b.get(), 0});
    } else {
      out += ")";
      stack.pop_back();
    }
  }
  return out;
}

namespace {

struct Parser {
  std::string_view text;
  std::size_t pos = 0;

  void skip_ws() {
    while (pos < text.size() && std::isspace(static_cast<unsigned char>(text[pos])))
      pos++;
  }

  [[noreturn]] void fail(const std::string& msg) {
    throw ParseError(pos, "parse error at offset " + std::to_string(pos) +
                              ": " + msg);
  }

  std::string_view token() {
    skip_ws();
    if (pos >= text.size()) fail("unexpected end of input");
    std::size_t start = pos;
    while (pos < text.size()) {
      char c = text[pos];
      if (std::isspace(static_cast<unsigned char>(c)) || c == '(' || c == ')')
        break;
      pos++;
    }
    if (pos == start) fail("empty token");
    return text.substr(start, pos - start);
  }

  Expr parse() {
    skip_ws();
    if (pos >= text.size()) fail("unexpected end of input");
    if (text[pos] == '(') return parse_list();
    return parse_atom(token());
  }

  Expr parse_atom(std::string_view tok) {
    if (tok == "t") return Expr::time();
    if (tok.size() >= 2 && tok[0] == 'x') {
      int idx = 0;
      auto [p, ec] = std::from_chars(tok.data() + 1, tok.data() + tok.size(), idx);
      if (ec == std::errc() && p == tok.data() + tok.size())
        return Expr::state(idx);
    }
    double v = 0.0;
    auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc() || p != tok.data() + tok.size())
      fail("expected number, xN or t, got '" + std::string(tok) + "'");
    return Expr::constant(v);
  }

  Expr parse_list() {
    pos++;  // consume '('
    std::string_view op = token();
    std::vector<Expr> args;
    while (true) {
      skip_ws();
      if (pos >= text.size()) fail("missing ')'");
      if (text[pos] == ')') {
        pos++;
        break;
      }
      args.push_back(parse());
    }
    return apply_op(op, args);
  }

  Expr apply_op(std::string_view op, const std::vector<Expr>& args) {
    auto need = [&](std::size_t n) {
      if (args.size() != n)
        fail("operator '" + std::string(op) + "' expects " +
             std::to_string(n) + " argument(s), got " +
             std::to_string(args.size()));
    };
    if (op == "+") {
      if (args.empty()) fail("'+' needs at least one argument");
      Expr r = args[0];
      for (std::size_t i = 1; i < args.size(); i++) r = r + args[i];
      return r;
    }
    if (op == "*") {
      if (args.empty()) fail("'*' needs at least one argument");
      Expr r = args[0];
      for (std::size_t i = 1; i < args.size(); i++) r = r * args[i];
      return r;
    }
    if (op == "-") {
      if (args.size() == 1) return -args[0];
      need(2);
      return args[0] - args[1];
    }
    if (op == "/") { need(2); return args[0] / args[1]; }
    if (op == "pow") { need(2); return pow(args[0], args[1]); }
    if (op == "neg") { need(1); return -args[0]; }
    if (op == "exp") { need(1); return exp(args[0]); }
    if (op == "log") { need(1); return log(args[0]); }
    if (op == "sqrt") { need(1); return sqrt(args[0]); }
    if (op == "normcdf") { need(1); return normal_cdf(args[0]); }
    if (op == "normpdf") { need(1); return normal_pdf(args[0]); }
    if (op == "erf") { need(1); return erf(args[0]); }
    if (op == "abs") { need(1); return abs(args[0]); }
    fail("unknown operator '" + std::string(op) + "'");
  }
};

}  // namespace

Expr parse_expr(std::string_view text) {
  Parser p{text};
  Expr e = p.parse();
  p.skip_ws();
  if (p.pos != text.size()) p.fail("trailing input after expression");
  return e;
}

// ---------------------------------------------------------------------------
// Compilation

CompiledExpr::CompiledExpr(const Expr& e) {
  const auto order = topo_order(e.raw());
  std::unordered_map<const ExprNode*, std::uint32_t> slot;
  slot.reserve(order.size());
  code_.reserve(order.size());
  for (const ExprNode* n : order) {
    Instr ins;
    ins.kind = n->kind;
    switch (n->kind) {
      case ExprKind::Constant: ins.imm = n->value; break;
      case ExprKind::StateVar: ins.imm = n->index; break;
      case ExprKind::TimeVar: break;
      default:
        ins.a = slot.at(n->a.get());
        if (n->b) ins.b = slot.at(n->b.get());
    }
    slot[n] = static_cast<std::uint32_t>(code_.size());
    code_.push_back(ins);
  }
}

double CompiledExpr::operator()(std::span<const double> x, double t,
                                std::vector<double>& scratch) const {
  scratch.resize(code_.size());
  double* v = scratch.data();
  for (std::size_t i = 0; i < code_.size(); i++) {
    const Instr& ins = code_[i];
    switch (ins.kind) {
      case ExprKind::Constant: v[i] = ins.imm; break;
      case ExprKind::StateVar: {
        auto idx = static_cast<std::size_t>(ins.imm);
        if (idx >= x.size())
          throw EvalError(ExprKind::StateVar,
                          "state variable index out of range");
        v[i] = x[idx];
        break;
      }
      case ExprKind::TimeVar: v[i] = t; break;
      case ExprKind::Add: v[i] = v[ins.a] + v[ins.b]; break;
      case ExprKind::Sub: v[i] = v[ins.a] - v[ins.b]; break;
      case ExprKind::Mul: v[i] = v[ins.a] * v[ins.b]; break;
      case ExprKind::Div:
        if (v[ins.b] == 0.0) throw EvalError(ExprKind::Div, "division by zero");
        v[i] = v[ins.a] / v[ins.b];
        break;
      case ExprKind::Pow: v[i] = std::pow(v[ins.a], v[ins.b]); break;
      case ExprKind::Neg: v[i] = -v[ins.a]; break;
      case ExprKind::Exp: v[i] = std::exp(v[ins.a]); break;
      case ExprKind::Log:
        if (v[ins.a] <= 0.0)
          throw EvalError(ExprKind::Log, "log of non-positive value");
        v[i] = std::log(v[ins.a]);
        break;
      case ExprKind::Sqrt:
        if (v[ins.a] < 0.0)
          throw EvalError(ExprKind::Sqrt, "sqrt of negative value");
        v[i] = std::sqrt(v[ins.a]);
        break;
      case ExprKind::NormCdf: v[i] = normal_cdf(v[ins.a]); break;
      case ExprKind::NormPdf: v[i] = normal_pdf(v[ins.a]); break;
      case ExprKind::Erf: v[i] = std::erf(v[ins.a]); break;
      case ExprKind::Abs: v[i] = std::abs(v[ins.a]); break;
    }
  }
  double r = v[code_.size() - 1];
  if (!std::isfinite(r))
    throw EvalError(code_.back().kind, "non-finite result");
  return r;
}

double CompiledExpr::operator()(std::span<const double> x, double t) const {
  std::vector<double> scratch;
  return (*this)(x, t, scratch);
}

}  // namespace momex
