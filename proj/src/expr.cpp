#include "kl/expr.hpp"

#include <cctype>
#include <cmath>
#include <cstdlib>
#include <sstream>

namespace kl {

// `greater` is the 0/1 indicator a > b; it only appears in derivatives of abs/max/min.
enum class Op { constant, variable, add, sub, mul, div, pow, neg, sqrt, exp, log, abs, max, min, greater };

struct Expr::Node {
  Op op;
  double value = 0.0;
  int index = -1;
  std::shared_ptr<const Node> a, b;
};

namespace {

using NodePtr = std::shared_ptr<const Expr::Node>;

NodePtr make(Op op, NodePtr a = nullptr, NodePtr b = nullptr) {
  auto n = std::make_shared<Expr::Node>();
  n->op = op;
  n->a = std::move(a);
  n->b = std::move(b);
  return n;
}

NodePtr make_const(double c) {
  auto n = std::make_shared<Expr::Node>();
  n->op = Op::constant;
  n->value = c;
  return n;
}

bool is_const(const NodePtr& n, double c) { return n->op == Op::constant && n->value == c; }

// Light constant folding keeps derivative trees small.
NodePtr add(NodePtr a, NodePtr b) {
  if (is_const(a, 0.0)) return b;
  if (is_const(b, 0.0)) return a;
  if (a->op == Op::constant && b->op == Op::constant) return make_const(a->value + b->value);
  return make(Op::add, a, b);
}
NodePtr sub(NodePtr a, NodePtr b) {
  if (is_const(b, 0.0)) return a;
  if (a->op == Op::constant && b->op == Op::constant) return make_const(a->value - b->value);
  if (is_const(a, 0.0)) return make(Op::neg, b);
  return make(Op::sub, a, b);
}
NodePtr mul(NodePtr a, NodePtr b) {
  if (is_const(a, 0.0) || is_const(b, 0.0)) return make_const(0.0);
  if (is_const(a, 1.0)) return b;
  if (is_const(b, 1.0)) return a;
  if (a->op == Op::constant && b->op == Op::constant) return make_const(a->value * b->value);
  return make(Op::mul, a, b);
}
NodePtr div(NodePtr a, NodePtr b) {
  if (is_const(a, 0.0)) return make_const(0.0);
  if (is_const(b, 1.0)) return a;
  return make(Op::div, a, b);
}
NodePtr neg(NodePtr a) {
  if (a->op == Op::constant) return make_const(-a->value);
  return make(Op::neg, a);
}

double eval_node(const Expr::Node& n, const Vec& x) {
  switch (n.op) {
    case Op::constant: return n.value;
    case Op::variable: return x[n.index];
    case Op::add: return eval_node(*n.a, x) + eval_node(*n.b, x);
    case Op::sub: return eval_node(*n.a, x) - eval_node(*n.b, x);
    case Op::mul: return eval_node(*n.a, x) * eval_node(*n.b, x);
    case Op::div: return eval_node(*n.a, x) / eval_node(*n.b, x);
    case Op::pow: {
      const double base = eval_node(*n.a, x);
      if (n.b->op == Op::constant) {
        const double e = n.b->value;
        if (e == 2.0) return base * base;
        if (e == 1.0) return base;
        if (e == 0.0) return 1.0;
        return std::pow(base, e);
      }
      return std::pow(base, eval_node(*n.b, x));
    }
    case Op::neg: return -eval_node(*n.a, x);
    case Op::sqrt: return std::sqrt(eval_node(*n.a, x));
    case Op::exp: return std::exp(eval_node(*n.a, x));
    case Op::log: return std::log(eval_node(*n.a, x));
    case Op::abs: return std::abs(eval_node(*n.a, x));
    case Op::max: return std::max(eval_node(*n.a, x), eval_node(*n.b, x));
    case Op::min: return std::min(eval_node(*n.a, x), eval_node(*n.b, x));
    case Op::greater: return eval_node(*n.a, x) > eval_node(*n.b, x) ? 1.0 : 0.0;
  }
  return 0.0;
}

NodePtr derive(const NodePtr& n, int i) {
  switch (n->op) {
    case Op::constant: return make_const(0.0);
    case Op::variable: return make_const(n->index == i ? 1.0 : 0.0);
    case Op::add: return add(derive(n->a, i), derive(n->b, i));
    case Op::sub: return sub(derive(n->a, i), derive(n->b, i));
    case Op::mul: return add(mul(derive(n->a, i), n->b), mul(n->a, derive(n->b, i)));
    case Op::div: {
      // (a/b)' = a'/b - a b'/b^2
      NodePtr da = derive(n->a, i), db = derive(n->b, i);
      return sub(div(da, n->b), div(mul(n->a, db), mul(n->b, n->b)));
    }
    case Op::pow: {
      NodePtr da = derive(n->a, i);
      if (n->b->op == Op::constant) {
        const double e = n->b->value;
        if (e == 0.0) return make_const(0.0);
        NodePtr lower = e == 2.0 ? n->a : make(Op::pow, n->a, make_const(e - 1.0));
        return mul(mul(make_const(e), lower), da);
      }
      // (a^b)' = a^b (b' log a + b a'/a)
      NodePtr db = derive(n->b, i);
      return mul(n, add(mul(db, make(Op::log, n->a)), div(mul(n->b, da), n->a)));
    }
    case Op::neg: return neg(derive(n->a, i));
    case Op::sqrt: return div(derive(n->a, i), mul(make_const(2.0), n));
    case Op::exp: return mul(n, derive(n->a, i));
    case Op::log: return div(derive(n->a, i), n->a);
    case Op::abs: {
      // |a|' = sign(a) a', taken as 0 where a = 0
      NodePtr da = derive(n->a, i);
      if (is_const(da, 0.0)) return da;
      NodePtr zero = make_const(0.0);
      return mul(sub(make(Op::greater, n->a, zero), make(Op::greater, zero, n->a)), da);
    }
    case Op::max:
    case Op::min: {
      // max(a,b)' = a' + [b > a](b' - a'), min(a,b)' = a' + [a > b](b' - a')
      NodePtr da = derive(n->a, i), db = derive(n->b, i);
      if (da->op == Op::constant && db->op == Op::constant && da->value == db->value) return da;
      NodePtr active = n->op == Op::max ? make(Op::greater, n->b, n->a) : make(Op::greater, n->a, n->b);
      return add(da, mul(active, sub(db, da)));
    }
    case Op::greater: return make_const(0.0);
  }
  return make_const(0.0);
}

std::string to_str(const Expr::Node& n) {
  std::ostringstream os;
  switch (n.op) {
    case Op::constant: os << n.value; break;
    case Op::variable: os << "x" << (n.index + 1); break;
    case Op::add: os << "(" << to_str(*n.a) << " + " << to_str(*n.b) << ")"; break;
    case Op::sub: os << "(" << to_str(*n.a) << " - " << to_str(*n.b) << ")"; break;
    case Op::mul: os << "(" << to_str(*n.a) << " * " << to_str(*n.b) << ")"; break;
    case Op::div: os << "(" << to_str(*n.a) << " / " << to_str(*n.b) << ")"; break;
    case Op::pow: os << "(" << to_str(*n.a) << " ^ " << to_str(*n.b) << ")"; break;
    case Op::neg: os << "(-" << to_str(*n.a) << ")"; break;
    case Op::sqrt: os << "sqrt(" << to_str(*n.a) << ")"; break;
    case Op::exp: os << "exp(" << to_str(*n.a) << ")"; break;
    case Op::log: os << "log(" << to_str(*n.a) << ")"; break;
    case Op::abs: os << "abs(" << to_str(*n.a) << ")"; break;
    case Op::max: os << "max(" << to_str(*n.a) << ", " << to_str(*n.b) << ")"; break;
    case Op::min: os << "min(" << to_str(*n.a) << ", " << to_str(*n.b) << ")"; break;
    case Op::greater: os << "[" << to_str(*n.a) << " > " << to_str(*n.b) << "]"; break;
  }
  return os.str();
}

class Parser {
 public:
  Parser(std::string_view text, int dim) : s_(text), dim_(dim) {}

  NodePtr parse() {
    NodePtr n = expression();
    skip();
    if (pos_ != s_.size()) fail("unexpected trailing input");
    return n;
  }

 private:
  [[noreturn]] void fail(const std::string& msg) const {
    throw Error("expression: " + msg + " at column " + std::to_string(pos_ + 1) + " in '" +
                std::string(s_) + "'");
  }
  void skip() {
    while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
  }
  bool accept(char c) {
    skip();
    if (pos_ < s_.size() && s_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }
  void expect(char c) {
    if (!accept(c)) fail(std::string("expected '") + c + "'");
  }

  NodePtr expression() {
    NodePtr lhs = term();
    for (;;) {
      if (accept('+')) {
        lhs = make(Op::add, lhs, term());
      } else if (accept('-')) {
        lhs = make(Op::sub, lhs, term());
      } else {
        return lhs;
      }
    }
  }
  NodePtr term() {
    NodePtr lhs = unary();
    for (;;) {
      if (accept('*')) {
        lhs = make(Op::mul, lhs, unary());
      } else if (accept('/')) {
        lhs = make(Op::div, lhs, unary());
      } else {
        return lhs;
      }
    }
  }
  NodePtr unary() {
    if (accept('-')) return make(Op::neg, unary());
    if (accept('+')) return unary();
    return power();
  }
  NodePtr power() {
    NodePtr base = primary();
    if (accept('^')) return make(Op::pow, base, unary());
    return base;
  }
  NodePtr primary() {
    skip();
    if (pos_ >= s_.size()) fail("unexpected end of input");
    const char c = s_[pos_];
    if (accept('(')) {
      NodePtr n = expression();
      expect(')');
      return n;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return number();
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') return identifier();
    fail(std::string("unexpected character '") + c + "'");
  }
  NodePtr number() {
    const std::string rest(s_.substr(pos_));
    char* end = nullptr;
    const double v = std::strtod(rest.c_str(), &end);
    if (end == rest.c_str()) fail("malformed number");
    pos_ += static_cast<std::size_t>(end - rest.c_str());
    return make_const(v);
  }
  NodePtr identifier() {
    const std::size_t start = pos_;
    while (pos_ < s_.size() &&
           (std::isalnum(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '_')) {
      ++pos_;
    }
    const std::string name(s_.substr(start, pos_ - start));
    static const struct {
      const char* name;
      Op op;
      int arity;
    } kFunctions[] = {{"sqrt", Op::sqrt, 1}, {"exp", Op::exp, 1}, {"log", Op::log, 1},
                      {"abs", Op::abs, 1},   {"max", Op::max, 2}, {"min", Op::min, 2}};
    for (const auto& fn : kFunctions) {
      if (name == fn.name) {
        expect('(');
        NodePtr a = expression();
        NodePtr b;
        if (fn.arity == 2) {
          expect(',');
          b = expression();
        }
        expect(')');
        return make(fn.op, a, b);
      }
    }
    int index = -1;
    if (name.size() > 1 && name[0] == 'x' &&
        name.find_first_not_of("0123456789", 1) == std::string::npos) {
      index = std::atoi(name.c_str() + 1) - 1;
    } else if (dim_ <= 3 && name.size() == 1 && (name[0] == 'x' || name[0] == 'y' || name[0] == 'z')) {
      index = name[0] - 'x';
    } else if (dim_ == 1 && name == "t") {
      index = 0;
    } else if (name == "pi") {
      return make_const(M_PI);
    }
    if (index < 0 || index >= dim_) {
      pos_ = start;
      fail("unknown identifier '" + name + "'");
    }
    auto n = std::make_shared<Expr::Node>();
    n->op = Op::variable;
    n->index = index;
    return n;
  }

  std::string_view s_;
  int dim_;
  std::size_t pos_ = 0;
};

}  // namespace

Expr Expr::parse(std::string_view text, int dimension) {
  if (dimension < 1) throw Error("expression: dimension must be positive");
  return Expr(Parser(text, dimension).parse());
}

Expr Expr::constant(double c) { return Expr(make_const(c)); }

Expr Expr::variable(int index) {
  auto n = std::make_shared<Node>();
  n->op = Op::variable;
  n->index = index;
  return Expr(n);
}

double Expr::eval(const Vec& x) const {
  if (!node_) throw Error("expression: empty");
  return eval_node(*node_, x);
}

Expr Expr::derivative(int index) const {
  if (!node_) throw Error("expression: empty");
  return Expr(derive(node_, index));
}

std::string Expr::str() const { return node_ ? to_str(*node_) : std::string(); }

Expr operator+(const Expr& a, const Expr& b) { return Expr(add(a.node_, b.node_)); }
Expr operator-(const Expr& a, const Expr& b) { return Expr(sub(a.node_, b.node_)); }
Expr operator*(const Expr& a, const Expr& b) { return Expr(mul(a.node_, b.node_)); }
Expr operator/(const Expr& a, const Expr& b) { return Expr(div(a.node_, b.node_)); }
Expr operator-(const Expr& a) { return Expr(neg(a.node_)); }

}  // namespace kl
