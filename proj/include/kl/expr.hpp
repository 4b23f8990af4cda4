#pragma once

#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "kl/types.hpp"

namespace kl {

/// Immutable arithmetic expression over named variables, with exact symbolic derivatives.
///
/// Grammar: infix + - * / ^ (right associative), unary minus, parentheses, numeric literals,
/// variables, and the functions sqrt, exp, log, abs, max(a,b), min(a,b).
class Expr {
 public:
  struct Node;

  Expr() = default;

  /// Variables are x1..xn; x, y, z alias x1, x2, x3 when n <= 3, and t aliases x1 when n = 1.
  /// Throws kl::Error naming the offending column on malformed input or unknown identifiers.
  static Expr parse(std::string_view text, int dimension);
  static Expr constant(double c);
  static Expr variable(int index);

  double eval(const Vec& x) const;
  Expr derivative(int index) const;
  std::string str() const;
  bool valid() const { return static_cast<bool>(node_); }

  friend Expr operator+(const Expr& a, const Expr& b);
  friend Expr operator-(const Expr& a, const Expr& b);
  friend Expr operator*(const Expr& a, const Expr& b);
  friend Expr operator/(const Expr& a, const Expr& b);
  friend Expr operator-(const Expr& a);

 private:
  explicit Expr(std::shared_ptr<const Node> n) : node_(std::move(n)) {}
  std::shared_ptr<const Node> node_;
};

}  // namespace kl
