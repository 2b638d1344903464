#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mortvi/error.hpp"
#include "mortvi/math.hpp"

namespace mortvi {

// Primitive set of the expression engine. Sum is a weighted reduction
// (c0 + sum_j w_j * p_j), Dot a bilinear reduction over parent pairs
// (c0 + sum_j p_{2j} * p_{2j+1}); one Dot node per matrix-vector row.
enum class Op : std::uint8_t {
  leaf,
  constant,
  add,
  sub,
  mul,
  div,
  neg,
  add_c,
  mul_c,
  exp,
  log,
  pow_c,
  log1p_exp,
  logistic,
  sum,
  dot,
};

inline const char* op_name(Op op) {
  switch (op) {
    case Op::leaf: return "leaf";
    case Op::constant: return "const";
    case Op::add: return "add";
    case Op::sub: return "sub";
    case Op::mul: return "mul";
    case Op::div: return "div";
    case Op::neg: return "neg";
    case Op::add_c: return "add_c";
    case Op::mul_c: return "mul_c";
    case Op::exp: return "exp";
    case Op::log: return "log";
    case Op::pow_c: return "pow_c";
    case Op::log1p_exp: return "log1p_exp";
    case Op::logistic: return "logistic";
    case Op::sum: return "sum";
    case Op::dot: return "dot";
  }
  return "?";
}

class Tape;

// Lightweight handle to one tape node.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::uint32_t index) : tape_(tape), index_(index) {}
  Tape* tape() const { return tape_; }
  std::uint32_t index() const { return index_; }
  double value() const;
  double adjoint() const;

 private:
  Tape* tape_ = nullptr;
  std::uint32_t index_ = 0;
};

class Tape {
 public:
  struct Arg {
    std::uint32_t index;
    double weight;
  };

  Var leaf(double v) {
    const std::uint32_t i = push(Op::leaf, 0, 0, 0.0);
    val_[i] = v;
    return Var(this, i);
  }

  Var constant(double v) {
    const std::uint32_t i = push(Op::constant, 0, 0, v);
    val_[i] = v;
    return Var(this, i);
  }

  Var unary(Op op, Var a, double c = 0.0) {
    const std::uint32_t i = push(op, a.index(), 0, c);
    val_[i] = eval_node(i);
    return Var(this, i);
  }

  Var binary(Op op, Var a, Var b) {
    const std::uint32_t i = push(op, a.index(), b.index(), 0.0);
    val_[i] = eval_node(i);
    return Var(this, i);
  }

  // c0 + sum_j xs[j]
  Var sum(std::span<const Var> xs, double c0 = 0.0) {
    const std::uint32_t off = static_cast<std::uint32_t>(args_.size());
    for (const Var& x : xs) args_.push_back({x.index(), 1.0});
    const std::uint32_t i = push(Op::sum, off, static_cast<std::uint32_t>(xs.size()), c0);
    val_[i] = eval_node(i);
    return Var(this, i);
  }

  // c0 + sum_j ws[j] * xs[j]
  Var weighted_sum(std::span<const Var> xs, std::span<const double> ws, double c0 = 0.0) {
    if (xs.size() != ws.size()) throw ShapeError("weighted_sum: size mismatch");
    const std::uint32_t off = static_cast<std::uint32_t>(args_.size());
    for (std::size_t j = 0; j < xs.size(); ++j) args_.push_back({xs[j].index(), ws[j]});
    const std::uint32_t i = push(Op::sum, off, static_cast<std::uint32_t>(xs.size()), c0);
    val_[i] = eval_node(i);
    return Var(this, i);
  }

  // c0 + sum_j a[j] * b[j]
  Var dot(std::span<const Var> a, std::span<const Var> b, double c0 = 0.0) {
    if (a.size() != b.size()) throw ShapeError("dot: size mismatch");
    const std::uint32_t off = static_cast<std::uint32_t>(args_.size());
    for (std::size_t j = 0; j < a.size(); ++j) {
      args_.push_back({a[j].index(), 0.0});
      args_.push_back({b[j].index(), 0.0});
    }
    const std::uint32_t i = push(Op::dot, off, static_cast<std::uint32_t>(2 * a.size()), c0);
    val_[i] = eval_node(i);
    return Var(this, i);
  }

  double value(std::uint32_t i) const { return val_[i]; }
  double adjoint(std::uint32_t i) const { return adj_[i]; }
  std::size_t size() const { return op_.size(); }

  void set_leaf(Var v, double x) {
    if (op_[v.index()] != Op::leaf) throw Error("set_leaf: node is not a leaf");
    val_[v.index()] = x;
  }

  // Recompute every primal in recording order. With unchanged leaves this
  // reproduces the recorded values bit-identically.
  void replay() {
    for (std::uint32_t i = 0; i < op_.size(); ++i)
      if (op_[i] != Op::leaf && op_[i] != Op::constant) val_[i] = eval_node(i);
  }

  std::optional<std::uint32_t> first_nonfinite() const {
    for (std::uint32_t i = 0; i < val_.size(); ++i)
      if (!std::isfinite(val_[i])) return i;
    return std::nullopt;
  }

  // One reverse sweep seeding d(root)/d(root) = 1.
  void backward(Var root) {
    if (const auto bad = first_nonfinite())
      throw EvalError("non-finite value at node " + std::to_string(*bad) + " (op " +
                      op_name(op_[*bad]) + ")");
    adj_.assign(op_.size(), 0.0);
    adj_[root.index()] = 1.0;
    for (std::uint32_t i = root.index() + 1; i-- > 0;) {
      const double g = adj_[i];
      if (g == 0.0) continue;
      const std::uint32_t a = a_[i], b = b_[i];
      switch (op_[i]) {
        case Op::leaf:
        case Op::constant:
          break;
        case Op::add:
          adj_[a] += g;
          adj_[b] += g;
          break;
        case Op::sub:
          adj_[a] += g;
          adj_[b] -= g;
          break;
        case Op::mul:
          adj_[a] += g * val_[b];
          adj_[b] += g * val_[a];
          break;
        case Op::div:
          adj_[a] += g / val_[b];
          adj_[b] -= g * val_[i] / val_[b];
          break;
        case Op::neg:
          adj_[a] -= g;
          break;
        case Op::add_c:
          adj_[a] += g;
          break;
        case Op::mul_c:
          adj_[a] += g * c_[i];
          break;
        case Op::exp:
          adj_[a] += g * val_[i];
          break;
        case Op::log:
          adj_[a] += g / val_[a];
          break;
        case Op::pow_c:
          adj_[a] += g * c_[i] * std::pow(val_[a], c_[i] - 1.0);
          break;
        case Op::log1p_exp:
          adj_[a] += g * mortvi::logistic(val_[a]);
          break;
        case Op::logistic:
          adj_[a] += g * val_[i] * (1.0 - val_[i]);
          break;
        case Op::sum:
          for (std::uint32_t j = 0; j < b; ++j) adj_[args_[a + j].index] += g * args_[a + j].weight;
          break;
        case Op::dot:
          for (std::uint32_t j = 0; j < b; j += 2) {
            adj_[args_[a + j].index] += g * val_[args_[a + j + 1].index];
            adj_[args_[a + j + 1].index] += g * val_[args_[a + j].index];
          }
          break;
      }
    }
  }

  // Adjoints of `leaves` w.r.t. `root`, in the order given.
  std::vector<double> gradient(Var root, std::span<const Var> leaves) {
    backward(root);
    std::vector<double> g(leaves.size());
    for (std::size_t i = 0; i < leaves.size(); ++i) g[i] = adj_[leaves[i].index()];
    return g;
  }

  void clear() {
    op_.clear();
    val_.clear();
    adj_.clear();
    a_.clear();
    b_.clear();
    c_.clear();
    args_.clear();
  }

  void reserve(std::size_t nodes, std::size_t args) {
    op_.reserve(nodes);
    val_.reserve(nodes);
    a_.reserve(nodes);
    b_.reserve(nodes);
    c_.reserve(nodes);
    args_.reserve(args);
  }

 private:
  std::uint32_t push(Op op, std::uint32_t a, std::uint32_t b, double c) {
    const std::uint32_t i = static_cast<std::uint32_t>(op_.size());
    op_.push_back(op);
    a_.push_back(a);
    b_.push_back(b);
    c_.push_back(c);
    val_.push_back(0.0);
    return i;
  }

  double eval_node(std::uint32_t i) const {
    const std::uint32_t a = a_[i], b = b_[i];
    switch (op_[i]) {
      case Op::leaf:
      case Op::constant:
        return val_[i];
      case Op::add:
        return val_[a] + val_[b];
      case Op::sub:
        return val_[a] - val_[b];
      case Op::mul:
        return val_[a] * val_[b];
      case Op::div:
        return val_[a] / val_[b];
      case Op::neg:
        return -val_[a];
      case Op::add_c:
        return val_[a] + c_[i];
      case Op::mul_c:
        return val_[a] * c_[i];
      case Op::exp:
        return std::exp(val_[a]);
      case Op::log:
        return std::log(val_[a]);
      case Op::pow_c:
        return std::pow(val_[a], c_[i]);
      case Op::log1p_exp:
        return mortvi::log1p_exp(val_[a]);
      case Op::logistic:
        return mortvi::logistic(val_[a]);
      case Op::sum: {
        double acc = c_[i];
        for (std::uint32_t j = 0; j < b; ++j) acc += args_[a + j].weight * val_[args_[a + j].index];
        return acc;
      }
      case Op::dot: {
        double acc = c_[i];
        for (std::uint32_t j = 0; j < b; j += 2)
          acc += val_[args_[a + j].index] * val_[args_[a + j + 1].index];
        return acc;
      }
    }
    return 0.0;
  }

  std::vector<Op> op_;
  std::vector<double> val_;
  std::vector<double> adj_;
  std::vector<std::uint32_t> a_;
  std::vector<std::uint32_t> b_;
  std::vector<double> c_;
  std::vector<Arg> args_;
};

inline double Var::value() const { return tape_->value(index_); }
inline double Var::adjoint() const { return tape_->adjoint(index_); }

inline double primal_value(const Var& v) { return v.value(); }

inline Var operator+(Var a, Var b) { return a.tape()->binary(Op::add, a, b); }
inline Var operator-(Var a, Var b) { return a.tape()->binary(Op::sub, a, b); }
inline Var operator*(Var a, Var b) { return a.tape()->binary(Op::mul, a, b); }
inline Var operator/(Var a, Var b) { return a.tape()->binary(Op::div, a, b); }
inline Var operator-(Var a) { return a.tape()->unary(Op::neg, a); }

inline Var operator+(Var a, double c) { return a.tape()->unary(Op::add_c, a, c); }
inline Var operator+(double c, Var a) { return a + c; }
inline Var operator-(Var a, double c) { return a + (-c); }
inline Var operator-(double c, Var a) { return a.tape()->unary(Op::add_c, -a, c); }
inline Var operator*(Var a, double c) { return a.tape()->unary(Op::mul_c, a, c); }
inline Var operator*(double c, Var a) { return a * c; }
inline Var operator/(Var a, double c) { return a * (1.0 / c); }
inline Var operator/(double c, Var a) { return a.tape()->binary(Op::div, a.tape()->constant(c), a); }

inline Var exp(Var a) { return a.tape()->unary(Op::exp, a); }
inline Var log(Var a) { return a.tape()->unary(Op::log, a); }
inline Var pow(Var a, double c) { return a.tape()->unary(Op::pow_c, a, c); }
inline Var log1p_exp(Var a) { return a.tape()->unary(Op::log1p_exp, a); }
inline Var logistic(Var a) { return a.tape()->unary(Op::logistic, a); }
inline Var square(Var a) { return a.tape()->unary(Op::pow_c, a, 2.0); }
inline Var softplus(Var a) { return log1p_exp(a); }

inline Var dot(std::span<const Var> a, std::span<const Var> b, double c0 = 0.0) {
  if (a.empty()) throw ShapeError("dot: empty operands");
  return a[0].tape()->dot(a, b, c0);
}

inline Var weighted_sum(std::span<const Var> xs, std::span<const double> ws, double c0 = 0.0) {
  if (xs.empty()) throw ShapeError("weighted_sum: empty operands");
  return xs[0].tape()->weighted_sum(xs, ws, c0);
}

// Leaves for a block of parameters, in order.
inline std::vector<Var> lift(Tape& tape, std::span<const double> xs) {
  std::vector<Var> out;
  out.reserve(xs.size());
  for (double x : xs) out.push_back(tape.leaf(x));
  return out;
}

}  // namespace mortvi
