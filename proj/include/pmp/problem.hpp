#pragma once

// Problem files: a JSON description of a control system, its cost, control
// set, boundary data and horizon. Dynamics and cost come either from builtins
// or from expressions in a small arithmetic grammar over x<i> and u<i>.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "pmp/control_system.hpp"
#include "pmp/core.hpp"
#include "pmp/maximum_principle.hpp"

namespace pmp {

using Json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Expressions.

class ExpressionError : public InputError {
 public:
  ExpressionError(const std::string& expr, std::size_t pos, const std::string& token, const std::string& what)
      : InputError("expression error at column " + std::to_string(pos + 1) + " near token '" + token + "': " + what +
                   " in \"" + expr + "\""),
        token_(token),
        position_(pos) {}
  const std::string& token() const { return token_; }
  std::size_t position() const { return position_; }

 private:
  std::string token_;
  std::size_t position_;
};

class Expression {
 public:
  static Expression parse(const std::string& text, Eigen::Index m, Eigen::Index k) {
    Parser p{text, m, k};
    Expression e;
    e.text_ = text;
    e.root_ = p.parse_sum();
    p.skip_ws();
    if (p.pos < text.size()) p.fail("unexpected trailing input");
    return e;
  }

  double operator()(const Vector& x, const Vector& u) const { return root_->eval(x, u); }
  const std::string& text() const { return text_; }

 private:
  struct Node {
    enum class Op { num, x, u, add, sub, mul, div, pow, neg, sin, cos, exp };
    Op op = Op::num;
    double value = 0.0;
    Eigen::Index index = 0;
    std::shared_ptr<Node> l, r;

    double eval(const Vector& x, const Vector& u) const {
      switch (op) {
        case Op::num: return value;
        case Op::x: return x(index);
        case Op::u: return u(index);
        case Op::add: return l->eval(x, u) + r->eval(x, u);
        case Op::sub: return l->eval(x, u) - r->eval(x, u);
        case Op::mul: return l->eval(x, u) * r->eval(x, u);
        case Op::div: return l->eval(x, u) / r->eval(x, u);
        case Op::pow: return std::pow(l->eval(x, u), r->eval(x, u));
        case Op::neg: return -l->eval(x, u);
        case Op::sin: return std::sin(l->eval(x, u));
        case Op::cos: return std::cos(l->eval(x, u));
        case Op::exp: return std::exp(l->eval(x, u));
      }
      return 0.0;
    }
  };
  using NodePtr = std::shared_ptr<Node>;

  struct Parser {
    const std::string& s;
    Eigen::Index m, k;
    std::size_t pos = 0;

    void skip_ws() {
      while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
    }
    std::string token_here() {
      skip_ws();
      if (pos >= s.size()) return "<end>";
      std::size_t e = pos;
      if (std::isalnum(static_cast<unsigned char>(s[e])) || s[e] == '.' || s[e] == '_') {
        while (e < s.size() && (std::isalnum(static_cast<unsigned char>(s[e])) || s[e] == '.' || s[e] == '_')) ++e;
      } else {
        ++e;
      }
      return s.substr(pos, e - pos);
    }
    [[noreturn]] void fail(const std::string& what) {
      const std::string tok = token_here();
      throw ExpressionError(s, pos, tok, what);
    }
    static NodePtr bin(Node::Op op, NodePtr a, NodePtr b) {
      auto n = std::make_shared<Node>();
      n->op = op;
      n->l = std::move(a);
      n->r = std::move(b);
      return n;
    }
    bool eat(char c) {
      skip_ws();
      if (pos < s.size() && s[pos] == c) {
        ++pos;
        return true;
      }
      return false;
    }
    NodePtr parse_sum() {
      NodePtr lhs = parse_product();
      while (true) {
        if (eat('+')) lhs = bin(Node::Op::add, lhs, parse_product());
        else if (eat('-')) lhs = bin(Node::Op::sub, lhs, parse_product());
        else return lhs;
      }
    }
    NodePtr parse_product() {
      NodePtr lhs = parse_unary();
      while (true) {
        if (eat('*')) lhs = bin(Node::Op::mul, lhs, parse_unary());
        else if (eat('/')) lhs = bin(Node::Op::div, lhs, parse_unary());
        else return lhs;
      }
    }
    NodePtr parse_unary() {
      if (eat('-')) return bin(Node::Op::neg, parse_unary(), nullptr);
      if (eat('+')) return parse_unary();
      return parse_power();
    }
    NodePtr parse_power() {
      NodePtr base = parse_atom();
      if (eat('^')) return bin(Node::Op::pow, base, parse_unary());
      return base;
    }
    NodePtr parse_atom() {
      skip_ws();
      if (pos >= s.size()) fail("unexpected end of expression");
      const char c = s[pos];
      if (c == '(') {
        ++pos;
        NodePtr inner = parse_sum();
        if (!eat(')')) fail("expected ')'");
        return inner;
      }
      if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
        const char* begin = s.c_str() + pos;
        char* end = nullptr;
        const double v = std::strtod(begin, &end);
        if (end == begin) fail("malformed number");
        pos += static_cast<std::size_t>(end - begin);
        auto n = std::make_shared<Node>();
        n->value = v;
        return n;
      }
      if (std::isalpha(static_cast<unsigned char>(c))) {
        const std::size_t start = pos;
        std::size_t e = pos;
        while (e < s.size() && (std::isalnum(static_cast<unsigned char>(s[e])) || s[e] == '_')) ++e;
        const std::string word = s.substr(start, e - start);
        if (word == "sin" || word == "cos" || word == "exp") {
          pos = e;
          if (!eat('(')) fail("expected '(' after " + word);
          NodePtr arg = parse_sum();
          if (!eat(')')) fail("expected ')'");
          return bin(word == "sin" ? Node::Op::sin : word == "cos" ? Node::Op::cos : Node::Op::exp, arg, nullptr);
        }
        if ((word[0] == 'x' || word[0] == 'u') && word.size() > 1 &&
            word.find_first_not_of("0123456789", 1) == std::string::npos) {
          const auto idx = static_cast<Eigen::Index>(std::stol(word.substr(1)));
          const Eigen::Index limit = word[0] == 'x' ? m : k;
          if (idx >= limit) fail("index out of range (dimension " + std::to_string(limit) + ")");
          pos = e;
          auto n = std::make_shared<Node>();
          n->op = word[0] == 'x' ? Node::Op::x : Node::Op::u;
          n->index = idx;
          return n;
        }
        fail("unknown identifier");
      }
      fail("unexpected token");
    }
  };

  std::string text_;
  NodePtr root_;
};

// ---------------------------------------------------------------------------
// Problem files.

struct ModelSpec {
  /// Builtin id ("" for expressions).
  std::string builtin;
  /// Builtin parameters, kept verbatim.
  Json params = Json::object();
  std::vector<std::string> expressions;  // dynamics: one per state; cost: one
};

struct BoundaryEnd {
  bool manifold = false;
  Vector point;  // point, or anchor of the manifold
  std::vector<Vector> normals;
};

struct ProblemFile {
  std::string name;
  ModelSpec dynamics;
  ModelSpec cost;
  ControlSet control_set;
  BoundarySpec::Mode mode = BoundarySpec::Mode::fixed_time;
  BoundaryEnd initial;
  BoundaryEnd final;
  double a = 0.0;
  double b = 1.0;
  double step = 0.0;  // 0: default
  int shooting_steps = 1000;
  double tolerance = 1e-6;
  double p0 = -1.0;
  std::optional<Vector> guess_p;
  std::optional<double> guess_b;

  Eigen::Index state_dim() const;
  ControlSystem system() const;
  BoundarySpec boundary() const;
};

namespace detail {

inline Json number_to_json(double v) {
  if (std::isinf(v)) return v > 0 ? Json("inf") : Json("-inf");
  return v;
}

inline double json_number(const Json& j, const std::string& where) {
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf" || s == "+inf") return kInf;
    if (s == "-inf") return -kInf;
  }
  throw InputError(where + ": expected a number");
}

inline Vector json_vector(const Json& j, const std::string& where) {
  if (!j.is_array()) throw InputError(where + ": expected an array of numbers");
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = json_number(j[i], where);
  return v;
}

inline Json vector_json(const Vector& v) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(number_to_json(v(i)));
  return a;
}

inline Matrix json_matrix(const Json& j, const std::string& where) {
  if (!j.is_array() || j.empty()) throw InputError(where + ": expected a non-empty array of rows");
  const Vector r0 = json_vector(j[0], where);
  Matrix a(static_cast<Eigen::Index>(j.size()), r0.size());
  for (std::size_t i = 0; i < j.size(); ++i) {
    const Vector r = json_vector(j[i], where);
    require_dim(r.size(), r0.size(), where + " row");
    a.row(static_cast<Eigen::Index>(i)) = r.transpose();
  }
  return a;
}

inline const Json& need(const Json& j, const char* key, const std::string& where) {
  if (!j.is_object() || !j.contains(key)) throw InputError(where + ": missing field '" + key + "'");
  return j.at(key);
}

inline ModelSpec parse_model(const Json& j, const std::string& where, bool single) {
  ModelSpec ms;
  if (j.is_string()) {
    if (single) ms.expressions.push_back(j.get<std::string>());
    else throw InputError(where + ": expected an object");
    return ms;
  }
  if (!j.is_object()) throw InputError(where + ": expected an object");
  if (j.contains("builtin")) {
    ms.builtin = j.at("builtin").get<std::string>();
    for (auto it = j.begin(); it != j.end(); ++it)
      if (it.key() != "builtin") ms.params[it.key()] = it.value();
  } else if (j.contains("expressions")) {
    for (const auto& e : j.at("expressions")) ms.expressions.push_back(e.get<std::string>());
    if (single && ms.expressions.size() != 1) throw InputError(where + ": cost takes exactly one expression");
  } else if (j.contains("expression")) {
    ms.expressions.push_back(j.at("expression").get<std::string>());
  } else {
    throw InputError(where + ": needs 'builtin' or 'expressions'");
  }
  return ms;
}

inline Json emit_model(const ModelSpec& ms, bool single) {
  Json j = Json::object();
  if (!ms.builtin.empty()) {
    j["builtin"] = ms.builtin;
    for (auto it = ms.params.begin(); it != ms.params.end(); ++it) j[it.key()] = it.value();
  } else if (single) {
    j["expression"] = ms.expressions.front();
  } else {
    j["expressions"] = ms.expressions;
  }
  return j;
}

inline ControlSet parse_control_set(const Json& j) {
  const std::string where = "control_set";
  if (j.contains("box")) {
    const Json& b = j.at("box");
    return ControlSet::box(json_vector(need(b, "lo", where), where + ".box.lo"),
                           json_vector(need(b, "hi", where), where + ".box.hi"));
  }
  if (j.contains("finite")) {
    std::vector<Vector> pts;
    for (const auto& p : j.at("finite")) pts.push_back(json_vector(p, where + ".finite"));
    return ControlSet::finite(pts);
  }
  if (j.contains("ball")) {
    const Json& b = j.at("ball");
    return ControlSet::ball(json_vector(need(b, "center", where), where + ".ball.center"),
                            json_number(need(b, "radius", where), where + ".ball.radius"));
  }
  throw InputError("control_set: needs one of 'box', 'finite', 'ball'");
}

inline Json emit_control_set(const ControlSet& cs) {
  Json j = Json::object();
  switch (cs.kind) {
    case ControlSet::Kind::box: j["box"] = {{"lo", vector_json(cs.lo)}, {"hi", vector_json(cs.hi)}}; break;
    case ControlSet::Kind::finite: {
      Json pts = Json::array();
      for (const auto& p : cs.points) pts.push_back(vector_json(p));
      j["finite"] = pts;
      break;
    }
    case ControlSet::Kind::ball:
      j["ball"] = {{"center", vector_json(cs.center)}, {"radius", number_to_json(cs.radius)}};
      break;
  }
  return j;
}

inline BoundaryEnd parse_end(const Json& j, const std::string& where) {
  BoundaryEnd e;
  if (j.contains("point")) {
    e.point = json_vector(j.at("point"), where + ".point");
  } else if (j.contains("anchor")) {
    e.manifold = true;
    e.point = json_vector(j.at("anchor"), where + ".anchor");
    for (const auto& n : j.value("normals", Json::array())) e.normals.push_back(json_vector(n, where + ".normals"));
  } else {
    throw InputError(where + ": needs 'point' or 'anchor' (+ 'normals')");
  }
  return e;
}

inline Json emit_end(const BoundaryEnd& e) {
  Json j = Json::object();
  if (!e.manifold) {
    j["point"] = vector_json(e.point);
  } else {
    j["anchor"] = vector_json(e.point);
    Json n = Json::array();
    for (const auto& v : e.normals) n.push_back(vector_json(v));
    j["normals"] = n;
  }
  return j;
}

// Orthonormal basis of the common null space of the normals.
inline std::vector<Vector> tangent_from_normals(const std::vector<Vector>& normals, Eigen::Index m) {
  if (normals.empty()) {
    std::vector<Vector> basis;
    for (Eigen::Index i = 0; i < m; ++i) basis.push_back(Vector::Unit(m, i));
    return basis;
  }
  Matrix n(static_cast<Eigen::Index>(normals.size()), m);
  for (std::size_t i = 0; i < normals.size(); ++i) {
    require_dim(normals[i].size(), m, "manifold normal");
    n.row(static_cast<Eigen::Index>(i)) = normals[i].transpose();
  }
  Eigen::JacobiSVD<Matrix> svd(n, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  Eigen::Index rank = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i)
    if (sv(i) > 1e-12 * std::max(1.0, sv(0))) ++rank;
  if (rank != n.rows()) throw InputError("manifold normals are linearly dependent");
  std::vector<Vector> basis;
  for (Eigen::Index i = rank; i < m; ++i) basis.push_back(svd.matrixV().col(i));
  return basis;
}

inline Matrix param_matrix(const ModelSpec& ms, const char* key) {
  return json_matrix(need(ms.params, key, ms.builtin), ms.builtin + "." + key);
}

}  // namespace detail

inline Eigen::Index ProblemFile::state_dim() const {
  if (dynamics.builtin.empty()) return static_cast<Eigen::Index>(dynamics.expressions.size());
  if (dynamics.builtin == "double_integrator") return 2;
  if (dynamics.builtin == "scalar_integrator") return 1;
  if (dynamics.builtin == "linear_system") return detail::param_matrix(dynamics, "A").rows();
  if (dynamics.builtin == "zero") return static_cast<Eigen::Index>(dynamics.params.value("m", 1));
  throw InputError("unknown dynamics builtin '" + dynamics.builtin + "'");
}

inline ControlSystem ProblemFile::system() const {
  ControlSystem sys;
  sys.name = name;
  sys.m = state_dim();
  sys.k = control_set.dim();
  sys.control_set = control_set;
  const Eigen::Index m = sys.m, k = sys.k;
  if (m < 1) throw InputError("dynamics: state dimension must be positive");

  const std::string& db = dynamics.builtin;
  if (db.empty()) {
    std::vector<Expression> ex;
    for (const auto& s : dynamics.expressions) ex.push_back(Expression::parse(s, m, k));
    sys.f = [ex, m](const Vector& x, const Vector& u) {
      Vector d(m);
      for (Eigen::Index i = 0; i < m; ++i) d(i) = ex[static_cast<std::size_t>(i)](x, u);
      return d;
    };
  } else if (db == "double_integrator") {
    if (k != 1) throw InputError("double_integrator needs a one-dimensional control set");
    sys.f = [](const Vector& x, const Vector& u) {
      Vector d(2);
      d << x(1), u(0);
      return d;
    };
    sys.df_dx = [](const Vector&, const Vector&) {
      Matrix j = Matrix::Zero(2, 2);
      j(0, 1) = 1.0;
      return j;
    };
  } else if (db == "scalar_integrator") {
    if (k != 1) throw InputError("scalar_integrator needs a one-dimensional control set");
    sys.f = [](const Vector&, const Vector& u) { return Vector(u); };
    sys.df_dx = [](const Vector&, const Vector&) { return Matrix(Matrix::Zero(1, 1)); };
  } else if (db == "linear_system") {
    const Matrix A = detail::param_matrix(dynamics, "A");
    const Matrix B = detail::param_matrix(dynamics, "B");
    if (A.cols() != m || B.rows() != m || B.cols() != k)
      throw InputError("linear_system: A must be m x m and B must be m x k");
    sys.f = [A, B](const Vector& x, const Vector& u) { return Vector(A * x + B * u); };
    sys.df_dx = [A](const Vector&, const Vector&) { return A; };
  } else if (db == "zero") {
    sys.f = [m](const Vector&, const Vector&) { return Vector(Vector::Zero(m)); };
    sys.df_dx = [m](const Vector&, const Vector&) { return Matrix(Matrix::Zero(m, m)); };
  } else {
    throw InputError("unknown dynamics builtin '" + db + "'");
  }

  const std::string& cb = cost.builtin;
  if (cb.empty() && cost.expressions.empty()) {
    sys.F = [](const Vector&, const Vector&) { return 0.0; };
  } else if (cb.empty()) {
    const Expression e = Expression::parse(cost.expressions.front(), m, k);
    sys.F = [e](const Vector& x, const Vector& u) { return e(x, u); };
  } else if (cb == "zero") {
    sys.F = [](const Vector&, const Vector&) { return 0.0; };
    sys.dF_dx = [m](const Vector&, const Vector&) { return Vector(Vector::Zero(m)); };
  } else if (cb == "time") {
    sys.F = [](const Vector&, const Vector&) { return 1.0; };
    sys.dF_dx = [m](const Vector&, const Vector&) { return Vector(Vector::Zero(m)); };
  } else if (cb == "quadratic") {
    const Matrix Q = detail::param_matrix(cost, "Q");
    const Matrix R = detail::param_matrix(cost, "R");
    if (Q.rows() != m || Q.cols() != m || R.rows() != k || R.cols() != k)
      throw InputError("quadratic cost: Q must be m x m and R must be k x k");
    sys.F = [Q, R](const Vector& x, const Vector& u) { return x.dot(Q * x) + u.dot(R * u); };
    sys.dF_dx = [Q](const Vector& x, const Vector&) { return Vector((Q + Q.transpose()) * x); };
  } else {
    throw InputError("unknown cost builtin '" + cb + "'");
  }
  sys.check();
  return sys;
}

inline BoundarySpec ProblemFile::boundary() const {
  const Eigen::Index m = state_dim();
  BoundarySpec bs;
  bs.mode = mode;
  auto make = [m](const BoundaryEnd& e, const char* what) {
    require_dim(e.point.size(), m, std::string("boundary ") + what);
    if (!e.manifold) return BoundaryCondition::at(e.point);
    return BoundaryCondition::manifold(e.point, detail::tangent_from_normals(e.normals, m));
  };
  bs.initial = make(initial, "initial");
  bs.final = make(final, "final");
  bs.check(m);
  return bs;
}

inline ProblemFile problem_from_json(const Json& j) {
  if (!j.is_object()) throw InputError("problem file: top level must be an object");
  ProblemFile pf;
  pf.name = j.value("name", std::string("problem"));
  pf.dynamics = detail::parse_model(detail::need(j, "dynamics", "problem"), "dynamics", false);
  if (j.contains("cost")) pf.cost = detail::parse_model(j.at("cost"), "cost", true);
  pf.control_set = detail::parse_control_set(detail::need(j, "control_set", "problem"));
  const Json& hz = detail::need(j, "horizon", "problem");
  if (!hz.is_array() || hz.size() != 2) throw InputError("horizon: expected [a, b]");
  pf.a = detail::json_number(hz[0], "horizon");
  pf.b = detail::json_number(hz[1], "horizon");
  if (!(pf.b > pf.a)) throw InputError("horizon: b must exceed a");
  const Json& bd = detail::need(j, "boundary", "problem");
  const std::string mode = bd.value("mode", std::string("fixed"));
  if (mode == "fixed") pf.mode = BoundarySpec::Mode::fixed_time;
  else if (mode == "free") pf.mode = BoundarySpec::Mode::free_time;
  else throw InputError("boundary.mode: expected 'fixed' or 'free', got '" + mode + "'");
  pf.initial = detail::parse_end(detail::need(bd, "initial", "boundary"), "boundary.initial");
  pf.final = detail::parse_end(detail::need(bd, "final", "boundary"), "boundary.final");
  if (j.contains("integrator")) {
    const Json& ig = j.at("integrator");
    pf.step = ig.value("step", 0.0);
    pf.shooting_steps = ig.value("shooting_steps", 1000);
  }
  pf.tolerance = j.value("tolerance", 1e-6);
  pf.p0 = j.value("p0", -1.0);
  if (j.contains("guess")) {
    const Json& g = j.at("guess");
    if (g.contains("p")) pf.guess_p = detail::json_vector(g.at("p"), "guess.p");
    if (g.contains("b")) pf.guess_b = detail::json_number(g.at("b"), "guess.b");
  }
  // Validate eagerly so errors surface at load time.
  (void)pf.system();
  (void)pf.boundary();
  if (pf.guess_p) require_dim(pf.guess_p->size(), pf.state_dim(), "guess.p");
  return pf;
}

inline Json problem_to_json(const ProblemFile& pf) {
  Json j = Json::object();
  j["name"] = pf.name;
  j["dynamics"] = detail::emit_model(pf.dynamics, false);
  if (!pf.cost.builtin.empty() || !pf.cost.expressions.empty()) j["cost"] = detail::emit_model(pf.cost, true);
  j["control_set"] = detail::emit_control_set(pf.control_set);
  j["horizon"] = {pf.a, pf.b};
  j["boundary"] = {{"mode", pf.mode == BoundarySpec::Mode::free_time ? "free" : "fixed"},
                   {"initial", detail::emit_end(pf.initial)},
                   {"final", detail::emit_end(pf.final)}};
  j["integrator"] = {{"step", pf.step}, {"shooting_steps", pf.shooting_steps}};
  j["tolerance"] = pf.tolerance;
  j["p0"] = pf.p0;
  if (pf.guess_p || pf.guess_b) {
    Json g = Json::object();
    if (pf.guess_p) g["p"] = detail::vector_json(*pf.guess_p);
    if (pf.guess_b) g["b"] = *pf.guess_b;
    j["guess"] = g;
  }
  return j;
}

namespace detail {

inline std::size_t line_of(const std::string& text, std::size_t byte) {
  return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<long>(std::min(byte, text.size())), '\n'));
}

}  // namespace detail

/// Parses problem text; diagnostics carry the line number where possible.
inline ProblemFile parse_problem(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw InputError("problem file line " + std::to_string(detail::line_of(text, e.byte > 0 ? e.byte - 1 : 0)) +
                     ": " + e.what());
  }
  try {
    return problem_from_json(j);
  } catch (const ExpressionError& e) {
    // Locate the offending expression in the source text.
    std::string msg = e.what();
    const auto q = msg.rfind(" in \"");
    if (q != std::string::npos) {
      const std::string expr = msg.substr(q + 5, msg.size() - q - 6);
      const auto at = text.find(expr);
      if (at != std::string::npos) msg = "problem file line " + std::to_string(detail::line_of(text, at)) + ": " + msg;
    }
    throw InputError(msg);
  } catch (const Json::exception& e) {
    throw InputError(std::string("problem file: ") + e.what());
  }
}

inline ProblemFile load_problem(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open problem file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_problem(ss.str());
}

// ---------------------------------------------------------------------------
// Report serialisation.

inline Json report_to_json(const PMPReport& r) {
  Json j = Json::object();
  j["res_3a"] = r.res_3a;
  j["res_3b"] = r.res_3b;
  j["res_3c"] = r.res_3c;
  j["res_3d"] = {{"drift", r.res_3d_drift}, {"sign_ok", r.res_3d_sign_ok}};
  j["res_3e"] = {{"initial", r.res_3e_initial}, {"final", r.res_3e_final}};
  j["adjoint_defect"] = r.adjoint_defect;
  j["sigma0"] = r.sigma0;
  j["classification"] = to_string(r.classification);
  j["passed"] = r.passed();
  j["tolerances"] = {{"tol", r.tol}};
  j["lebesgue_nodes"] = r.lebesgue_nodes;
  j["exact_maximization"] = r.exact_maximization;
  j["maximization_resolution"] = r.maximization_resolution;
  return j;
}

inline void write_adjoint_csv(std::ostream& os, const AdjointCurve& ac) {
  const Eigen::Index m = ac.sigma.front().size();
  os << "t,sigma0";
  for (Eigen::Index i = 0; i < m; ++i) os << ",s" << i;
  os << '\n' << std::setprecision(17);
  for (std::size_t n = 0; n < ac.grid.size(); ++n) {
    os << ac.grid[n] << ',' << ac.sigma0;
    for (Eigen::Index i = 0; i < m; ++i) os << ',' << ac.sigma[n](i);
    os << '\n';
  }
}

/// One row per control piece: start time, value, and whether the piece
/// starts at a genuine discontinuity.
inline void write_control_csv(std::ostream& os, const ControlSignal& u, const std::vector<double>& switch_times) {
  os << "t";
  for (Eigen::Index i = 0; i < u.dim(); ++i) os << ",u" << i;
  os << ",switch\n" << std::setprecision(17);
  for (std::size_t p = 0; p < u.values.size(); ++p) {
    const double t = p == 0 ? u.a : u.switch_times[p - 1];
    os << t;
    for (Eigen::Index i = 0; i < u.dim(); ++i) os << ',' << u.values[p](i);
    const bool sw = p > 0 && std::any_of(switch_times.begin(), switch_times.end(), [&](double s) {
                      return std::abs(s - t) <= 1e-12 * std::max(1.0, std::abs(t));
                    });
    os << ',' << (sw ? 1 : 0) << '\n';
  }
}

/// Numeric CSV with a header row.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
};

inline CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open CSV file '" + path + "'");
  CsvTable t;
  std::string line;
  std::size_t lineno = 0;
  auto split = [](const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    return out;
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (t.header.empty()) {
      t.header = split(line);
      continue;
    }
    const auto cells = split(line);
    if (cells.size() != t.header.size())
      throw InputError(path + " line " + std::to_string(lineno) + ": expected " + std::to_string(t.header.size()) +
                       " columns");
    std::vector<double> row;
    for (const auto& c : cells) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(c, &used));
        if (used != c.size()) throw std::invalid_argument(c);
      } catch (const std::exception&) {
        throw InputError(path + " line " + std::to_string(lineno) + ": not a number '" + c + "'");
      }
    }
    t.rows.push_back(std::move(row));
  }
  if (t.header.empty()) throw InputError(path + ": empty CSV");
  return t;
}

}  // namespace pmp
