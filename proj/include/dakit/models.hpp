#pragma once

#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "dakit/gaussian.hpp"
#include "dakit/linalg.hpp"
#include "dakit/rng.hpp"
#include "dakit/types.hpp"

namespace dakit {

// Benchmark dynamics. A model is the one-step map Psi of
//   v_{j+1} = Psi(v_j) + xi_j,
// either an explicit map or the time-tau flow of an ODE integrated with
// fixed-step RK4 (substeps steps per observation interval).

template <class Scalar>
struct LinearScalarMap {
  Scalar lambda = Scalar(0.5);
};

template <class Scalar>
struct LinearMap2D {
  Eigen::Matrix<Scalar, 2, 2> a;
};

template <class Scalar>
LinearMap2D<Scalar> diagonal_map_2d(Scalar lambda1, Scalar lambda2) {
  LinearMap2D<Scalar> m;
  m.a << lambda1, Scalar(0), Scalar(0), lambda2;
  return m;
}

template <class Scalar>
LinearMap2D<Scalar> jordan_map_2d(Scalar lambda, Scalar alpha) {
  LinearMap2D<Scalar> m;
  m.a << lambda, alpha, Scalar(0), lambda;
  return m;
}

// Rotation by a quarter turn: non-trivial oscillatory dynamics with |A| = 1.
template <class Scalar>
LinearMap2D<Scalar> quarter_rotation_2d() {
  LinearMap2D<Scalar> m;
  m.a << Scalar(0), Scalar(1), Scalar(-1), Scalar(0);
  return m;
}

template <class Scalar>
struct SinMap {
  Scalar alpha = Scalar(2.5);
};

template <class Scalar>
struct LogisticMap {
  Scalar r = Scalar(2);
};

template <class Scalar>
struct Lorenz63 {
  Scalar a = Scalar(10);
  Scalar b = Scalar(8) / Scalar(3);
  Scalar r = Scalar(28);
  Scalar tau = Scalar(0.01);  // observation interval
  int substeps = 20;
};

template <class Scalar>
struct Lorenz96 {
  int k = 40;
  Scalar f = Scalar(8);
  Scalar tau = Scalar(0.01);
  int substeps = 20;
};

template <class Scalar>
using ModelSpec = std::variant<LinearScalarMap<Scalar>, LinearMap2D<Scalar>,
                               SinMap<Scalar>, LogisticMap<Scalar>,
                               Lorenz63<Scalar>, Lorenz96<Scalar>>;

namespace detail {
template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;
}  // namespace detail

template <class Scalar>
Index state_dim(const ModelSpec<Scalar>& model) {
  return std::visit(
      detail::overloaded{
          [](const LinearScalarMap<Scalar>&) -> Index { return 1; },
          [](const LinearMap2D<Scalar>&) -> Index { return 2; },
          [](const SinMap<Scalar>&) -> Index { return 1; },
          [](const LogisticMap<Scalar>&) -> Index { return 1; },
          [](const Lorenz63<Scalar>&) -> Index { return 3; },
          [](const Lorenz96<Scalar>& m) -> Index { return m.k; }},
      model);
}

template <class Scalar>
bool is_continuous_time(const ModelSpec<Scalar>& model) {
  return std::holds_alternative<Lorenz63<Scalar>>(model) ||
         std::holds_alternative<Lorenz96<Scalar>>(model);
}

template <class Scalar>
void validate_model(const ModelSpec<Scalar>& model) {
  std::visit(detail::overloaded{
                 [](const LinearScalarMap<Scalar>& m) {
                   if (!std::isfinite(m.lambda))
                     throw ValidationError("linear map: lambda not finite");
                 },
                 [](const LinearMap2D<Scalar>& m) {
                   if (!m.a.allFinite())
                     throw ValidationError("linear 2d map: matrix not finite");
                 },
                 [](const SinMap<Scalar>& m) {
                   if (!std::isfinite(m.alpha))
                     throw ValidationError("sin map: alpha not finite");
                 },
                 [](const LogisticMap<Scalar>& m) {
                   if (!(m.r >= Scalar(0) && m.r <= Scalar(4)))
                     throw ValidationError("logistic map: r must lie in [0, 4]");
                 },
                 [](const Lorenz63<Scalar>& m) {
                   if (!(m.a > Scalar(0) && m.b > Scalar(0) && m.r > Scalar(0)))
                     throw ValidationError("lorenz63: parameters must be positive");
                   if (!(m.tau > Scalar(0)) || m.substeps < 1)
                     throw ValidationError("lorenz63: need tau > 0 and substeps >= 1");
                 },
                 [](const Lorenz96<Scalar>& m) {
                   if (m.k < 4) throw ValidationError("lorenz96: need k >= 4");
                   if (!(m.tau > Scalar(0)) || m.substeps < 1)
                     throw ValidationError("lorenz96: need tau > 0 and substeps >= 1");
                 }},
             model);
}

template <class Scalar>
Vec<Scalar> vector_field(const Lorenz63<Scalar>& m, const Vec<Scalar>& v) {
  Vec<Scalar> f(3);
  f[0] = m.a * (v[1] - v[0]);
  f[1] = -m.a * v[0] - v[1] - v[0] * v[2];
  f[2] = v[0] * v[1] - m.b * v[2] - m.b * (m.r + m.a);
  return f;
}

template <class Scalar>
Vec<Scalar> vector_field(const Lorenz96<Scalar>& m, const Vec<Scalar>& v) {
  const Index k = m.k;
  Vec<Scalar> f(k);
  for (Index i = 0; i < k; ++i) {
    const Scalar prev = v[(i - 1 + k) % k];
    const Scalar prev2 = v[(i - 2 + k) % k];
    const Scalar next = v[(i + 1) % k];
    f[i] = prev * (next - prev2) - v[i] + m.f;
  }
  return f;
}

template <class Scalar>
Vec<Scalar> vector_field(const ModelSpec<Scalar>& model, const Vec<Scalar>& v) {
  if (const auto* l63 = std::get_if<Lorenz63<Scalar>>(&model)) return vector_field(*l63, v);
  if (const auto* l96 = std::get_if<Lorenz96<Scalar>>(&model)) return vector_field(*l96, v);
  throw ValidationError("vector_field: model is a discrete map");
}

// Fixed-step RK4 over time t, with the model's substep count scaled to t
// (so flowing tau in one call or in two tau/2 calls uses the same grid
// density and the semigroup property holds to integrator accuracy).
template <class Scalar, class Ode>
Vec<Scalar> rk4_flow(const Ode& m, Vec<Scalar> v, Scalar t, int substeps) {
  const Scalar h = t / Scalar(substeps);
  for (int s = 0; s < substeps; ++s) {
    const Vec<Scalar> k1 = vector_field(m, v);
    const Vec<Scalar> k2 = vector_field(m, (v + Scalar(0.5) * h * k1).eval());
    const Vec<Scalar> k3 = vector_field(m, (v + Scalar(0.5) * h * k2).eval());
    const Vec<Scalar> k4 = vector_field(m, (v + h * k3).eval());
    v += (h / Scalar(6)) * (k1 + Scalar(2) * k2 + Scalar(2) * k3 + k4);
    if (!all_finite(v)) throw NonFiniteState("rk4_flow: state not finite");
  }
  return v;
}

template <class Scalar>
Vec<Scalar> integrate_rk4(const ModelSpec<Scalar>& model, const Vec<Scalar>& v, Scalar t) {
  if (const auto* l63 = std::get_if<Lorenz63<Scalar>>(&model))
    return rk4_flow(*l63, v, t, l63->substeps);
  if (const auto* l96 = std::get_if<Lorenz96<Scalar>>(&model))
    return rk4_flow(*l96, v, t, l96->substeps);
  throw ValidationError("integrate_rk4: model is a discrete map");
}

// One application of Psi.
template <class Scalar>
Vec<Scalar> apply_map(const ModelSpec<Scalar>& model, const Vec<Scalar>& v) {
  require(v.size() == state_dim(model), "apply_map: state dimension");
  return std::visit(
      detail::overloaded{
          [&](const LinearScalarMap<Scalar>& m) -> Vec<Scalar> {
            return (m.lambda * v).eval();
          },
          [&](const LinearMap2D<Scalar>& m) -> Vec<Scalar> { return (m.a * v).eval(); },
          [&](const SinMap<Scalar>& m) -> Vec<Scalar> {
            Vec<Scalar> w(1);
            w[0] = m.alpha * std::sin(v[0]);
            return w;
          },
          [&](const LogisticMap<Scalar>& m) -> Vec<Scalar> {
            Vec<Scalar> w(1);
            w[0] = m.r * v[0] * (Scalar(1) - v[0]);
            return w;
          },
          [&](const Lorenz63<Scalar>& m) -> Vec<Scalar> {
            return rk4_flow(m, v, m.tau, m.substeps);
          },
          [&](const Lorenz96<Scalar>& m) -> Vec<Scalar> {
            return rk4_flow(m, v, m.tau, m.substeps);
          }},
      model);
}

// Jacobian of Psi at v: analytic for the explicit maps, central finite
// differences on the flow for the ODE models.
template <class Scalar>
Mat<Scalar> map_jacobian(const ModelSpec<Scalar>& model, const Vec<Scalar>& v) {
  require(v.size() == state_dim(model), "map_jacobian: state dimension");
  if (const auto* m = std::get_if<LinearScalarMap<Scalar>>(&model)) {
    Mat<Scalar> j(1, 1);
    j(0, 0) = m->lambda;
    return j;
  }
  if (const auto* m = std::get_if<LinearMap2D<Scalar>>(&model)) return Mat<Scalar>(m->a);
  if (const auto* m = std::get_if<SinMap<Scalar>>(&model)) {
    Mat<Scalar> j(1, 1);
    j(0, 0) = m->alpha * std::cos(v[0]);
    return j;
  }
  if (const auto* m = std::get_if<LogisticMap<Scalar>>(&model)) {
    Mat<Scalar> j(1, 1);
    j(0, 0) = m->r * (Scalar(1) - Scalar(2) * v[0]);
    return j;
  }
  const Index n = v.size();
  Mat<Scalar> j(n, n);
  for (Index c = 0; c < n; ++c) {
    const Scalar h = Scalar(1e-6) * (Scalar(1) + std::abs(v[c]));
    Vec<Scalar> plus = v, minus = v;
    plus[c] += h;
    minus[c] -= h;
    j.col(c) = (apply_map(model, plus) - apply_map(model, minus)) / (Scalar(2) * h);
  }
  return j;
}

// For linear dynamics, the matrix M with Psi(v) = M v.
template <class Scalar>
std::optional<Mat<Scalar>> linear_dynamics_matrix(const ModelSpec<Scalar>& model) {
  if (const auto* m = std::get_if<LinearScalarMap<Scalar>>(&model)) {
    Mat<Scalar> a(1, 1);
    a(0, 0) = m->lambda;
    return a;
  }
  if (const auto* m = std::get_if<LinearMap2D<Scalar>>(&model)) return Mat<Scalar>(m->a);
  return std::nullopt;
}

// Side-channel observations from a simulate() run that do not change its
// semantics.
struct SimulateDiagnostics {
  // Deterministic logistic dynamics with r <= 4 should stay in [0, 1]; an
  // escape means the orbit will blow up and usually signals a bad v0.
  bool logistic_escape = false;
  long first_escape_step = -1;
};

// Draws v_0, ..., v_J with v_{j+1} = Psi(v_j) + xi_j; no sigma means the
// deterministic dynamics (xi == 0).
template <class Scalar>
Trajectory<Scalar> simulate(const ModelSpec<Scalar>& model, const Vec<Scalar>& v0,
                            long steps, const std::optional<Mat<Scalar>>& sigma,
                            RngStream& rng, SimulateDiagnostics* diag = nullptr) {
  require(v0.size() == state_dim(model), "simulate: initial state dimension");
  if (steps < 0) throw ValidationError("simulate: steps < 0");
  Mat<Scalar> noise_factor;
  if (sigma) {
    require(sigma->rows() == v0.size(), "simulate: model noise dimension");
    noise_factor = cholesky_factor(*sigma);
  }
  const auto* logistic = std::get_if<LogisticMap<Scalar>>(&model);
  const bool watch_unit_interval = diag && logistic && !sigma && logistic->r <= Scalar(4);
  Trajectory<Scalar> path;
  path.reserve(static_cast<std::size_t>(steps) + 1);
  path.push_back(v0);
  for (long j = 0; j < steps; ++j) {
    Vec<Scalar> next = apply_map(model, path.back());
    if (sigma) next += noise_factor * rng.normal_vector<Scalar>(v0.size());
    if (!all_finite(next))
      throw NonFiniteState("simulate: state not finite at step " + std::to_string(j + 1));
    if (watch_unit_interval && !diag->logistic_escape &&
        (next[0] < Scalar(0) || next[0] > Scalar(1))) {
      diag->logistic_escape = true;
      diag->first_escape_step = j + 1;
    }
    path.push_back(std::move(next));
  }
  return path;
}

// Linear observation operator y = H v (+ noise). All the standard cases are
// factories of the same matrix-backed type; from_matrix checks full row rank
// so configured operators always have an informative observation space.
template <class Scalar>
struct ObservationOperator {
  Mat<Scalar> h;

  Index obs_dim() const { return h.rows(); }
  Index state_dim() const { return h.cols(); }

  Vec<Scalar> observe(const Vec<Scalar>& v) const {
    require(v.size() == h.cols(), "observe: state dimension");
    return h * v;
  }

  static ObservationOperator identity(Index n) {
    return ObservationOperator{Mat<Scalar>::Identity(n, n)};
  }

  static ObservationOperator first_component(Index n) {
    Mat<Scalar> h = Mat<Scalar>::Zero(1, n);
    h(0, 0) = Scalar(1);
    return ObservationOperator{std::move(h)};
  }

  static ObservationOperator projection(const std::vector<Index>& indices, Index n) {
    if (indices.empty()) throw ValidationError("observation projection: no indices");
    Mat<Scalar> h = Mat<Scalar>::Zero(static_cast<Index>(indices.size()), n);
    for (std::size_t r = 0; r < indices.size(); ++r) {
      if (indices[r] < 0 || indices[r] >= n)
        throw ValidationError("observation projection: index out of range");
      h(static_cast<Index>(r), indices[r]) = Scalar(1);
    }
    return ObservationOperator{std::move(h)};
  }

  static ObservationOperator from_matrix(Mat<Scalar> h) {
    if (h.rows() == 0 || h.cols() == 0)
      throw ValidationError("observation matrix: empty");
    Eigen::ColPivHouseholderQR<Mat<Scalar>> qr(h);
    if (qr.rank() < h.rows())
      throw ValidationError("observation matrix: rows are rank deficient");
    return ObservationOperator{std::move(h)};
  }
};

// y_{j+1} = H v_{j+1} + eta_{j+1}; returns y_1..y_J so data[j] observes
// truth[j + 1]. Gamma must be positive definite.
template <class Scalar>
std::vector<Vec<Scalar>> generate_data(const ObservationOperator<Scalar>& obs,
                                       const Trajectory<Scalar>& truth,
                                       const Mat<Scalar>& gamma, RngStream& rng) {
  require(!truth.empty(), "generate_data: empty trajectory");
  require(truth.front().size() == obs.state_dim(), "generate_data: state dimension");
  require(gamma.rows() == obs.obs_dim(), "generate_data: noise dimension");
  Eigen::LLT<Mat<Scalar>> llt(symmetrized(gamma));
  if (llt.info() != Eigen::Success)
    throw NotPositiveSemiDefinite("generate_data: Gamma not positive definite");
  const Mat<Scalar> factor = llt.matrixL();
  std::vector<Vec<Scalar>> data;
  data.reserve(truth.size() - 1);
  for (std::size_t j = 1; j < truth.size(); ++j)
    data.push_back(obs.observe(truth[j]) + factor * rng.normal_vector<Scalar>(obs.obs_dim()));
  return data;
}

}  // namespace dakit
