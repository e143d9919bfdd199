#pragma once

#include "blur/inner_loop.hpp"

#include <Eigen/SVD>

#include <vector>

namespace blur {

// Flat enumeration of the forward weights and biases: layer pair, then
// channel, then row-major within the tensor (bias row included).
struct WeightCoord {
  int pair = 0;
  int channel = 0;
  Eigen::Index row = 0;
  Eigen::Index col = 0;
};

inline std::vector<WeightCoord> forward_weight_coords(const SynapseSet& synapses) {
  std::vector<WeightCoord> coords;
  for (int l = 0; l < synapses.num_pairs(); ++l)
    for (std::size_t c = 0; c < synapses.forward[static_cast<std::size_t>(l)].size(); ++c) {
      const Matrix& w = synapses.forward[static_cast<std::size_t>(l)][c];
      for (Eigen::Index r = 0; r < w.rows(); ++r)
        for (Eigen::Index j = 0; j < w.cols(); ++j)
          coords.push_back({l, static_cast<int>(c), r, j});
    }
  return coords;
}

inline Vector flatten_forward(const SynapseSet& synapses, const std::vector<WeightCoord>& coords) {
  Vector v(static_cast<Eigen::Index>(coords.size()));
  for (std::size_t i = 0; i < coords.size(); ++i) {
    const auto& c = coords[i];
    v[static_cast<Eigen::Index>(i)] =
        synapses.forward[static_cast<std::size_t>(c.pair)][static_cast<std::size_t>(c.channel)](
            c.row, c.col);
  }
  return v;
}

// One full-batch update cycle from zeroed neuron states; returns the change of
// the flattened forward weights. Backward tensors (if distinct) are part of
// the rule but their own updates are not differentiated.
inline Vector weight_update_delta(const Genome& genome, const Architecture& arch,
                                  const SynapseSet& synapses, const TaskBatch& batch,
                                  const std::vector<WeightCoord>& coords) {
  SynapseSet work = synapses;
  NetworkState state = make_state(arch, genome.num_states, batch.size());
  inject_input(state, batch.inputs);
  forward_pass(state, work, genome, arch);
  inject_feedback(state, batch.labels);
  backward_pass(state, work, genome, arch);
  update_synapses(state, work, genome, arch);
  return flatten_forward(work, coords) - flatten_forward(synapses, coords);
}

struct UpdateJacobian {
  std::vector<WeightCoord> coords;
  Matrix q;       // q(a, b) = d delta_w[a] / d w[b]
  double step = 0.0;
};

// Central-difference Jacobian of the full-batch update rule with respect to
// the forward weights.
inline UpdateJacobian update_jacobian(const Genome& genome, const Architecture& arch,
                                      const SynapseSet& synapses, const TaskBatch& batch,
                                      double h) {
  if (!(h >= 1e-6 && h <= 1e-3))
    throw ValidationError("update_jacobian: step must lie in [1e-6, 1e-3]");
  UpdateJacobian jac;
  jac.coords = forward_weight_coords(synapses);
  jac.step = h;
  const auto n = static_cast<Eigen::Index>(jac.coords.size());
  jac.q.resize(n, n);
  SynapseSet work = synapses;
  for (Eigen::Index b = 0; b < n; ++b) {
    const auto& c = jac.coords[static_cast<std::size_t>(b)];
    auto& entry = work.forward[static_cast<std::size_t>(c.pair)]
                              [static_cast<std::size_t>(c.channel)](c.row, c.col);
    const double saved = entry;
    entry = saved + h;
    Vector plus = weight_update_delta(genome, arch, work, batch, jac.coords);
    entry = saved - h;
    Vector minus = weight_update_delta(genome, arch, work, batch, jac.coords);
    entry = saved;
    jac.q.col(b) = (plus - minus) / (2.0 * h);
  }
  return jac;
}

struct SymmetryGap {
  Matrix gap;  // |q - q^T| elementwise
  double max_gap = 0.0;
};

inline SymmetryGap symmetry_gap(const Matrix& q) {
  SymmetryGap s;
  s.gap = (q - q.transpose()).cwiseAbs();
  s.max_gap = s.gap.maxCoeff();
  return s;
}

// --- constant-metric probe ----------------------------------------------------
//
// Searches for a constant symmetric positive-definite matrix g that turns the
// update rule into a generalized gradient flow: g Q - (g Q)^T must vanish for
// the Jacobian Q at every probed weight state. The anchor state's linear
// system is solved by SVD; each further state then shrinks the surviving
// subspace (null-space intersection). Candidates count as positive definite up
// to sign, since the condition is homogeneous in g.

struct MetricProbeOptions {
  double fd_step = 1e-5;    // finite-difference step for the Jacobians
  double svd_tol = 1e-8;    // null-space threshold, relative to ||Q||_F
  double check_tol = 1e-6;  // survivor threshold at other states, relative to ||Q||_F
  double pd_tol = 1e-8;     // definiteness margin, relative to the largest |eigenvalue|
  int max_weights = 60;     // guard: the system grows as n^2 x n^2
};

struct MetricProbeResult {
  int weight_dim = 0;
  int null_space_dim = 0;       // basis size at the anchor state
  int survivors = 0;            // candidates valid across all probed states
  int positive_definite = 0;    // survivors that are definite (up to sign)
  std::vector<double> eigen_min;  // per survivor, after orienting trace >= 0
  std::vector<double> eigen_max;
};

namespace detail {

inline Eigen::Index packed_size(Eigen::Index n) { return n * (n + 1) / 2; }

inline Eigen::Index packed_index(Eigen::Index a, Eigen::Index b, Eigen::Index n) {
  // a <= b; row-major upper triangle.
  return a * n - a * (a - 1) / 2 + (b - a);
}

inline Matrix unpack_symmetric(const Vector& packed, Eigen::Index n) {
  Matrix g(n, n);
  Eigen::Index p = 0;
  for (Eigen::Index a = 0; a < n; ++a)
    for (Eigen::Index b = a; b < n; ++b) {
      g(a, b) = packed[p];
      g(b, a) = packed[p];
      ++p;
    }
  return g;
}

// Rows: equations Z(r, i) = 0 for r < i; columns: packed entries of g.
inline Matrix metric_constraint_matrix(const Matrix& q) {
  const Eigen::Index n = q.rows();
  Matrix a(n * (n - 1) / 2, packed_size(n));
  a.setZero();
  Eigen::Index row = 0;
  for (Eigen::Index r = 0; r < n; ++r) {
    for (Eigen::Index i = r + 1; i < n; ++i) {
      // sum_k g(r, k) q(k, i) - sum_k g(i, k) q(k, r)
      for (Eigen::Index k = 0; k < n; ++k) {
        const Eigen::Index p_rk = packed_index(std::min(r, k), std::max(r, k), n);
        a(row, p_rk) += q(k, i);
        const Eigen::Index p_ik = packed_index(std::min(i, k), std::max(i, k), n);
        a(row, p_ik) -= q(k, r);
      }
      ++row;
    }
  }
  return a;
}

// Orthonormal null-space basis of `a`, keeping directions whose singular
// value is at most `threshold`.
inline Matrix null_space(const Matrix& a, double threshold) {
  Eigen::BDCSVD<Matrix> svd(a, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  const Eigen::Index cols = a.cols();
  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = 0; i < cols; ++i) {
    const double s = i < sv.size() ? sv[i] : 0.0;  // columns beyond rank carry no value
    if (s <= threshold) keep.push_back(i);
  }
  Matrix basis(cols, static_cast<Eigen::Index>(keep.size()));
  for (std::size_t i = 0; i < keep.size(); ++i) basis.col(static_cast<Eigen::Index>(i)) =
      svd.matrixV().col(keep[static_cast<std::size_t>(i)]);
  return basis;
}

}  // namespace detail

// Core of the probe, operating on precomputed Jacobians (the first is the
// anchor). Exposed separately so synthetic update fields can be probed
// directly in tests.
inline MetricProbeResult metric_probe_from_jacobians(const std::vector<Matrix>& jacobians,
                                                     const MetricProbeOptions& opts) {
  if (jacobians.empty()) throw ValidationError("metric probe: no jacobians given");
  const Eigen::Index n = jacobians[0].rows();
  MetricProbeResult result;
  result.weight_dim = static_cast<int>(n);

  const double anchor_scale = jacobians[0].norm();
  Matrix basis = detail::null_space(detail::metric_constraint_matrix(jacobians[0]),
                                    opts.svd_tol * std::max(anchor_scale, 1e-300));
  result.null_space_dim = static_cast<int>(basis.cols());

  for (std::size_t s = 1; s < jacobians.size() && basis.cols() > 0; ++s) {
    const Matrix& q = jacobians[s];
    if (q.rows() != n)
      throw ValidationError("metric probe: jacobian dimensions disagree");
    // Residuals of the current candidates at this state.
    Matrix residuals(n * (n - 1) / 2, basis.cols());
    for (Eigen::Index j = 0; j < basis.cols(); ++j) {
      const Matrix g = detail::unpack_symmetric(basis.col(j), n);
      const Matrix z = g * q - (g * q).transpose();
      Eigen::Index row = 0;
      for (Eigen::Index r = 0; r < n; ++r)
        for (Eigen::Index i = r + 1; i < n; ++i) residuals(row++, j) = z(r, i);
    }
    const Matrix coeffs =
        detail::null_space(residuals, opts.check_tol * std::max(q.norm(), 1e-300));
    basis = (basis * coeffs).eval();
  }
  result.survivors = static_cast<int>(basis.cols());

  for (Eigen::Index j = 0; j < basis.cols(); ++j) {
    Matrix g = detail::unpack_symmetric(basis.col(j), n);
    if (g.trace() < 0.0) g = -g;  // the condition is homogeneous: orient by trace
    Eigen::SelfAdjointEigenSolver<Matrix> eig(g);
    const double lo = eig.eigenvalues().minCoeff();
    const double hi = eig.eigenvalues().maxCoeff();
    result.eigen_min.push_back(lo);
    result.eigen_max.push_back(hi);
    const double magnitude = std::max(std::abs(lo), std::abs(hi));
    if (lo > opts.pd_tol * magnitude) ++result.positive_definite;
  }
  return result;
}

// Full probe: Jacobians of the update rule at the given synapse states (the
// first is the anchor, typically a trained state).
inline MetricProbeResult constant_metric_probe(const Genome& genome, const Architecture& arch,
                                               const TaskBatch& batch,
                                               const std::vector<SynapseSet>& states,
                                               const MetricProbeOptions& opts) {
  if (states.empty()) throw ValidationError("metric probe: no synapse states given");
  const auto coords = forward_weight_coords(states[0]);
  if (static_cast<int>(coords.size()) > opts.max_weights)
    throw ValidationError("metric probe: " + std::to_string(coords.size()) +
                          " weights exceed the guard of " + std::to_string(opts.max_weights));
  std::vector<Matrix> jacobians;
  jacobians.reserve(states.size());
  for (const auto& s : states)
    jacobians.push_back(update_jacobian(genome, arch, s, batch, opts.fd_step).q);
  return metric_probe_from_jacobians(jacobians, opts);
}

// --- synapse amplitude diagnostics ---------------------------------------------

// Max column norm across layer pairs, one value per step.
inline std::vector<double> max_norm_per_step(const FitnessReport& report) {
  std::vector<double> out;
  out.reserve(report.column_norms.size());
  for (const auto& per_layer : report.column_norms) {
    double best = 0.0;
    for (double v : per_layer) best = std::max(best, v);
    out.push_back(best);
  }
  return out;
}

// Detector for strictly growing traces (tiny reassociation slack only).
inline bool is_monotone_increasing(const std::vector<double>& trace, std::size_t from) {
  if (trace.size() < from + 2) return false;
  for (std::size_t i = from; i + 1 < trace.size(); ++i)
    if (trace[i + 1] < trace[i] * (1.0 - 1e-12)) return false;
  return trace.back() > trace[from];
}

}  // namespace blur
