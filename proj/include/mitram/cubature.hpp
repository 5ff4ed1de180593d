#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <vector>

#include "mitram/util.hpp"

namespace mitram {

enum class CubatureKind { QuasiMonteCarlo, SparseGrid };

// How a unit-cube integral gets discretized.  `n` is the node count for the
// quasi-Monte Carlo rule (rounded up to a power of two; 0 picks a default by
// dimension) and the accuracy level for the sparse grid (0 likewise).
// `seed` feeds the digital shift of the point set; the default is a fixed
// constant so identical inputs integrate to identical bits.
struct CubatureRule {
  CubatureKind kind = CubatureKind::QuasiMonteCarlo;
  long n = 0;
  std::uint64_t seed = 0x6d697472616d00ULL;
};

struct CubatureNodes {
  Eigen::MatrixXd q;  // n x R points strictly inside (0,1)^R
  Eigen::VectorXd w;  // matching weights (equal for QMC, mixed-sign for sparse grids)
};

inline long default_qmc_nodes(int R) { return R <= 3 ? (1L << 13) : (1L << 15); }
inline int default_sparse_level(int R) { return R <= 3 ? 7 : 5; }

namespace detail {

// Direction numbers for the first six coordinates of the Sobol sequence
// (primitive polynomial degree s, coefficient bits a, initial values m).
// Coordinate 0 is the van der Corput radix-2 sequence.
struct SobolSpec {
  int s;
  unsigned a;
  unsigned m[4];
};

inline constexpr SobolSpec kSobolSpec[5] = {
    {1, 0, {1, 0, 0, 0}},
    {2, 1, {1, 3, 0, 0}},
    {3, 1, {1, 3, 1, 0}},
    {3, 2, {1, 1, 1, 0}},
    {4, 1, {1, 1, 3, 3}},
};

inline constexpr int kSobolBits = 52;
inline constexpr int kMaxDim = 6;

// v[k] for one coordinate, k = 0..bits-1, each a kSobolBits-wide integer.
inline std::vector<std::uint64_t> sobol_directions(int dim, int bits) {
  std::vector<std::uint64_t> v(bits);
  if (dim == 0) {
    for (int k = 0; k < bits; ++k) v[k] = 1ULL << (kSobolBits - 1 - k);
    return v;
  }
  const SobolSpec& sp = kSobolSpec[dim - 1];
  for (int k = 0; k < sp.s && k < bits; ++k)
    v[k] = static_cast<std::uint64_t>(sp.m[k]) << (kSobolBits - 1 - k);
  for (int k = sp.s; k < bits; ++k) {
    std::uint64_t vk = v[k - sp.s] ^ (v[k - sp.s] >> sp.s);
    for (int j = 1; j < sp.s; ++j)
      if ((sp.a >> (sp.s - 1 - j)) & 1u) vk ^= v[k - j];
    v[k] = vk;
  }
  return v;
}

inline long round_up_pow2(long n) {
  long p = 1;
  while (p < n) p <<= 1;
  return p;
}

inline double binom(int n, int k) {
  double r = 1.0;
  for (int j = 1; j <= k; ++j) r *= static_cast<double>(n - k + j) / j;
  return r;
}

// Gauss-Legendre nodes/weights on [0,1] by Newton iteration on the Legendre
// recurrence; plenty for the modest orders a sparse grid requests.
inline void gauss_legendre_01(int n, std::vector<double>& x, std::vector<double>& w) {
  x.assign(n, 0.0);
  w.assign(n, 0.0);
  const int half = (n + 1) / 2;
  for (int i = 0; i < half; ++i) {
    double z = std::cos(M_PI * (i + 0.75) / (n + 0.5));
    double pp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = 0.0;
      for (int j = 0; j < n; ++j) {
        const double p2 = p1;
        p1 = p0;
        p0 = ((2.0 * j + 1.0) * z * p1 - j * p2) / (j + 1.0);
      }
      pp = n * (z * p0 - p1) / (z * z - 1.0);
      const double dz = p0 / pp;
      z -= dz;
      if (std::fabs(dz) < 1e-15) break;
    }
    x[i] = 0.5 * (1.0 - z);
    x[n - 1 - i] = 0.5 * (1.0 + z);
    w[i] = 1.0 / ((1.0 - z * z) * pp * pp);
    w[n - 1 - i] = w[i];
  }
}

// Enumerates vectors i >= 1 (componentwise) with |i| = total into `out`.
inline void compositions(int total, int dims, std::vector<int>& head,
                         std::vector<std::vector<int>>& out) {
  if (dims == 1) {
    head.push_back(total);
    out.push_back(head);
    head.pop_back();
    return;
  }
  for (int v = 1; v <= total - (dims - 1); ++v) {
    head.push_back(v);
    compositions(total - v, dims - 1, head, out);
    head.pop_back();
  }
}

inline CubatureNodes sobol_nodes(int R, long n, std::uint64_t seed) {
  n = round_up_pow2(std::max(2L, n));
  const int bits =
      std::max(1, static_cast<int>(std::bit_width(static_cast<unsigned long long>(n))) - 1);
  std::vector<std::vector<std::uint64_t>> dirs(R);
  std::vector<std::uint64_t> shift(R);
  constexpr std::uint64_t mask = (1ULL << kSobolBits) - 1;
  for (int j = 0; j < R; ++j) {
    dirs[j] = sobol_directions(j, bits);
    shift[j] = splitmix64(seed + 0x9E37ULL * static_cast<std::uint64_t>(j + 1)) & mask;
  }
  CubatureNodes nodes;
  nodes.q.resize(n, R);
  nodes.w = Eigen::VectorXd::Constant(n, 1.0 / static_cast<double>(n));
  std::vector<std::uint64_t> state(R);
  for (int j = 0; j < R; ++j) state[j] = shift[j];
  for (long i = 0; i < n; ++i) {
    if (i > 0) {
      const int c = std::countr_zero(static_cast<unsigned long long>(i));
      for (int j = 0; j < R; ++j) state[j] ^= dirs[j][c];
    }
    // Only the top log2(n) digits carry the net structure for an n-point
    // set, so truncate to them and center each point in its 1/n cell.  That
    // keeps every point strictly inside (0,1) and makes each one-dimensional
    // marginal the exact centered grid, cancelling the O(1/n) offset a raw
    // digital shift leaves in every coordinate mean.
    for (int j = 0; j < R; ++j) {
      const std::uint64_t cell = state[j] >> (kSobolBits - bits);
      nodes.q(i, j) = (static_cast<double>(cell) + 0.5) / static_cast<double>(n);
    }
  }
  return nodes;
}

// Smolyak combination of one-dimensional Gauss-Legendre rules where level i
// uses i points.  Level L integrates total-degree 2L-1 polynomials exactly.
inline CubatureNodes smolyak_nodes(int R, int level) {
  const int q = level + R - 1;
  std::vector<std::vector<double>> gx(level + 1), gw(level + 1);
  for (int i = 1; i <= level; ++i) gauss_legendre_01(i, gx[i], gw[i]);

  std::vector<Eigen::VectorXd> pts;
  std::vector<double> wts;
  std::vector<std::vector<int>> combos;
  std::vector<int> head;
  for (int total = std::max(R, q - R + 1); total <= q; ++total)
    compositions(total, R, head, combos);

  Eigen::VectorXd p(R);
  std::vector<int> idx(R);
  for (const auto& iv : combos) {
    int total = 0;
    for (int v : iv) total += v;
    const double coeff =
        ((q - total) % 2 == 0 ? 1.0 : -1.0) * binom(R - 1, q - total);
    std::fill(idx.begin(), idx.end(), 0);
    for (;;) {
      double w = coeff;
      for (int j = 0; j < R; ++j) {
        p[j] = gx[iv[j]][idx[j]];
        w *= gw[iv[j]][idx[j]];
      }
      pts.push_back(p);
      wts.push_back(w);
      int j = 0;
      for (; j < R; ++j) {
        if (++idx[j] < iv[j]) break;
        idx[j] = 0;
      }
      if (j == R) break;
    }
  }
  CubatureNodes nodes;
  nodes.q.resize(static_cast<long>(pts.size()), R);
  nodes.w.resize(static_cast<long>(pts.size()));
  for (std::size_t i = 0; i < pts.size(); ++i) {
    nodes.q.row(static_cast<long>(i)) = pts[i].transpose();
    nodes.w[static_cast<long>(i)] = wts[i];
  }
  return nodes;
}

}  // namespace detail

// Materializes the point set for an R-dimensional unit-cube rule.  Only
// R <= 6 is tabulated; anything wider is outside what this integrator is
// prepared to answer for.
inline CubatureNodes make_nodes(int R, const CubatureRule& rule) {
  if (R < 1 || R > detail::kMaxDim)
    throw std::invalid_argument("cubature supports 1 to 6 random-effect dimensions");
  if (rule.kind == CubatureKind::QuasiMonteCarlo) {
    const long n = rule.n > 0 ? rule.n : default_qmc_nodes(R);
    return detail::sobol_nodes(R, n, rule.seed);
  }
  const int level = rule.n > 0 ? static_cast<int>(rule.n) : default_sparse_level(R);
  return detail::smolyak_nodes(R, level);
}

struct IntegralEstimate {
  double value = 0.0;
  double error_indicator = 0.0;
  long n_nodes = 0;
};

// Integrates f over (0,1)^R.  The error indicator compares against the
// coarser member of the same family: the half point set for QMC, level - 1
// for the sparse grid.
template <class F>
IntegralEstimate integrate_unit_cube(F&& f, int R, const CubatureRule& rule) {
  IntegralEstimate est;
  if (rule.kind == CubatureKind::QuasiMonteCarlo) {
    const CubatureNodes nodes = make_nodes(R, rule);
    const long n = nodes.q.rows();
    double acc = 0.0, acc_half = 0.0;
    for (long i = 0; i < n; ++i) {
      const double v = f(Eigen::VectorXd(nodes.q.row(i).transpose()));
      acc += v;
      if (i < n / 2) acc_half += v;
    }
    est.value = acc / static_cast<double>(n);
    est.error_indicator = std::fabs(est.value - acc_half / static_cast<double>(n / 2));
    est.n_nodes = n;
    return est;
  }
  const int level = rule.n > 0 ? static_cast<int>(rule.n) : default_sparse_level(R);
  double coarse = 0.0;
  if (level > 1) {
    const CubatureNodes lo = detail::smolyak_nodes(R, level - 1);
    for (long i = 0; i < lo.q.rows(); ++i)
      coarse += lo.w[i] * f(Eigen::VectorXd(lo.q.row(i).transpose()));
  }
  const CubatureNodes hi = make_nodes(R, rule);
  double acc = 0.0;
  for (long i = 0; i < hi.q.rows(); ++i)
    acc += hi.w[i] * f(Eigen::VectorXd(hi.q.row(i).transpose()));
  est.value = acc;
  est.error_indicator = std::fabs(acc - coarse);
  est.n_nodes = hi.q.rows();
  return est;
}

}  // namespace mitram
