// Ground truth at desk scale: dense state vectors from PEPS, exact
// environments for a horizontal pair, and exact diagonalization of the
// Heisenberg model. Everything here is capacity-capped.

#ifndef SLPEPS_EXACT_HPP
#define SLPEPS_EXACT_HPP

#include <algorithm>
#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "slpeps/errors.hpp"
#include "slpeps/model.hpp"
#include "slpeps/peps.hpp"
#include "slpeps/random.hpp"
#include "slpeps/tensor.hpp"

namespace slpeps {

// Dense amplitudes of the stored-tensor network (the scale ledger is kept
// separately in log_scale). Configuration index: site (0,0) is the most
// significant bit, row-major, s=0 first.
struct DenseState {
  int rows = 0, cols = 0;
  Tensor amps;  // rank-1, length phys^(rows*cols)
  double log_scale = 0.0;

  std::size_t size() const { return amps.size(); }
  cplx operator[](std::size_t i) const { return amps[i]; }
};

namespace detail {

// Contract one site into the running row-sweep accumulator.
//
// acc layout: [P, chain, d_0 .. d_{n-1}, opens...]. P collects the physical
// axes processed so far, chain is the horizontal bond inside the current row,
// d_k are the dangling down-bonds per column. pair_chain / pair_up are false
// when the corresponding bond faces a hole and must be left open.
struct SweepAcc {
  Tensor t;
  std::size_t ncols = 0;
  std::size_t nopen = 0;
  std::vector<std::string> open_names;
};

inline void sweep_site(SweepAcc& acc, const Tensor& site, std::size_t j,
                       bool pair_chain, bool pair_up,
                       const std::string& open_chain_name,
                       const std::string& open_up_name) {
  const std::size_t n = acc.ncols, k = acc.nopen;
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  if (pair_chain) pairs.push_back({1, 1});      // chain <-> l
  if (pair_up) pairs.push_back({2 + j, 3});     // d_j <-> u
  Tensor r = contract(acc.t, site, pairs);

  // acc unpaired axes keep their order: P, (chain if kept), d's (minus d_j if
  // paired), opens. Site unpaired: s, (l if kept), r, (u if kept), d.
  std::vector<std::size_t> acc_unpaired;
  for (std::size_t ax = 0; ax < 2 + n + k; ++ax) {
    if (pair_chain && ax == 1) continue;
    if (pair_up && ax == 2 + j) continue;
    acc_unpaired.push_back(ax);
  }
  const std::size_t na = acc_unpaired.size();
  // Positions of site axes in the contraction result.
  std::size_t pos = na;
  const std::size_t ps = pos++;
  const std::size_t pl = pair_chain ? std::size_t(-1) : pos++;
  const std::size_t pr = pos++;
  const std::size_t pu = pair_up ? std::size_t(-1) : pos++;
  const std::size_t pd = pos++;

  // Locate acc axes in the result.
  auto find_acc = [&](std::size_t orig) -> std::size_t {
    for (std::size_t x = 0; x < na; ++x)
      if (acc_unpaired[x] == orig) return x;
    throw Error("internal: sweep axis bookkeeping");
  };

  std::vector<std::size_t> perm;
  perm.push_back(find_acc(0));  // P
  perm.push_back(ps);           // s (folds into P)
  perm.push_back(pr);           // new chain
  for (std::size_t c = 0; c < n; ++c) {
    if (c == j)
      perm.push_back(pd);
    else
      perm.push_back(find_acc(2 + c));
  }
  for (std::size_t x = 0; x < k; ++x) perm.push_back(find_acc(2 + n + x));
  if (!pair_chain) perm.push_back(pl);
  if (!pair_up) perm.push_back(pu);
  // Dropped axes (stale size-1 chain placeholder, stale d_j slot) go last and
  // are squeezed by the reshape below.
  if (!pair_chain) perm.push_back(find_acc(1));
  if (!pair_up) perm.push_back(find_acc(2 + j));

  r = r.permuted(perm);
  std::vector<std::size_t> shape;
  const auto& rs = r.shape();
  shape.push_back(rs[0] * rs[1]);  // P * s
  for (std::size_t x = 2; x < 2 + 1 + n + k + (!pair_chain) + (!pair_up); ++x)
    shape.push_back(rs[x]);
  // Validate the squeezed tails really have length 1.
  for (std::size_t x = shape.size() + 1; x < rs.size(); ++x)
    if (rs[x] != 1) throw Error("internal: sweep squeeze");
  acc.t = std::move(r).reshaped(shape);
  if (!pair_chain) {
    acc.open_names.push_back(open_chain_name);
    ++acc.nopen;
  }
  if (!pair_up) {
    acc.open_names.push_back(open_up_name);
    ++acc.nopen;
  }
}

inline SweepAcc sweep_start(std::size_t ncols) {
  SweepAcc acc;
  std::vector<std::size_t> shape(2 + ncols, 1);
  acc.t = Tensor(shape);
  acc.t[0] = cplx(1);
  acc.ncols = ncols;
  return acc;
}

// Reset the chain axis to a fresh size-1 bond (used at row starts; the old
// chain must already have length 1).
inline void sweep_new_row(SweepAcc& acc) {
  if (acc.t.dim(1) != 1) throw Error("internal: open chain at end of row");
}

}  // namespace detail

inline DenseState peps_to_dense(const PepsState& s, std::size_t cap = 16) {
  if (static_cast<std::size_t>(s.rows) * s.cols > cap)
    throw CapacityError("peps_to_dense: lattice exceeds the " +
                        std::to_string(cap) + "-site cap");
  detail::SweepAcc acc = detail::sweep_start(s.cols);
  for (int i = 0; i < s.rows; ++i) {
    detail::sweep_new_row(acc);
    for (int j = 0; j < s.cols; ++j)
      detail::sweep_site(acc, s.at(i, j), j, true, true, "", "");
  }
  DenseState d;
  d.rows = s.rows;
  d.cols = s.cols;
  d.log_scale = s.scale_ledger;
  const std::size_t total = acc.t.size();
  d.amps = std::move(acc.t).reshaped({total});
  return d;
}

// Exact environment of the horizontal pair (pi,pj)-(pi,pj+1): the network
// with both sites removed, as a rank-7 tensor (s_E, l, u, u', d, d', r).
inline Tensor exact_environment(const PepsState& s, int pi, int pj,
                                std::size_t cap = 16) {
  if (static_cast<std::size_t>(s.rows) * s.cols > cap)
    throw CapacityError("exact_environment: lattice exceeds the cap");
  if (pi < 0 || pi >= s.rows || pj < 0 || pj + 1 >= s.cols)
    throw TopologyError("exact_environment: pair outside lattice");

  detail::SweepAcc acc = detail::sweep_start(s.cols);
  for (int i = 0; i < s.rows; ++i) {
    detail::sweep_new_row(acc);
    for (int j = 0; j < s.cols; ++j) {
      if (i == pi && j == pj) {
        // First hole: the entering chain is the pair's l bond, the d-slot
        // above is the pair's u bond. Move both to the open list and leave
        // size-1 placeholders.
        Tensor t = acc.t;
        const std::size_t n = acc.ncols, k = acc.nopen;
        std::vector<std::size_t> p2;
        p2.push_back(0);
        for (std::size_t c = 0; c < n; ++c)
          if (c != j) p2.push_back(2 + c);
        for (std::size_t x = 0; x < k; ++x) p2.push_back(2 + n + x);
        p2.push_back(1);      // old chain -> open 'l'
        p2.push_back(2 + j);  // old d_j -> open 'u'
        t = t.permuted(p2);
        // Reinsert size-1 chain and d_j axes.
        std::vector<std::size_t> shape;
        const auto& ts = t.shape();
        shape.push_back(ts[0]);
        shape.push_back(1);  // fresh chain
        std::size_t src = 1;
        for (std::size_t c = 0; c < n; ++c) {
          if (c == j)
            shape.push_back(1);  // fresh d_j slot
          else
            shape.push_back(ts[src++]);
        }
        for (std::size_t x = 0; x < k + 2; ++x) shape.push_back(ts[src++]);
        acc.t = std::move(t).reshaped(shape);
        acc.open_names.push_back("l");
        acc.open_names.push_back("u");
        acc.nopen += 2;
      } else if (i == pi && j == pj + 1) {
        // Second hole: only the d-slot above opens (the mu-mu' bond is not
        // part of the environment and the entering chain is a placeholder).
        Tensor t = acc.t;
        const std::size_t n = acc.ncols, k = acc.nopen;
        std::vector<std::size_t> p2;
        p2.push_back(0);
        p2.push_back(1);
        for (std::size_t c = 0; c < n; ++c)
          if (c != j) p2.push_back(2 + c);
        for (std::size_t x = 0; x < k; ++x) p2.push_back(2 + n + x);
        p2.push_back(2 + j);  // old d_j -> open 'u2'
        t = t.permuted(p2);
        std::vector<std::size_t> shape;
        const auto& ts = t.shape();
        shape.push_back(ts[0]);
        shape.push_back(ts[1]);
        std::size_t src = 2;
        for (std::size_t c = 0; c < n; ++c) {
          if (c == j)
            shape.push_back(1);
          else
            shape.push_back(ts[src++]);
        }
        for (std::size_t x = 0; x < k + 1; ++x) shape.push_back(ts[src++]);
        acc.t = std::move(t).reshaped(shape);
        acc.open_names.push_back("u2");
        ++acc.nopen;
      } else {
        const bool left_is_hole = (i == pi && j == pj + 2);
        const bool up_is_hole = (i == pi + 1 && (j == pj || j == pj + 1));
        detail::sweep_site(acc, s.at(i, j), j, !left_is_hole, !up_is_hole,
                           "r", j == pj ? "d" : "d2");
      }
    }
  }

  // Append size-1 axes for opens that never occurred (right/bottom edges).
  auto has = [&](const std::string& nm) {
    for (const auto& x : acc.open_names)
      if (x == nm) return true;
    return false;
  };
  for (const char* nm : {"r", "d", "d2"}) {
    if (!has(nm)) {
      auto shape = acc.t.shape();
      shape.push_back(1);
      acc.t = std::move(acc.t).reshaped(shape);
      acc.open_names.push_back(nm);
      ++acc.nopen;
    }
  }

  // acc layout now: [P, chain(1), d's(all 1), opens...]. Squeeze the chain
  // and d slots, then order opens as (l, u, u2, d, d2, r).
  const std::size_t n = acc.ncols;
  std::vector<std::size_t> shape;
  shape.push_back(acc.t.dim(0));
  for (std::size_t x = 0; x < acc.nopen; ++x) {
    if (acc.t.dim(1) != 1) throw Error("internal: chain not closed");
    shape.push_back(acc.t.dim(2 + n + x));
  }
  Tensor e = acc.t.reshaped(shape);  // (P, opens in occurrence order)

  const std::vector<std::string> want = {"l", "u", "u2", "d", "d2", "r"};
  std::vector<std::size_t> perm;
  perm.push_back(0);
  for (const auto& nm : want) {
    bool found = false;
    for (std::size_t x = 0; x < acc.open_names.size(); ++x)
      if (acc.open_names[x] == nm) {
        perm.push_back(1 + x);
        found = true;
        break;
      }
    if (!found) throw Error("internal: missing environment axis " + nm);
  }
  return e.permuted(perm);
}

// Gram matrix N[(l u u' d d' r), (same)'] = <psi^E_k | psi^E_j> with the row
// index as the ket. Composite index is row-major over (l, u, u', d, d', r).
inline Tensor exact_environment_gram(const PepsState& s, int pi, int pj,
                                     std::size_t cap = 16) {
  Tensor e = exact_environment(s, pi, pj, cap);
  std::size_t dg = 1;
  for (std::size_t ax = 1; ax < 7; ++ax) dg *= e.dim(ax);
  Tensor em = std::move(e).reshaped({e.dim(0), dg});
  Tensor n = contract(em.conjugated(), em, {{0, 0}});
  return n;
}

// R factor of an orthogonal factorization of the environment matrix
// E[(s_E), (l u u' d d' r)]: a compressed environment with the same Gram
// matrix (the unitary Q is irrelevant).
inline Tensor effective_environment_qr(const Tensor& e) {
  if (e.rank() != 2)
    throw DimensionError("effective_environment_qr expects a matrix");
  QrResult f = qr(e, {0});
  return f.r;
}

// ---------------------------------------------------------------------------
// Dense-state operations
// ---------------------------------------------------------------------------

inline int bit_of(std::size_t idx, int flat, int nsites) {
  return static_cast<int>((idx >> (nsites - 1 - flat)) & 1u);
}

// Apply a two-site operator (s1o, s2o, s1i, s2i) to dense amplitudes.
inline Tensor apply_pair_dense(const Tensor& amps, int nsites, int flat_a,
                               int flat_b, const Tensor& op) {
  Tensor out(amps.shape());
  const std::size_t n = amps.size();
  const std::size_t ba = std::size_t(1) << (nsites - 1 - flat_a);
  const std::size_t bb = std::size_t(1) << (nsites - 1 - flat_b);
  for (std::size_t idx = 0; idx < n; ++idx) {
    const cplx v = amps[idx];
    if (v == cplx(0)) continue;
    const std::size_t a = (idx / ba) & 1u, b = (idx / bb) & 1u;
    const std::size_t base = idx - a * ba - b * bb;
    for (std::size_t ao = 0; ao < 2; ++ao)
      for (std::size_t bo = 0; bo < 2; ++bo)
        out[base + ao * ba + bo * bb] += op.at({ao, bo, a, b}) * v;
  }
  return out;
}

inline Tensor apply_heisenberg_dense(const Tensor& amps, int rows, int cols,
                                     double coupling = 1.0) {
  const int nsites = rows * cols;
  Tensor out(amps.shape());
  for (const auto& b : lattice_bonds(rows, cols)) {
    const int pa = b.i1 * cols + b.j1, pb = b.i2 * cols + b.j2;
    const std::size_t ka = std::size_t(1) << (nsites - 1 - pa);
    const std::size_t kb = std::size_t(1) << (nsites - 1 - pb);
    for (std::size_t idx = 0; idx < amps.size(); ++idx) {
      const cplx v = amps[idx];
      if (v == cplx(0)) continue;
      const int za = ((idx / ka) & 1u) ? -1 : 1;
      const int zb = ((idx / kb) & 1u) ? -1 : 1;
      out[idx] += coupling * za * zb * v;  // sz sz
      if (za != zb) out[idx ^ ka ^ kb] += 2.0 * coupling * v;  // sx sx + sy sy
    }
  }
  return out;
}

inline double dense_energy(const DenseState& d, double coupling = 1.0) {
  Tensor h = apply_heisenberg_dense(d.amps, d.rows, d.cols, coupling);
  cplx num(0);
  double den = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    num += std::conj(d.amps[i]) * h[i];
    den += std::norm(d.amps[i]);
  }
  if (den == 0) throw DegenerateStateError("dense_energy: zero state");
  return num.real() / den;
}

// ---------------------------------------------------------------------------
// Exact diagonalization
// ---------------------------------------------------------------------------

enum class EdSector { Full, Sz0 };

struct EdResult {
  double energy = 0;
  std::vector<double> vector;        // in the basis below
  std::vector<std::uint32_t> basis;  // empty means the full 2^N space
};

namespace detail {

// y += H x in the given basis (masks use the dense-state bit convention).
inline void heisenberg_matvec(const std::vector<double>& x,
                              std::vector<double>& y, int rows, int cols,
                              double coupling,
                              const std::vector<std::uint32_t>& basis,
                              const std::vector<std::int32_t>& index_of) {
  const int nsites = rows * cols;
  const auto bonds = lattice_bonds(rows, cols);
  const std::size_t dim = x.size();
  for (std::size_t b = 0; b < dim; ++b) {
    const std::uint32_t mask =
        basis.empty() ? static_cast<std::uint32_t>(b) : basis[b];
    const double v = x[b];
    if (v == 0) continue;
    double diag = 0;
    for (const auto& bd : bonds) {
      const int pa = bd.i1 * cols + bd.j1, pb = bd.i2 * cols + bd.j2;
      const std::uint32_t ka = 1u << (nsites - 1 - pa);
      const std::uint32_t kb = 1u << (nsites - 1 - pb);
      const bool za = mask & ka, zb = mask & kb;
      if (za == zb) {
        diag += coupling;
      } else {
        diag -= coupling;
        const std::uint32_t target = mask ^ ka ^ kb;
        const std::size_t tb =
            basis.empty() ? target : static_cast<std::size_t>(index_of[target]);
        y[tb] += 2.0 * coupling * v;
      }
    }
    y[b] += diag * v;
  }
}

}  // namespace detail

inline EdResult ed_ground(const HeisenbergModel& model, int rows, int cols,
                          EdSector sector = EdSector::Sz0) {
  const int nsites = rows * cols;
  if (sector == EdSector::Full && nsites > 16)
    throw CapacityError("ed_ground: full space capped at 16 sites");
  if (sector == EdSector::Sz0 && nsites > 20)
    throw CapacityError("ed_ground: Sz0 sector capped at 20 sites");
  if (sector == EdSector::Sz0 && nsites % 2 != 0)
    throw ParameterError("ed_ground: Sz0 sector needs an even site count");

  EdResult res;
  std::vector<std::int32_t> index_of;
  if (sector == EdSector::Sz0) {
    index_of.assign(std::size_t(1) << nsites, -1);
    for (std::uint32_t m = 0; m < (1u << nsites); ++m)
      if (std::popcount(m) == nsites / 2) {
        index_of[m] = static_cast<std::int32_t>(res.basis.size());
        res.basis.push_back(m);
      }
  }
  const std::size_t dim =
      sector == EdSector::Sz0 ? res.basis.size() : (std::size_t(1) << nsites);

  auto matvec = [&](const std::vector<double>& x, std::vector<double>& y) {
    std::fill(y.begin(), y.end(), 0.0);
    detail::heisenberg_matvec(x, y, rows, cols, model.coupling, res.basis,
                              index_of);
  };

  if (dim <= 2048) {
    // Dense path.
    Eigen::MatrixXd h(dim, dim);
    std::vector<double> e(dim, 0.0), col(dim);
    for (std::size_t c = 0; c < dim; ++c) {
      std::fill(e.begin(), e.end(), 0.0);
      e[c] = 1.0;
      matvec(e, col);
      for (std::size_t r = 0; r < dim; ++r) h(r, c) = col[r];
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(h);
    res.energy = es.eigenvalues()(0);
    res.vector.assign(es.eigenvectors().col(0).data(),
                      es.eigenvectors().col(0).data() + dim);
    return res;
  }

  // Lanczos with full reorthogonalization.
  const int max_iter = static_cast<int>(std::min<std::size_t>(dim, 400));
  std::vector<std::vector<double>> v;
  std::vector<double> alpha, beta;
  {
    Rng rng(0x5eed5eedULL);
    std::vector<double> v0(dim);
    double n2 = 0;
    for (auto& x : v0) {
      x = rng.gaussian().real();
      n2 += x * x;
    }
    const double inv = 1.0 / std::sqrt(n2);
    for (auto& x : v0) x *= inv;
    v.push_back(std::move(v0));
  }
  std::vector<double> w(dim);
  double theta = 0;
  std::vector<double> ritz_small;
  int k_used = 0;
  for (int k = 0; k < max_iter; ++k) {
    matvec(v[k], w);
    double a = 0;
    for (std::size_t i = 0; i < dim; ++i) a += v[k][i] * w[i];
    alpha.push_back(a);
    for (std::size_t i = 0; i < dim; ++i) w[i] -= a * v[k][i];
    if (k > 0)
      for (std::size_t i = 0; i < dim; ++i) w[i] -= beta[k - 1] * v[k - 1][i];
    // Full reorthogonalization (two passes).
    for (int pass = 0; pass < 2; ++pass)
      for (int p = 0; p <= k; ++p) {
        double ov = 0;
        for (std::size_t i = 0; i < dim; ++i) ov += v[p][i] * w[i];
        for (std::size_t i = 0; i < dim; ++i) w[i] -= ov * v[p][i];
      }
    double nb = 0;
    for (double x : w) nb += x * x;
    nb = std::sqrt(nb);
    // Solve the tridiagonal problem for the current Krylov space.
    const int kk = k + 1;
    Eigen::MatrixXd t = Eigen::MatrixXd::Zero(kk, kk);
    for (int i = 0; i < kk; ++i) {
      t(i, i) = alpha[i];
      if (i + 1 < kk) t(i, i + 1) = t(i + 1, i) = beta[i];
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(t);
    theta = es.eigenvalues()(0);
    ritz_small.assign(es.eigenvectors().col(0).data(),
                      es.eigenvectors().col(0).data() + kk);
    k_used = kk;
    const double resid = nb * std::abs(ritz_small[kk - 1]);
    if (resid <= 1e-10 * std::max(1.0, std::abs(theta)) || nb < 1e-300 ||
        k + 1 == max_iter)
      break;
    beta.push_back(nb);
    std::vector<double> vn(dim);
    const double inv = 1.0 / nb;
    for (std::size_t i = 0; i < dim; ++i) vn[i] = w[i] * inv;
    v.push_back(std::move(vn));
  }
  res.energy = theta;
  res.vector.assign(dim, 0.0);
  for (int p = 0; p < k_used; ++p)
    for (std::size_t i = 0; i < dim; ++i)
      res.vector[i] += ritz_small[p] * v[p][i];
  return res;
}

}  // namespace slpeps

#endif  // SLPEPS_EXACT_HPP
