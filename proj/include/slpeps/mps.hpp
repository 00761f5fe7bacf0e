// Finite open-boundary MPS machinery for the single-layer contraction:
// row merging, virtual-bond compression and physical-bond truncation.
//
// Site tensors carry a uniform axis order (l, p, v, r):
//   l, r  virtual bonds along the chain (length 1 at the ends),
//   p     the (merged) physical axis,
//   v     a dangling bond toward the uncontracted region (length 1 if none).

#ifndef SLPEPS_MPS_HPP
#define SLPEPS_MPS_HPP

#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "slpeps/errors.hpp"
#include "slpeps/tensor.hpp"

namespace slpeps {

enum class MpsForm { None, Left, Right, Equilibrated };

// A complex scalar kept as mantissa * exp(log_mag) so long chains of
// contractions cannot overflow.
struct ScaledC {
  cplx m{0.0, 0.0};
  double lg = 0.0;
  cplx value() const { return m * std::exp(lg); }
  double abs2_log() const {  // log |.|^2, -inf for zero
    const double a = std::abs(m);
    return a == 0 ? -std::numeric_limits<double>::infinity()
                  : 2.0 * (std::log(a) + lg);
  }
};

struct Mps {
  std::vector<Tensor> sites;
  // Schmidt weights per bond; populated only in equilibrated form.
  std::vector<std::vector<double>> weights;
  MpsForm form = MpsForm::None;
  // Global scalar: the represented state is exp(log_scale) * contraction.
  double log_scale = 0.0;

  std::size_t length() const { return sites.size(); }
  std::size_t bond(std::size_t j) const {  // bond right of site j
    return sites[j].dim(3);
  }
  std::size_t max_bond() const {
    std::size_t b = 1;
    for (const auto& s : sites) b = std::max(b, s.dim(3));
    return b;
  }
  std::size_t max_phys() const {
    std::size_t p = 1;
    for (const auto& s : sites) p = std::max(p, s.dim(1));
    return p;
  }
};

inline void check_mps(const Mps& m) {
  if (m.sites.empty()) throw DimensionError("empty MPS");
  if (m.sites.front().dim(0) != 1 || m.sites.back().dim(3) != 1)
    throw DimensionError("MPS boundary bonds must have length 1");
  for (std::size_t j = 0; j + 1 < m.length(); ++j)
    if (m.sites[j].dim(3) != m.sites[j + 1].dim(0))
      throw DimensionError("MPS bond mismatch between sites " +
                           std::to_string(j) + " and " + std::to_string(j + 1));
}

// ---------------------------------------------------------------------------
// Row merging
// ---------------------------------------------------------------------------

// One site of a row that can be merged onto an MPS. Axis order
// (cl, p, fi, fo, cr): chain bonds cl/cr, physical p, the bond facing the MPS
// (fi) and the new dangling bond away from it (fo).
using MpsRow = std::vector<Tensor>;

// Contract the dangling bonds of `a` with the facing bonds of `row`; chain
// bonds and physical axes multiply.
inline Mps merge_external(const Mps& a, const MpsRow& row) {
  if (a.length() != row.size())
    throw DimensionError("merge_external: row length " +
                         std::to_string(row.size()) + " vs MPS length " +
                         std::to_string(a.length()));
  Mps out;
  out.sites.reserve(a.length());
  out.log_scale = a.log_scale;
  for (std::size_t j = 0; j < a.length(); ++j) {
    const Tensor& s = a.sites[j];
    const Tensor& r = row[j];
    if (r.rank() != 5)
      throw DimensionError("merge_external: row site must have rank 5");
    if (s.dim(2) != r.dim(2))
      throw DimensionError("merge_external: dangling bond " +
                           std::to_string(s.dim(2)) + " vs facing bond " +
                           std::to_string(r.dim(2)) + " at site " +
                           std::to_string(j));
    // (l,p,v,r) x (cl,p',fi,fo,cr) over v=fi -> (l,p,r, cl,p',fo,cr)
    Tensor t = contract(s, r, {{2, 2}});
    t = t.permuted({0, 3, 1, 4, 5, 2, 6});
    const auto& sh = t.shape();
    out.sites.push_back(std::move(t).reshaped(
        {sh[0] * sh[1], sh[2] * sh[3], sh[4], sh[5] * sh[6]}));
  }
  check_mps(out);
  return out;
}

// ---------------------------------------------------------------------------
// Overlaps and dense reconstruction
// ---------------------------------------------------------------------------

inline ScaledC overlap(const Mps& a, const Mps& b) {
  if (a.length() != b.length())
    throw DimensionError("overlap: length mismatch");
  Tensor env = identity_matrix(1);  // (ra, rb)
  double lg = a.log_scale + b.log_scale;
  for (std::size_t j = 0; j < a.length(); ++j) {
    Tensor t = contract(env, a.sites[j].conjugated(), {{0, 0}});  // (rb,p,v,ra')
    env = contract(t, b.sites[j], {{0, 0}, {1, 1}, {2, 2}});      // (ra',rb')
    const double n = env.norm();
    if (n > 0 && std::isfinite(n)) {
      env *= cplx(1.0 / n);
      lg += std::log(n);
    } else if (n == 0) {
      return ScaledC{0.0, 0.0};
    }
  }
  return ScaledC{env[0], lg};
}

// log <a|a>; -inf for the zero state.
inline double log_norm2(const Mps& a) {
  const ScaledC ov = overlap(a, a);
  const double am = std::abs(ov.m);
  return am == 0 ? -std::numeric_limits<double>::infinity()
                 : std::log(am) + ov.lg;
}

// Full state vector of a small MPS; one external axis of size p*v per site.
inline Tensor mps_dense(const Mps& a) {
  Tensor acc = identity_matrix(1).reshaped({1, 1});  // (ext..., r)
  std::vector<std::size_t> ext;
  for (std::size_t j = 0; j < a.length(); ++j) {
    const auto& s = a.sites[j];
    const std::size_t last = acc.rank() - 1;
    Tensor t = contract(acc, s, {{last, 0}});  // (ext..., p, v, r)
    ext.push_back(s.dim(1) * s.dim(2));
    std::vector<std::size_t> sh(ext);
    sh.insert(sh.begin(), 1);
    sh.push_back(s.dim(3));
    acc = std::move(t).reshaped(sh);
  }
  std::vector<std::size_t> sh(ext);
  acc = std::move(acc).reshaped(sh);
  acc *= cplx(std::exp(a.log_scale));
  return acc;
}

// ---------------------------------------------------------------------------
// Canonical forms
// ---------------------------------------------------------------------------

namespace detail {

// Bring to right-canonical form (QR from the right, no truncation).
inline void right_canonicalize(Mps& m) {
  for (std::size_t j = m.length(); j-- > 1;) {
    QrResult f = qr(m.sites[j], {1, 2, 3});   // rows (p,v,r), cols (l)
    m.sites[j] = f.q.permuted({3, 0, 1, 2});  // (k,p,v,r)
    Tensor w = f.r.permuted({1, 0});          // (l, k)
    m.sites[j - 1] = contract(m.sites[j - 1], w, {{3, 0}});
  }
  m.form = MpsForm::Right;
  m.weights.clear();
}

}  // namespace detail

// Equilibrated form: sites end up right-canonical with the Schmidt weights of
// every bond recorded, and the global norm moves into log_scale. Plain
// contraction of the sites still gives the (normalized) state; the weighted
// center lambda_{j-1} * B_j used for local truncation is formed on demand.
inline Mps equilibrate(const Mps& input) {
  Mps m = input;
  const std::size_t L = m.length();
  // Pass 1: left-to-right QR (skipped when the sites are already
  // left-canonical from a compression sweep).
  if (m.form != MpsForm::Left) {
    for (std::size_t j = 0; j + 1 < L; ++j) {
      QrResult f = qr(m.sites[j], {0, 1, 2});  // (l,p,v | r)
      m.sites[j] = f.q;                        // (l,p,v,k)
      m.sites[j + 1] = contract(f.r, m.sites[j + 1], {{1, 0}});
    }
  }
  // Pass 2: right-to-left SVD; singular values are the Schmidt weights.
  m.weights.assign(L > 0 ? L - 1 : 0, {});
  Tensor carry;  // (r_old, r_new)
  for (std::size_t j = L; j-- > 0;) {
    Tensor t = (j + 1 < L) ? contract(m.sites[j], carry, {{3, 0}}) : m.sites[j];
    TruncatedSvdResult f =
        truncated_svd(t, {0}, std::numeric_limits<std::size_t>::max() / 2);
    if (f.s.empty() || f.s[0] == 0)
      throw DegenerateStateError("equilibrate: zero-norm state");
    m.sites[j] = f.vh.reshaped(
        {f.s.size(), t.dim(1), t.dim(2), t.dim(3)});
    if (j > 0) {
      m.weights[j - 1] = f.s;
      carry = scale_axis(f.u, 1, f.s);  // (l, k)
    } else {
      // f.u is 1x1 unitary, f.s[0] is the state norm.
      m.log_scale += std::log(f.s[0]);
      m.sites[0] *= f.u[0];
      // Record the Schmidt weights of the normalized state.
      for (auto& w : m.weights)
        for (auto& x : w) x /= f.s[0];
    }
  }
  m.form = MpsForm::Equilibrated;
  return m;
}

// ---------------------------------------------------------------------------
// Virtual-bond compression
// ---------------------------------------------------------------------------

enum class CompressMode { SvdSweep, Variational };

struct CompressResult {
  Mps mps;
  double fidelity = 1.0;          // |<out|in>|^2 / (|out|^2 |in|^2)
  double discarded_weight = 0.0;  // svd-sweep truncation weight (raw)
};

namespace detail {

inline double fidelity_between(const Mps& a, const Mps& b, double b_log_n2) {
  const ScaledC ov = overlap(a, b);
  const double num = ov.abs2_log();
  if (!std::isfinite(num)) return 0.0;
  return std::exp(num - log_norm2(a) - b_log_n2);
}

inline CompressResult compress_svd_sweep(const Mps& input, std::size_t max_bond,
                                         double input_log_n2,
                                         bool compute_fidelity) {
  Mps m = input;
  detail::right_canonicalize(m);
  const std::size_t L = m.length();
  double discarded = 0;
  Tensor carry;
  for (std::size_t j = 0; j < L; ++j) {
    Tensor t = (j > 0) ? contract(carry, m.sites[j], {{1, 0}}) : m.sites[j];
    if (j + 1 == L) {
      m.sites[j] = std::move(t);
      break;
    }
    TruncatedSvdResult f = truncated_svd(t, {0, 1, 2}, max_bond);
    if (f.s.empty() || f.s[0] == 0)
      throw DegenerateStateError("compress_bonds: zero-norm state");
    discarded += f.discarded_weight;
    m.sites[j] = f.u;  // (l,p,v,k), left-canonical
    carry = scale_axis(f.vh, 0, f.s);
  }
  m.form = MpsForm::Left;
  CompressResult r;
  r.fidelity = compute_fidelity ? fidelity_between(m, input, input_log_n2) : -1.0;
  r.mps = std::move(m);
  r.discarded_weight = discarded;
  return r;
}

}  // namespace detail

// Compress all virtual bonds to max_bond. Variational mode sweeps one-site
// updates seeded by the svd-sweep result; fidelity is non-decreasing per
// sweep and the loop stops on a relative gain below `tol` or after
// `max_sweeps` sweeps. With compute_fidelity=false the (otherwise unused)
// fidelity zippers are skipped and -1 is reported.
inline CompressResult compress_bonds(const Mps& input, std::size_t max_bond,
                                     CompressMode mode = CompressMode::Variational,
                                     int max_sweeps = 20, double tol = 1e-10,
                                     bool compute_fidelity = true) {
  if (max_bond < 1) throw ParameterError("compress_bonds: max_bond must be >= 1");
  if (mode == CompressMode::SvdSweep && !compute_fidelity)
    return detail::compress_svd_sweep(input, max_bond, 0.0, false);
  const double input_log_n2 = log_norm2(input);
  if (!std::isfinite(input_log_n2))
    throw DegenerateStateError("compress_bonds: zero-norm state");

  const bool no_truncation = input.max_bond() <= max_bond;
  CompressResult seed =
      detail::compress_svd_sweep(input, max_bond, input_log_n2, compute_fidelity);
  if (mode == CompressMode::SvdSweep || no_truncation) return seed;

  Mps trial = seed.mps;
  const std::size_t L = trial.length();
  if (L == 1) return seed;
  double fid = seed.fidelity;
  detail::right_canonicalize(trial);

  // Overlap environments <trial|input>: right_env[j] covers sites j..L-1.
  std::vector<Tensor> right_env(L + 1), left_env(L + 1);
  auto zip_right = [&](std::size_t j) {
    Tensor t = contract(trial.sites[j].conjugated(), right_env[j + 1], {{3, 0}});
    // t: (l,p,v,rin); input site: (lin,p,v,rin)
    right_env[j] = contract(t, input.sites[j], {{1, 1}, {2, 2}, {3, 3}});
  };
  auto zip_left = [&](std::size_t j) {
    Tensor t = contract(left_env[j], trial.sites[j].conjugated(), {{0, 0}});
    // t: (lin, p, v, rt); pair everything against the input site but rt.
    left_env[j + 1] = contract(t, input.sites[j], {{0, 0}, {1, 1}, {2, 2}});
  };
  right_env[L] = identity_matrix(1);
  left_env[0] = identity_matrix(1);
  for (std::size_t j = L; j-- > 1;) zip_right(j);

  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    // Left-to-right: solve site j, QR, move on.
    for (std::size_t j = 0; j + 1 < L; ++j) {
      Tensor t = contract(left_env[j], input.sites[j], {{1, 0}});  // (lt,p,v,r)
      Tensor b = contract(t, right_env[j + 1], {{3, 1}});          // (lt,p,v,rt)
      QrResult f = qr(b, {0, 1, 2});
      trial.sites[j] = f.q;
      zip_left(j);
    }
    // Right-to-left: solve, LQ, move back.
    double last_center_n2 = 0;
    for (std::size_t j = L; j-- > 0;) {
      Tensor t = contract(left_env[j], input.sites[j], {{1, 0}});
      Tensor b = contract(t, right_env[j + 1], {{3, 1}});  // (lt,p,v,rt)
      if (j == 0) {
        trial.sites[0] = b;
        last_center_n2 = b.norm2();
        break;
      }
      QrResult f = qr(b, {1, 2, 3});  // rows (p,v,r)
      trial.sites[j] = f.q.permuted({3, 0, 1, 2});
      zip_right(j);
    }
    // With the center at site 0, raw <trial|input> = |center|^2 and the raw
    // trial norm^2 is the same, so the fidelity ratio reduces to
    // |center|^2 / raw-input-norm^2.
    const double new_fid =
        last_center_n2 > 0
            ? std::exp(std::log(last_center_n2) + 2.0 * input.log_scale -
                       input_log_n2)
            : 0.0;
    const double gain = new_fid - fid;
    fid = std::max(fid, new_fid);
    if (gain < tol * std::max(fid, 1e-300)) break;
  }

  CompressResult r;
  r.mps = std::move(trial);
  r.mps.form = MpsForm::None;  // center at site 0, not a tracked form
  r.fidelity = fid;
  r.discarded_weight = seed.discarded_weight;
  return r;
}

// ---------------------------------------------------------------------------
// Physical truncation (single site, equilibrated form required)
// ---------------------------------------------------------------------------

struct PhysTruncation {
  Mps mps;
  Tensor isometry;      // (p_old, p_new), isometric columns
  double discarded_weight = 0.0;
};

inline PhysTruncation truncate_physical(const Mps& input, std::size_t site,
                                        std::size_t keep) {
  if (keep < 1) throw ParameterError("truncate_physical: keep must be >= 1");
  if (input.form != MpsForm::Equilibrated)
    throw PreconditionError(
        "truncate_physical requires an equilibrated MPS (call equilibrate)");
  if (site >= input.length())
    throw ParameterError("truncate_physical: site index out of range");

  PhysTruncation out;
  out.mps = input;
  Mps& m = out.mps;

  // Weighted center lambda_{j-1} * B_j; the right weight is already inside
  // the right-canonical site.
  Tensor center = m.sites[site];
  if (site > 0) center = scale_axis(center, 0, m.weights[site - 1]);

  // Rows (l, v, r) keep the virtual and dangling bonds; columns are the
  // merged physical axis.
  TruncatedSvdResult f = truncated_svd(center, {0, 2, 3}, keep);
  Tensor nu = scale_axis(f.u, 3, f.s);  // (l, v, r, p_new)
  nu = nu.permuted({0, 3, 1, 2});       // (l, p_new, v, r)

  if (site > 0) {
    std::vector<double> inv(m.weights[site - 1].size());
    for (std::size_t i = 0; i < inv.size(); ++i)
      inv[i] = 1.0 / m.weights[site - 1][i];
    nu = scale_axis(nu, 0, inv);
  }
  m.sites[site] = std::move(nu);
  // (p_old, p_new); the untruncated center is new_site contracted with this
  // factor over p_new.
  out.isometry = f.vh.permuted({1, 0});
  out.discarded_weight = f.discarded_weight;
  return out;
}

}  // namespace slpeps

#endif  // SLPEPS_MPS_HPP
