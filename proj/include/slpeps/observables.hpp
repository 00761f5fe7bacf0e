// Expectation values: double-layer boundary-MPO contraction (norm, energy,
// local observables, the baseline's pair norm operator) and the single-layer
// Metropolis estimator with optional Sz=0 projection.

#ifndef SLPEPS_OBSERVABLES_HPP
#define SLPEPS_OBSERVABLES_HPP

#include <algorithm>
#include <cstdint>
#include <functional>
#include <vector>

#include "slpeps/environment.hpp"
#include "slpeps/errors.hpp"
#include "slpeps/model.hpp"
#include "slpeps/mps.hpp"
#include "slpeps/peps.hpp"
#include "slpeps/random.hpp"
#include "slpeps/tensor.hpp"

namespace slpeps {

namespace detail {

// Apply one row of operator-like tensors (u, l, r, d) to a boundary MPS with
// sites (L, p, 1, R), contracting p against u; the new p is d. Compress to
// `cap` afterwards; site norms are folded into log_scale.
inline Mps apply_operator_row(const Mps& bnd, const std::vector<Tensor>& row,
                              std::size_t cap, CompressMode mode) {
  if (bnd.length() != row.size())
    throw DimensionError("apply_operator_row: length mismatch");
  Mps out;
  out.log_scale = bnd.log_scale;
  for (std::size_t j = 0; j < row.size(); ++j) {
    const Tensor& s = bnd.sites[j];
    if (s.dim(1) != row[j].dim(0))
      throw DimensionError("apply_operator_row: facing bond mismatch");
    Tensor t = contract(s, row[j], {{1, 0}});  // (L,1,R, l,r,d)
    t = t.permuted({0, 3, 5, 1, 2, 4});        // (L,l,d,1,R,r)
    const auto& sh = t.shape();
    out.sites.push_back(std::move(t).reshaped(
        {sh[0] * sh[1], sh[2], sh[3], sh[4] * sh[5]}));
  }
  if (!std::isfinite(log_norm2(out))) {
    // The row annihilated the network (possible for fixed configurations):
    // represent the zero state explicitly.
    Mps zero;
    for (std::size_t j = 0; j < row.size(); ++j)
      zero.sites.push_back(Tensor({1, out.sites[j].dim(1), 1, 1}));
    return zero;
  }
  CompressResult c = compress_bonds(out, cap, mode);
  Mps m = std::move(c.mps);
  m.form = MpsForm::None;
  for (auto& site : m.sites) {
    const double n = site.norm();
    if (n > 0) {
      site *= cplx(1.0 / n);
      m.log_scale += std::log(n);
    }
  }
  return m;
}

// Sandwiched double-layer row tensor sum_s A (x) A^*, composite axes
// (u u*, l l*, r r*, d d*).
inline Tensor dl_site(const Tensor& a) {
  Tensor t = contract(a, a.conjugated(), {{0, 0}});  // (l,r,u,d, l*,r*,u*,d*)
  t = t.permuted({2, 6, 0, 4, 1, 5, 3, 7});
  const auto& sh = t.shape();
  return std::move(t).reshaped(
      {sh[0] * sh[1], sh[2] * sh[3], sh[4] * sh[5], sh[6] * sh[7]});
}

inline std::vector<Tensor> dl_row(const PepsState& s, int i) {
  std::vector<Tensor> row;
  row.reserve(s.cols);
  for (int j = 0; j < s.cols; ++j) row.push_back(dl_site(s.at(i, j)));
  return row;
}

// Boundary MPS of the double-layer network: tops[i] covers rows < i, bots[i]
// covers rows > i.
struct DlBoundaries {
  std::vector<Mps> tops, bots;
};

inline DlBoundaries dl_boundaries(const PepsState& s, std::size_t cap,
                                  CompressMode mode) {
  DlBoundaries b;
  b.tops.resize(s.rows);
  b.bots.resize(s.rows);
  Mps cur = trivial_chain(s.cols);
  b.tops[0] = cur;
  for (int i = 0; i + 1 < s.rows; ++i) {
    cur = apply_operator_row(cur, dl_row(s, i), cap, mode);
    b.tops[i + 1] = cur;
  }
  cur = trivial_chain(s.cols);
  b.bots[s.rows - 1] = cur;
  for (int i = s.rows - 1; i > 0; --i) {
    std::vector<Tensor> row = dl_row(s, i);
    for (auto& t : row) t = t.permuted({3, 1, 2, 0});  // face upward
    cur = apply_operator_row(cur, row, cap, mode);
    b.bots[i - 1] = cur;
  }
  return b;
}

inline Tensor ones_env() {
  Tensor t({1, 1, 1, 1});
  t[0] = cplx(1);
  return t;
}

// One transfer step along a sandwiched row. env (rT, rk, rb, rB); bra and
// ket may differ (a single-site operator is folded into the ket upstream).
inline Tensor row_transfer(const Tensor& env, const Tensor& tsite,
                           const Tensor& ket, const Tensor& bra,
                           const Tensor& bsite) {
  const std::size_t uk = ket.dim(3), ub = bra.dim(3);
  const std::size_t dk = ket.dim(4), db = bra.dim(4);
  Tensor x = contract(env, tsite, {{0, 0}});  // (rk,rb,rB, p,1,rT')
  {
    const auto& sh = x.shape();
    x = std::move(x).reshaped({sh[0], sh[1], sh[2], uk, ub, sh[5]});
  }
  Tensor y = contract(x, ket, {{0, 1}, {3, 3}});  // (rb,rB,ub,rT', s,rk',dk')
  Tensor z = contract(y, bra.conjugated(),
                      {{0, 1}, {2, 3}, {4, 0}});  // (rB,rT',rk',dk', rb',db')
  Tensor bs = bsite;
  {
    const auto& sh = bs.shape();
    bs = std::move(bs).reshaped({sh[0], dk, db, sh[3]});
  }
  return contract(z, bs, {{0, 0}, {3, 1}, {5, 2}});  // (rT',rk',rb',rB')
}

inline Tensor row_transfer(const Tensor& env, const Tensor& tsite,
                           const Tensor& ket, const Tensor& bsite) {
  return row_transfer(env, tsite, ket, ket, bsite);
}

// Transfer past two columns with a two-site operator applied to the ket.
inline Tensor row_transfer_pair(const Tensor& env, const Tensor& t1,
                                const Tensor& t2, const Tensor& k1,
                                const Tensor& k2, const Tensor& b1,
                                const Tensor& b2, const Tensor& op) {
  Tensor pair = contract(k1, k2, {{2, 1}});  // (s,l,u,d, s',r',u',d')
  Tensor kp = contract(op, pair, {{2, 0}, {3, 4}});
  // kp: (s1, s2, l, u, d, r', u', d')
  Tensor bra = pair.conjugated();

  const std::size_t u1 = k1.dim(3), u1b = u1, u2 = k2.dim(3), u2b = u2;
  const std::size_t d1 = k1.dim(4), d1b = d1, d2 = k2.dim(4), d2b = d2;
  Tensor top = contract(t1, t2, {{3, 0}});  // (lT,p1,1, p2,1,rT')
  Tensor x = contract(env, top, {{0, 0}});  // (rk,rb,rB, p1,1,p2,1,rT')
  {
    const auto& sh = x.shape();
    x = std::move(x).reshaped(
        {sh[0], sh[1], sh[2], u1, u1b, u2, u2b, sh[7]});
  }
  // x: (rk, rb, rB, u1k, u1b, u2k, u2b, rT')
  Tensor y = contract(x, kp, {{0, 2}, {3, 3}, {5, 6}});
  // y: (rb, rB, u1b, u2b, rT', s1, s2, d1k, r2k, d2k)
  Tensor z = contract(y, bra, {{0, 1}, {2, 2}, {3, 6}, {5, 0}, {6, 4}});
  // z: (rB, rT', d1k, r2k, d2k, d1b, r2b, d2b)
  Tensor bot = contract(b1, b2, {{3, 0}});  // (lB, q1, 1, q2, 1, rB')
  {
    const auto& sh = bot.shape();
    bot = std::move(bot).reshaped({sh[0], d1, d1b, d2, d2b, sh[5]});
  }
  return contract(z, bot, {{0, 0}, {2, 1}, {5, 2}, {4, 3}, {7, 4}});
  // (rT', r2k, r2b, rB')
}

inline Tensor mirror_t(const Tensor& t) { return t.permuted({3, 1, 2, 0}); }
inline Tensor mirror_k(const Tensor& t) { return t.permuted({0, 2, 1, 3, 4}); }

}  // namespace detail

struct EnergyEstimate {
  double energy = 0;
  double norm2 = 0;      // stored-tensor <psi|psi> mantissa
  double log_norm2 = 0;  // with boundary scale factors applied
  double max_imag_ratio = 0;
};

// Sum of the horizontal bond energies by double-layer contraction; vertical
// bonds are handled by the caller through lattice transposition.
inline EnergyEstimate horizontal_energy_dl(const PepsState& s,
                                           const HeisenbergModel& model,
                                           std::size_t d_cut,
                                           CompressMode mode) {
  detail::DlBoundaries b = detail::dl_boundaries(s, d_cut, mode);
  Tensor h = heisenberg_pair_term(model.coupling);
  EnergyEstimate out;
  bool have_norm = false;

  for (int i = 0; i < s.rows; ++i) {
    const Mps& top = b.tops[i];
    const Mps& bot = b.bots[i];
    std::vector<Tensor> lefts(s.cols + 1), rights(s.cols + 1);
    lefts[0] = detail::ones_env();
    for (int j = 0; j < s.cols; ++j)
      lefts[j + 1] = detail::row_transfer(lefts[j], top.sites[j], s.at(i, j),
                                          bot.sites[j]);
    rights[s.cols] = detail::ones_env();
    for (int j = s.cols - 1; j >= 0; --j)
      rights[j] = detail::row_transfer(
          rights[j + 1], detail::mirror_t(top.sites[j]),
          detail::mirror_k(s.at(i, j)), detail::mirror_t(bot.sites[j]));

    const cplx den_c = lefts[s.cols][0];
    const double den = den_c.real();
    if (!(den > 0))
      throw NumericError("double-layer norm estimate is not positive");
    out.max_imag_ratio =
        std::max(out.max_imag_ratio, std::abs(den_c.imag()) / den);
    if (!have_norm) {
      out.norm2 = den;
      out.log_norm2 = std::log(den) + top.log_scale + bot.log_scale;
      have_norm = true;
    }
    for (int j = 0; j + 1 < s.cols; ++j) {
      Tensor e = detail::row_transfer_pair(
          lefts[j], top.sites[j], top.sites[j + 1], s.at(i, j),
          s.at(i, j + 1), bot.sites[j], bot.sites[j + 1], h);
      const cplx num = contract(e, rights[j + 2],
                                {{0, 0}, {1, 1}, {2, 2}, {3, 3}})[0];
      out.energy += num.real() / den;
      out.max_imag_ratio = std::max(
          out.max_imag_ratio, std::abs(num.imag()) / (std::abs(num.real()) + den));
    }
  }
  return out;
}

// Total energy = sum over all bonds of <psi|h|psi>/<psi|psi>, double-layer
// boundary contraction capped at d_cut.
inline EnergyEstimate expect_energy_dl(
    const PepsState& s, const HeisenbergModel& model, std::size_t d_cut,
    CompressMode mode = CompressMode::Variational) {
  if (d_cut < 1) throw ParameterError("expect_energy_dl: d_cut must be >= 1");
  EnergyEstimate h = horizontal_energy_dl(s, model, d_cut, mode);
  EnergyEstimate v = horizontal_energy_dl(transposed(s), model, d_cut, mode);
  EnergyEstimate out;
  out.energy = h.energy + v.energy;
  out.norm2 = h.norm2;
  out.log_norm2 = h.log_norm2;
  out.max_imag_ratio = std::max(h.max_imag_ratio, v.max_imag_ratio);
  return out;
}

// Per-site <sigma_z>, double-layer contraction.
inline std::vector<double> expect_sz_dl(
    const PepsState& s, std::size_t d_cut,
    CompressMode mode = CompressMode::Variational) {
  detail::DlBoundaries b = detail::dl_boundaries(s, d_cut, mode);
  std::vector<double> vals(s.rows * s.cols, 0.0);
  Tensor sz({2, 2});
  sz[0] = 1;
  sz[3] = -1;
  for (int i = 0; i < s.rows; ++i) {
    const Mps& top = b.tops[i];
    const Mps& bot = b.bots[i];
    std::vector<Tensor> lefts(s.cols + 1), rights(s.cols + 1);
    lefts[0] = detail::ones_env();
    for (int j = 0; j < s.cols; ++j)
      lefts[j + 1] = detail::row_transfer(lefts[j], top.sites[j], s.at(i, j),
                                          bot.sites[j]);
    rights[s.cols] = detail::ones_env();
    for (int j = s.cols - 1; j >= 0; --j)
      rights[j] = detail::row_transfer(
          rights[j + 1], detail::mirror_t(top.sites[j]),
          detail::mirror_k(s.at(i, j)), detail::mirror_t(bot.sites[j]));
    const double den = lefts[s.cols][0].real();
    for (int j = 0; j < s.cols; ++j) {
      Tensor zket = contract(sz, s.at(i, j), {{1, 0}});  // (s', l,r,u,d)
      Tensor e = detail::row_transfer(lefts[j], top.sites[j], zket,
                                      s.at(i, j), bot.sites[j]);
      const cplx num = contract(e, rights[j + 1],
                                {{0, 0}, {1, 1}, {2, 2}, {3, 3}})[0];
      vals[i * s.cols + j] = num.real() / den;
    }
  }
  return vals;
}

inline double staggered_magnetization_dl(
    const PepsState& s, std::size_t d_cut,
    CompressMode mode = CompressMode::Variational) {
  std::vector<double> sz = expect_sz_dl(s, d_cut, mode);
  double m = 0;
  for (int i = 0; i < s.rows; ++i)
    for (int j = 0; j < s.cols; ++j)
      m += ((i + j) % 2 == 0 ? 1.0 : -1.0) * sz[i * s.cols + j];
  return m / (s.rows * s.cols);
}

// Pair norm operator by double-layer contraction at cap d_cut, for the
// conventional (ALS) update. Same index convention as build_norm_operator:
// N[(l u u2 d d2 r)_bra, (same)_ket], Hermitian-symmetrized.
struct NormOperatorDl {
  Tensor matrix;
  std::vector<std::size_t> bond_dims;  // (l, u, u2, d, d2, r)
};

inline NormOperatorDl dl_pair_norm_operator(
    const PepsState& s, int row, int j, std::size_t d_cut,
    CompressMode mode = CompressMode::Variational) {
  if (row < 0 || row >= s.rows || j < 0 || j + 1 >= s.cols)
    throw TopologyError("dl_pair_norm_operator: pair outside lattice");
  detail::DlBoundaries b = detail::dl_boundaries(s, d_cut, mode);
  const Mps& top = b.tops[row];
  const Mps& bot = b.bots[row];
  Tensor left = detail::ones_env();
  for (int c = 0; c < j; ++c)
    left = detail::row_transfer(left, top.sites[c], s.at(row, c),
                                bot.sites[c]);
  Tensor right = detail::ones_env();
  for (int c = s.cols - 1; c > j + 1; --c)
    right = detail::row_transfer(right, detail::mirror_t(top.sites[c]),
                                 detail::mirror_k(s.at(row, c)),
                                 detail::mirror_t(bot.sites[c]));

  const Tensor &a = s.at(row, j), &bt2 = s.at(row, j + 1);
  const std::size_t u1 = a.dim(3), u2 = bt2.dim(3);
  const std::size_t d1 = a.dim(4), d2 = bt2.dim(4);

  Tensor x = contract(left, top.sites[j], {{0, 0}});  // (kl,bl,rB, p,1,rT)
  {
    const auto& sh = x.shape();
    x = std::move(x).reshaped({sh[0], sh[1], sh[2], u1, u1, sh[5]});
  }
  Tensor y = contract(x, top.sites[j + 1], {{5, 0}});
  {
    const auto& sh = y.shape();  // (kl,bl,rB,u1k,u1b, p,1,rT2)
    y = std::move(y).reshaped({sh[0], sh[1], sh[2], sh[3], sh[4], u2, u2,
                               sh[7]});
  }
  Tensor z = contract(y, right, {{7, 0}});
  // z: (kl, bl, rB, u1k, u1b, u2k, u2b, kr, br, lB')
  Tensor bp = contract(bot.sites[j], bot.sites[j + 1], {{3, 0}});
  {
    const auto& sh = bp.shape();  // (lB, q1, 1, q2, 1, rB2)
    bp = std::move(bp).reshaped({sh[0], d1, d1, d2, d2, sh[5]});
  }
  Tensor n = contract(z, bp, {{2, 0}, {9, 5}});
  // n: (kl,bl,u1k,u1b,u2k,u2b,kr,br, d1k,d1b,d2k,d2b)
  n = n.permuted({1, 3, 5, 9, 11, 7, 0, 2, 4, 8, 10, 6});
  // bra (bl,u1b,u2b,d1b,d2b,br), ket (kl,u1k,u2k,d1k,d2k,kr)
  NormOperatorDl out;
  out.bond_dims = {n.dim(6), n.dim(7), n.dim(8), n.dim(9), n.dim(10),
                   n.dim(11)};
  std::size_t dg = 1;
  for (auto d : out.bond_dims) dg *= d;
  Tensor m = std::move(n).reshaped({dg, dg});
  Tensor mt = m.conjugated().permuted({1, 0});
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = 0.5 * (m[i] + mt[i]);
  out.matrix = std::move(m);
  return out;
}

// ---------------------------------------------------------------------------
// Single-layer amplitudes
// ---------------------------------------------------------------------------

using SpinConfig = std::vector<std::uint8_t>;  // one label per site, row-major

namespace detail {

inline Tensor fixed_site(const Tensor& a, std::uint8_t sval) {
  // Slice the physical axis and reorder to (u, l, r, d).
  const std::size_t block = a.size() / a.dim(0);
  Tensor t({a.dim(1), a.dim(2), a.dim(3), a.dim(4)});
  std::copy(a.data() + sval * block, a.data() + (sval + 1) * block, t.data());
  return t.permuted({2, 0, 1, 3});
}

inline std::vector<Tensor> fixed_row(const PepsState& s,
                                     const SpinConfig& config, int i) {
  std::vector<Tensor> row;
  row.reserve(s.cols);
  for (int j = 0; j < s.cols; ++j)
    row.push_back(fixed_site(s.at(i, j), config[i * s.cols + j]));
  return row;
}

}  // namespace detail

// <config|Psi> relative to the stored tensor scale (the state's scale_ledger
// exponent is not applied). Exact when cap exceeds the maximal bond of the
// configuration network.
inline cplx amplitude(const PepsState& s, const SpinConfig& config,
                      std::size_t cap,
                      CompressMode mode = CompressMode::SvdSweep) {
  if (config.size() != static_cast<std::size_t>(s.rows) * s.cols)
    throw ParameterError("amplitude: config has wrong length");
  Mps bnd = trivial_chain(s.cols);
  for (int i = 0; i < s.rows; ++i)
    bnd = detail::apply_operator_row(bnd, detail::fixed_row(s, config, i),
                                     cap, mode);
  Tensor acc = identity_matrix(1);
  for (std::size_t j = 0; j < bnd.length(); ++j) {
    const auto& st = bnd.sites[j];
    Tensor m = Tensor(st).reshaped({st.dim(0), st.dim(3)});
    acc = contract(acc, m, {{1, 0}});
  }
  return acc[0] * std::exp(bnd.log_scale);
}

// ---------------------------------------------------------------------------
// Metropolis energy sampling (Eq.-style local estimator)
// ---------------------------------------------------------------------------

struct SampleStats {
  double energy = 0;
  double stderr_ = 0;
  // Accepted exchanges (or flips) over proposed moves; picks landing on a
  // parallel bond in projected mode are not counted as proposals.
  double acceptance = 0;
  long samples = 0;
};

namespace detail {

// Cached per-row boundaries of the fixed-configuration network.
class AmpCache {
 public:
  AmpCache(const PepsState& s, std::size_t cap, CompressMode mode)
      : s_(&s), cap_(cap), mode_(mode) {}

  void rebuild(const SpinConfig& config) {
    config_ = config;
    const int m = s_->rows;
    tops_.assign(m + 1, Mps{});
    bots_.assign(m + 1, Mps{});
    tops_[0] = trivial_chain(s_->cols);
    for (int i = 0; i < m; ++i)
      tops_[i + 1] =
          apply_operator_row(tops_[i], fixed_row(*s_, config_, i), cap_, mode_);
    bots_[m] = trivial_chain(s_->cols);
    for (int i = m - 1; i >= 0; --i) {
      std::vector<Tensor> row = fixed_row(*s_, config_, i);
      for (auto& t : row) t = t.permuted({3, 1, 2, 0});
      bots_[i] = apply_operator_row(bots_[i + 1], row, cap_, mode_);
    }
  }

  // Refresh after rows [lo, hi] changed in config_.
  void refresh(const SpinConfig& config, int lo, int hi) {
    config_ = config;
    const int m = s_->rows;
    for (int i = lo; i < m; ++i)
      tops_[i + 1] =
          apply_operator_row(tops_[i], fixed_row(*s_, config_, i), cap_, mode_);
    for (int i = hi; i >= 0; --i) {
      std::vector<Tensor> row = fixed_row(*s_, config_, i);
      for (auto& t : row) t = t.permuted({3, 1, 2, 0});
      bots_[i] = apply_operator_row(bots_[i + 1], row, cap_, mode_);
    }
  }

  cplx current_amp() const {
    // tops_[m] has all rows absorbed.
    Tensor acc = identity_matrix(1);
    const Mps& b = tops_[s_->rows];
    for (std::size_t j = 0; j < b.length(); ++j)
      acc = contract(acc,
                     Tensor(b.sites[j]).reshaped(
                         {b.sites[j].dim(0), b.sites[j].dim(3)}),
                     {{1, 0}});
    return acc[0] * std::exp(b.log_scale);
  }

  // Amplitude with row i replaced (everything else from config_).
  cplx amp_row(int i, const std::vector<Tensor>& row) const {
    const Mps& top = tops_[i];
    const Mps& bot = bots_[i + 1];
    Tensor env({1, 1, 1});
    env[0] = cplx(1);
    for (int j = 0; j < s_->cols; ++j) {
      Tensor x = contract(env, top.sites[j], {{0, 0}});  // (rM,rB, p,1,rT')
      {
        const std::vector<std::size_t> sh = x.shape();
        x = std::move(x).reshaped({sh[0], sh[1], sh[2], sh[4]});
      }
      Tensor y = contract(x, row[j], {{0, 1}, {2, 0}});  // (rB,rT', r,d)
      Tensor z = contract(y, bot.sites[j], {{0, 0}, {3, 1}});  // (rT',r,1,rB')
      {
        const std::vector<std::size_t> sh = z.shape();
        env = std::move(z).reshaped({sh[0], sh[1], sh[3]});
      }
    }
    return env[0] * std::exp(top.log_scale + bot.log_scale);
  }

  // Amplitude with rows i and i+1 replaced.
  cplx amp_rows(int i, const std::vector<Tensor>& r1,
                const std::vector<Tensor>& r2) const {
    const Mps& top = tops_[i];
    const Mps& bot = bots_[i + 2];
    Tensor env({1, 1, 1, 1});
    env[0] = cplx(1);
    for (int j = 0; j < s_->cols; ++j) {
      Tensor x = contract(env, top.sites[j], {{0, 0}});  // (r1,r2,rB, p,1,rT')
      {
        const std::vector<std::size_t> sh = x.shape();
        x = std::move(x).reshaped({sh[0], sh[1], sh[2], sh[3], sh[5]});
      }
      Tensor y = contract(x, r1[j], {{0, 1}, {3, 0}});   // (r2,rB,rT', r,d)
      Tensor z = contract(y, r2[j], {{0, 1}, {4, 0}});   // (rB,rT',r1', r,d)
      Tensor w = contract(z, bot.sites[j], {{0, 0}, {4, 1}});
      {
        const std::vector<std::size_t> sh = w.shape();  // (rT',r1',r2',1,rB')
        env = std::move(w).reshaped({sh[0], sh[1], sh[2], sh[4]});
      }
    }
    return env[0] * std::exp(top.log_scale + bot.log_scale);
  }

  // Amplitude of config_ with the spins listed in `flips` replaced.
  cplx amp_flipped(const std::vector<std::pair<int, std::uint8_t>>& flips) const {
    int lo = s_->rows, hi = -1;
    SpinConfig cfg = config_;
    for (auto [flat, v] : flips) {
      cfg[flat] = v;
      lo = std::min(lo, flat / s_->cols);
      hi = std::max(hi, flat / s_->cols);
    }
    if (hi == lo) return amp_row(lo, fixed_row(*s_, cfg, lo));
    if (hi == lo + 1)
      return amp_rows(lo, fixed_row(*s_, cfg, lo), fixed_row(*s_, cfg, hi));
    throw Error("internal: flips span more than two rows");
  }

  const SpinConfig& config() const { return config_; }

 private:
  const PepsState* s_;
  std::size_t cap_;
  CompressMode mode_;
  SpinConfig config_;
  std::vector<Mps> tops_, bots_;
};

inline double blocking_stderr(const std::vector<double>& xs) {
  const std::size_t n = xs.size();
  if (n < 2) return 0;
  double best = 0;
  std::vector<double> blocks(xs);
  while (blocks.size() >= 32) {
    const std::size_t nb = blocks.size();
    double mean = 0;
    for (double x : blocks) mean += x;
    mean /= static_cast<double>(nb);
    double var = 0;
    for (double x : blocks) var += (x - mean) * (x - mean);
    var /= static_cast<double>(nb - 1);
    best = std::max(best, std::sqrt(var / static_cast<double>(nb)));
    std::vector<double> next(nb / 2);
    for (std::size_t k = 0; k < nb / 2; ++k)
      next[k] = 0.5 * (blocks[2 * k] + blocks[2 * k + 1]);
    blocks.swap(next);
  }
  return best;
}

}  // namespace detail

// Metropolis estimate of the energy. One sample = one lattice sweep of
// proposals (Sz-preserving antiparallel-pair exchanges when projecting,
// single-spin flips otherwise). `visit` is called once per recorded sample.
inline SampleStats metropolis_energy(
    const PepsState& s, const HeisenbergModel& model, long samples,
    long burn_in, std::uint64_t seed, bool project_sz0, std::size_t amp_cap,
    CompressMode mode = CompressMode::SvdSweep,
    const std::function<void(const SpinConfig&)>& visit = {}) {
  const int m = s.rows, n = s.cols, nsites = m * n;
  if (project_sz0 && nsites % 2 != 0)
    throw ParameterError("metropolis_energy: Sz=0 needs an even site count");
  if (samples < 1) throw ParameterError("metropolis_energy: samples >= 1");

  Rng rng(seed);
  detail::AmpCache cache(s, amp_cap, mode);
  SpinConfig config(nsites);
  cplx amp(0);
  for (int attempt = 0;; ++attempt) {
    if (project_sz0) {
      for (int k = 0; k < nsites; ++k) config[k] = k < nsites / 2 ? 0 : 1;
      for (int k = nsites - 1; k > 0; --k)
        std::swap(config[k], config[rng.integer(k + 1)]);
    } else {
      for (auto& c : config) c = static_cast<std::uint8_t>(rng.integer(2));
    }
    cache.rebuild(config);
    amp = cache.current_amp();
    if (std::abs(amp) > 0) break;
    if (attempt >= 100)
      throw DegenerateStateError(
          "metropolis_energy: no configuration with nonzero amplitude found");
  }

  const auto bonds = lattice_bonds(m, n);
  long proposed = 0, accepted = 0;
  std::vector<double> history;
  history.reserve(samples);

  for (long sweep = 0; sweep < burn_in + samples; ++sweep) {
    for (int p = 0; p < nsites; ++p) {
      if (project_sz0) {
        const auto& b = bonds[rng.integer(bonds.size())];
        const int fa = b.i1 * n + b.j1, fb = b.i2 * n + b.j2;
        if (config[fa] == config[fb]) continue;  // parallel: no move
        ++proposed;
        const cplx namp = cache.amp_flipped(
            {{fa, config[fb]}, {fb, config[fa]}});
        const double ratio = std::norm(namp) / std::norm(amp);
        if (ratio >= 1.0 || rng.uniform() < ratio) {
          ++accepted;
          SpinConfig cfg = cache.config();
          std::swap(cfg[fa], cfg[fb]);
          cache.refresh(cfg, std::min(b.i1, b.i2), std::max(b.i1, b.i2));
          config = cfg;
          amp = namp;
        }
      } else {
        const int f = static_cast<int>(rng.integer(nsites));
        ++proposed;
        const cplx namp =
            cache.amp_flipped({{f, static_cast<std::uint8_t>(1 - config[f])}});
        const double ratio = std::norm(namp) / std::norm(amp);
        if (ratio >= 1.0 || rng.uniform() < ratio) {
          ++accepted;
          SpinConfig cfg = cache.config();
          cfg[f] = 1 - cfg[f];
          cache.refresh(cfg, f / n, f / n);
          config = cfg;
          amp = namp;
        }
      }
    }
    if (sweep < burn_in) continue;
    if (visit) visit(config);

    // Local energy <config|H|Psi>/<config|Psi>.
    cplx eloc(0);
    for (const auto& b : bonds) {
      const int fa = b.i1 * n + b.j1, fb = b.i2 * n + b.j2;
      const double za = config[fa] == 0 ? 1.0 : -1.0;
      const double zb = config[fb] == 0 ? 1.0 : -1.0;
      eloc += model.coupling * za * zb;
      if (config[fa] != config[fb]) {
        const cplx namp = cache.amp_flipped(
            {{fa, config[fb]}, {fb, config[fa]}});
        eloc += 2.0 * model.coupling * namp / amp;
      }
    }
    history.push_back(eloc.real());
  }

  SampleStats out;
  out.samples = samples;
  double mean = 0;
  for (double x : history) mean += x;
  out.energy = mean / static_cast<double>(history.size());
  out.stderr_ = detail::blocking_stderr(history);
  out.acceptance =
      proposed > 0 ? static_cast<double>(accepted) / proposed : 0.0;
  return out;
}

}  // namespace slpeps

#endif  // SLPEPS_OBSERVABLES_HPP
