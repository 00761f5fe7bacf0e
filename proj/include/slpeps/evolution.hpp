// Imaginary time evolution: second-order Suzuki-Trotter sweeps, the
// single-layer two-site update (SLTE) and the conventional double-layer ALS
// update with spectral cutoff, plus bond-growth annealing across phases.

#ifndef SLPEPS_EVOLUTION_HPP
#define SLPEPS_EVOLUTION_HPP

#include <chrono>
#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "slpeps/environment.hpp"
#include "slpeps/errors.hpp"
#include "slpeps/model.hpp"
#include "slpeps/observables.hpp"
#include "slpeps/peps.hpp"

namespace slpeps {

struct UpdateReport {
  int row = 0, col = 0;
  bool horizontal = true;
  std::size_t bond_before = 1, bond_after = 1;
  double fidelity = 1.0;           // kept weight fraction of the pair SVD
  double discarded_weight = 0.0;
  int als_iterations = 0;
  double als_residual = 0.0;
  std::size_t als_effective_rank = 0;
};

namespace detail {

// Rescale the two freshly written tensors back to the state's common site
// norm; the extracted factors go to the scale ledger.
inline void rescale_pair_to_common(PepsState& s, int i1, int j1, int i2,
                                   int j2) {
  double target = 0;
  for (int i = 0; i < s.rows && target == 0; ++i)
    for (int j = 0; j < s.cols; ++j)
      if (!((i == i1 && j == j1) || (i == i2 && j == j2))) {
        target = s.at(i, j).norm();
        break;
      }
  if (target == 0) target = 1.0;
  for (auto [i, j] : {std::pair{i1, j1}, {i2, j2}}) {
    Tensor& t = s.at(i, j);
    const double n = t.norm();
    if (n == 0) throw DegenerateStateError("update produced a zero tensor");
    t *= cplx(target / n);
    s.scale_ledger += std::log(n / target);
  }
}

// Core single-layer update of the horizontal pair (row, j)-(row, j+1) given
// its effective frame. Mutates the state in place.
inline UpdateReport slte_core(PepsState& s, int row, int j,
                              const Tensor& gate_op, std::size_t cap,
                              const EffectiveFrame& frame,
                              SplitMethod method) {
  SplitEnvironment env = split_environment(frame, method);
  const Tensor& a = s.at(row, j);
  const Tensor& b = s.at(row, j + 1);

  // Orthogonalize both halves; the triangular factors move inward.
  Tensor wl = qr(env.left, {0}).r;   // (kL, u, l, d)
  Tensor wr = qr(env.right, {0}).r;  // (kR, u2, d2, r)
  Tensor tl = contract(wl, a, {{1, 3}, {2, 1}, {3, 4}});  // (kL, s, r)
  Tensor tr = contract(wr, b, {{1, 3}, {2, 4}, {3, 2}});  // (kR, s', l')

  Tensor theta = contract(tl, tr, {{2, 2}});  // (kL, s, kR, s')
  theta = theta.permuted({0, 1, 3, 2});       // (kL, s, s', kR)
  theta = contract(theta, gate_op, {{1, 2}, {2, 3}});  // (kL, kR, s1o, s2o)
  theta = theta.permuted({0, 2, 3, 1});                // (kL, s1o, s2o, kR)

  TruncatedSvdResult f = truncated_svd(theta, {0, 1}, cap);
  const std::size_t keep = f.s.size();
  double total = f.discarded_weight;
  for (double x : f.s) total += x * x;

  UpdateReport rep;
  rep.row = row;
  rep.col = j;
  rep.bond_before = a.dim(2);
  rep.bond_after = keep;
  rep.discarded_weight = f.discarded_weight;
  rep.fidelity = total > 0 ? 1.0 - f.discarded_weight / total : 1.0;

  std::vector<double> sq(keep);
  for (std::size_t x = 0; x < keep; ++x) sq[x] = std::sqrt(f.s[x]);
  Tensor xl = scale_axis(f.u, 2, sq);   // (kL, s, D')
  Tensor xr = scale_axis(f.vh, 0, sq);  // (D', s', kR)

  // Solve the gauges back: wl * M = xl with M over (u l d) x (s D').
  const std::size_t uld = wl.size() / wl.dim(0);
  const std::size_t u2d2r = wr.size() / wr.dim(0);
  Tensor ml = lstsq_solve(
      Tensor(wl).reshaped({wl.dim(0), uld}),
      Tensor(xl).reshaped({xl.dim(0), xl.dim(1) * xl.dim(2)}));
  Tensor na = std::move(ml)
                  .reshaped({wl.dim(1), wl.dim(2), wl.dim(3), xl.dim(1),
                             xl.dim(2)})  // (u, l, d, s, D')
                  .permuted({3, 1, 4, 0, 2});  // (s, l, D', u, d)

  Tensor xrp = xr.permuted({2, 1, 0});  // (kR, s', D')
  Tensor mr = lstsq_solve(
      Tensor(wr).reshaped({wr.dim(0), u2d2r}),
      Tensor(xrp).reshaped({xrp.dim(0), xrp.dim(1) * xrp.dim(2)}));
  Tensor nb = std::move(mr)
                  .reshaped({wr.dim(1), wr.dim(2), wr.dim(3), xrp.dim(1),
                             xrp.dim(2)})  // (u2, d2, r, s', D')
                  .permuted({3, 4, 2, 0, 1});  // (s', D', r, u, d)

  s.at(row, j) = std::move(na);
  s.at(row, j + 1) = std::move(nb);
  rescale_pair_to_common(s, row, j, row, j + 1);
  return rep;
}

}  // namespace detail

// Single-layer two-site update (public one-shot form; the evolution driver
// uses cached boundaries internally).
inline std::pair<PepsState, UpdateReport> slte_update_pair(
    const PepsState& state, const TwoSiteGate& gate, std::size_t cap,
    const EnvParams& params, SplitMethod method = SplitMethod::SelfContraction) {
  if (cap < 1) throw ParameterError("slte_update_pair: cap must be >= 1");
  if (!gate.horizontal) {
    TwoSiteGate g = gate;
    g.horizontal = true;
    g.i = gate.j;
    g.j = gate.i;
    auto [st, rep] = slte_update_pair(transposed(state), g, cap, params, method);
    rep.horizontal = false;
    rep.row = gate.i;
    rep.col = gate.j;
    return {transposed(st), rep};
  }
  if (gate.i < 0 || gate.i >= state.rows || gate.j < 0 ||
      gate.j + 1 >= state.cols)
    throw TopologyError("slte_update_pair: pair outside lattice");

  PepsState s = state;
  BoundaryMps top = gate.i > 0
                        ? contract_from_edge(s, Edge::Top, gate.i - 1, params)
                        : trivial_boundary(s.cols, Edge::Top);
  BoundaryMps bot =
      gate.i < s.rows - 1
          ? contract_from_edge(s, Edge::Bottom, gate.i + 1, params)
          : trivial_boundary(s.cols, Edge::Bottom);
  EffectiveFrame frame = build_frame(s, top, bot, gate.i, gate.j, params);
  UpdateReport rep = detail::slte_core(s, gate.i, gate.j, gate.op, cap, frame,
                                       method);
  return {std::move(s), rep};
}

// ---------------------------------------------------------------------------
// Conventional (double-layer) ALS update
// ---------------------------------------------------------------------------

namespace detail {

// Pair block (s, s', l, u, u', d, d', r) with the connecting bond summed.
inline Tensor pair_block(const Tensor& a, const Tensor& b) {
  Tensor t = contract(a, b, {{2, 1}});       // (s,l,u,d, s',r,u',d')
  return t.permuted({0, 4, 1, 2, 6, 3, 7, 5});
}

// Quadratic form c^dag N c over the environment composite for a block with
// leading physical axes.
inline double quad_form(const Tensor& n, const Tensor& block, std::size_t np) {
  const std::size_t dg = block.size() / np;
  Tensor bm = Tensor(block).reshaped({np, dg});
  Tensor nb = contract(bm, n, {{1, 1}});  // (p, env_bra)
  Tensor v = contract(bm.conjugated(), nb, {{0, 0}, {1, 1}});
  return v[0].real();
}

inline cplx cross_form(const Tensor& n, const Tensor& bra_block,
                       const Tensor& ket_block, std::size_t np) {
  const std::size_t dg = bra_block.size() / np;
  Tensor bm = Tensor(bra_block).reshaped({np, dg});
  Tensor km = Tensor(ket_block).reshaped({np, dg});
  Tensor nk = contract(km, n, {{1, 1}});  // (p, env_bra)
  Tensor v = contract(bm.conjugated(), nk, {{0, 0}, {1, 1}});
  return v[0];
}

}  // namespace detail

// Alternating least squares update of a horizontal pair against the
// double-layer norm operator at cap d_cut, with relative spectral cutoff eps
// on the effective single-site problem. Seeded from the SLTE result.
inline std::pair<PepsState, UpdateReport> als_update_pair(
    const PepsState& state, const TwoSiteGate& gate, std::size_t cap,
    double eps, std::size_t d_cut, int max_iter = 50) {
  if (!gate.horizontal) {
    TwoSiteGate g = gate;
    g.horizontal = true;
    g.i = gate.j;
    g.j = gate.i;
    auto [st, rep] = als_update_pair(transposed(state), g, cap, eps, d_cut,
                                     max_iter);
    rep.horizontal = false;
    rep.row = gate.i;
    rep.col = gate.j;
    return {transposed(st), rep};
  }
  const int row = gate.i, j = gate.j;
  if (row < 0 || row >= state.rows || j < 0 || j + 1 >= state.cols)
    throw TopologyError("als_update_pair: pair outside lattice");

  // Environment Gram matrix from the double layer.
  NormOperatorDl nop = dl_pair_norm_operator(state, row, j, d_cut);
  const Tensor& n = nop.matrix;

  // Target block: gate applied to the grown pair.
  Tensor target;
  {
    Tensor blk = detail::pair_block(state.at(row, j), state.at(row, j + 1));
    target = contract(gate.op, blk, {{2, 0}, {3, 1}});
    // (s1o, s2o, l, u, u', d, d', r)
  }
  const std::size_t np = state.phys * state.phys;
  const double target_norm = detail::quad_form(n, target, np);

  // Seed from the single-layer update.
  EnvParams seed_params;
  seed_params.max_bond = std::max<std::size_t>(4, 2 * state.max_bond());
  seed_params.max_phys = seed_params.max_bond;
  auto [seeded, seed_rep] = slte_update_pair(state, gate, cap, seed_params);
  Tensor x = seeded.at(row, j);       // (s, l, r^, u, d)
  Tensor y = seeded.at(row, j + 1);   // (s', l^, r, u', d')

  UpdateReport rep = seed_rep;
  rep.bond_after = x.dim(2);

  auto objective = [&](const Tensor& xa, const Tensor& yb) {
    Tensor blk = detail::pair_block(xa, yb);
    const double self = detail::quad_form(n, blk, np);
    const cplx cross = detail::cross_form(n, blk, target, np);
    return self - 2.0 * cross.real() + target_norm;
  };

  // Unpack N to its twelve legs once.
  std::vector<std::size_t> nd = nop.bond_dims;
  Tensor n12 = Tensor(n).reshaped({nd[0], nd[1], nd[2], nd[3], nd[4], nd[5],
                                   nd[0], nd[1], nd[2], nd[3], nd[4], nd[5]});

  double obj = objective(x, y);
  int it = 0;
  std::size_t eff_rank = 0;
  for (; it < max_iter; ++it) {
    for (int side = 0; side < 2; ++side) {
      const bool left_side = side == 0;
      // Effective norm matrix and right-hand side for the active tensor.
      Tensor m, rhs;
      if (left_side) {
        // Contract N with y and y* over (u2, d2, r); the pair bond joins x.
        Tensor ny = contract(n12, y, {{8, 3}, {10, 4}, {11, 2}});
        // (bl,bu,bu2,bd,bd2,br, kl,ku,kd, s', kl^)
        Tensor myy = contract(ny, y.conjugated(),
                              {{2, 3}, {4, 4}, {5, 2}, {9, 0}});
        // (bl,bu,bd, kl,ku,kd, kl^, bl^)
        m = myy.permuted({0, 1, 2, 7, 3, 4, 5, 6});  // bra(l,u,d,b^), ket(...)
        const std::size_t db = m.dim(0) * m.dim(1) * m.dim(2) * m.dim(3);
        m = Tensor(std::move(m)).reshaped({db, db});
        // rhs: N with the target and y*.
        Tensor tb = Tensor(target).reshaped(
            {state.phys, state.phys, nd[0], nd[1], nd[2], nd[3], nd[4],
             nd[5]});
        Tensor nt = contract(n12, tb, {{6, 2}, {7, 3}, {8, 4}, {9, 5},
                                       {10, 6}, {11, 7}});
        // (bl,bu,bu2,bd,bd2,br, s, s')
        Tensor bvec = contract(nt, y.conjugated(),
                               {{2, 3}, {4, 4}, {5, 2}, {7, 0}});
        // (bl, bu, bd, s, bl^)
        rhs = bvec.permuted({3, 0, 1, 2, 4});  // (s, l, u, d, b^)
      } else {
        Tensor nx = contract(n12, x, {{6, 1}, {7, 3}, {9, 4}});
        // (bl,bu,bu2,bd,bd2,br, ku2,kd2,kr, s, kr^)
        Tensor mxx = contract(nx, x.conjugated(),
                              {{0, 1}, {1, 3}, {3, 4}, {9, 0}});
        // (bu2,bd2,br, ku2,kd2,kr, kr^, br^)
        m = mxx.permuted({0, 1, 2, 7, 3, 4, 5, 6});
        const std::size_t db = m.dim(0) * m.dim(1) * m.dim(2) * m.dim(3);
        m = Tensor(std::move(m)).reshaped({db, db});
        Tensor tb = Tensor(target).reshaped(
            {state.phys, state.phys, nd[0], nd[1], nd[2], nd[3], nd[4],
             nd[5]});
        Tensor nt = contract(n12, tb, {{6, 2}, {7, 3}, {8, 4}, {9, 5},
                                       {10, 6}, {11, 7}});
        // (bl,bu,bu2,bd,bd2,br, s, s')
        Tensor bvec = contract(nt, x.conjugated(),
                               {{0, 1}, {1, 3}, {3, 4}, {6, 0}});
        // (bu2, bd2, br, s', br^)
        rhs = bvec.permuted({3, 0, 1, 2, 4});  // (s', u2, d2, r, b^)
      }

      // Pseudo-inverse solve with relative spectral cutoff eps.
      EighResult es = eigh(m);
      const double lmax = std::max(std::abs(es.values.front()),
                                   std::abs(es.values.back()));
      const std::size_t dm = m.dim(0);
      const std::size_t ns = rhs.dim(0);
      Tensor rv = Tensor(rhs).reshaped({ns, dm}).permuted({1, 0});  // (dm, s)
      Tensor vt = contract(es.vectors.conjugated(), rv, {{0, 0}});  // (k, s)
      eff_rank = 0;
      for (std::size_t k = 0; k < dm; ++k) {
        const double lam = es.values[k];
        const bool keep = lam > eps * lmax && lam > 0;
        if (keep) ++eff_rank;
        for (std::size_t c = 0; c < ns; ++c)
          vt[k * ns + c] = keep ? vt[k * ns + c] / lam : cplx(0);
      }
      Tensor sol = contract(es.vectors, vt, {{1, 0}});  // (dm, s)
      sol = sol.permuted({1, 0});                       // (s, dm)
      if (left_side) {
        x = Tensor(std::move(sol))
                .reshaped({state.phys, x.dim(1), x.dim(3), x.dim(4), x.dim(2)})
                .permuted({0, 1, 4, 2, 3});  // (s, l, r^, u, d)
      } else {
        y = Tensor(std::move(sol))
                .reshaped({state.phys, y.dim(3), y.dim(4), y.dim(2), y.dim(1)})
                .permuted({0, 4, 3, 1, 2});  // (s', l^, r, u', d')
      }
    }
    const double nobj = objective(x, y);
    const double delta = std::abs(obj - nobj);
    obj = nobj;
    if (delta < 1e-10 * std::max(std::abs(target_norm), std::abs(obj)) ||
        delta < 1e-300)
      break;
  }

  PepsState out = state;
  out.at(row, j) = std::move(x);
  out.at(row, j + 1) = std::move(y);
  detail::rescale_pair_to_common(out, row, j, row, j + 1);
  rep.als_iterations = it + 1;
  rep.als_residual = obj;
  rep.als_effective_rank = eff_rank;
  return {std::move(out), rep};
}

// ---------------------------------------------------------------------------
// Trotter evolution
// ---------------------------------------------------------------------------

enum class UpdateMethod { Slte, Als };

struct PhaseConfig {
  double dt = 0.01;
  long steps = 0;
  std::size_t bond_cap = 2;   // D
  std::size_t env_bond = 2;   // D-tilde
  std::size_t env_phys = 2;   // d-tilde
};

struct TrotterSchedule {
  std::vector<PhaseConfig> phases;

  void validate() const {
    if (phases.empty()) throw ParameterError("schedule has no phases");
    for (const auto& p : phases)
      if (p.dt <= 0 || p.steps < 0 || p.bond_cap < 1 || p.env_bond < 1 ||
          p.env_phys < 1)
        throw ParameterError("invalid phase parameters");
  }
};

struct TrajectoryRecord {
  long step = 0;        // global step index (1-based after the first step)
  double tau = 0;       // accumulated imaginary time
  double energy = 0;
  double scale_exponent = 0;
  double max_discarded = 0;
  double wall_ms = 0;
};

using Trajectory = std::vector<TrajectoryRecord>;

struct EvolutionOptions {
  UpdateMethod method = UpdateMethod::Slte;
  SplitMethod split = SplitMethod::SelfContraction;
  double als_eps = 1e-10;
  std::size_t als_d_cut = 16;
  std::size_t energy_d_cut = 0;  // 0: use 4 D^2
  long energy_every = 100;
  // Advance to the next phase early when the relative energy decrease per
  // unit tau drops below this threshold (never cuts the last phase short);
  // <= 0 disables.
  double anneal_threshold = 1e-6;
  // Boundary compression mode inside the evolution hot path; the svd sweep
  // is substantially cheaper and at the caps used here its fidelity deficit
  // vs the variational sweep is far below the method's split error.
  CompressMode compress_mode = CompressMode::SvdSweep;
  std::function<void(const TrajectoryRecord&, const PepsState&)> observer;
};

namespace detail {

// The second-order substep sequence: palindromic over the four checkerboard
// groups with half weights everywhere except the innermost group.
struct Substep {
  bool horizontal;
  int parity;
  double weight;
};

inline std::vector<Substep> second_order_substeps() {
  return {{true, 0, 0.5},  {true, 1, 0.5},  {false, 0, 0.5}, {false, 1, 1.0},
          {false, 0, 0.5}, {true, 1, 0.5},  {true, 0, 0.5}};
}

// Sweep one checkerboard group of horizontal pairs, row-major, with cached
// top/bottom boundaries refreshed per row.
inline double sweep_horizontal_group(PepsState& s, const Tensor& gate_op,
                                     int parity, std::size_t cap,
                                     const EnvParams& params,
                                     SplitMethod split) {
  const int m = s.rows, n = s.cols;
  double max_disc = 0;
  std::vector<BoundaryMps> bots(m);
  bots[m - 1] = trivial_boundary(n, Edge::Bottom);
  for (int i = m - 2; i >= 0; --i) {
    bots[i] = bots[i + 1];
    detail::absorb(bots[i].mps, detail::peps_row(s, i + 1, false), params,
                   bots[i].discarded_bond, bots[i].discarded_phys);
    bots[i].first = i + 1;
    bots[i].last = m - 1;
  }
  BoundaryMps top = trivial_boundary(n, Edge::Top);
  for (int i = 0; i < m; ++i) {
    if (n >= 2 && parity < n - 1) {
      RowFrameContext ctx(s, top, bots[i], i, params);
      for (int j = parity; j + 1 < n; j += 2) {
        EffectiveFrame f = ctx.frame(j);
        UpdateReport rep = slte_core(s, i, j, gate_op, cap, f, split);
        max_disc = std::max(max_disc, rep.discarded_weight);
      }
    }
    if (i + 1 < m) {
      detail::absorb(top.mps, detail::peps_row(s, i, true), params,
                     top.discarded_bond, top.discarded_phys);
      top.last = i;
    }
  }
  return max_disc;
}

}  // namespace detail

// Run the full schedule. Deterministic: no randomness is consumed.
inline std::pair<PepsState, Trajectory> run_evolution(
    const PepsState& initial, const HeisenbergModel& model,
    const TrotterSchedule& schedule, const EvolutionOptions& opts) {
  schedule.validate();
  PepsState s = rescale_uniform(initial);
  Trajectory traj;
  long global_step = 0;
  double tau = 0;
  double max_disc_interval = 0;
  const auto t0 = std::chrono::steady_clock::now();

  auto record = [&](std::size_t d_eff) {
    const std::size_t d_cut =
        opts.energy_d_cut ? opts.energy_d_cut
                          : 4 * std::max<std::size_t>(1, d_eff) *
                                std::max<std::size_t>(1, d_eff);
    EnergyEstimate e =
        expect_energy_dl(s, model, d_cut, opts.compress_mode);
    TrajectoryRecord r;
    r.step = global_step;
    r.tau = tau;
    r.energy = e.energy;
    r.scale_exponent = s.scale_ledger;
    r.max_discarded = max_disc_interval;
    r.wall_ms = std::chrono::duration<double, std::milli>(
                    std::chrono::steady_clock::now() - t0)
                    .count();
    max_disc_interval = 0;
    traj.push_back(r);
    if (opts.observer) opts.observer(r, s);
    return e.energy;
  };

  const auto substeps = detail::second_order_substeps();
  for (std::size_t phase_idx = 0; phase_idx < schedule.phases.size();
       ++phase_idx) {
    const PhaseConfig& ph = schedule.phases[phase_idx];
    const bool last_phase = phase_idx + 1 == schedule.phases.size();
    EnvParams params;
    params.max_bond = ph.env_bond;
    params.max_phys = ph.env_phys;
    params.mode = opts.compress_mode;

    Tensor h = heisenberg_pair_term(model.coupling);
    std::map<double, Tensor> gate_cache;
    auto gate_for = [&](double w) -> const Tensor& {
      auto it = gate_cache.find(w);
      if (it == gate_cache.end())
        it = gate_cache.emplace(w, pair_exponential(h, w * ph.dt)).first;
      return it->second;
    };

    double prev_energy = 0;
    bool have_prev = false;
    double prev_tau = 0;
    for (long step = 0; step < ph.steps; ++step) {
      for (const auto& sub : substeps) {
        const Tensor& g = gate_for(sub.weight);
        if (sub.horizontal) {
          const double d = detail::sweep_horizontal_group(
              s, g, sub.parity, ph.bond_cap, params, opts.split);
          max_disc_interval = std::max(max_disc_interval, d);
        } else {
          PepsState t = transposed(s);
          const double d = detail::sweep_horizontal_group(
              t, g, sub.parity, ph.bond_cap, params, opts.split);
          max_disc_interval = std::max(max_disc_interval, d);
          s = transposed(t);
        }
      }
      ++global_step;
      tau += ph.dt;
      const bool record_now = opts.energy_every > 0 &&
                              (global_step % opts.energy_every == 0 ||
                               step + 1 == ph.steps);
      if (record_now) {
        const double e = record(ph.bond_cap);
        if (!last_phase && opts.anneal_threshold > 0 && have_prev &&
            tau > prev_tau) {
          const double rate =
              (prev_energy - e) / (std::abs(e) * (tau - prev_tau) + 1e-300);
          if (rate < opts.anneal_threshold) break;
        }
        prev_energy = e;
        prev_tau = tau;
        have_prev = true;
      }
    }
  }
  if (traj.empty() && opts.energy_every > 0 && global_step == 0) {
    // Zero-step run: an empty trajectory by contract.
  }
  return {std::move(s), std::move(traj)};
}

}  // namespace slpeps

#endif  // SLPEPS_EVOLUTION_HPP
