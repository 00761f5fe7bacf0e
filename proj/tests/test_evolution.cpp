#include "doctest.h"

#include <cmath>

#include "slpeps/evolution.hpp"
#include "slpeps/exact.hpp"

using namespace slpeps;

namespace {

double dense_fidelity(const DenseState& a, const DenseState& b) {
  cplx ov(0);
  double n2a = 0, n2b = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ov += std::conj(a[i]) * b[i];
    n2a += std::norm(a[i]);
    n2b += std::norm(b[i]);
  }
  return std::norm(ov) / (n2a * n2b);
}

EnvParams env(std::size_t cap) {
  EnvParams p;
  p.max_bond = cap;
  p.max_phys = cap;
  return p;
}

TwoSiteGate heisenberg_gate(double dt, bool horizontal, int i, int j) {
  TwoSiteGate g;
  g.op = pair_exponential(heisenberg_pair_term(), dt);
  g.horizontal = horizontal;
  g.i = i;
  g.j = j;
  return g;
}

}  // namespace

TEST_SUITE_BEGIN("evolution");

TEST_CASE("slte with identity gate preserves the state") {
  PepsState s = init_random(2, 3, 2, 61);
  TwoSiteGate g{identity_matrix(4).reshaped({2, 2, 2, 2}), true, 1, 1};
  auto [t, rep] = slte_update_pair(s, g, 2, env(16));
  CHECK(dense_fidelity(peps_to_dense(s), peps_to_dense(t)) >= 1.0 - 1e-10);
  CHECK(rep.fidelity >= 1.0 - 1e-12);
  CHECK(rep.fidelity <= 1.0 + 1e-9);
}

TEST_CASE("slte on a product state applies the gate exactly") {
  PepsState s = init_random(2, 3, 1, 63);
  TwoSiteGate g = heisenberg_gate(0.2, true, 0, 0);
  auto [t, rep] = slte_update_pair(s, g, 4, env(16));
  PepsState grown = apply_gate_grown(s, g);
  CHECK(dense_fidelity(peps_to_dense(grown), peps_to_dense(t)) >=
        1.0 - 1e-10);
  CHECK(rep.discarded_weight < 1e-20);
}

TEST_CASE("slte with a large cap equals exact gate application") {
  PepsState s = init_random(2, 3, 2, 67);
  for (bool horizontal : {true, false}) {
    TwoSiteGate g = heisenberg_gate(0.1, horizontal, 0, horizontal ? 1 : 0);
    auto [t, rep] = slte_update_pair(s, g, 64, env(1 << 20));
    PepsState grown = apply_gate_grown(s, g);
    CHECK(dense_fidelity(peps_to_dense(grown), peps_to_dense(t)) >=
          1.0 - 1e-10);
  }
}

TEST_CASE("slte never grows a bond past the cap") {
  PepsState s = init_random(3, 3, 2, 71);
  TwoSiteGate g = heisenberg_gate(0.05, true, 1, 0);
  auto [t, rep] = slte_update_pair(s, g, 2, env(4));
  CHECK(t.bond_r(1, 0) <= 2);
  CHECK(rep.bond_after <= 2);
  check_bonds(t);
}

TEST_CASE("als with identity gate preserves the state") {
  PepsState s = init_random(2, 3, 2, 73);
  TwoSiteGate g{identity_matrix(4).reshaped({2, 2, 2, 2}), true, 0, 1};
  auto [t, rep] = als_update_pair(s, g, 2, 1e-10, 64);
  CHECK(dense_fidelity(peps_to_dense(s), peps_to_dense(t)) >= 1.0 - 1e-8);
  CHECK(std::abs(rep.als_residual) <
        1e-8 * std::exp(peps_to_dense(s).log_scale * 0 + 1.0) *
            (1.0 + std::abs(rep.als_residual)));
}

TEST_CASE("als on a product state matches slte") {
  PepsState s = init_random(2, 2, 1, 79);
  TwoSiteGate g = heisenberg_gate(0.3, true, 0, 0);
  auto [ta, ra] = als_update_pair(s, g, 4, 1e-12, 16);
  auto [ts, rs] = slte_update_pair(s, g, 4, env(16));
  CHECK(dense_fidelity(peps_to_dense(ta), peps_to_dense(ts)) >= 1.0 - 1e-8);
}

TEST_CASE("als objective is at most the slte objective on the same frame") {
  PepsState s = init_random(3, 3, 2, 83);
  Rng rng(85);
  Tensor op = random_tensor({2, 2, 2, 2}, rng);
  TwoSiteGate g{op, true, 1, 0};

  // Exact (large-cap) double-layer norm operator for the pair.
  NormOperatorDl nop = dl_pair_norm_operator(s, 1, 0, 256);
  Tensor target;
  {
    Tensor blk = detail::pair_block(s.at(1, 0), s.at(1, 1));
    target = contract(g.op, blk, {{2, 0}, {3, 1}});
  }
  const double tnorm = detail::quad_form(nop.matrix, target, 4);
  auto objective_of = [&](const PepsState& st) {
    Tensor blk = detail::pair_block(st.at(1, 0), st.at(1, 1));
    const double self = detail::quad_form(nop.matrix, blk, 4);
    const cplx cross = detail::cross_form(nop.matrix, blk, target, 4);
    return self - 2.0 * cross.real() + tnorm;
  };

  auto [ts, rs] = slte_update_pair(s, g, 2, env(64));
  auto [ta, ra] = als_update_pair(s, g, 2, 1e-12, 256);
  // The updated tensors are rescaled to the common site norm; undo the
  // ledger shift so the objective sees the physical amplitudes.
  auto physical = [](PepsState st, const PepsState& ref) {
    const double shift = st.scale_ledger - ref.scale_ledger;
    // Fold exp(shift) into one of the pair tensors.
    st.at(1, 0) *= cplx(std::exp(shift));
    return st;
  };
  const double obj_slte = objective_of(physical(ts, s));
  const double obj_als = objective_of(physical(ta, s));
  CHECK(obj_als <= obj_slte + 1e-10 * std::max(1.0, tnorm));
}

TEST_CASE("run_evolution with zero steps is the identity") {
  PepsState s = init_neel(2, 2);
  TrotterSchedule sched;
  sched.phases.push_back({0.01, 0, 2, 2, 2});
  EvolutionOptions opts;
  auto [t, traj] = run_evolution(s, HeisenbergModel{}, sched, opts);
  CHECK(traj.empty());
  CHECK(dense_fidelity(peps_to_dense(rescale_uniform(s)), peps_to_dense(t)) >=
        1.0 - 1e-12);
}

TEST_CASE("run_evolution drives 2x2 down in energy and stays stable") {
  // The 2x2 lattice is a 4-ring: the best D=2 energy is -2-4*sqrt(2), well
  // above the exact -8, so the check targets descent and stability rather
  // than the exact ground energy.
  PepsState s = init_neel(2, 2);
  TrotterSchedule sched;
  sched.phases.push_back({0.05, 150, 2, 4, 4});
  EvolutionOptions opts;
  opts.energy_every = 25;
  opts.anneal_threshold = 0;
  opts.split = SplitMethod::SvdSplit;
  auto [t, traj] = run_evolution(s, HeisenbergModel{}, sched, opts);
  REQUIRE(!traj.empty());
  const double e = traj.back().energy;
  CHECK(e < -7.0);
  CHECK(e > -7.66);  // cannot beat the variational bound
  // Stable plateau: late recorded energies never rise above the running
  // minimum by more than 0.1%.
  double running_min = 0;
  for (std::size_t k = traj.size() / 2; k < traj.size(); ++k) {
    running_min = std::min(running_min, traj[k].energy);
    CHECK(traj[k].energy <= running_min + 1e-3 * std::abs(running_min));
  }
}

TEST_CASE("run_evolution is deterministic") {
  PepsState s = init_neel(2, 3);
  TrotterSchedule sched;
  sched.phases.push_back({0.05, 20, 2, 3, 3});
  EvolutionOptions opts;
  opts.energy_every = 5;
  auto [t1, traj1] = run_evolution(s, HeisenbergModel{}, sched, opts);
  auto [t2, traj2] = run_evolution(s, HeisenbergModel{}, sched, opts);
  REQUIRE(traj1.size() == traj2.size());
  for (std::size_t k = 0; k < traj1.size(); ++k) {
    CHECK(traj1[k].energy == traj2[k].energy);
    CHECK(traj1[k].scale_exponent == traj2[k].scale_exponent);
  }
  for (std::size_t k = 0; k < t1.sites.size(); ++k)
    for (std::size_t x = 0; x < t1.sites[k].size(); ++x)
      CHECK(t1.sites[k][x] == t2.sites[k][x]);
}

TEST_SUITE_END();
