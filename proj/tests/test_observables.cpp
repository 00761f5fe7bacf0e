#include "doctest.h"

#include <cmath>

#include "slpeps/exact.hpp"
#include "slpeps/observables.hpp"

using namespace slpeps;

namespace {

PepsState singlet_1x2() {
  PepsState s;
  s.rows = 1;
  s.cols = 2;
  s.phys = 2;
  const double inv = 1.0 / std::sqrt(2.0);
  Tensor a({2, 1, 2, 1, 1});
  a.at({0, 0, 0, 0, 0}) = inv;
  a.at({1, 0, 1, 0, 0}) = inv;
  Tensor b({2, 2, 1, 1, 1});
  b.at({0, 1, 0, 0, 0}) = 1;
  b.at({1, 0, 0, 0, 0}) = -1;
  s.sites = {a, b};
  return s;
}

}  // namespace

TEST_SUITE_BEGIN("observables");

TEST_CASE("Neel energy equals minus the bond count") {
  for (auto [m, n, bonds] : {std::tuple{2, 2, 4}, {2, 3, 7}, {4, 4, 24}}) {
    PepsState s = init_neel(m, n);
    EnergyEstimate e = expect_energy_dl(s, HeisenbergModel{}, 8);
    CHECK(e.energy == doctest::Approx(-double(bonds)).epsilon(1e-10));
    CHECK(e.max_imag_ratio < 1e-8);
  }
}

TEST_CASE("singlet pair energy is -3 in Pauli convention") {
  EnergyEstimate e = expect_energy_dl(singlet_1x2(), HeisenbergModel{}, 4);
  CHECK(e.energy == doctest::Approx(-3.0).epsilon(1e-10));
}

TEST_CASE("double-layer energy matches the dense oracle on 3x3") {
  PepsState s = init_random(3, 3, 2, 51);
  EnergyEstimate e = expect_energy_dl(s, HeisenbergModel{}, 64);
  DenseState d = peps_to_dense(s);
  CHECK(e.energy == doctest::Approx(dense_energy(d)).epsilon(1e-8));
  // Norm estimate agrees too.
  double n2 = 0;
  for (std::size_t i = 0; i < d.size(); ++i) n2 += std::norm(d[i]);
  CHECK(e.log_norm2 == doctest::Approx(std::log(n2)).epsilon(1e-8));
}

TEST_CASE("staggered magnetization of the Neel state is one") {
  PepsState s = init_neel(3, 4);
  CHECK(staggered_magnetization_dl(s, 4) == doctest::Approx(1.0).epsilon(1e-10));
}

TEST_CASE("amplitude of a product state factorizes") {
  PepsState s = init_neel(2, 3);
  SpinConfig neel = {0, 1, 0, 1, 0, 1};
  CHECK(std::abs(amplitude(s, neel, 4) - cplx(1)) < 1e-12);
  SpinConfig other = neel;
  other[0] = 1;  // orthogonal configuration
  CHECK(std::abs(amplitude(s, other, 4)) < 1e-12);
}

TEST_CASE("amplitudes match the dense oracle and are complete on 3x3") {
  PepsState s = init_random(3, 3, 2, 53);
  DenseState d = peps_to_dense(s);
  double sum2 = 0, n2 = 0;
  double worst = 0;
  for (std::size_t idx = 0; idx < d.size(); ++idx) {
    SpinConfig cfg(9);
    for (int k = 0; k < 9; ++k) cfg[k] = (idx >> (8 - k)) & 1u;
    const cplx a = amplitude(s, cfg, 16);
    worst = std::max(worst, std::abs(a - d[idx]));
    sum2 += std::norm(a);
    n2 += std::norm(d[idx]);
  }
  CHECK(worst < 1e-10 * std::sqrt(n2));
  CHECK(sum2 == doctest::Approx(n2).epsilon(1e-8));
}

TEST_CASE("metropolis on the Neel product state has zero variance") {
  PepsState s = init_neel(2, 2);
  SampleStats st = metropolis_energy(s, HeisenbergModel{}, 50, 10, 77, true, 4);
  CHECK(st.energy == doctest::Approx(-4.0).epsilon(1e-12));
  CHECK(st.stderr_ == doctest::Approx(0.0));
  CHECK(st.acceptance == doctest::Approx(0.0));
}

TEST_CASE("metropolis on all-up without projection gives +bond count") {
  PepsState s = init_neel(2, 2);
  // Rebuild as all-up.
  for (auto& t : s.sites) {
    t = Tensor({2, 1, 1, 1, 1});
    t[0] = cplx(1);
  }
  SampleStats st =
      metropolis_energy(s, HeisenbergModel{}, 50, 10, 78, false, 4);
  CHECK(st.energy == doctest::Approx(4.0).epsilon(1e-12));
  CHECK(st.stderr_ == doctest::Approx(0.0));
}

TEST_CASE("metropolis visits only Sz=0 configurations when projecting") {
  PepsState s = init_random(2, 2, 2, 57);
  bool all_balanced = true;
  SampleStats st = metropolis_energy(
      s, HeisenbergModel{}, 200, 20, 79, true, 8, CompressMode::SvdSweep,
      [&](const SpinConfig& cfg) {
        int sz = 0;
        for (auto c : cfg) sz += c == 0 ? 1 : -1;
        if (sz != 0) all_balanced = false;
      });
  CHECK(all_balanced);
  CHECK(st.samples == 200);
}

TEST_CASE("metropolis agrees with the exact projected energy on 2x2") {
  // A correlated Sz-symmetric state: short imaginary-time evolution would do,
  // but an explicit superposition keeps this test self-contained.
  PepsState s = init_random(2, 2, 2, 59);
  DenseState d = peps_to_dense(s);
  // Exact energy of the Sz=0 projected state.
  Tensor proj = d.amps;
  for (std::size_t idx = 0; idx < proj.size(); ++idx) {
    int sz = 0;
    for (int k = 0; k < 4; ++k) sz += ((idx >> (3 - k)) & 1u) ? -1 : 1;
    if (sz != 0) proj[idx] = 0;
  }
  DenseState dp{2, 2, proj, 0.0};
  const double exact = dense_energy(dp);
  int within = 0;
  const int nseeds = 30;
  for (int seed = 0; seed < nseeds; ++seed) {
    SampleStats st = metropolis_energy(s, HeisenbergModel{}, 400, 50,
                                       1000 + seed, true, 8);
    const double sigma = std::max(st.stderr_, 1e-12);
    if (std::abs(st.energy - exact) <= 3 * sigma) ++within;
  }
  CHECK(within >= 28);  // 3-sigma coverage over 30 seeded repetitions
}

TEST_SUITE_END();
