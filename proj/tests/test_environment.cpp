#include "doctest.h"

#include "slpeps/environment.hpp"
#include "slpeps/exact.hpp"
#include "slpeps/peps.hpp"

#include "oracle_helpers.hpp"

using namespace slpeps;

namespace {

EnvParams exact_params() {
  EnvParams p;
  p.max_bond = 1 << 20;
  p.max_phys = 1 << 20;
  return p;
}

// Relative Frobenius distance between the scaled norm operator and the
// oracle Gram matrix.
double gram_mismatch(const NormOperator& n, const Tensor& oracle_gram) {
  const double scale = std::exp(n.log_scale);
  double num = 0, den = 0;
  for (std::size_t i = 0; i < oracle_gram.size(); ++i) {
    num += std::norm(n.matrix[i] * scale - oracle_gram[i]);
    den += std::norm(oracle_gram[i]);
  }
  return std::sqrt(num / den);
}

}  // namespace

TEST_SUITE_BEGIN("environment");

TEST_CASE("boundary of a product state stays trivial") {
  PepsState s = init_random(3, 3, 1, 5);
  EnvParams p;
  p.max_bond = 4;
  p.max_phys = 4;
  BoundaryMps b = contract_from_edge(s, Edge::Top, 0, p);
  CHECK(b.mps.max_bond() == 1);
  CHECK(b.mps.max_phys() <= 2);
  for (int j = 0; j < 3; ++j)
    CHECK(b.mps.sites[j].dim(2) == s.at(1, j).dim(3));  // dangler matches u
}

TEST_CASE("boundary caps and dangling bonds on a D=2 lattice") {
  PepsState s = init_random(4, 4, 2, 9);
  EnvParams p;
  p.max_bond = 3;
  p.max_phys = 2;
  BoundaryMps b = contract_from_edge(s, Edge::Top, 1, p);
  CHECK(b.first == 0);
  CHECK(b.last == 1);
  CHECK(b.mps.max_bond() <= 3);
  CHECK(b.mps.max_phys() <= 2);
  for (int j = 0; j < 4; ++j)
    CHECK(b.mps.sites[j].dim(2) == s.at(2, j).dim(3));
  BoundaryMps bb = contract_from_edge(s, Edge::Bottom, 2, p);
  CHECK(bb.first == 2);
  CHECK(bb.last == 3);
  for (int j = 0; j < 4; ++j)
    CHECK(bb.mps.sites[j].dim(2) == s.at(1, j).dim(4));
  // Left edge goes through the transposed lattice.
  BoundaryMps bl = contract_from_edge(s, Edge::Left, 0, p);
  CHECK(bl.direction == Edge::Left);
  CHECK(bl.mps.length() == 4);
}

TEST_CASE("contract_from_edge validates parameters") {
  PepsState s = init_random(3, 3, 2, 10);
  EnvParams bad;
  bad.max_bond = 0;
  CHECK_THROWS_AS(contract_from_edge(s, Edge::Top, 0, bad), ParameterError);
  EnvParams p;
  CHECK_THROWS_AS(contract_from_edge(s, Edge::Top, 2, p), ParameterError);
  CHECK_THROWS_AS(contract_from_edge(s, Edge::Bottom, 0, p), ParameterError);
}

TEST_CASE("norm operator is exact at untruncating settings on 3x3") {
  PepsState s = init_random(3, 3, 2, 11);
  EnvParams p = exact_params();
  for (auto [row, col] : {std::pair{1, 0}, {1, 1}, {0, 0}, {2, 1}}) {
    BoundaryMps top = row > 0 ? contract_from_edge(s, Edge::Top, row - 1, p)
                              : trivial_boundary(3, Edge::Top);
    BoundaryMps bot = row < 2 ? contract_from_edge(s, Edge::Bottom, row + 1, p)
                              : trivial_boundary(3, Edge::Bottom);
    EffectiveFrame f = build_frame(s, top, bot, row, col, p);
    NormOperator n = build_norm_operator(f);
    Tensor oracle = exact_environment_gram(s, row, col);
    REQUIRE(n.matrix.shape() == oracle.shape());
    CHECK(gram_mismatch(n, oracle) < 1e-10);
  }
}

TEST_CASE("norm operator of a D=1 product state is a positive scalar") {
  PepsState s = init_random(3, 3, 1, 13);
  EnvParams p = exact_params();
  BoundaryMps top = contract_from_edge(s, Edge::Top, 0, p);
  BoundaryMps bot = contract_from_edge(s, Edge::Bottom, 2, p);
  EffectiveFrame f = build_frame(s, top, bot, 1, 0, p);
  NormOperator n = build_norm_operator(f);
  CHECK(n.matrix.size() == 1);
  CHECK(n.matrix[0].real() > 0);
  CHECK(std::abs(n.matrix[0].imag()) < 1e-12 * n.matrix[0].real());
}

TEST_CASE("norm operator is Hermitian and near-PSD") {
  PepsState s = init_random(3, 3, 2, 17);
  EnvParams p;
  p.max_bond = 4;
  p.max_phys = 4;
  BoundaryMps top = contract_from_edge(s, Edge::Top, 0, p);
  BoundaryMps bot = contract_from_edge(s, Edge::Bottom, 2, p);
  EffectiveFrame f = build_frame(s, top, bot, 1, 0, p);
  NormOperator n = build_norm_operator(f);
  const std::size_t d = n.matrix.dim(0);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j)
      CHECK(std::abs(n.matrix[i * d + j] - std::conj(n.matrix[j * d + i])) <
            1e-12);
  EighResult ev = eigh(n.matrix);
  CHECK(ev.values.front() >= -1e-10 * std::max(1.0, ev.values.back()));
}

TEST_CASE("norm operator capacity cap") {
  PepsState s = init_random(3, 3, 2, 19);
  EnvParams p = exact_params();
  BoundaryMps top = contract_from_edge(s, Edge::Top, 0, p);
  BoundaryMps bot = contract_from_edge(s, Edge::Bottom, 2, p);
  EffectiveFrame f = build_frame(s, top, bot, 1, 0, p);
  CHECK_THROWS_AS(build_norm_operator(f, 4), CapacityError);
}

TEST_CASE("frame dangling bonds match the pair on 3x4") {
  PepsState s = init_random(3, 4, 2, 23);
  EnvParams p;
  p.max_bond = 4;
  p.max_phys = 4;
  BoundaryMps top = contract_from_edge(s, Edge::Top, 0, p);
  BoundaryMps bot = contract_from_edge(s, Edge::Bottom, 2, p);
  EffectiveFrame f = build_frame(s, top, bot, 1, 1, p);
  CHECK(f.left.dim(3) == s.at(1, 1).dim(1));
  CHECK(f.right.dim(3) == s.at(1, 2).dim(2));
  CHECK(f.up_left.dim(3) == s.at(1, 1).dim(3));
  CHECK(f.down_right.dim(3) == s.at(1, 2).dim(4));
  // Ring bonds are consistent between the six tensors.
  CHECK(f.up_left.dim(1) == f.left.dim(1));
  CHECK(f.up_left.dim(2) == f.up_right.dim(1));
  CHECK(f.up_right.dim(2) == f.right.dim(1));
  CHECK(f.left.dim(2) == f.down_left.dim(1));
  CHECK(f.down_left.dim(2) == f.down_right.dim(1));
  CHECK(f.down_right.dim(2) == f.right.dim(2));
}

TEST_CASE("self-contraction split is exact for trivial ring bonds") {
  PepsState s = init_random(3, 3, 1, 29);
  EnvParams p = exact_params();
  BoundaryMps top = contract_from_edge(s, Edge::Top, 0, p);
  BoundaryMps bot = contract_from_edge(s, Edge::Bottom, 2, p);
  EffectiveFrame f = build_frame(s, top, bot, 1, 0, p);
  // D=1 product state: ring closure bonds have length 1.
  CHECK(f.up_left.dim(2) == 1);
  CHECK(f.down_left.dim(2) == 1);
  SplitEnvironment self = split_environment(f, SplitMethod::SelfContraction);
  SplitEnvironment svds = split_environment(f, SplitMethod::SvdSplit);
  // Both give the same left Gram matrix (rank-1 equivalent up to scale).
  auto gram = [](const Tensor& t) {
    std::size_t cols = t.size() / t.dim(0);
    Tensor m = Tensor(t).reshaped({t.dim(0), cols});
    return contract(m.conjugated(), m, {{0, 0}});
  };
  Tensor g1 = gram(self.left), g2 = gram(svds.left);
  CHECK(oracle::max_abs_diff(g1, g2) < 1e-12 * (1 + g1.norm()));
}

TEST_CASE("svd-split preserves the half-ring gram matrix") {
  PepsState s = init_random(3, 3, 2, 31);
  EnvParams p;
  p.max_bond = 4;
  p.max_phys = 4;
  BoundaryMps top = contract_from_edge(s, Edge::Top, 0, p);
  BoundaryMps bot = contract_from_edge(s, Edge::Bottom, 2, p);
  EffectiveFrame f = build_frame(s, top, bot, 1, 1, p);
  SplitEnvironment sp = split_environment(f, SplitMethod::SvdSplit);
  // Gram of the split left environment equals the gamma-summed Gram of the
  // full left half: the staged SVD is an orthogonal row transform.
  Tensor lh = Tensor(f.up_left);
  {
    Tensor t = contract(f.up_left, f.left, {{1, 1}});
    t = contract(t, f.down_left, {{4, 1}});
    t = t.permuted({0, 3, 5, 1, 6, 2, 4, 7});
    const auto& sh = t.shape();
    lh = std::move(t).reshaped(
        {sh[0] * sh[1] * sh[2] * sh[3] * sh[4], sh[5] * sh[6] * sh[7]});
  }
  Tensor g_full = contract(lh.conjugated(), lh, {{0, 0}});
  std::size_t cols = sp.left.size() / sp.left.dim(0);
  Tensor lm = Tensor(sp.left).reshaped({sp.left.dim(0), cols});
  Tensor g_split = contract(lm.conjugated(), lm, {{0, 0}});
  REQUIRE(g_full.shape() == g_split.shape());
  CHECK(oracle::max_abs_diff(g_full, g_split) < 1e-10 * (1 + g_full.norm()));
}

TEST_CASE("discarded weight does not increase with larger caps") {
  PepsState s = init_random(4, 4, 2, 37);
  auto run = [&](std::size_t cap) {
    EnvParams p;
    p.max_bond = cap;
    p.max_phys = cap;
    BoundaryMps b = contract_from_edge(s, Edge::Top, 2, p);
    return b.discarded_phys + b.discarded_bond;
  };
  const double d2 = run(2), d4 = run(4), d8 = run(8);
  CHECK(d2 > 0);
  CHECK(d4 <= d2 + 1e-12);
  CHECK(d8 <= d4 + 1e-12);
}

TEST_SUITE_END();
