#include "doctest.h"

#include <cmath>

#include "slpeps/mps.hpp"
#include "slpeps/random.hpp"

#include "oracle_helpers.hpp"

using namespace slpeps;

namespace {

Mps random_mps(const std::vector<std::size_t>& phys,
               const std::vector<std::size_t>& vdims,
               const std::vector<std::size_t>& bonds, Rng& rng) {
  Mps m;
  const std::size_t L = phys.size();
  for (std::size_t j = 0; j < L; ++j) {
    const std::size_t l = (j == 0) ? 1 : bonds[j - 1];
    const std::size_t r = (j + 1 == L) ? 1 : bonds[j];
    m.sites.push_back(random_tensor({l, phys[j], vdims[j], r}, rng));
  }
  return m;
}

Mps ghz4() {
  Mps m;
  Tensor first({1, 2, 1, 2});
  first.at({0, 0, 0, 0}) = 1;
  first.at({0, 1, 0, 1}) = 1;
  Tensor mid({2, 2, 1, 2});
  mid.at({0, 0, 0, 0}) = 1;
  mid.at({1, 1, 0, 1}) = 1;
  Tensor last({2, 2, 1, 1});
  last.at({0, 0, 0, 0}) = 1;
  last.at({1, 1, 0, 0}) = 1;
  m.sites = {first, mid, mid, last};
  return m;
}

Mps singlet() {
  const double inv = 1.0 / std::sqrt(2.0);
  Mps m;
  Tensor a({1, 2, 1, 2});
  a.at({0, 0, 0, 0}) = inv;
  a.at({0, 1, 0, 1}) = inv;
  Tensor b({2, 2, 1, 1});
  b.at({0, 1, 0, 0}) = 1;
  b.at({1, 0, 0, 0}) = -1;
  m.sites = {a, b};
  return m;
}

double state_fidelity(const Mps& a, const Mps& b) {
  const ScaledC ov = overlap(a, b);
  return std::exp(ov.abs2_log() - log_norm2(a) - log_norm2(b));
}

}  // namespace

TEST_SUITE_BEGIN("mps");

TEST_CASE("overlap matches dense contraction") {
  Rng rng(41);
  Mps a = random_mps({2, 2, 2}, {1, 2, 1}, {3, 2}, rng);
  Mps b = random_mps({2, 2, 2}, {1, 2, 1}, {2, 4}, rng);
  Tensor da = mps_dense(a), db = mps_dense(b);
  cplx direct(0);
  for (std::size_t i = 0; i < da.size(); ++i)
    direct += std::conj(da[i]) * db[i];
  const cplx got = overlap(a, b).value();
  CHECK(std::abs(got - direct) < 1e-12 * std::abs(direct));
}

TEST_CASE("merge_external merges two product rows") {
  // All bonds 1, physical 2: merged external axis has length 2*2*1 = 4.
  Mps a;
  Tensor sa({1, 2, 1, 1});
  sa.at({0, 0, 0, 0}) = 1;
  sa.at({0, 1, 0, 0}) = 0.5;
  a.sites = {sa, sa, sa};
  // Row sites (cl, p, fi, fo, cr), facing bond of length 1.
  Tensor rb({1, 2, 1, 1, 1});
  rb.at({0, 0, 0, 0, 0}) = 0.25;
  rb.at({0, 1, 0, 0, 0}) = -1;
  MpsRow row = {rb, rb, rb};
  Mps merged = merge_external(a, row);
  for (const auto& s : merged.sites) {
    CHECK(s.dim(0) == 1);
    CHECK(s.dim(1) == 4);
    CHECK(s.dim(3) == 1);
  }
}

TEST_CASE("merge_external matches the direct two-row contraction") {
  Rng rng(43);
  const std::size_t n = 3, D = 2;
  // Upper row as an MPS with dangling bonds of size D.
  Mps a = random_mps({2, 2, 2}, {D, D, D}, {D, D}, rng);
  // Lower row with facing bonds of size D and new dangling bonds of size D.
  MpsRow row;
  for (std::size_t j = 0; j < n; ++j)
    row.push_back(random_tensor(
        {j == 0 ? 1 : D, 2, D, D, j + 1 == n ? std::size_t(1) : D}, rng));

  Mps merged = merge_external(a, row);
  Tensor got = mps_dense(merged);

  // Direct: contract the dense forms of the two rows over the facing bonds.
  Tensor da = mps_dense(a).reshaped({2, D, 2, D, 2, D});  // (p,v) per site
  Mps rowmps;
  for (auto& t : row) {
    auto sh = t.shape();
    rowmps.sites.push_back(
        t.reshaped({sh[0], sh[1] * sh[2] * sh[3], 1, sh[4]}));
  }
  Tensor db = mps_dense(rowmps).reshaped({2, D, D, 2, D, D, 2, D, D});
  Tensor direct = contract(da, db, {{1, 1}, {3, 4}, {5, 7}});
  // direct axes: (p1,p2,p3, q1,f1, q2,f2, q3,f3) -> (p1,q1,f1, ...)
  direct = direct.permuted({0, 3, 4, 1, 5, 6, 2, 7, 8});
  Tensor want = std::move(direct).reshaped({2 * 2 * D, 2 * 2 * D, 2 * 2 * D});
  CHECK(oracle::max_abs_diff(got, want) < 1e-12 * want.norm());
}

TEST_CASE("merge_external rejects mismatched facing bonds") {
  Mps a;
  a.sites = {Tensor({1, 2, 2, 1})};
  MpsRow row = {Tensor({1, 2, 3, 1, 1})};
  CHECK_THROWS_AS(merge_external(a, row), DimensionError);
}

TEST_CASE("compress without truncation is exact") {
  Rng rng(47);
  Mps a = random_mps({2, 2, 2, 2}, {1, 1, 1, 1}, {2, 4, 2}, rng);
  CompressResult r = compress_bonds(a, 4, CompressMode::SvdSweep);
  CHECK(r.fidelity == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(r.mps.max_bond() <= 4);
}

TEST_CASE("GHZ state compressed to bond 1 has fidelity one half") {
  Mps g = ghz4();
  CompressResult r = compress_bonds(g, 1, CompressMode::SvdSweep);
  CHECK(r.fidelity == doctest::Approx(0.5).epsilon(1e-10));
  CompressResult rv = compress_bonds(g, 1, CompressMode::Variational);
  CHECK(rv.fidelity == doctest::Approx(0.5).epsilon(1e-10));
}

TEST_CASE("variational compression does at least as well as the svd sweep") {
  Rng rng(53);
  Mps a = random_mps({2, 2, 2, 2, 2, 2}, {1, 1, 1, 1, 1, 1},
                     {8, 8, 8, 8, 8}, rng);
  CompressResult s = compress_bonds(a, 4, CompressMode::SvdSweep);
  CompressResult v = compress_bonds(a, 4, CompressMode::Variational);
  CHECK(v.fidelity >= s.fidelity - 1e-12);
  CHECK(v.mps.max_bond() <= 4);
  // The compressed state is genuinely close.
  CHECK(state_fidelity(v.mps, a) == doctest::Approx(v.fidelity).epsilon(1e-8));
}

TEST_CASE("compress rejects zero-norm states") {
  Mps z;
  z.sites = {Tensor({1, 2, 1, 2}), Tensor({2, 2, 1, 1})};
  CHECK_THROWS_AS(compress_bonds(z, 2), DegenerateStateError);
}

TEST_CASE("equilibrate: product state has unit bond weights") {
  Rng rng(59);
  Mps p;
  p.sites = {random_tensor({1, 2, 1, 1}, rng), random_tensor({1, 2, 1, 1}, rng),
             random_tensor({1, 2, 1, 1}, rng)};
  Mps e = equilibrate(p);
  for (const auto& w : e.weights) {
    REQUIRE(w.size() == 1);
    CHECK(w[0] == doctest::Approx(1.0).epsilon(1e-12));
  }
  // State unchanged.
  CHECK(state_fidelity(e, p) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("equilibrate: singlet bond weights are 1/sqrt(2)") {
  Mps e = equilibrate(singlet());
  REQUIRE(e.weights.size() == 1);
  REQUIRE(e.weights[0].size() == 2);
  CHECK(e.weights[0][0] == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-12));
  CHECK(e.weights[0][1] == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-12));
}

TEST_CASE("equilibrate: isometry residuals on a random MPS") {
  Rng rng(61);
  Mps a = random_mps({2, 2, 2, 2, 2}, {1, 2, 1, 2, 1}, {3, 4, 4, 3}, rng);
  Mps e = equilibrate(a);
  const std::size_t L = e.length();
  for (std::size_t j = 0; j < L; ++j) {
    // Right-canonical plain site.
    Tensor rr = contract(e.sites[j], e.sites[j].conjugated(),
                         {{1, 1}, {2, 2}, {3, 3}});
    CHECK(oracle::max_abs_diff(rr, identity_matrix(rr.dim(0))) < 1e-10);
    // Left form: lambda_{j-1} B_j / lambda_j.
    Tensor lf = e.sites[j];
    if (j > 0) lf = scale_axis(lf, 0, e.weights[j - 1]);
    if (j + 1 < L) {
      std::vector<double> inv(e.weights[j].size());
      for (std::size_t i = 0; i < inv.size(); ++i) inv[i] = 1.0 / e.weights[j][i];
      lf = scale_axis(lf, 3, inv);
    }
    Tensor ll = contract(lf.conjugated(), lf, {{0, 0}, {1, 1}, {2, 2}});
    CHECK(oracle::max_abs_diff(ll, identity_matrix(ll.dim(0))) < 1e-10);
  }
  // State preserved.
  CHECK(state_fidelity(e, a) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("equilibrate is idempotent up to gauge") {
  Rng rng(67);
  Mps a = random_mps({2, 2, 2, 2}, {1, 1, 1, 1}, {3, 4, 3}, rng);
  Mps e1 = equilibrate(a);
  Mps e2 = equilibrate(e1);
  REQUIRE(e1.weights.size() == e2.weights.size());
  for (std::size_t j = 0; j < e1.weights.size(); ++j) {
    REQUIRE(e1.weights[j].size() == e2.weights[j].size());
    for (std::size_t i = 0; i < e1.weights[j].size(); ++i)
      CHECK(e1.weights[j][i] == doctest::Approx(e2.weights[j][i]).epsilon(1e-10));
  }
}

TEST_CASE("equilibrate rejects zero-norm states") {
  Mps z;
  z.sites = {Tensor({1, 2, 1, 1})};
  CHECK_THROWS_AS(equilibrate(z), DegenerateStateError);
}

TEST_CASE("truncate_physical: keep >= merged axis is exact") {
  Rng rng(71);
  Mps a = random_mps({4, 4, 4}, {1, 2, 1}, {3, 3}, rng);
  Mps e = equilibrate(a);
  PhysTruncation t = truncate_physical(e, 1, 8);
  CHECK(t.discarded_weight == doctest::Approx(0.0));
  // State unchanged up to the gauge on the physical axis: undo it with the
  // returned isometry.
  Mps emb = t.mps;
  emb.sites[1] = contract(emb.sites[1], t.isometry, {{1, 1}}).permuted({0, 3, 1, 2});
  CHECK(state_fidelity(emb, a) == doctest::Approx(1.0).epsilon(1e-10));
  // Isometry maps old physical axis to the kept one.
  Tensor iti = contract(t.isometry.conjugated(), t.isometry, {{0, 0}});
  CHECK(oracle::max_abs_diff(iti, identity_matrix(iti.dim(0))) < 1e-10);
}

TEST_CASE("truncate_physical: rank-1 physical axis is exact at keep=1") {
  Rng rng(73);
  // Product structure across p: site = outer(phys vector, bond tensor).
  Mps a;
  for (std::size_t j = 0; j < 3; ++j) {
    const std::size_t l = j == 0 ? 1 : 2, r = j == 2 ? 1 : 2;
    Tensor bondpart = random_tensor({l, 1, 1, r}, rng);
    Tensor site({l, 4, 1, r});
    std::vector<cplx> pvec(4);
    for (auto& v : pvec) v = rng.gaussian();
    for (std::size_t li = 0; li < l; ++li)
      for (std::size_t p = 0; p < 4; ++p)
        for (std::size_t ri = 0; ri < r; ++ri)
          site.at({li, p, 0, ri}) = pvec[p] * bondpart.at({li, 0, 0, ri});
    a.sites.push_back(site);
  }
  Mps e = equilibrate(a);
  PhysTruncation t = truncate_physical(e, 1, 1);
  CHECK(t.discarded_weight < 1e-20);
  CHECK(t.mps.sites[1].dim(1) == 1);
  Mps emb = t.mps;
  emb.sites[1] = contract(emb.sites[1], t.isometry, {{1, 1}}).permuted({0, 3, 1, 2});
  CHECK(state_fidelity(emb, a) == doctest::Approx(1.0).epsilon(1e-10));
}

TEST_CASE("truncate_physical matches the state-vector fidelity") {
  Rng rng(79);
  Mps a = random_mps({4, 4, 4, 4}, {1, 1, 1, 1}, {3, 4, 3}, rng);
  Mps e = equilibrate(a);
  PhysTruncation t = truncate_physical(e, 2, 2);
  CHECK(t.mps.sites[2].dim(1) == 2);
  // Embed the truncated site back into the original physical space via the
  // returned isometry, then compare dense vectors.
  Mps emb = t.mps;
  Tensor site = contract(emb.sites[2], t.isometry, {{1, 1}});  // (l,v,r,p_old)
  emb.sites[2] = site.permuted({0, 3, 1, 2});
  Tensor da = mps_dense(a), dt = mps_dense(emb);
  cplx ov(0);
  double n2a = 0, n2t = 0;
  for (std::size_t i = 0; i < da.size(); ++i) {
    ov += std::conj(dt[i]) * da[i];
    n2a += std::norm(da[i]);
    n2t += std::norm(dt[i]);
  }
  const double dense_fid = std::norm(ov) / (n2a * n2t);
  // Fidelity predicted by the local truncation: 1 - discarded weight, up to
  // the quasi-optimality of the equilibrated-form shortcut.
  CHECK(dense_fid == doctest::Approx(1.0 - t.discarded_weight).epsilon(1e-10));
  CHECK(state_fidelity(emb, a) == doctest::Approx(dense_fid).epsilon(1e-10));
}

TEST_CASE("truncate_physical requires equilibrated form") {
  Rng rng(83);
  Mps a = random_mps({2, 2}, {1, 1}, {2}, rng);
  CHECK_THROWS_AS(truncate_physical(a, 0, 1), PreconditionError);
}

TEST_SUITE_END();
