// Single-layer environment machinery: boundary-MPS contraction of rows,
// horizontal contraction of the three-row strip around a target row, corner
// absorption into the six-site effective frame, environment splitting, and
// the double-layer norm operator used by the baseline and by verification.
//
// Frame geometry for a horizontal pair (mu, mu'):
//
//        up_left(p,a,b,u) --b-- up_right(p,b,c,u2)
//           |a                        |c
//        left(p,a,g,l)   mu   mu'  right(p,c,h,r)
//           |g                        |h
//        down_left(p,g,w,d) -w- down_right(p,w,h,d2)
//
// The six dangling axes (l,u,u2,d,d2,r) face the two system tensors.

#ifndef SLPEPS_ENVIRONMENT_HPP
#define SLPEPS_ENVIRONMENT_HPP

#include <string>
#include <vector>

#include "slpeps/errors.hpp"
#include "slpeps/mps.hpp"
#include "slpeps/peps.hpp"
#include "slpeps/tensor.hpp"

namespace slpeps {

enum class Edge { Top, Bottom, Left, Right };

// Truncation parameters of the single-layer scheme: virtual cap D-tilde and
// effective physical cap d-tilde.
struct EnvParams {
  std::size_t max_bond = 4;
  std::size_t max_phys = 4;
  CompressMode mode = CompressMode::Variational;

  void validate() const {
    if (max_bond < 1 || max_phys < 1)
      throw ParameterError("environment truncation caps must be >= 1");
  }
};

struct BoundaryMps {
  Mps mps;  // sites (l, p, v, r): p effective physical, v dangling bond
  Edge direction = Edge::Top;
  int first = 0, last = -1;  // summarized row/col range (inclusive)
  double discarded_bond = 0.0;
  double discarded_phys = 0.0;
};

inline Mps trivial_chain(std::size_t n) {
  Mps m;
  for (std::size_t j = 0; j < n; ++j) {
    Tensor t({1, 1, 1, 1});
    t[0] = cplx(1);
    m.sites.push_back(std::move(t));
  }
  return m;
}

namespace detail {

// PEPS row i as a mergeable row (cl, p, fi, fo, cr). For a boundary coming
// from the top the facing bond is u and the new dangler is d; mirrored for
// the bottom.
inline MpsRow peps_row(const PepsState& s, int i, bool from_top) {
  MpsRow row;
  row.reserve(s.cols);
  for (int j = 0; j < s.cols; ++j)
    row.push_back(from_top ? s.at(i, j).permuted({1, 0, 3, 4, 2})
                           : s.at(i, j).permuted({1, 0, 4, 3, 2}));
  return row;
}

// One merge-compress-equilibrate-truncate absorption step.
inline void absorb(Mps& mps, const MpsRow& row, const EnvParams& p,
                   double& discarded_bond, double& discarded_phys) {
  Mps merged = merge_external(mps, row);
  CompressResult c =
      compress_bonds(merged, p.max_bond, p.mode, 20, 1e-10, false);
  discarded_bond += c.discarded_weight;
  Mps e = equilibrate(c.mps);
  for (std::size_t j = 0; j < e.length(); ++j) {
    PhysTruncation t = truncate_physical(e, j, p.max_phys);
    discarded_phys += t.discarded_weight;
    e = std::move(t.mps);
  }
  mps = std::move(e);
}

}  // namespace detail

// Boundary MPS summarizing rows (or columns) from an edge through `upto`
// inclusive. The dangling bonds face the next row/column inward.
inline BoundaryMps contract_from_edge(const PepsState& s, Edge edge, int upto,
                                      const EnvParams& params) {
  params.validate();
  if (edge == Edge::Left || edge == Edge::Right) {
    BoundaryMps b = contract_from_edge(
        transposed(s), edge == Edge::Left ? Edge::Top : Edge::Bottom, upto,
        params);
    b.direction = edge;
    return b;
  }

  BoundaryMps b;
  b.direction = edge;
  b.mps = trivial_chain(s.cols);
  if (edge == Edge::Top) {
    if (upto < 0 || upto > s.rows - 2)
      throw ParameterError("contract_from_edge: upto must be strictly inside");
    b.first = 0;
    b.last = upto;
    for (int i = 0; i <= upto; ++i)
      detail::absorb(b.mps, detail::peps_row(s, i, true), params,
                     b.discarded_bond, b.discarded_phys);
  } else {
    if (upto < 1 || upto > s.rows - 1)
      throw ParameterError("contract_from_edge: upto must be strictly inside");
    b.first = upto;
    b.last = s.rows - 1;
    for (int i = s.rows - 1; i >= upto; --i)
      detail::absorb(b.mps, detail::peps_row(s, i, false), params,
                     b.discarded_bond, b.discarded_phys);
  }
  return b;
}

// A trivial boundary standing in for "no rows on this side"; its danglers
// match the size-1 boundary bonds of the lattice edge.
inline BoundaryMps trivial_boundary(std::size_t n, Edge edge) {
  BoundaryMps b;
  b.direction = edge;
  b.mps = trivial_chain(n);
  return b;
}

// ---------------------------------------------------------------------------
// Strip columns and the effective frame
// ---------------------------------------------------------------------------

struct EffectiveFrame {
  Tensor up_left;     // (p, a, b, u)
  Tensor up_right;    // (p, b, c, u2)
  Tensor left;        // (p, a, g, l)
  Tensor right;       // (p, c, h, r)
  Tensor down_left;   // (p, g, w, d)
  Tensor down_right;  // (p, w, h, d2)
  double log_scale = 0.0;
};

namespace detail {

// Column j of the three-row strip (top boundary site, PEPS site, bottom
// boundary site) as a mergeable 3-site row. facing_left selects which
// horizontal bond faces the block being grown.
inline MpsRow strip_column(const Tensor& top_site, const Tensor& mid,
                           const Tensor& bot_site, bool facing_left) {
  MpsRow col(3);
  // Top boundary site (l,p,v,r): chain runs down through v.
  {
    Tensor t = facing_left ? top_site.permuted({1, 0, 3, 2})
                           : top_site.permuted({1, 3, 0, 2});
    auto sh = t.shape();  // (p, fi, fo, cr=v)
    col[0] = std::move(t).reshaped({1, sh[0], sh[1], sh[2], sh[3]});
  }
  // PEPS site (s,l,r,u,d): chain enters at u, leaves at d.
  col[1] = facing_left ? mid.permuted({3, 0, 1, 2, 4})
                       : mid.permuted({3, 0, 2, 1, 4});
  // Bottom boundary site (l,p,v,r): chain arrives from above through v.
  {
    Tensor t = facing_left ? bot_site.permuted({2, 1, 0, 3})
                           : bot_site.permuted({2, 1, 3, 0});
    auto sh = t.shape();  // (cl=v, p, fi, fo)
    col[2] = std::move(t).reshaped({sh[0], sh[1], sh[2], sh[3], 1});
  }
  return col;
}

// Lossless reduction of an enlarged effective physical axis (axis 0): keep
// the R factor of a QR factorization, dropping the irrelevant unitary.
inline Tensor reduce_phys(const Tensor& t) {
  std::size_t rest = t.size() / t.dim(0);
  if (t.dim(0) <= rest) return t;
  return qr(t, {0}).r;
}

}  // namespace detail

// Incremental frame assembly along one row: the left block grows column by
// column as the pair sweeps rightward (reusing updated tensors), the right
// blocks are built once from the tensors present at construction.
class RowFrameContext {
 public:
  RowFrameContext(const PepsState& state, const BoundaryMps& top,
                  const BoundaryMps& bottom, int row, const EnvParams& params)
      : state_(&state),
        top_(&top),
        bottom_(&bottom),
        row_(row),
        params_(params) {
    params_.validate();
    const int n = state.cols;
    if (static_cast<int>(top.mps.length()) != n ||
        static_cast<int>(bottom.mps.length()) != n)
      throw DimensionError("RowFrameContext: boundary length mismatch");
    rights_.resize(n + 1);
    rights_[n] = trivial_chain(3);
    for (int j = n - 1; j >= 2; --j) {
      rights_[j] = rights_[j + 1];
      detail::absorb(rights_[j], column(j, false), params_, disc_b_, disc_p_);
    }
    left_ = trivial_chain(3);
  }

  // Effective frame for the pair (row, j)-(row, j+1). Pairs must be
  // requested with non-decreasing j; columns left behind are absorbed into
  // the left block using the current (possibly updated) tensors.
  EffectiveFrame frame(int j) {
    const int n = state_->cols;
    if (j < 0 || j + 1 >= n) throw TopologyError("frame: pair outside row");
    if (j < cursor_)
      throw PreconditionError("frame: pairs must be swept left to right");
    while (cursor_ < j) {
      detail::absorb(left_, column(cursor_, true), params_, disc_b_, disc_p_);
      ++cursor_;
    }

    const Mps& lb = left_;
    const Mps& rb = rights_[j + 2];
    const Tensor& tj = top_->mps.sites[j];
    const Tensor& tj1 = top_->mps.sites[j + 1];
    const Tensor& bj = bottom_->mps.sites[j];
    const Tensor& bj1 = bottom_->mps.sites[j + 1];

    EffectiveFrame f;
    // up_left: left-block top site (1,p1,fo,b1) joined with top site j over
    // the top chain bond.
    {
      Tensor t = contract(lb.sites[0], tj, {{2, 0}});  // (1,p1,b1, p,u,bt)
      t = t.permuted({0, 1, 3, 2, 5, 4});              // (1,p1,p,b1,bt,u)
      const auto& sh = t.shape();
      f.up_left = detail::reduce_phys(
          std::move(t).reshaped({sh[1] * sh[2], sh[3], sh[4], sh[5]}));
    }
    // up_right: top site j+1 joined with right-block top site over the chain.
    {
      Tensor t = contract(tj1, rb.sites[0], {{3, 2}});  // (bt,p,u2, 1,p1r,c1)
      t = t.permuted({3, 1, 4, 0, 5, 2});               // (1,p,p1r,bt,c1,u2)
      const auto& sh = t.shape();
      f.up_right = detail::reduce_phys(
          std::move(t).reshaped({sh[1] * sh[2], sh[3], sh[4], sh[5]}));
    }
    // left / right: the middle block sites as they stand.
    f.left = lb.sites[1].permuted({1, 0, 3, 2});
    f.right = rb.sites[1].permuted({1, 0, 3, 2});
    // down_left: left-block bottom site joined with bottom site j.
    {
      Tensor t = contract(lb.sites[2], bj, {{2, 0}});  // (b2,p3,1, p,d,bb)
      t = t.permuted({2, 1, 3, 0, 5, 4});              // (1,p3,p,b2,bb,d)
      const auto& sh = t.shape();
      f.down_left = detail::reduce_phys(
          std::move(t).reshaped({sh[1] * sh[2], sh[3], sh[4], sh[5]}));
    }
    // down_right: bottom site j+1 joined with right-block bottom site.
    {
      Tensor t = contract(bj1, rb.sites[2], {{3, 2}});  // (bb,p,d2, c2,p3r,1)
      t = t.permuted({5, 1, 4, 0, 3, 2});               // (1,p,p3r,bb,c2,d2)
      const auto& sh = t.shape();
      f.down_right = detail::reduce_phys(
          std::move(t).reshaped({sh[1] * sh[2], sh[3], sh[4], sh[5]}));
    }
    f.log_scale = top_->mps.log_scale + bottom_->mps.log_scale +
                  lb.log_scale + rb.log_scale;

    // Dangling bonds must match the pair tensors.
    const Tensor& a = state_->at(row_, j);
    const Tensor& b = state_->at(row_, j + 1);
    if (f.left.dim(3) != a.dim(1) || f.up_left.dim(3) != a.dim(3) ||
        f.down_left.dim(3) != a.dim(4) || f.right.dim(3) != b.dim(2) ||
        f.up_right.dim(3) != b.dim(3) || f.down_right.dim(3) != b.dim(4))
      throw TopologyError("frame: dangling bonds do not match the pair");
    return f;
  }

  double discarded_bond() const { return disc_b_; }
  double discarded_phys() const { return disc_p_; }

 private:
  MpsRow column(int j, bool facing_left) const {
    return detail::strip_column(top_->mps.sites[j], state_->at(row_, j),
                                bottom_->mps.sites[j], facing_left);
  }

  const PepsState* state_;
  const BoundaryMps* top_;
  const BoundaryMps* bottom_;
  int row_;
  EnvParams params_;
  Mps left_;
  std::vector<Mps> rights_;
  int cursor_ = 0;
  double disc_b_ = 0, disc_p_ = 0;
};

// One-shot frame construction for the pair (row, j)-(row, j+1) from given
// top/bottom boundaries.
inline EffectiveFrame build_frame(const PepsState& state,
                                  const BoundaryMps& top,
                                  const BoundaryMps& bottom, int row, int j,
                                  const EnvParams& params) {
  RowFrameContext ctx(state, top, bottom, row, params);
  return ctx.frame(j);
}

// ---------------------------------------------------------------------------
// Ring assembly: left/right halves, splitting, norm operator
// ---------------------------------------------------------------------------

namespace detail {

// Left half of the ring: up_left + left + down_left contracted,
// axes (s_L, b, w, u, l, d); b and w are the ring-closure bonds.
inline Tensor ring_left(const EffectiveFrame& f) {
  Tensor t = contract(f.up_left, f.left, {{1, 1}});  // (p1,b,u, p2,g,l)
  t = contract(t, f.down_left, {{4, 1}});            // (p1,b,u,p2,l, p3,w,d)
  t = t.permuted({0, 3, 5, 1, 6, 2, 4, 7});          // (p1,p2,p3,b,w,u,l,d)
  const auto& sh = t.shape();
  return std::move(t).reshaped(
      {sh[0] * sh[1] * sh[2], sh[3], sh[4], sh[5], sh[6], sh[7]});
}

// Right half: up_right + right + down_right, axes (s_R, b, w, u2, d2, r).
inline Tensor ring_right(const EffectiveFrame& f) {
  Tensor t = contract(f.up_right, f.right, {{2, 1}});  // (p1,b,u2, p2,h,r)
  t = contract(t, f.down_right, {{4, 2}});             // (p1,b,u2,p2,r, p3,w,d2)
  t = t.permuted({0, 3, 5, 1, 6, 2, 7, 4});            // (p1,p2,p3,b,w,u2,d2,r)
  const auto& sh = t.shape();
  return std::move(t).reshaped(
      {sh[0] * sh[1] * sh[2], sh[3], sh[4], sh[5], sh[6], sh[7]});
}

}  // namespace detail

enum class SplitMethod { SelfContraction, SvdSplit };

struct SplitEnvironment {
  Tensor left;   // (s_L, u, l, d)
  Tensor right;  // (s_R, u2, d2, r)
  SplitMethod method = SplitMethod::SelfContraction;
  double log_scale = 0.0;
};

namespace detail {

// Staged SVD of one ring half: per ring-closure value, SVD and keep the
// weighted right singular vectors, then SVD the stacked result.
inline Tensor svd_split_half(const Tensor& half) {
  // half: (s, b, w, x1, x2, x3) -> gamma = (b, w)
  Tensor t = half.permuted({1, 2, 0, 3, 4, 5});
  const std::vector<std::size_t> sh = t.shape();
  const std::size_t gamma = sh[0] * sh[1], s = sh[2],
                    cols = sh[3] * sh[4] * sh[5];
  Tensor m = std::move(t).reshaped({gamma, s, cols});
  std::vector<Tensor> pieces;
  std::size_t total_rows = 0;
  for (std::size_t g = 0; g < gamma; ++g) {
    Tensor slice({s, cols});
    std::copy(m.data() + g * s * cols, m.data() + (g + 1) * s * cols,
              slice.data());
    SvdResult f = svd(slice, {0});
    Tensor w = scale_axis(f.vh, 0, f.s);  // (k, cols)
    total_rows += w.dim(0);
    pieces.push_back(std::move(w));
  }
  Tensor stacked({total_rows, cols});
  std::size_t off = 0;
  for (const auto& p : pieces) {
    std::copy(p.data(), p.data() + p.size(), stacked.data() + off);
    off += p.size();
  }
  SvdResult f = svd(stacked, {0});
  Tensor out = scale_axis(f.vh, 0, f.s);  // (s_new, cols)
  return std::move(out).reshaped({out.dim(0), sh[3], sh[4], sh[5]});
}

}  // namespace detail

inline SplitEnvironment split_environment(
    const EffectiveFrame& f, SplitMethod method = SplitMethod::SelfContraction) {
  Tensor lh = detail::ring_left(f);
  Tensor rh = detail::ring_right(f);
  SplitEnvironment out;
  out.method = method;
  out.log_scale = f.log_scale;
  if (method == SplitMethod::SelfContraction) {
    out.left = sum_axis(sum_axis(lh, 1), 1);
    out.right = sum_axis(sum_axis(rh, 1), 1);
  } else {
    out.left = detail::svd_split_half(lh);
    out.right = detail::svd_split_half(rh);
  }
  return out;
}

// Effective double-layer norm operator N[(l u u2 d d2 r), (same)'] with the
// first composite as the bra index of the Gram matrix
// N[i,j] = <psi^E_i | psi^E_j>. Composite order is row-major (l,u,u2,d,d2,r).
struct NormOperator {
  Tensor matrix;        // Hermitian, (Dg, Dg)
  double log_scale = 0; // matrix * exp(log_scale) is the unscaled Gram
  std::vector<std::size_t> bond_dims;  // (l, u, u2, d, d2, r)
};

inline NormOperator build_norm_operator(const EffectiveFrame& f,
                                        std::size_t dim_cap = 4096) {
  Tensor lh = detail::ring_left(f);    // (sL, b, w, u, l, d)
  Tensor rh = detail::ring_right(f);   // (sR, b, w, u2, d2, r)
  NormOperator n;
  n.bond_dims = {lh.dim(4), lh.dim(3), rh.dim(3),
                 lh.dim(5), rh.dim(4), rh.dim(5)};
  std::size_t dg = 1;
  for (auto d : n.bond_dims) dg *= d;
  if (dg > dim_cap)
    throw CapacityError("build_norm_operator: environment dimension " +
                        std::to_string(dg) + " exceeds the cap " +
                        std::to_string(dim_cap));
  Tensor e = contract(lh, rh, {{1, 1}, {2, 2}});  // (sL,u,l,d, sR,u2,d2,r)
  e = e.permuted({0, 4, 2, 1, 5, 3, 6, 7});       // (sL,sR,l,u,u2,d,d2,r)
  const auto& sh = e.shape();
  Tensor em = std::move(e).reshaped({sh[0] * sh[1], dg});
  n.matrix = contract(em.conjugated(), em, {{0, 0}});
  n.log_scale = 2.0 * f.log_scale;
  return n;
}

}  // namespace slpeps

#endif  // SLPEPS_ENVIRONMENT_HPP
