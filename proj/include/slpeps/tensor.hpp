// Dense complex tensors with row-major storage: contraction, permutation,
// reshaping and orthogonal factorizations. Everything else in the library is
// built on top of this header.

#ifndef SLPEPS_TENSOR_HPP
#define SLPEPS_TENSOR_HPP

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "slpeps/errors.hpp"

namespace slpeps {

using cplx = std::complex<double>;

namespace detail {

inline std::string shape_str(const std::vector<std::size_t>& s) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ")";
  return os.str();
}

// Singular values below kRankTol * sigma_max are treated as numerical zeros.
constexpr double kRankTol = 1e-14;

using MatrixC =
    Eigen::Matrix<cplx, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<MatrixC>;
using ConstMapC = Eigen::Map<const MatrixC>;

}  // namespace detail

class Tensor {
 public:
  Tensor() : shape_{}, data_(1, cplx(0)) {}

  explicit Tensor(std::vector<std::size_t> shape)
      : shape_(std::move(shape)), data_(checked_size(shape_), cplx(0)) {}

  Tensor(std::vector<std::size_t> shape, std::vector<cplx> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != checked_size(shape_))
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape " + detail::shape_str(shape_));
  }

  static Tensor scalar(cplx v) {
    Tensor t;
    t.data_[0] = v;
    return t;
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }

  cplx* data() { return data_.data(); }
  const cplx* data() const { return data_.data(); }
  cplx& operator[](std::size_t i) { return data_[i]; }
  const cplx& operator[](std::size_t i) const { return data_[i]; }

  // Optional axis tags; purely self-documentation, never consulted by math.
  std::vector<std::string> labels;

  cplx& at(std::initializer_list<std::size_t> idx) {
    return data_[offset(idx)];
  }
  const cplx& at(std::initializer_list<std::size_t> idx) const {
    return data_[offset(idx)];
  }

  // Reshape: same data, new axis grouping. Row-major order is preserved.
  Tensor reshaped(std::vector<std::size_t> shape) const& {
    Tensor t(*this);
    t.set_shape(std::move(shape));
    return t;
  }
  Tensor reshaped(std::vector<std::size_t> shape) && {
    set_shape(std::move(shape));
    labels.clear();
    return std::move(*this);
  }

  Tensor permuted(const std::vector<std::size_t>& perm) const;

  Tensor conjugated() const {
    Tensor t(*this);
    for (auto& v : t.data_) v = std::conj(v);
    return t;
  }

  double norm2() const {
    double s = 0;
    for (const auto& v : data_) s += std::norm(v);
    return s;
  }
  double norm() const { return std::sqrt(norm2()); }

  Tensor& operator*=(cplx a) {
    for (auto& v : data_) v *= a;
    return *this;
  }
  Tensor& operator+=(const Tensor& o) {
    if (o.shape_ != shape_)
      throw DimensionError("tensor add: shape " + detail::shape_str(shape_) +
                           " vs " + detail::shape_str(o.shape_));
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }

  friend Tensor operator*(cplx a, Tensor t) {
    t *= a;
    return t;
  }

 private:
  static std::size_t checked_size(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (auto d : shape) {
      if (d == 0) throw DimensionError("zero-length tensor axis");
      n *= d;
    }
    return n;
  }

  void set_shape(std::vector<std::size_t> shape) {
    if (checked_size(shape) != data_.size())
      throw DimensionError("reshape " + detail::shape_str(shape_) + " -> " +
                           detail::shape_str(shape) + " changes element count");
    shape_ = std::move(shape);
  }

  std::size_t offset(std::initializer_list<std::size_t> idx) const {
    if (idx.size() != shape_.size())
      throw DimensionError("index rank mismatch");
    std::size_t off = 0, k = 0;
    for (auto i : idx) {
      if (i >= shape_[k]) throw DimensionError("index out of range");
      off = off * shape_[k] + i;
      ++k;
    }
    return off;
  }

  std::vector<std::size_t> shape_;
  std::vector<cplx> data_;
};

inline Tensor Tensor::permuted(const std::vector<std::size_t>& perm) const {
  const std::size_t r = rank();
  if (perm.size() != r) throw DimensionError("permutation rank mismatch");
  std::vector<bool> seen(r, false);
  bool identity = true;
  for (std::size_t k = 0; k < r; ++k) {
    if (perm[k] >= r || seen[perm[k]])
      throw DimensionError("invalid axis permutation");
    seen[perm[k]] = true;
    if (perm[k] != k) identity = false;
  }
  if (identity) return *this;

  std::vector<std::size_t> out_shape(r);
  for (std::size_t k = 0; k < r; ++k) out_shape[k] = shape_[perm[k]];

  // Row-major strides of the input, gathered in output-axis order.
  std::vector<std::size_t> istride(r, 1);
  for (std::size_t k = r - 1; k > 0; --k)
    istride[k - 1] = istride[k] * shape_[k];
  std::vector<std::size_t> gstride(r);
  for (std::size_t k = 0; k < r; ++k) gstride[k] = istride[perm[k]];

  // Trailing output axes that map to the trailing input axes in order form a
  // contiguous run that can be copied in one go.
  std::size_t tail = 0, run = 1;
  while (tail < r && perm[r - 1 - tail] == r - 1 - tail) {
    run *= shape_[r - 1 - tail];
    ++tail;
  }
  const std::size_t outer = r - tail;

  Tensor out(out_shape);
  const cplx* src = data_.data();
  cplx* dst = out.data();
  std::vector<std::size_t> idx(outer, 0);
  std::size_t src_off = 0;
  const std::size_t blocks = size() / run;
  for (std::size_t o = 0; o < blocks; ++o) {
    std::copy(src + src_off, src + src_off + run, dst + o * run);
    for (std::size_t k = outer; k-- > 0;) {
      if (++idx[k] < out_shape[k]) {
        src_off += gstride[k];
        break;
      }
      src_off -= gstride[k] * (out_shape[k] - 1);
      idx[k] = 0;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Contraction
// ---------------------------------------------------------------------------

// Contract paired axes of a and b. Result axes are the unpaired axes of a in
// their original order, followed by the unpaired axes of b.
inline Tensor contract(const Tensor& a, const Tensor& b,
                       const std::vector<std::pair<std::size_t, std::size_t>>& pairs) {
  const std::size_t ra = a.rank(), rb = b.rank();
  std::vector<bool> ca(ra, false), cb(rb, false);
  for (const auto& [i, j] : pairs) {
    if (i >= ra || j >= rb)
      throw DimensionError("contract: axis index out of range");
    if (ca[i] || cb[j]) throw DimensionError("contract: axis paired twice");
    if (a.dim(i) != b.dim(j))
      throw DimensionError("contract: axis " + std::to_string(i) + " of " +
                           detail::shape_str(a.shape()) + " vs axis " +
                           std::to_string(j) + " of " +
                           detail::shape_str(b.shape()));
    ca[i] = true;
    cb[j] = true;
  }

  std::vector<std::size_t> afree, bfree, acon, bcon;
  for (std::size_t k = 0; k < ra; ++k) (ca[k] ? acon : afree).push_back(k);
  for (std::size_t k = 0; k < rb; ++k) (cb[k] ? bcon : bfree).push_back(k);
  // Contracted axes ordered as given in `pairs` on both factors.
  acon.clear();
  bcon.clear();
  for (const auto& [i, j] : pairs) {
    acon.push_back(i);
    bcon.push_back(j);
  }

  std::size_t m = 1, k = 1, n = 1;
  std::vector<std::size_t> out_shape;
  std::vector<std::size_t> aperm, bperm;
  for (auto ax : afree) {
    m *= a.dim(ax);
    out_shape.push_back(a.dim(ax));
    aperm.push_back(ax);
  }
  for (auto ax : acon) {
    k *= a.dim(ax);
    aperm.push_back(ax);
  }
  for (auto ax : bcon) bperm.push_back(ax);
  for (auto ax : bfree) {
    n *= b.dim(ax);
    out_shape.push_back(b.dim(ax));
    bperm.push_back(ax);
  }

  Tensor ap = a.permuted(aperm);
  Tensor bp = b.permuted(bperm);
  Tensor out(out_shape.empty() ? std::vector<std::size_t>{} : out_shape);

  detail::ConstMapC ma(ap.data(), static_cast<Eigen::Index>(m),
                       static_cast<Eigen::Index>(k));
  detail::ConstMapC mb(bp.data(), static_cast<Eigen::Index>(k),
                       static_cast<Eigen::Index>(n));
  detail::MapC mo(out.data(), static_cast<Eigen::Index>(m),
                  static_cast<Eigen::Index>(n));
  // The packed GEMM path allocates blocking buffers; skip it for the small
  // products that dominate boundary sweeps.
  if (m * n * k <= 32768)
    mo.noalias() = ma.lazyProduct(mb);
  else
    mo.noalias() = ma * mb;
  return out;
}

// Sum over one axis (contraction with an all-ones vector).
inline Tensor sum_axis(const Tensor& t, std::size_t axis) {
  Tensor ones({t.dim(axis)});
  for (std::size_t i = 0; i < ones.size(); ++i) ones[i] = cplx(1);
  return contract(t, ones, {{axis, 0}});
}

// Multiply slices along `axis` by w[i] (e.g. absorbing Schmidt weights).
inline Tensor scale_axis(const Tensor& t, std::size_t axis,
                         const std::vector<double>& w) {
  if (w.size() != t.dim(axis))
    throw DimensionError("scale_axis: weight length mismatch");
  Tensor out = t;
  std::size_t inner = 1, outer = 1;
  for (std::size_t k = axis + 1; k < t.rank(); ++k) inner *= t.dim(k);
  for (std::size_t k = 0; k < axis; ++k) outer *= t.dim(k);
  cplx* p = out.data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double wi = w[i];
      cplx* q = p + (o * w.size() + i) * inner;
      for (std::size_t x = 0; x < inner; ++x) q[x] *= wi;
    }
  return out;
}

inline Tensor identity_matrix(std::size_t n) {
  Tensor t({n, n});
  for (std::size_t i = 0; i < n; ++i) t[i * n + i] = cplx(1);
  return t;
}

// ---------------------------------------------------------------------------
// Factorizations
// ---------------------------------------------------------------------------

namespace detail {

// Split axes into (row set, remaining) and return the matricized tensor
// together with the bookkeeping needed to fold factors back.
struct Matricized {
  Tensor t;                          // permuted to (rows..., cols...)
  std::vector<std::size_t> row_dims;
  std::vector<std::size_t> col_dims;
  std::size_t rows = 1, cols = 1;
};

inline Matricized matricize(const Tensor& t,
                            const std::vector<std::size_t>& row_axes) {
  const std::size_t r = t.rank();
  std::vector<bool> is_row(r, false);
  for (auto ax : row_axes) {
    if (ax >= r) throw DimensionError("factorization: row axis out of range");
    if (is_row[ax]) throw DimensionError("factorization: duplicate row axis");
    is_row[ax] = true;
  }
  if (row_axes.empty() || row_axes.size() == r)
    throw DimensionError(
        "factorization: row axes must be a nonempty proper subset of axes of " +
        shape_str(t.shape()));
  Matricized m;
  std::vector<std::size_t> perm;
  for (auto ax : row_axes) {
    perm.push_back(ax);
    m.row_dims.push_back(t.dim(ax));
    m.rows *= t.dim(ax);
  }
  for (std::size_t k = 0; k < r; ++k)
    if (!is_row[k]) {
      perm.push_back(k);
      m.col_dims.push_back(t.dim(k));
      m.cols *= t.dim(k);
    }
  m.t = t.permuted(perm);
  return m;
}

// Fix phases so the largest-magnitude entry of every column of U is real
// positive; the compensating phase is pushed into the matching row of Vh.
inline void fix_column_phases(MatrixC& u, MatrixC& vh) {
  for (Eigen::Index c = 0; c < u.cols(); ++c) {
    Eigen::Index imax = 0;
    double best = -1;
    for (Eigen::Index i = 0; i < u.rows(); ++i) {
      const double m = std::abs(u(i, c));
      if (m > best) {  // first maximum wins on ties
        best = m;
        imax = i;
      }
    }
    if (best <= 0) continue;
    const cplx ph = u(imax, c) / best;
    u.col(c) *= std::conj(ph);
    if (c < vh.rows()) vh.row(c) *= ph;
  }
}

}  // namespace detail

struct SvdResult {
  Tensor u;                 // (row axes..., k)
  std::vector<double> s;    // descending
  Tensor vh;                // (k, col axes...)
};

struct TruncatedSvdResult {
  Tensor u;
  std::vector<double> s;
  Tensor vh;
  double discarded_weight = 0;  // sum of squared dropped singular values
};

namespace detail {

// One-sided Jacobi SVD for small column counts: cheap on the tiny matrices
// that dominate boundary contractions. Requires rows >= cols. Works column
// major on thread-local scratch to stay allocation-free; column norms are
// cached and refreshed only for rotated columns.
inline void jacobi_svd_small(const MatrixC& m, MatrixC& u, Eigen::VectorXd& s,
                             MatrixC& vh) {
  const std::size_t rows = static_cast<std::size_t>(m.rows());
  const std::size_t n = static_cast<std::size_t>(m.cols());
  thread_local std::vector<cplx> a_buf, v_buf;
  thread_local std::vector<double> norm_buf;
  a_buf.assign(rows * n, cplx(0));
  v_buf.assign(n * n, cplx(0));
  norm_buf.assign(n, 0.0);
  cplx* a = a_buf.data();   // column-major (rows x n)
  cplx* v = v_buf.data();   // column-major (n x n)
  for (std::size_t c = 0; c < n; ++c) {
    double acc = 0;
    for (std::size_t r = 0; r < rows; ++r) {
      const cplx x = m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
      a[c * rows + r] = x;
      acc += std::norm(x);
    }
    norm_buf[c] = acc;
    v[c * n + c] = cplx(1);
  }

  const double eps = 1e-15;
  for (int sweep = 0; sweep < 60; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) {
        cplx* cp = a + p * rows;
        cplx* cq = a + q * rows;
        cplx apq(0);
        for (std::size_t r = 0; r < rows; ++r)
          apq += std::conj(cp[r]) * cq[r];
        const double g = std::abs(apq);
        const double app = norm_buf[p], aqq = norm_buf[q];
        if (g <= eps * std::sqrt(app * aqq) || g == 0.0) continue;
        rotated = true;
        const double tau = (aqq - app) / (2.0 * g);
        const double t = (tau >= 0 ? 1.0 : -1.0) /
                         (std::abs(tau) + std::sqrt(1.0 + tau * tau));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double sr = c * t;
        const cplx ph = apq / g;
        const cplx sph = sr * ph, sphc = sr * std::conj(ph);
        double np = 0, nq = 0;
        for (std::size_t r = 0; r < rows; ++r) {
          const cplx xp = cp[r], xq = cq[r];
          cp[r] = c * xp - sphc * xq;
          cq[r] = sph * xp + c * xq;
          np += std::norm(cp[r]);
          nq += std::norm(cq[r]);
        }
        norm_buf[p] = np;
        norm_buf[q] = nq;
        cplx* vp = v + p * n;
        cplx* vq = v + q * n;
        for (std::size_t r = 0; r < n; ++r) {
          const cplx xp = vp[r], xq = vq[r];
          vp[r] = c * xp - sphc * xq;
          vq[r] = sph * xp + c * xq;
        }
      }
    if (!rotated) break;
  }
  // Column norms are the singular values; sort descending.
  std::vector<std::size_t> order(n);
  for (std::size_t k = 0; k < n; ++k) order[k] = k;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
    return norm_buf[x] > norm_buf[y];
  });
  u.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(n));
  vh.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  s.resize(static_cast<Eigen::Index>(n));
  const double smax2 = n > 0 ? norm_buf[order[0]] : 0.0;
  std::vector<std::size_t> deficient;
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t src = order[k];
    const double nrm = std::sqrt(norm_buf[src]);
    s(static_cast<Eigen::Index>(k)) = nrm;
    for (std::size_t r = 0; r < n; ++r)
      vh(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(r)) =
          std::conj(v[src * n + r]);
    if (norm_buf[src] > smax2 * 1e-300 && nrm > 0) {
      const double inv = 1.0 / nrm;
      for (std::size_t r = 0; r < rows; ++r)
        u(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k)) =
            a[src * rows + r] * inv;
    } else {
      deficient.push_back(k);
    }
  }
  // Orthonormal fill for exactly-zero singular directions.
  for (std::size_t k : deficient) {
    Eigen::VectorXcd cand = Eigen::VectorXcd::Zero(static_cast<Eigen::Index>(rows));
    for (std::size_t trial = 0; trial < rows; ++trial) {
      cand.setZero();
      cand(static_cast<Eigen::Index>(trial)) = 1.0;
      for (std::size_t j = 0; j < n; ++j) {
        if (j == k || (j > k && std::find(deficient.begin(), deficient.end(),
                                          j) != deficient.end()))
          continue;
        cand -= u.col(static_cast<Eigen::Index>(j)).dot(cand) *
                u.col(static_cast<Eigen::Index>(j));
      }
      if (cand.norm() > 0.5) break;
    }
    u.col(static_cast<Eigen::Index>(k)) = cand / cand.norm();
  }
}

// Householder-QR preconditioned small SVD for tall matrices: QR into scratch
// buffers, Jacobi on the square factor, then the reflectors are applied back
// to rebuild U. Cuts the per-sweep rotation cost from O(rows n^2) to O(n^3).
inline void tall_svd_small(const MatrixC& m, MatrixC& u, Eigen::VectorXd& s,
                           MatrixC& vh) {
  const std::size_t rows = static_cast<std::size_t>(m.rows());
  const std::size_t n = static_cast<std::size_t>(m.cols());
  thread_local std::vector<cplx> a_buf, w_buf;
  thread_local std::vector<double> beta_buf;
  a_buf.assign(rows * n, cplx(0));  // column-major; lower part stores v's
  beta_buf.assign(n, 0.0);
  if (w_buf.size() < n) w_buf.resize(n);
  cplx* a = a_buf.data();
  for (std::size_t c = 0; c < n; ++c)
    for (std::size_t r = 0; r < rows; ++r)
      a[c * rows + r] = m(static_cast<Eigen::Index>(r),
                          static_cast<Eigen::Index>(c));

  for (std::size_t k = 0; k < n; ++k) {
    cplx* col = a + k * rows;
    double xn2 = 0;
    for (std::size_t r = k; r < rows; ++r) xn2 += std::norm(col[r]);
    if (xn2 == 0) {
      beta_buf[k] = 0;
      continue;
    }
    const double xn = std::sqrt(xn2);
    const cplx x0 = col[k];
    const double ax0 = std::abs(x0);
    const cplx phase = ax0 > 0 ? x0 / ax0 : cplx(1);
    const cplx alpha = -phase * xn;   // new diagonal entry
    // v = x - alpha e1 (stored in place below the diagonal, v0 separate).
    const cplx v0 = x0 - alpha;
    const double vn2 = xn2 - ax0 * ax0 + std::norm(v0);
    if (vn2 == 0) {
      beta_buf[k] = 0;
      col[k] = alpha;
      continue;
    }
    beta_buf[k] = 2.0 / vn2;
    col[k] = alpha;
    // Normalize storage so v0 is implicit in position k via a side value:
    // store v entries directly; v0 kept in w_buf staging per column.
    // Apply (I - beta v v^dag) to the remaining columns.
    for (std::size_t j = k + 1; j < n; ++j) {
      cplx* cj = a + j * rows;
      cplx w = std::conj(v0) * cj[k];
      for (std::size_t r = k + 1; r < rows; ++r)
        w += std::conj(col[r]) * cj[r];
      w *= beta_buf[k];
      cj[k] -= w * v0;
      for (std::size_t r = k + 1; r < rows; ++r) cj[r] -= w * col[r];
    }
    w_buf[k] = v0;
  }

  // Jacobi on the upper-triangular square factor.
  MatrixC r(n, n);
  for (std::size_t c = 0; c < n; ++c)
    for (std::size_t rr = 0; rr < n; ++rr)
      r(static_cast<Eigen::Index>(rr), static_cast<Eigen::Index>(c)) =
          rr <= c ? a[c * rows + rr] : cplx(0);
  MatrixC ur;
  jacobi_svd_small(r, ur, s, vh);

  // U = Q [ur; 0]: apply reflectors in reverse to the padded block.
  u.setZero(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(n));
  u.topRows(static_cast<Eigen::Index>(n)) = ur;
  for (std::size_t k = n; k-- > 0;) {
    if (beta_buf[k] == 0) continue;
    const cplx* col = a + k * rows;
    const cplx v0 = w_buf[k];
    for (std::size_t j = 0; j < n; ++j) {
      cplx w = std::conj(v0) * u(static_cast<Eigen::Index>(k),
                                 static_cast<Eigen::Index>(j));
      for (std::size_t rr = k + 1; rr < rows; ++rr)
        w += std::conj(col[rr]) * u(static_cast<Eigen::Index>(rr),
                                    static_cast<Eigen::Index>(j));
      w *= beta_buf[k];
      u(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j)) -= w * v0;
      for (std::size_t rr = k + 1; rr < rows; ++rr)
        u(static_cast<Eigen::Index>(rr), static_cast<Eigen::Index>(j)) -=
            w * col[rr];
    }
  }
}

inline void svd_matrix(const MatrixC& m, MatrixC& u, Eigen::VectorXd& s,
                       MatrixC& vh) {
  const Eigen::Index rows = m.rows(), cols = m.cols();
  if (std::min(rows, cols) <= 32) {
    if (rows < cols) {
      // SVD of the adjoint, factors swapped.
      MatrixC ut, vht;
      svd_matrix(m.adjoint(), ut, s, vht);
      u = vht.adjoint();
      vh = ut.adjoint();
      fix_column_phases(u, vh);
      return;
    }
    if (rows > 2 * cols)
      tall_svd_small(m, u, s, vh);
    else
      jacobi_svd_small(m, u, s, vh);
  } else {
    const auto opts = Eigen::ComputeThinU | Eigen::ComputeThinV;
    Eigen::BDCSVD<MatrixC> svd(m, opts);
    if (svd.info() != Eigen::Success) {
      Eigen::JacobiSVD<MatrixC> fallback(m, opts);
      u = fallback.matrixU();
      s = fallback.singularValues();
      vh = fallback.matrixV().adjoint();
    } else {
      u = svd.matrixU();
      s = svd.singularValues();
      vh = svd.matrixV().adjoint();
    }
  }
  fix_column_phases(u, vh);
}

}  // namespace detail

inline SvdResult svd(const Tensor& t, const std::vector<std::size_t>& row_axes) {
  auto m = detail::matricize(t, row_axes);
  detail::ConstMapC mm(m.t.data(), static_cast<Eigen::Index>(m.rows),
                       static_cast<Eigen::Index>(m.cols));
  detail::MatrixC u, vh;
  Eigen::VectorXd s;
  detail::svd_matrix(mm, u, s, vh);
  if (!u.allFinite() || !vh.allFinite())
    throw NumericError("svd failed on tensor of shape " +
                       detail::shape_str(t.shape()));

  const std::size_t k = static_cast<std::size_t>(s.size());
  SvdResult r;
  auto ushape = m.row_dims;
  ushape.push_back(k);
  r.u = Tensor(ushape, std::vector<cplx>(u.data(), u.data() + u.size()));
  r.s.assign(s.data(), s.data() + s.size());
  auto vshape = m.col_dims;
  vshape.insert(vshape.begin(), k);
  r.vh = Tensor(vshape, std::vector<cplx>(vh.data(), vh.data() + vh.size()));
  return r;
}

// Keep at most `keep` leading singular triples, and never keep numerical
// zeros beyond the first singular value.
inline TruncatedSvdResult truncated_svd(const Tensor& t,
                                        const std::vector<std::size_t>& row_axes,
                                        std::size_t keep) {
  if (keep < 1) throw ParameterError("truncated_svd: keep must be >= 1");
  SvdResult full = svd(t, row_axes);
  const std::size_t total = full.s.size();
  std::size_t rank = total;
  if (total > 0) {
    const double tol = full.s[0] * detail::kRankTol;
    while (rank > 1 && full.s[rank - 1] <= tol) --rank;
  }
  const std::size_t kept = std::min(keep, rank);

  TruncatedSvdResult r;
  r.s.assign(full.s.begin(), full.s.begin() + kept);
  for (std::size_t i = kept; i < total; ++i)
    r.discarded_weight += full.s[i] * full.s[i];

  // Slice the last axis of U and the first axis of Vh.
  const auto& us = full.u.shape();
  std::size_t urows = full.u.size() / total;
  Tensor u(std::vector<std::size_t>(us.begin(), us.end() - 1));
  {
    auto shape = u.shape();
    shape.push_back(kept);
    u = Tensor(shape);
    for (std::size_t i = 0; i < urows; ++i)
      for (std::size_t j = 0; j < kept; ++j)
        u[i * kept + j] = full.u[i * total + j];
  }
  const auto& vs = full.vh.shape();
  std::size_t vcols = full.vh.size() / total;
  std::vector<std::size_t> vshape(vs.begin() + 1, vs.end());
  vshape.insert(vshape.begin(), kept);
  Tensor vh(vshape);
  std::copy(full.vh.data(), full.vh.data() + kept * vcols, vh.data());

  r.u = std::move(u);
  r.vh = std::move(vh);
  return r;
}

struct QrResult {
  Tensor q;  // (row axes..., k), isometric columns
  Tensor r;  // (k, col axes...)
};

namespace detail {

// Compact Householder QR on scratch buffers (thin Q). Used for the small
// matrices dominating the boundary sweeps; falls back to Eigen above 32.
inline void qr_matrix(const MatrixC& m, MatrixC& q, MatrixC& r) {
  const std::size_t rows = static_cast<std::size_t>(m.rows());
  const std::size_t n = static_cast<std::size_t>(m.cols());
  const std::size_t kk = std::min(rows, n);
  if (kk > 32) {
    Eigen::HouseholderQR<MatrixC> fac(m);
    q = fac.householderQ() *
        MatrixC::Identity(m.rows(), static_cast<Eigen::Index>(kk));
    r = fac.matrixQR()
            .topRows(static_cast<Eigen::Index>(kk))
            .template triangularView<Eigen::Upper>();
    return;
  }
  thread_local std::vector<cplx> a_buf, v0_buf;
  thread_local std::vector<double> beta_buf;
  a_buf.assign(rows * n, cplx(0));
  v0_buf.assign(kk, cplx(0));
  beta_buf.assign(kk, 0.0);
  cplx* a = a_buf.data();
  for (std::size_t c = 0; c < n; ++c)
    for (std::size_t rr = 0; rr < rows; ++rr)
      a[c * rows + rr] =
          m(static_cast<Eigen::Index>(rr), static_cast<Eigen::Index>(c));

  for (std::size_t k = 0; k < kk; ++k) {
    cplx* col = a + k * rows;
    double xn2 = 0;
    for (std::size_t rr = k; rr < rows; ++rr) xn2 += std::norm(col[rr]);
    if (xn2 == 0) continue;
    const double xn = std::sqrt(xn2);
    const cplx x0 = col[k];
    const double ax0 = std::abs(x0);
    const cplx phase = ax0 > 0 ? x0 / ax0 : cplx(1);
    const cplx alpha = -phase * xn;
    const cplx v0 = x0 - alpha;
    const double vn2 = xn2 - ax0 * ax0 + std::norm(v0);
    if (vn2 == 0) {
      col[k] = alpha;
      continue;
    }
    beta_buf[k] = 2.0 / vn2;
    v0_buf[k] = v0;
    col[k] = alpha;
    for (std::size_t j = k + 1; j < n; ++j) {
      cplx* cj = a + j * rows;
      cplx w = std::conj(v0) * cj[k];
      for (std::size_t rr = k + 1; rr < rows; ++rr)
        w += std::conj(col[rr]) * cj[rr];
      w *= beta_buf[k];
      cj[k] -= w * v0;
      for (std::size_t rr = k + 1; rr < rows; ++rr) cj[rr] -= w * col[rr];
    }
  }

  r.resize(static_cast<Eigen::Index>(kk), static_cast<Eigen::Index>(n));
  for (std::size_t c = 0; c < n; ++c)
    for (std::size_t rr = 0; rr < kk; ++rr)
      r(static_cast<Eigen::Index>(rr), static_cast<Eigen::Index>(c)) =
          rr <= c ? a[c * rows + rr] : cplx(0);

  q.setZero(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(kk));
  for (std::size_t k = 0; k < kk; ++k)
    q(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k)) = cplx(1);
  for (std::size_t k = kk; k-- > 0;) {
    if (beta_buf[k] == 0) continue;
    const cplx* col = a + k * rows;
    const cplx v0 = v0_buf[k];
    for (std::size_t j = 0; j < kk; ++j) {
      cplx w = std::conj(v0) * q(static_cast<Eigen::Index>(k),
                                 static_cast<Eigen::Index>(j));
      for (std::size_t rr = k + 1; rr < rows; ++rr)
        w += std::conj(col[rr]) * q(static_cast<Eigen::Index>(rr),
                                    static_cast<Eigen::Index>(j));
      w *= beta_buf[k];
      q(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j)) -= w * v0;
      for (std::size_t rr = k + 1; rr < rows; ++rr)
        q(static_cast<Eigen::Index>(rr), static_cast<Eigen::Index>(j)) -=
            w * col[rr];
    }
  }
}

}  // namespace detail

inline QrResult qr(const Tensor& t, const std::vector<std::size_t>& row_axes) {
  auto m = detail::matricize(t, row_axes);
  detail::ConstMapC mm(m.t.data(), static_cast<Eigen::Index>(m.rows),
                       static_cast<Eigen::Index>(m.cols));
  const Eigen::Index k = std::min(mm.rows(), mm.cols());
  detail::MatrixC q, r;
  detail::qr_matrix(mm, q, r);
  if (!q.allFinite() || !r.allFinite())
    throw NumericError("qr failed on tensor of shape " +
                       detail::shape_str(t.shape()));
  detail::fix_column_phases(q, r);

  QrResult out;
  auto qshape = m.row_dims;
  qshape.push_back(static_cast<std::size_t>(k));
  out.q = Tensor(qshape, std::vector<cplx>(q.data(), q.data() + q.size()));
  auto rshape = m.col_dims;
  rshape.insert(rshape.begin(), static_cast<std::size_t>(k));
  out.r = Tensor(rshape, std::vector<cplx>(r.data(), r.data() + r.size()));
  return out;
}

// Hermitian eigendecomposition of a square matrix tensor; ascending values.
struct EighResult {
  std::vector<double> values;
  Tensor vectors;  // columns are eigenvectors, shape (n, n)
};

inline EighResult eigh(const Tensor& t) {
  if (t.rank() != 2 || t.dim(0) != t.dim(1))
    throw DimensionError("eigh expects a square matrix, got " +
                         detail::shape_str(t.shape()));
  const std::size_t n = t.dim(0);
  detail::ConstMapC m(t.data(), static_cast<Eigen::Index>(n),
                      static_cast<Eigen::Index>(n));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(m);
  if (es.info() != Eigen::Success)
    throw NumericError("eigh failed on matrix of dimension " +
                       std::to_string(n));
  EighResult r;
  r.values.assign(es.eigenvalues().data(), es.eigenvalues().data() + n);
  Eigen::MatrixXcd vr = es.eigenvectors();
  detail::MatrixC v = vr;  // to row-major
  r.vectors = Tensor({n, n}, std::vector<cplx>(v.data(), v.data() + v.size()));
  return r;
}

// Minimum-norm least-squares solve A X = B with a relative rank cutoff;
// used to restore gauges after environment-orthogonalized updates.
inline Tensor lstsq_solve(const Tensor& a, const Tensor& b,
                          double rcond = 1e-13) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(0) != b.dim(0))
    throw DimensionError("lstsq_solve: incompatible shapes " +
                         detail::shape_str(a.shape()) + " vs " +
                         detail::shape_str(b.shape()));
  detail::ConstMapC ma(a.data(), static_cast<Eigen::Index>(a.dim(0)),
                       static_cast<Eigen::Index>(a.dim(1)));
  detail::ConstMapC mb(b.data(), static_cast<Eigen::Index>(b.dim(0)),
                       static_cast<Eigen::Index>(b.dim(1)));
  detail::MatrixC u, vh;
  Eigen::VectorXd s;
  detail::svd_matrix(ma, u, s, vh);
  const double tol = (s.size() > 0 ? s(0) : 0.0) * rcond;
  detail::MatrixC y = u.adjoint() * mb;
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    if (s(i) > tol)
      y.row(i) /= s(i);
    else
      y.row(i).setZero();
  }
  detail::MatrixC x = vh.adjoint() * y;
  return Tensor({a.dim(1), b.dim(1)},
                std::vector<cplx>(x.data(), x.data() + x.size()));
}

}  // namespace slpeps

#endif  // SLPEPS_TENSOR_HPP
