// Brute-force reference implementations used only by tests. These stay
// independent of the library's contraction/factorization paths.

#ifndef SLPEPS_TESTS_ORACLE_HELPERS_HPP
#define SLPEPS_TESTS_ORACLE_HELPERS_HPP

#include <vector>

#include "slpeps/tensor.hpp"

namespace oracle {

using slpeps::cplx;
using slpeps::Tensor;

inline std::vector<std::size_t> strides_of(const std::vector<std::size_t>& shape) {
  std::vector<std::size_t> s(shape.size(), 1);
  for (std::size_t k = shape.size(); k-- > 1;) s[k - 1] = s[k] * shape[k];
  return s;
}

// Plain nested-loop contraction: iterate over all free and summed indices.
inline Tensor contract_loops(
    const Tensor& a, const Tensor& b,
    const std::vector<std::pair<std::size_t, std::size_t>>& pairs) {
  std::vector<bool> ca(a.rank(), false), cb(b.rank(), false);
  for (auto [i, j] : pairs) {
    ca[i] = true;
    cb[j] = true;
  }
  std::vector<std::size_t> afree, bfree;
  std::vector<std::size_t> out_shape, sum_shape;
  for (std::size_t k = 0; k < a.rank(); ++k)
    if (!ca[k]) {
      afree.push_back(k);
      out_shape.push_back(a.dim(k));
    }
  for (std::size_t k = 0; k < b.rank(); ++k)
    if (!cb[k]) {
      bfree.push_back(k);
      out_shape.push_back(b.dim(k));
    }
  for (auto [i, j] : pairs) sum_shape.push_back(a.dim(i));

  Tensor out(out_shape.empty() ? std::vector<std::size_t>{} : out_shape);
  const auto sa = strides_of(a.shape()), sb = strides_of(b.shape());

  std::vector<std::size_t> oidx(out_shape.size(), 0);
  const std::size_t nout = out.size();
  for (std::size_t o = 0; o < nout; ++o) {
    // Decode output multi-index.
    {
      std::size_t rem = o;
      for (std::size_t k = out_shape.size(); k-- > 0;) {
        oidx[k] = rem % out_shape[k];
        rem /= out_shape[k];
      }
    }
    std::size_t abase = 0, bbase = 0;
    for (std::size_t k = 0; k < afree.size(); ++k)
      abase += oidx[k] * sa[afree[k]];
    for (std::size_t k = 0; k < bfree.size(); ++k)
      bbase += oidx[afree.size() + k] * sb[bfree[k]];

    std::size_t nsum = 1;
    for (auto d : sum_shape) nsum *= d;
    cplx acc(0);
    std::vector<std::size_t> sidx(sum_shape.size(), 0);
    for (std::size_t s = 0; s < nsum; ++s) {
      std::size_t ao = abase, bo = bbase;
      {
        std::size_t rem = s;
        for (std::size_t k = sum_shape.size(); k-- > 0;) {
          sidx[k] = rem % sum_shape[k];
          rem /= sum_shape[k];
        }
      }
      for (std::size_t k = 0; k < pairs.size(); ++k) {
        ao += sidx[k] * sa[pairs[k].first];
        bo += sidx[k] * sb[pairs[k].second];
      }
      acc += a[ao] * b[bo];
    }
    out[o] = acc;
  }
  return out;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace oracle

#endif  // SLPEPS_TESTS_ORACLE_HELPERS_HPP
