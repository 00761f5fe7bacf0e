// Antiferromagnetic Heisenberg model in Pauli convention:
// H = J * sum_<ab> (sx sx + sy sy + sz sz).

#ifndef SLPEPS_MODEL_HPP
#define SLPEPS_MODEL_HPP

#include <vector>

#include "slpeps/tensor.hpp"

namespace slpeps {

struct HeisenbergModel {
  double coupling = 1.0;
};

// Pair term as a rank-4 tensor (s1_out, s2_out, s1_in, s2_in), qubits only.
inline Tensor heisenberg_pair_term(double coupling = 1.0) {
  const cplx I(0, 1);
  const cplx sx[2][2] = {{0, 1}, {1, 0}};
  const cplx sy[2][2] = {{0, -I}, {I, 0}};
  const cplx sz[2][2] = {{1, 0}, {0, -1}};
  Tensor h({2, 2, 2, 2});
  for (std::size_t a = 0; a < 2; ++a)
    for (std::size_t b = 0; b < 2; ++b)
      for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t d = 0; d < 2; ++d)
          h.at({a, b, c, d}) = coupling * (sx[a][c] * sx[b][d] +
                                           sy[a][c] * sy[b][d] +
                                           sz[a][c] * sz[b][d]);
  return h;
}

// exp(-tau * h) for a Hermitian two-site term h, by dense eigendecomposition.
inline Tensor pair_exponential(const Tensor& h, double tau) {
  const std::size_t d2 = h.dim(0) * h.dim(1);
  EighResult e = eigh(Tensor(h).reshaped({d2, d2}));
  Tensor out({d2, d2});
  for (std::size_t i = 0; i < d2; ++i)
    for (std::size_t j = 0; j < d2; ++j) {
      cplx acc(0);
      for (std::size_t k = 0; k < d2; ++k)
        acc += e.vectors[i * d2 + k] * std::exp(-tau * e.values[k]) *
               std::conj(e.vectors[j * d2 + k]);
      out[i * d2 + j] = acc;
    }
  return std::move(out).reshaped({h.dim(0), h.dim(1), h.dim(2), h.dim(3)});
}

struct LatticeBond {
  int i1, j1, i2, j2;
  bool horizontal;
};

inline std::vector<LatticeBond> lattice_bonds(int rows, int cols) {
  std::vector<LatticeBond> bonds;
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) {
      if (j + 1 < cols) bonds.push_back({i, j, i, j + 1, true});
      if (i + 1 < rows) bonds.push_back({i, j, i + 1, j, false});
    }
  return bonds;
}

}  // namespace slpeps

#endif  // SLPEPS_MODEL_HPP
