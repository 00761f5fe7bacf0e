// The PEPS state on an m x n open-boundary lattice: storage, initialization,
// local gate application with bond growth, uniform rescaling and checkpoints.
//
// Site tensors use the fixed axis order (s, l, r, u, d): physical, left,
// right, up, down. Boundary virtual bonds have length 1.

#ifndef SLPEPS_PEPS_HPP
#define SLPEPS_PEPS_HPP

#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "slpeps/errors.hpp"
#include "slpeps/random.hpp"
#include "slpeps/tensor.hpp"

namespace slpeps {

struct PepsState {
  int rows = 0;
  int cols = 0;
  std::size_t phys = 2;
  std::vector<Tensor> sites;  // row-major
  // Accumulated log of scale factors extracted by rescaling; the physical
  // amplitudes are the stored tensors' contraction times exp(scale_ledger).
  double scale_ledger = 0.0;

  const Tensor& at(int i, int j) const { return sites[i * cols + j]; }
  Tensor& at(int i, int j) { return sites[i * cols + j]; }

  std::size_t bond_r(int i, int j) const { return at(i, j).dim(2); }
  std::size_t bond_d(int i, int j) const { return at(i, j).dim(4); }
  std::size_t max_bond() const {
    std::size_t b = 1;
    for (const auto& t : sites)
      for (std::size_t ax = 1; ax < 5; ++ax) b = std::max(b, t.dim(ax));
    return b;
  }
};

inline void check_bonds(const PepsState& s) {
  for (int i = 0; i < s.rows; ++i)
    for (int j = 0; j < s.cols; ++j) {
      const Tensor& t = s.at(i, j);
      if (t.rank() != 5 || t.dim(0) != s.phys)
        throw DimensionError("site tensor has wrong rank or physical axis");
      if ((j == 0 && t.dim(1) != 1) || (j == s.cols - 1 && t.dim(2) != 1) ||
          (i == 0 && t.dim(3) != 1) || (i == s.rows - 1 && t.dim(4) != 1))
        throw DimensionError("boundary virtual bond must have length 1");
      if (j + 1 < s.cols && t.dim(2) != s.at(i, j + 1).dim(1))
        throw DimensionError("horizontal bond mismatch at row " +
                             std::to_string(i));
      if (i + 1 < s.rows && t.dim(4) != s.at(i + 1, j).dim(3))
        throw DimensionError("vertical bond mismatch at column " +
                             std::to_string(j));
    }
}

// Swap lattice rows and columns; axes (s,l,r,u,d) -> (s,u,d,l,r). Horizontal
// structure of the transposed state corresponds to vertical structure of the
// original, so one horizontal code path serves both orientations.
inline PepsState transposed(const PepsState& s) {
  PepsState t;
  t.rows = s.cols;
  t.cols = s.rows;
  t.phys = s.phys;
  t.scale_ledger = s.scale_ledger;
  t.sites.resize(s.sites.size());
  for (int i = 0; i < s.rows; ++i)
    for (int j = 0; j < s.cols; ++j)
      t.at(j, i) = s.at(i, j).permuted({0, 3, 4, 1, 2});
  return t;
}

// Equalize all site-tensor 2-norms to their geometric mean. The extracted
// factors cancel in the ledger by construction, so only updates that push a
// tensor away from the common norm move the ledger.
inline PepsState rescale_uniform(const PepsState& input) {
  PepsState s = input;
  double mean_log = 0;
  for (const auto& t : s.sites) {
    const double n = t.norm();
    if (n == 0) throw DegenerateStateError("rescale_uniform: zero site tensor");
    mean_log += std::log(n);
  }
  mean_log /= static_cast<double>(s.sites.size());
  const double target = std::exp(mean_log);
  for (auto& t : s.sites) {
    const double n = t.norm();
    t *= cplx(target / n);
    s.scale_ledger += std::log(n) - mean_log;
  }
  return s;
}

inline double common_site_norm(const PepsState& s) {
  return s.sites.front().norm();
}

inline PepsState init_random(int rows, int cols, std::size_t D,
                             std::uint64_t seed) {
  if (rows < 2 || cols < 2) throw ParameterError("init_random: need m,n >= 2");
  if (D < 1) throw ParameterError("init_random: need D >= 1");
  PepsState s;
  s.rows = rows;
  s.cols = cols;
  s.phys = 2;
  Rng rng(seed);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) {
      const std::size_t l = j > 0 ? D : 1, r = j + 1 < cols ? D : 1;
      const std::size_t u = i > 0 ? D : 1, d = i + 1 < rows ? D : 1;
      s.sites.push_back(random_tensor({s.phys, l, r, u, d}, rng));
    }
  return rescale_uniform(s);
}

// Checkerboard |up>,|down> product state; s=0 is sz=+1.
inline PepsState init_neel(int rows, int cols) {
  if (rows < 1 || cols < 1) throw ParameterError("init_neel: need m,n >= 1");
  PepsState s;
  s.rows = rows;
  s.cols = cols;
  s.phys = 2;
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) {
      Tensor t({2, 1, 1, 1, 1});
      t[(i + j) % 2 == 0 ? 0 : 1] = cplx(1);
      s.sites.push_back(std::move(t));
    }
  return s;
}

// ---------------------------------------------------------------------------
// Gates
// ---------------------------------------------------------------------------

struct TwoSiteGate {
  Tensor op;  // (s1_out, s2_out, s1_in, s2_in)
  bool horizontal = true;
  int i = 0, j = 0;  // first site; second is (i, j+1) or (i+1, j)
};

// Apply a two-site gate exactly: the connecting bond grows by the gate's
// Schmidt rank, no truncation. Schmidt factors are absorbed symmetrically.
inline PepsState apply_gate_grown(const PepsState& input,
                                  const TwoSiteGate& gate) {
  if (!gate.horizontal) {
    TwoSiteGate g = gate;
    g.horizontal = true;
    g.i = gate.j;
    g.j = gate.i;
    return transposed(apply_gate_grown(transposed(input), g));
  }
  if (gate.i < 0 || gate.i >= input.rows || gate.j < 0 ||
      gate.j + 1 >= input.cols)
    throw TopologyError("apply_gate_grown: pair (" + std::to_string(gate.i) +
                        "," + std::to_string(gate.j) +
                        ")-(right) is not inside the lattice");

  // Operator Schmidt split of the gate across the two sites.
  TruncatedSvdResult f =
      truncated_svd(gate.op.permuted({0, 2, 1, 3}), {0, 1},
                    input.phys * input.phys);
  const std::size_t k = f.s.size();
  std::vector<double> sq(k);
  for (std::size_t x = 0; x < k; ++x) sq[x] = std::sqrt(f.s[x]);
  Tensor p = scale_axis(f.u, 2, sq);   // (s1o, s1i, k)
  Tensor q = scale_axis(f.vh, 0, sq);  // (k, s2o, s2i)

  PepsState s = input;
  const Tensor& a = input.at(gate.i, gate.j);
  const Tensor& b = input.at(gate.i, gate.j + 1);
  // New left tensor: (s1o, l, r*k, u, d).
  Tensor na = contract(p, a, {{1, 0}});  // (s1o, k, l, r, u, d)
  na = na.permuted({0, 2, 3, 1, 4, 5});
  {
    const auto& sh = na.shape();
    na = std::move(na).reshaped({sh[0], sh[1], sh[2] * sh[3], sh[4], sh[5]});
  }
  // New right tensor: (s2o, l*k, r, u, d).
  Tensor nb = contract(q, b, {{2, 0}});  // (k, s2o, l, r, u, d)
  nb = nb.permuted({1, 2, 0, 3, 4, 5});
  {
    const auto& sh = nb.shape();
    nb = std::move(nb).reshaped({sh[0], sh[1] * sh[2], sh[3], sh[4], sh[5]});
  }
  s.at(gate.i, gate.j) = std::move(na);
  s.at(gate.i, gate.j + 1) = std::move(nb);
  return s;
}

// ---------------------------------------------------------------------------
// Checkpoints (little-endian, magic "SLP1")
// ---------------------------------------------------------------------------

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int k = 0; k < 4; ++k) b[k] = static_cast<unsigned char>(v >> (8 * k));
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_f64(std::ostream& os, double x) {
  const std::uint64_t v = std::bit_cast<std::uint64_t>(x);
  unsigned char b[8];
  for (int k = 0; k < 8; ++k) b[k] = static_cast<unsigned char>(v >> (8 * k));
  os.write(reinterpret_cast<const char*>(b), 8);
}

inline std::uint32_t get_u32(std::istream& is, std::size_t& offset) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4))
    throw FormatError("checkpoint truncated at offset " +
                      std::to_string(offset));
  offset += 4;
  std::uint32_t v = 0;
  for (int k = 3; k >= 0; --k) v = (v << 8) | b[k];
  return v;
}

inline double get_f64(std::istream& is, std::size_t& offset) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8))
    throw FormatError("checkpoint truncated at offset " +
                      std::to_string(offset));
  offset += 8;
  std::uint64_t v = 0;
  for (int k = 7; k >= 0; --k) v = (v << 8) | b[k];
  return std::bit_cast<double>(v);
}

}  // namespace detail

inline void save_checkpoint(const PepsState& s, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw FormatError("cannot open checkpoint for writing: " + path);
  os.write("SLP1", 4);
  detail::put_u32(os, 1);  // version
  detail::put_u32(os, static_cast<std::uint32_t>(s.rows));
  detail::put_u32(os, static_cast<std::uint32_t>(s.cols));
  detail::put_u32(os, static_cast<std::uint32_t>(s.phys));
  for (const auto& t : s.sites) {
    for (std::size_t ax = 1; ax < 5; ++ax)
      detail::put_u32(os, static_cast<std::uint32_t>(t.dim(ax)));
    for (std::size_t x = 0; x < t.size(); ++x) {
      detail::put_f64(os, t[x].real());
      detail::put_f64(os, t[x].imag());
    }
  }
  detail::put_f64(os, s.scale_ledger);
  if (!os) throw FormatError("write failure on checkpoint: " + path);
}

inline PepsState load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open checkpoint: " + path);
  std::size_t offset = 0;
  char magic[4];
  if (!is.read(magic, 4))
    throw FormatError("checkpoint truncated at offset 0");
  offset += 4;
  if (std::string(magic, 4) != "SLP1")
    throw FormatError("bad checkpoint magic at offset 0");
  const std::uint32_t version = detail::get_u32(is, offset);
  if (version != 1)
    throw FormatError("unsupported checkpoint version " +
                      std::to_string(version) + " at offset 4");
  PepsState s;
  s.rows = static_cast<int>(detail::get_u32(is, offset));
  s.cols = static_cast<int>(detail::get_u32(is, offset));
  s.phys = detail::get_u32(is, offset);
  if (s.rows < 1 || s.cols < 1 || s.rows > 4096 || s.cols > 4096 ||
      s.phys < 1 || s.phys > 64)
    throw FormatError("implausible checkpoint header at offset 8");
  for (int i = 0; i < s.rows * s.cols; ++i) {
    std::size_t dims[4];
    for (auto& d : dims) {
      d = detail::get_u32(is, offset);
      if (d < 1 || d > (1u << 20))
        throw FormatError("implausible bond length at offset " +
                          std::to_string(offset - 4));
    }
    Tensor t({s.phys, dims[0], dims[1], dims[2], dims[3]});
    for (std::size_t x = 0; x < t.size(); ++x) {
      const double re = detail::get_f64(is, offset);
      const double im = detail::get_f64(is, offset);
      t[x] = cplx(re, im);
    }
    s.sites.push_back(std::move(t));
  }
  s.scale_ledger = detail::get_f64(is, offset);
  check_bonds(s);
  return s;
}

}  // namespace slpeps

#endif  // SLPEPS_PEPS_HPP
