// Seeded random number generation for reproducible initial states and
// Metropolis chains.

#ifndef SLPEPS_RANDOM_HPP
#define SLPEPS_RANDOM_HPP

#include <cstdint>
#include <random>

#include "slpeps/tensor.hpp"

namespace slpeps {

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  // Standard complex Gaussian: E z = 0, E |z|^2 = 1.
  cplx gaussian() {
    return cplx(normal_(gen_), normal_(gen_));
  }

  double uniform() { return uniform_(gen_); }

  std::uint64_t integer(std::uint64_t n) {  // uniform in [0, n)
    std::uniform_int_distribution<std::uint64_t> d(0, n - 1);
    return d(gen_);
  }

  std::mt19937_64& engine() { return gen_; }

 private:
  std::mt19937_64 gen_;
  std::normal_distribution<double> normal_{0.0, 0.7071067811865476};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

inline Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.gaussian();
  return t;
}

}  // namespace slpeps

#endif  // SLPEPS_RANDOM_HPP
