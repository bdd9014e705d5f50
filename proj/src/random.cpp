#include "abe/random.hpp"

namespace abe {

Tensor uniform_tensor(const Shape& shape, double lo, double hi, Rng& rng) {
  Tensor t(shape, 0.0);
  std::uniform_real_distribution<double> dist(lo, hi);
  for (auto& v : t.data()) v = dist(rng);
  return t;
}

Tensor normal_tensor(const Shape& shape, double mean, double stddev, Rng& rng) {
  Tensor t(shape, mean);
  if (stddev == 0.0) return t;
  std::normal_distribution<double> dist(mean, stddev);
  for (auto& v : t.data()) v = dist(rng);
  return t;
}

}  // namespace abe
