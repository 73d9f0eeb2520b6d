#pragma once

#include <cstdint>
#include <string_view>

#include "vrg/tensor.hpp"

namespace vrg {

// Deterministic generator with named substream derivation.  All randomness in
// the library flows through this type so that runs reproduce bit-for-bit
// across platforms and standard libraries (std::normal_distribution is
// implementation-defined and is deliberately not used).
//
// Substreams are derived from a key, not from generator state, so the same
// (seed, name) pair always yields the same stream no matter how much the
// parent has been consumed.  Training derives fresh streams per epoch via
// for_epoch(), which is what makes resume-from-checkpoint exact at epoch
// boundaries without serializing generator internals.
class RngStream {
 public:
  explicit RngStream(uint64_t seed);

  uint64_t key() const { return key_; }

  RngStream substream(std::string_view name) const;
  RngStream substream(uint64_t index) const;
  RngStream for_epoch(int epoch, std::string_view name) const;

  uint64_t next_u64();
  // Uniform on [0, 1).
  double uniform();
  double uniform(double lo, double hi);
  // Standard normal via Box-Muller; one value per call, no cached spare.
  double normal();
  double normal(double mean, double stddev);
  // Uniform integer on [0, n).
  int64_t uniform_int(int64_t n);

  void fill_uniform(Tensor& t);
  void fill_normal(Tensor& t);
  Tensor normal_tensor(std::vector<int64_t> shape);
  Tensor uniform_tensor(std::vector<int64_t> shape);

 private:
  uint64_t key_ = 0;
  uint64_t s_[4] = {0, 0, 0, 0};
};

uint64_t hash_combine(uint64_t key, std::string_view name);
uint64_t hash_combine(uint64_t key, uint64_t index);

}  // namespace vrg
