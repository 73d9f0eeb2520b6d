#include "vrg/rng.hpp"

#include <cmath>
#include <numbers>

#include "vrg/errors.hpp"

namespace vrg {

namespace {

uint64_t splitmix64(uint64_t& x) {
  x += 0x9e3779b97f4a7c15ULL;
  uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

constexpr uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
constexpr uint64_t kFnvPrime = 0x100000001b3ULL;

uint64_t fnv1a(uint64_t h, const unsigned char* p, size_t n) {
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= kFnvPrime;
  }
  return h;
}

}  // namespace

uint64_t hash_combine(uint64_t key, std::string_view name) {
  uint64_t h = fnv1a(kFnvOffset, reinterpret_cast<const unsigned char*>(&key), sizeof(key));
  h = fnv1a(h, reinterpret_cast<const unsigned char*>(name.data()), name.size());
  uint64_t x = h;
  return splitmix64(x);
}

uint64_t hash_combine(uint64_t key, uint64_t index) {
  uint64_t h = fnv1a(kFnvOffset, reinterpret_cast<const unsigned char*>(&key), sizeof(key));
  h = fnv1a(h, reinterpret_cast<const unsigned char*>(&index), sizeof(index));
  uint64_t x = h;
  return splitmix64(x);
}

RngStream::RngStream(uint64_t seed) : key_(seed) {
  uint64_t x = seed;
  for (auto& s : s_) s = splitmix64(x);
}

RngStream RngStream::substream(std::string_view name) const {
  return RngStream(hash_combine(key_, name));
}

RngStream RngStream::substream(uint64_t index) const {
  return RngStream(hash_combine(key_, index));
}

RngStream RngStream::for_epoch(int epoch, std::string_view name) const {
  return substream(static_cast<uint64_t>(epoch)).substream(name);
}

uint64_t RngStream::next_u64() {
  // xoshiro256**
  const uint64_t result = rotl(s_[1] * 5, 7) * 9;
  const uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = rotl(s_[3], 45);
  return result;
}

double RngStream::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double RngStream::normal() {
  double u1 = uniform();
  const double u2 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double RngStream::normal(double mean, double stddev) { return mean + stddev * normal(); }

int64_t RngStream::uniform_int(int64_t n) {
  VRG_CHECK(n > 0, "uniform_int needs n > 0, got ", n);
  // Rejection sampling to avoid modulo bias.
  const uint64_t un = static_cast<uint64_t>(n);
  const uint64_t limit = UINT64_MAX - UINT64_MAX % un;
  uint64_t r = next_u64();
  while (r >= limit) r = next_u64();
  return static_cast<int64_t>(r % un);
}

void RngStream::fill_uniform(Tensor& t) {
  for (int64_t i = 0; i < t.size(); ++i) t.at(i) = uniform();
}

void RngStream::fill_normal(Tensor& t) {
  for (int64_t i = 0; i < t.size(); ++i) t.at(i) = normal();
}

Tensor RngStream::normal_tensor(std::vector<int64_t> shape) {
  Tensor t(std::move(shape));
  fill_normal(t);
  return t;
}

Tensor RngStream::uniform_tensor(std::vector<int64_t> shape) {
  Tensor t(std::move(shape));
  fill_uniform(t);
  return t;
}

}  // namespace vrg
