#include "paleo/rng.hpp"

namespace paleo {

std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

Seed Seed::child(std::uint64_t id) const noexcept {
  return {master, splitmix64(stream ^ splitmix64(id + 0x632be59bd9b4e019ULL))};
}

Seed Seed::child(std::initializer_list<std::uint64_t> ids) const noexcept {
  Seed s = *this;
  for (auto id : ids) s = s.child(id);
  return s;
}

Engine make_engine(const Seed& seed) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed.master),
                    static_cast<std::uint32_t>(seed.master >> 32),
                    static_cast<std::uint32_t>(seed.stream),
                    static_cast<std::uint32_t>(seed.stream >> 32)};
  return Engine(seq);
}

}  // namespace paleo
