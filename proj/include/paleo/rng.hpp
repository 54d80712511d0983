#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace paleo {

/// Counter-style seed. Every random stream in the library is addressed by a
/// (master, stream) pair; child() derives sub-streams from ids such as
/// (block, replication, column), so results never depend on evaluation order.
struct Seed {
  std::uint64_t master = 0;
  std::uint64_t stream = 0;

  Seed child(std::uint64_t id) const noexcept;
  Seed child(std::initializer_list<std::uint64_t> ids) const noexcept;

  bool operator==(const Seed&) const = default;
};

std::uint64_t splitmix64(std::uint64_t x) noexcept;

using Engine = std::mt19937_64;

/// Seeds the engine from all 128 bits of the seed via std::seed_seq.
Engine make_engine(const Seed& seed);

}  // namespace paleo
