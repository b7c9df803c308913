#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <string_view>
#include <vector>

namespace ddr {

/// Splits on ASCII whitespace, dropping empty pieces.
std::vector<std::string> split_whitespace(std::string_view text);

std::string join(const std::vector<std::string>& parts, std::string_view sep);

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::string_view bytes);

/// 16 lowercase hex digits.
std::string hex64(std::uint64_t value);

/// SplitMix64 finalizer; used to mix seed components.
std::uint64_t mix64(std::uint64_t x);

/// Combines seed components in order. Stable across platforms and runs.
std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> parts);

/// Deterministic 64-bit generator (SplitMix64 stream). Unlike the standard
/// distributions, every derived quantity here is bit-identical across
/// standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 bits of resolution.
  double uniform();
  /// Uniform integer in [0, bound).
  std::uint64_t below(std::uint64_t bound);
  double normal();

 private:
  std::uint64_t state_;
};

/// Temperatures are keyed into seeds by their value in thousandths.
std::uint64_t temperature_key(double temperature);

}  // namespace ddr
