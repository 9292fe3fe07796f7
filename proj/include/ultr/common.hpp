#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace ultr {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input text. Carries the 1-based line number (0 if unknown).
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Well-formed input that violates a domain invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Invalid experiment configuration (CLI exit code 1).
class ConfigError : public Error {
 public:
  using Error::Error;
};

using Rng = std::mt19937_64;

/// Stream tags. Every random consumer draws from its own stream so that
/// changing one seed never perturbs another consumer.
enum class Stream : std::uint64_t {
  features = 1,
  teacher = 2,
  calibration = 3,
  split = 4,
  policy = 5,
  clicks = 6,
  init = 7,
  shuffle = 8,
  dropout = 9,
};

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) noexcept {
  return splitmix64(splitmix64(a) ^ (b + 0x632be59bd9b4e019ULL));
}

/// 64-bit FNV-1a, used for name-keyed seeds and config hashes.
constexpr std::uint64_t fnv1a(std::string_view s) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Independent substream keyed by (seed, stream tag, index).
inline Rng make_stream(std::uint64_t seed, Stream stream, std::uint64_t index = 0) {
  return Rng(mix_seed(mix_seed(seed, static_cast<std::uint64_t>(stream)), index));
}

}  // namespace ultr
