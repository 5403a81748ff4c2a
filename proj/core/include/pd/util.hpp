#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace pd {

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct MalformedTag : ParseError {
  using ParseError::ParseError;
};
struct MissingAttribute : ParseError {
  using ParseError::ParseError;
};
struct AttributeRange : ParseError {
  using ParseError::ParseError;
};
struct MissingSpan : ParseError {
  using ParseError::ParseError;
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct EncodingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct SequenceTooLong : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct CacheMismatch : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct LengthOverflow : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NonFiniteLoss : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct PlanParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Deterministic RNG
// ---------------------------------------------------------------------------

// SplitMix64; used to derive independent substream seeds from (seed, tags).
uint64_t splitmix64(uint64_t x);

// Combine a base seed with stream tags, e.g. (seed, stage, span).
uint64_t derive_seed(uint64_t base, uint64_t a = 0, uint64_t b = 0,
                     uint64_t c = 0);

class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  // Uniform integer in [lo, hi] inclusive.
  int uniform_int(int lo, int hi) {
    return std::uniform_int_distribution<int>(lo, hi)(gen_);
  }
  double uniform_real(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(gen_);
  }
  double normal(double mean, double stddev) {
    return std::normal_distribution<double>(mean, stddev)(gen_);
  }
  uint64_t next_u64() { return gen_(); }

  std::mt19937_64& gen() { return gen_; }

 private:
  std::mt19937_64 gen_;
};

// ---------------------------------------------------------------------------
// Hashing
// ---------------------------------------------------------------------------

uint64_t fnv1a(const void* data, size_t len, uint64_t seed = 0xcbf29ce484222325ULL);
uint64_t fnv1a_str(const std::string& s, uint64_t seed = 0xcbf29ce484222325ULL);

// SHA-1 of `git hash-object` framing ("blob <len>\0" + content), hex-encoded.
std::string git_blob_sha1(const std::string& content);
std::string git_blob_sha1_file(const std::string& path);

// ---------------------------------------------------------------------------
// Small file helpers
// ---------------------------------------------------------------------------

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& content);
std::vector<std::string> read_lines(const std::string& path);
void make_dirs(const std::string& path);
bool file_exists(const std::string& path);

std::string format_double(double v, int precision = 6);

}  // namespace pd
