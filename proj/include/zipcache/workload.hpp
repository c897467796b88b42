#pragma once

// Deterministic cache workloads: keyed by a dense id space with a movable hot
// region, sized by a tiny/medium/large mix and filled with values whose
// compressibility is set by eta (the zero fraction of each value).

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <string_view>

#include "zipcache/bytes.hpp"

namespace zipcache {

enum class Locality { kStrong, kModerate, kWeak, kZero };

Locality parse_locality(std::string_view s);
const char* locality_name(Locality l);
/// Fraction of the key space that receives 80% of accesses (1 for kZero).
double hot_fraction(Locality l);

inline constexpr double kHotAccessShare = 0.8;

struct WorkloadSpec {
  uint64_t object_count = 1'000'000;
  uint32_t key_size = 16;
  double tiny_share = 1.0;
  double medium_share = 0.0;
  double large_share = 0.0;
  uint32_t tiny_size = 64;
  uint32_t medium_size = 256;
  uint32_t large_size = 4096;
  Locality locality = Locality::kModerate;
  double eta = 0.5;           // zero fraction of each value
  double get_fraction = 0.5;  // from get_put_ratio A:B
  double delete_fraction = 0.0;
  uint64_t op_count = 1'000'000;
  uint64_t seed = 1;
  uint32_t threads = 1;

  void validate() const;
  /// Applies one key=value setting; returns false for an unknown key.
  bool apply(const std::string& key, const std::string& value);
  /// key=value lines that apply() reads back to the same spec.
  std::string to_config() const;
};

/// Parses "A:B" into A / (A + B).
double parse_ratio(std::string_view s);

/// Parses key=value lines; '#' starts a comment. Throws ConfigError on
/// malformed lines.
std::map<std::string, std::string> parse_kv_config(std::string_view text);
std::map<std::string, std::string> load_kv_config(const std::string& path);

/// First floor((1 - eta) * size) bytes pseudorandom from (seed, key), the
/// rest zero.
Bytes gen_value(size_t size, double eta, uint64_t seed, std::string_view key);
size_t random_prefix_length(size_t size, double eta);

enum class OpType { kGet, kPut, kDelete };

struct Operation {
  OpType type = OpType::kGet;
  uint64_t id = 0;
  std::string key;
  uint32_t size = 0;        // value size for puts
  uint64_t value_seed = 0;  // gen_value seed for puts
};

/// Trace line format: "GET <hex key>", "DEL <hex key>" or
/// "PUT <hex key> <size> <value seed>".
std::string format_trace_line(const Operation& op);
Operation parse_trace_line(std::string_view line);

class WorkloadGenerator {
 public:
  /// `stream` selects an independent sequence (one per worker thread).
  explicit WorkloadGenerator(const WorkloadSpec& spec, uint32_t stream = 0);

  const WorkloadSpec& spec() const { return spec_; }

  Operation next();
  /// A key drawn with the locality skew.
  uint64_t next_id();

  /// Moves the hot region to the next disjoint interval. Rejected for zero
  /// locality and for hot regions larger than half the key space.
  void shift_hot_region();
  uint64_t hot_start() const { return hot_start_; }
  uint64_t hot_count() const { return hot_count_; }
  bool in_hot(uint64_t id) const;

  std::string key(uint64_t id) const;
  uint32_t size_of(uint64_t id) const;
  Bytes value(const Operation& op) const;

 private:
  WorkloadSpec spec_;
  std::mt19937_64 rng_;
  uint64_t suffix_;
  uint64_t hot_start_ = 0;
  uint64_t hot_count_;
};

}  // namespace zipcache
