#include "zipcache/workload.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "zipcache/errors.hpp"
#include "zipcache/hash.hpp"

namespace zipcache {

Locality parse_locality(std::string_view s) {
  if (s == "strong") return Locality::kStrong;
  if (s == "moderate") return Locality::kModerate;
  if (s == "weak") return Locality::kWeak;
  if (s == "zero") return Locality::kZero;
  throw ConfigError(fmt::format("unknown locality '{}'", s));
}

const char* locality_name(Locality l) {
  switch (l) {
    case Locality::kStrong:
      return "strong";
    case Locality::kModerate:
      return "moderate";
    case Locality::kWeak:
      return "weak";
    case Locality::kZero:
      break;
  }
  return "zero";
}

double hot_fraction(Locality l) {
  switch (l) {
    case Locality::kStrong:
      return 0.08;
    case Locality::kModerate:
      return 0.20;
    case Locality::kWeak:
      return 0.64;
    case Locality::kZero:
      break;
  }
  return 1.0;
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError(fmt::format("bad value '{}' for {}", v, key));
  }
  return out;
}

std::string hex(std::string_view s) {
  std::string out;
  out.reserve(s.size() * 2);
  for (unsigned char c : s) out += fmt::format("{:02x}", c);
  return out;
}

std::string unhex(std::string_view h) {
  if (h.size() % 2 != 0) throw ConfigError("odd-length hex key in trace");
  std::string out(h.size() / 2, '\0');
  for (size_t i = 0; i < out.size(); ++i) {
    unsigned v = 0;
    auto [p, ec] = std::from_chars(h.data() + 2 * i, h.data() + 2 * i + 2, v, 16);
    if (ec != std::errc() || p != h.data() + 2 * i + 2) throw ConfigError("bad hex key in trace");
    out[i] = static_cast<char>(v);
  }
  return out;
}

}  // namespace

double parse_ratio(std::string_view s) {
  const auto colon = s.find(':');
  if (colon == std::string_view::npos) throw ConfigError(fmt::format("ratio '{}' is not A:B", s));
  const std::string a(s.substr(0, colon));
  const std::string b(s.substr(colon + 1));
  const double x = parse_number<double>("ratio", a);
  const double y = parse_number<double>("ratio", b);
  if (x < 0 || y < 0 || x + y <= 0) throw ConfigError(fmt::format("ratio '{}' is not positive", s));
  return x / (x + y);
}

void WorkloadSpec::validate() const {
  if (object_count == 0) throw ConfigError("object_count must be positive");
  if (key_size < 9 || key_size > 96) throw ConfigError("key_size must be in [9, 96]");
  if (tiny_share < 0 || medium_share < 0 || large_share < 0 || tiny_share + medium_share + large_share <= 0) {
    throw ConfigError("size shares must be non-negative and not all zero");
  }
  if (tiny_size == 0 || medium_size == 0 || large_size == 0) throw ConfigError("object sizes must be positive");
  if (!(eta >= 0 && eta < 1)) throw ConfigError("eta must be in [0, 1)");
  if (!(get_fraction >= 0 && get_fraction <= 1)) throw ConfigError("get fraction must be in [0, 1]");
  if (!(delete_fraction >= 0 && get_fraction + delete_fraction <= 1)) throw ConfigError("delete fraction out of range");
  if (threads == 0) throw ConfigError("threads must be positive");
}

bool WorkloadSpec::apply(const std::string& key, const std::string& value) {
  if (key == "object_count") {
    object_count = parse_number<uint64_t>(key, value);
  } else if (key == "key_size") {
    key_size = parse_number<uint32_t>(key, value);
  } else if (key == "tiny_share") {
    tiny_share = parse_number<double>(key, value);
  } else if (key == "medium_share") {
    medium_share = parse_number<double>(key, value);
  } else if (key == "large_share") {
    large_share = parse_number<double>(key, value);
  } else if (key == "tiny_size") {
    tiny_size = parse_number<uint32_t>(key, value);
  } else if (key == "medium_size") {
    medium_size = parse_number<uint32_t>(key, value);
  } else if (key == "large_size") {
    large_size = parse_number<uint32_t>(key, value);
  } else if (key == "locality") {
    locality = parse_locality(value);
  } else if (key == "eta") {
    eta = parse_number<double>(key, value);
  } else if (key == "get_put_ratio") {
    get_fraction = parse_ratio(value);
  } else if (key == "get_fraction") {
    get_fraction = parse_number<double>(key, value);
  } else if (key == "delete_fraction") {
    delete_fraction = parse_number<double>(key, value);
  } else if (key == "op_count" || key == "ops") {
    op_count = parse_number<uint64_t>(key, value);
  } else if (key == "seed") {
    seed = parse_number<uint64_t>(key, value);
  } else if (key == "threads") {
    threads = parse_number<uint32_t>(key, value);
  } else {
    return false;
  }
  return true;
}

std::string WorkloadSpec::to_config() const {
  std::string out;
  out += fmt::format("object_count={}\n", object_count);
  out += fmt::format("key_size={}\n", key_size);
  out += fmt::format("tiny_share={}\n", tiny_share);
  out += fmt::format("medium_share={}\n", medium_share);
  out += fmt::format("large_share={}\n", large_share);
  out += fmt::format("tiny_size={}\n", tiny_size);
  out += fmt::format("medium_size={}\n", medium_size);
  out += fmt::format("large_size={}\n", large_size);
  out += fmt::format("locality={}\n", locality_name(locality));
  out += fmt::format("eta={}\n", eta);
  out += fmt::format("get_fraction={}\n", get_fraction);
  out += fmt::format("delete_fraction={}\n", delete_fraction);
  out += fmt::format("op_count={}\n", op_count);
  out += fmt::format("seed={}\n", seed);
  out += fmt::format("threads={}\n", threads);
  return out;
}

std::map<std::string, std::string> parse_kv_config(std::string_view text) {
  std::map<std::string, std::string> out;
  size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view() : text.substr(nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError(fmt::format("config line {}: expected key=value", line_no));
    std::string k = trim(std::string_view(t).substr(0, eq));
    std::string v = trim(std::string_view(t).substr(eq + 1));
    if (k.empty()) throw ConfigError(fmt::format("config line {}: empty key", line_no));
    out[std::move(k)] = std::move(v);
  }
  return out;
}

std::map<std::string, std::string> load_kv_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot open config '{}'", path));
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_kv_config(ss.str());
}

size_t random_prefix_length(size_t size, double eta) {
  return static_cast<size_t>(std::floor((1.0 - eta) * static_cast<double>(size) + 1e-9));
}

Bytes gen_value(size_t size, double eta, uint64_t seed, std::string_view key) {
  Bytes v(size, 0);
  const size_t n = random_prefix_length(size, eta);
  std::mt19937_64 rng(seed ^ fnv1a64(key));
  size_t i = 0;
  for (; i + 8 <= n; i += 8) put_u64(v.data() + i, rng());
  if (i < n) {
    uint64_t x = rng();
    for (; i < n; ++i, x >>= 8) v[i] = static_cast<uint8_t>(x);
  }
  return v;
}

std::string format_trace_line(const Operation& op) {
  switch (op.type) {
    case OpType::kGet:
      return "GET " + hex(op.key);
    case OpType::kDelete:
      return "DEL " + hex(op.key);
    case OpType::kPut:
      break;
  }
  return fmt::format("PUT {} {} {}", hex(op.key), op.size, op.value_seed);
}

Operation parse_trace_line(std::string_view line) {
  std::istringstream in{std::string(line)};
  std::string verb;
  std::string key;
  in >> verb >> key;
  if (key.empty()) throw ConfigError("trace line without a key");
  Operation op;
  op.key = unhex(key);
  if (verb == "GET") {
    op.type = OpType::kGet;
  } else if (verb == "DEL") {
    op.type = OpType::kDelete;
  } else if (verb == "PUT") {
    op.type = OpType::kPut;
    if (!(in >> op.size >> op.value_seed)) throw ConfigError("PUT trace line needs size and seed");
  } else {
    throw ConfigError(fmt::format("unknown trace verb '{}'", verb));
  }
  if (op.key.size() >= 8) {
    for (int i = 0; i < 8; ++i) op.id = (op.id << 8) | static_cast<uint8_t>(op.key[i]);
  }
  return op;
}

WorkloadGenerator::WorkloadGenerator(const WorkloadSpec& spec, uint32_t stream)
    : spec_(spec),
      rng_(fmix64(spec.seed ^ (uint64_t{stream} * 0x9E3779B97F4A7C15ULL + 1))),
      suffix_(fmix64(spec.seed + 0x5EEDULL)) {
  spec_.validate();
  const double f = hot_fraction(spec_.locality);
  hot_count_ = std::max<uint64_t>(1, static_cast<uint64_t>(std::llround(f * static_cast<double>(spec_.object_count))));
  hot_count_ = std::min(hot_count_, spec_.object_count);
}

bool WorkloadGenerator::in_hot(uint64_t id) const {
  const uint64_t rel = (id + spec_.object_count - hot_start_) % spec_.object_count;
  return rel < hot_count_;
}

uint64_t WorkloadGenerator::next_id() {
  const uint64_t n = spec_.object_count;
  if (spec_.locality == Locality::kZero || hot_count_ >= n) {
    return std::uniform_int_distribution<uint64_t>(0, n - 1)(rng_);
  }
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  if (coin(rng_) < kHotAccessShare) {
    const uint64_t off = std::uniform_int_distribution<uint64_t>(0, hot_count_ - 1)(rng_);
    return (hot_start_ + off) % n;
  }
  const uint64_t off = std::uniform_int_distribution<uint64_t>(0, n - hot_count_ - 1)(rng_);
  return (hot_start_ + hot_count_ + off) % n;
}

Operation WorkloadGenerator::next() {
  Operation op;
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  const double u = coin(rng_);
  op.id = next_id();
  op.key = key(op.id);
  if (u < spec_.get_fraction) {
    op.type = OpType::kGet;
  } else if (u < spec_.get_fraction + spec_.delete_fraction) {
    op.type = OpType::kDelete;
  } else {
    op.type = OpType::kPut;
    op.size = size_of(op.id);
    op.value_seed = rng_();
  }
  return op;
}

void WorkloadGenerator::shift_hot_region() {
  if (spec_.locality == Locality::kZero) throw ContractViolation("zero locality has no hot region");
  if (2 * hot_count_ > spec_.object_count) throw ContractViolation("hot region too large to move to a disjoint interval");
  hot_start_ = (hot_start_ + hot_count_) % spec_.object_count;
}

std::string WorkloadGenerator::key(uint64_t id) const {
  std::string k(spec_.key_size, '\0');
  for (int i = 0; i < 8; ++i) k[i] = static_cast<char>(id >> (56 - 8 * i));
  uint64_t s = suffix_;
  for (uint32_t i = 8; i < spec_.key_size; ++i) {
    if ((i - 8) % 8 == 0 && i > 8) s = fmix64(s);
    k[i] = static_cast<char>(s >> (8 * ((i - 8) % 8)));
  }
  return k;
}

uint32_t WorkloadGenerator::size_of(uint64_t id) const {
  const double total = spec_.tiny_share + spec_.medium_share + spec_.large_share;
  const double u = static_cast<double>(fmix64(id ^ suffix_) >> 11) * 0x1.0p-53 * total;
  if (u < spec_.tiny_share) return spec_.tiny_size;
  if (u < spec_.tiny_share + spec_.medium_share) return spec_.medium_size;
  return spec_.large_size;
}

Bytes WorkloadGenerator::value(const Operation& op) const {
  return gen_value(op.size, spec_.eta, op.value_seed, op.key);
}

}  // namespace zipcache
