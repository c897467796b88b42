#pragma once

// Sub-page layouts of DRAM leaves and SSD super-leaves. Both are documented
// byte-for-byte in docs/formats.md.
//
// DRAM sub-page (256B):
//   u8 count, then `count` entries sorted by key:
//   u8 key_len | u8 kind | u16le payload_len | key | payload
//
// SSD sub-page (4096B):
//   u16le count, then `count` entries sorted by key:
//   u8 key_len | u16le val_len | key | value
// Unused bytes of either sub-page are zero.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "zipcache/bytes.hpp"

namespace zipcache {

inline constexpr size_t kMaxKeyLength = 96;

enum class EntryKind : uint8_t { kInline = 0, kMediumRef = 1, kTombstone = 2 };

/// Locator of an individually compressed medium object.
struct MediumRef {
  uint32_t handle = 0;
  uint16_t comp_len = 0;
  uint16_t orig_len = 0;

  static constexpr size_t kEncodedSize = 8;
  Bytes encode() const;
  static MediumRef decode(ByteSpan b);
};

struct DramEntry {
  std::string key;
  EntryKind kind = EntryKind::kInline;
  Bytes payload;  // inline value, encoded MediumRef, or empty for tombstones

  size_t encoded_size() const { return 4 + key.size() + payload.size(); }
};

inline constexpr size_t kDramSubpageHeader = 1;
inline constexpr size_t kDramEntryHeader = 4;

/// Bytes needed for a DRAM sub-page holding `entries`.
size_t dram_subpage_bytes(std::span<const DramEntry> entries);

/// Writes key-sorted entries into `out` (zero-filled first). Throws
/// ContractViolation if they do not fit.
void encode_dram_subpage(std::span<const DramEntry> entries, MutableByteSpan out);

/// Appends the entries of a sub-page to `out`; throws IntegrityError on
/// malformed bytes.
void decode_dram_subpage(ByteSpan sub, std::vector<DramEntry>& out);

struct DramSlotView {
  EntryKind kind;
  ByteSpan payload;
};

/// Looks up one key without allocating.
std::optional<DramSlotView> find_in_dram_subpage(ByteSpan sub, std::string_view key);

struct SsdEntry {
  std::string key;
  Bytes value;

  size_t encoded_size() const { return 3 + key.size() + value.size(); }
};

inline constexpr size_t kSsdSubpageHeader = 2;
inline constexpr size_t kSsdEntryHeader = 3;
inline constexpr uint16_t kSsdTombstoneLen = 0xFFFF;

size_t ssd_subpage_bytes(std::span<const SsdEntry> entries);
void encode_ssd_subpage(std::span<const SsdEntry> entries, MutableByteSpan out);
void decode_ssd_subpage(ByteSpan sub, std::vector<SsdEntry>& out);
std::optional<ByteSpan> find_in_ssd_subpage(ByteSpan sub, std::string_view key);

}  // namespace zipcache
