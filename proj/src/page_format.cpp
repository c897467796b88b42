#include "zipcache/page_format.hpp"

#include <cstring>

#include "zipcache/errors.hpp"

namespace zipcache {

Bytes MediumRef::encode() const {
  Bytes b(kEncodedSize);
  put_u32(b.data(), handle);
  put_u16(b.data() + 4, comp_len);
  put_u16(b.data() + 6, orig_len);
  return b;
}

MediumRef MediumRef::decode(ByteSpan b) {
  if (b.size() != kEncodedSize) throw IntegrityError("medium locator has wrong size");
  return MediumRef{get_u32(b.data()), get_u16(b.data() + 4), get_u16(b.data() + 6)};
}

size_t dram_subpage_bytes(std::span<const DramEntry> entries) {
  size_t n = kDramSubpageHeader;
  for (const auto& e : entries) n += e.encoded_size();
  return n;
}

void encode_dram_subpage(std::span<const DramEntry> entries, MutableByteSpan out) {
  std::memset(out.data(), 0, out.size());
  if (entries.size() > 255 || dram_subpage_bytes(entries) > out.size()) {
    throw ContractViolation("entries do not fit in the DRAM sub-page");
  }
  uint8_t* p = out.data();
  *p++ = static_cast<uint8_t>(entries.size());
  for (const auto& e : entries) {
    if (e.key.size() > kMaxKeyLength || e.payload.size() > 0xFFFF) throw ContractViolation("entry too large");
    *p++ = static_cast<uint8_t>(e.key.size());
    *p++ = static_cast<uint8_t>(e.kind);
    put_u16(p, static_cast<uint16_t>(e.payload.size()));
    p += 2;
    std::memcpy(p, e.key.data(), e.key.size());
    p += e.key.size();
    if (!e.payload.empty()) std::memcpy(p, e.payload.data(), e.payload.size());
    p += e.payload.size();
  }
}

namespace {

// Walks DRAM sub-page entries; `fn` returns false to stop early.
template <typename F>
void walk_dram(ByteSpan sub, F&& fn) {
  if (sub.empty()) throw IntegrityError("empty DRAM sub-page");
  const size_t count = sub[0];
  size_t pos = kDramSubpageHeader;
  for (size_t i = 0; i < count; ++i) {
    if (pos + kDramEntryHeader > sub.size()) throw IntegrityError("DRAM sub-page entry header out of bounds");
    const size_t klen = sub[pos];
    const uint8_t kind = sub[pos + 1];
    const size_t plen = get_u16(&sub[pos + 2]);
    pos += kDramEntryHeader;
    if (kind > static_cast<uint8_t>(EntryKind::kTombstone)) throw IntegrityError("bad DRAM entry kind");
    if (pos + klen + plen > sub.size()) throw IntegrityError("DRAM sub-page entry out of bounds");
    std::string_view key(reinterpret_cast<const char*>(&sub[pos]), klen);
    ByteSpan payload = sub.subspan(pos + klen, plen);
    pos += klen + plen;
    if (!fn(key, static_cast<EntryKind>(kind), payload)) return;
  }
}

template <typename F>
void walk_ssd(ByteSpan sub, F&& fn) {
  if (sub.size() < kSsdSubpageHeader) throw IntegrityError("short SSD sub-page");
  const size_t count = get_u16(sub.data());
  size_t pos = kSsdSubpageHeader;
  for (size_t i = 0; i < count; ++i) {
    if (pos + kSsdEntryHeader > sub.size()) throw IntegrityError("SSD sub-page entry header out of bounds");
    const size_t klen = sub[pos];
    const size_t vlen = get_u16(&sub[pos + 1]);
    pos += kSsdEntryHeader;
    if (vlen == kSsdTombstoneLen) throw IntegrityError("tombstone stored in SSD sub-page");
    if (pos + klen + vlen > sub.size()) throw IntegrityError("SSD sub-page entry out of bounds");
    std::string_view key(reinterpret_cast<const char*>(&sub[pos]), klen);
    ByteSpan value = sub.subspan(pos + klen, vlen);
    pos += klen + vlen;
    if (!fn(key, value)) return;
  }
}

}  // namespace

void decode_dram_subpage(ByteSpan sub, std::vector<DramEntry>& out) {
  walk_dram(sub, [&](std::string_view key, EntryKind kind, ByteSpan payload) {
    out.push_back(DramEntry{std::string(key), kind, Bytes(payload.begin(), payload.end())});
    return true;
  });
}

std::optional<DramSlotView> find_in_dram_subpage(ByteSpan sub, std::string_view key) {
  std::optional<DramSlotView> hit;
  walk_dram(sub, [&](std::string_view k, EntryKind kind, ByteSpan payload) {
    if (k < key) return true;
    if (k == key) hit = DramSlotView{kind, payload};
    return false;
  });
  return hit;
}

size_t ssd_subpage_bytes(std::span<const SsdEntry> entries) {
  size_t n = kSsdSubpageHeader;
  for (const auto& e : entries) n += e.encoded_size();
  return n;
}

void encode_ssd_subpage(std::span<const SsdEntry> entries, MutableByteSpan out) {
  std::memset(out.data(), 0, out.size());
  if (entries.size() > 0xFFFF || ssd_subpage_bytes(entries) > out.size()) {
    throw ContractViolation("entries do not fit in the SSD sub-page");
  }
  uint8_t* p = out.data();
  put_u16(p, static_cast<uint16_t>(entries.size()));
  p += kSsdSubpageHeader;
  for (const auto& e : entries) {
    if (e.key.size() > 255 || e.value.size() >= kSsdTombstoneLen) throw ContractViolation("entry too large");
    *p++ = static_cast<uint8_t>(e.key.size());
    put_u16(p, static_cast<uint16_t>(e.value.size()));
    p += 2;
    std::memcpy(p, e.key.data(), e.key.size());
    p += e.key.size();
    if (!e.value.empty()) std::memcpy(p, e.value.data(), e.value.size());
    p += e.value.size();
  }
}

void decode_ssd_subpage(ByteSpan sub, std::vector<SsdEntry>& out) {
  walk_ssd(sub, [&](std::string_view key, ByteSpan value) {
    out.push_back(SsdEntry{std::string(key), Bytes(value.begin(), value.end())});
    return true;
  });
}

std::optional<ByteSpan> find_in_ssd_subpage(ByteSpan sub, std::string_view key) {
  std::optional<ByteSpan> hit;
  walk_ssd(sub, [&](std::string_view k, ByteSpan value) {
    if (k < key) return true;
    if (k == key) hit = value;
    return false;
  });
  return hit;
}

}  // namespace zipcache
