#include "zipcache/codec.hpp"

#include <algorithm>
#include <array>
#include <limits>
#include <mutex>
#include <shared_mutex>

#include "zipcache/errors.hpp"

namespace zipcache {
namespace {

// ---------------------------------------------------------------------------
// raw

class RawCodec final : public PageCodec {
 public:
  CodecId id() const override { return CodecId::kRaw; }
  std::string_view name() const override { return "raw"; }

  void encode(ByteSpan block, Bytes& out) const override {
    out.insert(out.end(), block.begin(), block.end());
  }

  void decode_prefix(ByteSpan payload, uint32_t orig_len, MutableByteSpan out) const override {
    if (payload.size() != orig_len || out.size() > orig_len) {
      throw IntegrityError("raw frame length mismatch");
    }
    std::memcpy(out.data(), payload.data(), out.size());
  }
};

// ---------------------------------------------------------------------------
// lz77
//
// A stream of sequences. Each sequence is
//
//   token        u8: high nibble literal count, low nibble match length - 4
//   [lit ext]    LEB128, present when the literal nibble is 15
//   literals
//   offset       u16le, 1..65535 back from the current output position
//   [match ext]  LEB128, present when the match nibble is 15
//
// The stream ends as soon as the output reaches the original length, which
// can happen right after the literals of the final sequence (its match
// nibble is then ignored and no offset follows) or right after a match.

constexpr uint32_t kMinMatch = 4;
constexpr uint32_t kMaxOffset = 65535;
constexpr int kHashBits = 13;
constexpr int kMaxChain = 32;

inline uint32_t read32(const uint8_t* p) {
  uint32_t v;
  std::memcpy(&v, p, 4);
  return v;
}

inline uint32_t hash4(const uint8_t* p) {
  return (read32(p) * 2654435761U) >> (32 - kHashBits);
}

void put_varint(Bytes& out, uint32_t v) {
  while (v >= 0x80) {
    out.push_back(static_cast<uint8_t>(v | 0x80));
    v >>= 7;
  }
  out.push_back(static_cast<uint8_t>(v));
}

class Lz77Codec final : public PageCodec {
 public:
  CodecId id() const override { return CodecId::kLz77; }
  std::string_view name() const override { return "lz77"; }

  void encode(ByteSpan block, Bytes& out) const override;
  void decode_prefix(ByteSpan payload, uint32_t orig_len, MutableByteSpan out) const override;
};

struct MatchFinder {
  const uint8_t* base;
  uint32_t size;
  std::array<int32_t, 1 << kHashBits> head;
  std::vector<int32_t> prev;

  MatchFinder(const uint8_t* data, uint32_t n) : base(data), size(n), prev(n, -1) { head.fill(-1); }

  void insert(uint32_t pos) {
    if (pos + kMinMatch > size) return;
    uint32_t h = hash4(base + pos);
    prev[pos] = head[h];
    head[h] = static_cast<int32_t>(pos);
  }

  // Longest earlier match for `pos`; does not insert `pos`.
  std::pair<uint32_t, uint32_t> find(uint32_t pos) const {
    uint32_t best_len = 0;
    uint32_t best_off = 0;
    if (pos + kMinMatch > size) return {0, 0};
    const uint32_t limit = size - pos;
    int32_t cand = head[hash4(base + pos)];
    for (int depth = 0; cand >= 0 && depth < kMaxChain; ++depth) {
      uint32_t off = pos - static_cast<uint32_t>(cand);
      if (off > kMaxOffset) break;
      const uint8_t* a = base + cand;
      const uint8_t* b = base + pos;
      if (a[best_len] == b[best_len]) {
        uint32_t len = 0;
        while (len < limit && a[len] == b[len]) ++len;
        if (len > best_len) {
          best_len = len;
          best_off = off;
          if (len == limit) break;
        }
      }
      cand = prev[cand];
    }
    if (best_len < kMinMatch) return {0, 0};
    return {best_len, best_off};
  }
};

void emit_sequence(Bytes& out, const uint8_t* lit, uint32_t lit_len, uint32_t off, uint32_t match_len) {
  const uint32_t mcode = match_len >= kMinMatch ? match_len - kMinMatch : 0;
  uint8_t token = static_cast<uint8_t>((std::min<uint32_t>(lit_len, 15) << 4) |
                                       std::min<uint32_t>(mcode, 15));
  out.push_back(token);
  if (lit_len >= 15) put_varint(out, lit_len - 15);
  out.insert(out.end(), lit, lit + lit_len);
  if (match_len == 0) return;
  out.push_back(static_cast<uint8_t>(off));
  out.push_back(static_cast<uint8_t>(off >> 8));
  if (mcode >= 15) put_varint(out, mcode - 15);
}

void Lz77Codec::encode(ByteSpan block, Bytes& out) const {
  const uint8_t* src = block.data();
  const auto n = static_cast<uint32_t>(block.size());
  MatchFinder mf(src, n);

  uint32_t anchor = 0;
  uint32_t i = 0;
  while (i + kMinMatch <= n) {
    auto [len, off] = mf.find(i);
    if (len == 0) {
      mf.insert(i);
      ++i;
      continue;
    }
    // One step of lazy evaluation: prefer a longer match starting one byte later.
    mf.insert(i);
    if (i + 1 + kMinMatch <= n && len < n - i) {
      auto [len2, off2] = mf.find(i + 1);
      if (len2 > len + 1) {
        ++i;
        len = len2;
        off = off2;
        mf.insert(i);
      }
    }
    emit_sequence(out, src + anchor, i - anchor, off, len);
    for (uint32_t k = i + 1; k < i + len; ++k) mf.insert(k);
    i += len;
    anchor = i;
  }
  if (anchor < n) emit_sequence(out, src + anchor, n - anchor, 0, 0);
}

struct Reader {
  ByteSpan in;
  size_t pos = 0;

  uint8_t byte() {
    if (pos >= in.size()) throw IntegrityError("lz77 stream truncated");
    return in[pos++];
  }

  uint32_t varint() {
    uint64_t v = 0;
    for (int shift = 0; shift < 35; shift += 7) {
      uint8_t b = byte();
      v |= static_cast<uint64_t>(b & 0x7f) << shift;
      if ((b & 0x80) == 0) {
        if (v > std::numeric_limits<uint32_t>::max()) break;
        return static_cast<uint32_t>(v);
      }
    }
    throw IntegrityError("lz77 length overflow");
  }
};

inline void copy_match(uint8_t* dst, uint32_t offset, uint32_t len) {
  const uint8_t* src = dst - offset;
  if (offset == 1) {
    std::memset(dst, *src, len);
  } else if (offset >= len) {
    std::memcpy(dst, src, len);
  } else {
    // Overlapping: the pattern repeats with period `offset`.
    uint32_t done = 0;
    while (done < len) {
      uint32_t chunk = std::min(offset, len - done);
      std::memcpy(dst + done, src + done, chunk);
      done += chunk;
    }
  }
}

void Lz77Codec::decode_prefix(ByteSpan payload, uint32_t orig_len, MutableByteSpan out) const {
  if (out.size() > orig_len) throw IntegrityError("lz77 prefix longer than block");
  const auto target = static_cast<uint32_t>(out.size());
  const bool full = target == orig_len;
  Reader r{payload};
  uint8_t* dst = out.data();
  uint32_t o = 0;

  while (o < target) {
    const uint8_t token = r.byte();
    uint32_t lit = token >> 4;
    if (lit == 15) lit += r.varint();
    if (lit > orig_len - o) throw IntegrityError("lz77 literal run past end of block");
    if (r.pos + lit > payload.size()) throw IntegrityError("lz77 literals truncated");
    if (lit >= target - o) {
      std::memcpy(dst + o, payload.data() + r.pos, target - o);
      r.pos += lit;
      o += lit;
      break;
    }
    std::memcpy(dst + o, payload.data() + r.pos, lit);
    r.pos += lit;
    o += lit;

    uint32_t off = r.byte();
    off |= static_cast<uint32_t>(r.byte()) << 8;
    uint32_t mlen = (token & 0x0f) + kMinMatch;
    if ((token & 0x0f) == 15) mlen += r.varint();
    if (off == 0 || off > o) throw IntegrityError("lz77 offset out of range");
    if (mlen > orig_len - o) throw IntegrityError("lz77 match past end of block");
    const uint32_t take = std::min(mlen, target - o);
    copy_match(dst + o, off, take);
    o += mlen;
  }

  if (full && (o != orig_len || r.pos != payload.size())) {
    throw IntegrityError("lz77 stream length mismatch");
  }
}

// ---------------------------------------------------------------------------
// registry

struct Registry {
  std::shared_mutex mu;
  std::array<std::unique_ptr<PageCodec>, 256> codecs;

  Registry() {
    codecs[static_cast<size_t>(CodecId::kRaw)] = std::make_unique<RawCodec>();
    codecs[static_cast<size_t>(CodecId::kLz77)] = std::make_unique<Lz77Codec>();
  }
};

Registry& registry() {
  static Registry r;
  return r;
}

const PageCodec* lookup(uint8_t id) {
  auto& reg = registry();
  std::shared_lock lock(reg.mu);
  return reg.codecs[id].get();
}

}  // namespace

const PageCodec& raw_codec() { return *lookup(static_cast<uint8_t>(CodecId::kRaw)); }
const PageCodec& lz77_codec() { return *lookup(static_cast<uint8_t>(CodecId::kLz77)); }

const PageCodec& codec_for(CodecId id) {
  const PageCodec* c = lookup(static_cast<uint8_t>(id));
  if (c == nullptr) throw IntegrityError("unknown codec id " + std::to_string(static_cast<int>(id)));
  return *c;
}

void register_codec(std::unique_ptr<PageCodec> codec) {
  if (!codec) throw ContractViolation("null codec");
  const auto id = static_cast<uint8_t>(codec->id());
  if (id <= static_cast<uint8_t>(CodecId::kLz77)) {
    throw ContractViolation("codec id collides with a built-in codec");
  }
  auto& reg = registry();
  std::unique_lock lock(reg.mu);
  if (reg.codecs[id]) throw ContractViolation("codec id already registered");
  reg.codecs[id] = std::move(codec);
}

CompressedPage CompressedPage::from_frame(Bytes frame) {
  if (frame.size() < kFrameHeaderSize) throw IntegrityError("frame shorter than header");
  if (frame[0] != kFrameMagic0 || frame[1] != kFrameMagic1) throw IntegrityError("bad frame magic");
  CompressedPage p;
  p.codec_ = static_cast<CodecId>(frame[2]);
  p.orig_len_ = get_u32(&frame[3]);
  p.subpage_size_ = get_u32(&frame[7]);
  if (p.orig_len_ == 0 || p.subpage_size_ == 0 || p.orig_len_ % p.subpage_size_ != 0) {
    throw IntegrityError("bad frame geometry");
  }
  codec_for(p.codec_);
  if (p.codec_ == CodecId::kRaw && frame.size() != kFrameHeaderSize + p.orig_len_) {
    throw IntegrityError("raw frame length mismatch");
  }
  p.frame_ = std::move(frame);
  return p;
}

CompressedPage compress(ByteSpan block, uint32_t subpage_size, const PageCodec& codec) {
  if (subpage_size == 0 || block.empty() || block.size() % subpage_size != 0) {
    throw ContractViolation("block length must be a positive multiple of the sub-page size");
  }
  if (block.size() > std::numeric_limits<uint32_t>::max()) {
    throw ContractViolation("block too large");
  }

  Bytes frame(kFrameHeaderSize);
  frame.reserve(kFrameHeaderSize + block.size() + block.size() / 64 + 16);
  codec.encode(block, frame);
  const PageCodec* used = &codec;
  if (frame.size() - kFrameHeaderSize >= block.size()) {
    frame.resize(kFrameHeaderSize);
    raw_codec().encode(block, frame);
    used = &raw_codec();
  }
  frame[0] = kFrameMagic0;
  frame[1] = kFrameMagic1;
  frame[2] = static_cast<uint8_t>(used->id());
  put_u32(&frame[3], static_cast<uint32_t>(block.size()));
  put_u32(&frame[7], subpage_size);
  frame.shrink_to_fit();
  return CompressedPage::from_frame(std::move(frame));
}

Bytes decompress_full(const CompressedPage& page) {
  Bytes out(page.orig_len());
  codec_for(page.codec()).decode_prefix(page.payload(), page.orig_len(), out);
  return out;
}

size_t decompress_prefix_into(const CompressedPage& page, uint32_t m, MutableByteSpan out) {
  if (m < 1 || m > page.subpage_count()) {
    throw ContractViolation("prefix sub-page count out of range");
  }
  const size_t want = static_cast<size_t>(m) * page.subpage_size();
  if (out.size() < want) throw ContractViolation("output buffer too small");
  codec_for(page.codec()).decode_prefix(page.payload(), page.orig_len(), out.first(want));
  return want;
}

Bytes decompress_prefix(const CompressedPage& page, uint32_t m) {
  if (m < 1 || m > page.subpage_count()) {
    throw ContractViolation("prefix sub-page count out of range");
  }
  Bytes out(static_cast<size_t>(m) * page.subpage_size());
  decompress_prefix_into(page, m, out);
  return out;
}

CompressionRatio ratio(const CompressedPage& page) {
  if (page.empty()) return {};
  double r = static_cast<double>(page.orig_len()) / static_cast<double>(page.size());
  return {std::max(1.0, r)};
}

}  // namespace zipcache
