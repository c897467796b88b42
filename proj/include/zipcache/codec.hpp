#pragma once

// Page codec with prefix (early-terminated) decoding.
//
// Every compressed page is stored as a self-describing frame; the layout is
// specified byte-for-byte in docs/formats.md:
//
//   0  u8[2]  magic 'Z' 'P'
//   2  u8     codec id (0 = raw, 1 = lz77)
//   3  u32le  original length
//   7  u32le  sub-page size
//   11 ...    codec payload
//
// Decoding can stop after any number of leading sub-pages, and the work done
// is proportional to the bytes produced.

#include <cstdint>
#include <memory>
#include <string_view>

#include "zipcache/bytes.hpp"

namespace zipcache {

enum class CodecId : uint8_t { kRaw = 0, kLz77 = 1 };

inline constexpr size_t kFrameHeaderSize = 11;
inline constexpr uint8_t kFrameMagic0 = 'Z';
inline constexpr uint8_t kFrameMagic1 = 'P';

/// Codec plug-in. Implementations must be stateless and thread-safe.
class PageCodec {
 public:
  virtual ~PageCodec() = default;

  virtual CodecId id() const = 0;
  virtual std::string_view name() const = 0;

  /// Appends the encoded form of `block` to `out`.
  virtual void encode(ByteSpan block, Bytes& out) const = 0;

  /// Reconstructs the first `out.size()` bytes of a block whose full length
  /// is `orig_len`. When `out.size() == orig_len` the payload must be consumed
  /// exactly. Throws IntegrityError on malformed input.
  virtual void decode_prefix(ByteSpan payload, uint32_t orig_len, MutableByteSpan out) const = 0;
};

const PageCodec& raw_codec();
const PageCodec& lz77_codec();

/// Looks up a codec by frame id; throws IntegrityError for unknown ids.
const PageCodec& codec_for(CodecId id);

/// Makes an external codec available to frame decoding. The id must not be
/// one of the built-ins.
void register_codec(std::unique_ptr<PageCodec> codec);

struct CompressionRatio {
  double value = 1.0;
};

/// A framed compressed image of a block of `subpage_count` equal sub-pages.
class CompressedPage {
 public:
  CompressedPage() = default;

  /// Adopts a serialized frame after validating its header.
  static CompressedPage from_frame(Bytes frame);

  ByteSpan frame() const { return frame_; }
  ByteSpan payload() const { return ByteSpan(frame_).subspan(kFrameHeaderSize); }
  size_t size() const { return frame_.size(); }
  bool empty() const { return frame_.empty(); }

  CodecId codec() const { return codec_; }
  uint32_t orig_len() const { return orig_len_; }
  uint32_t subpage_size() const { return subpage_size_; }
  uint32_t subpage_count() const { return subpage_size_ == 0 ? 0 : orig_len_ / subpage_size_; }

 private:
  Bytes frame_;
  CodecId codec_ = CodecId::kRaw;
  uint32_t orig_len_ = 0;
  uint32_t subpage_size_ = 0;
};

/// Compresses `block`, falling back to a raw frame when encoding does not
/// shrink it. Throws ContractViolation unless the block is a positive
/// multiple of `subpage_size`.
CompressedPage compress(ByteSpan block, uint32_t subpage_size, const PageCodec& codec = lz77_codec());

Bytes decompress_full(const CompressedPage& page);

/// First `m` sub-pages of the original block, 1 <= m <= subpage_count.
Bytes decompress_prefix(const CompressedPage& page, uint32_t m);

/// Allocation-free form of decompress_prefix; `out` must hold at least
/// m * subpage_size bytes. Returns the number of bytes written.
size_t decompress_prefix_into(const CompressedPage& page, uint32_t m, MutableByteSpan out);

/// orig_len / frame length, floored at 1.
CompressionRatio ratio(const CompressedPage& page);

}  // namespace zipcache
