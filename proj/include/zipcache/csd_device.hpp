#pragma once

// Emulated SSD with built-in transparent compression.
//
// The host sees a plain 4KB block device whose logical capacity is
// `expansion_factor` times the physical flash capacity. Each written block is
// compressed on the way in; only the compressed frame (plus a fixed per-frame
// mapping overhead) occupies physical space and counts as flash writes.

#include <chrono>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <string>

#include "zipcache/bytes.hpp"
#include "zipcache/codec.hpp"

namespace zipcache {

/// Mapping metadata charged per stored frame, in bytes.
inline constexpr uint64_t kFrameMetadataBytes = 16;

struct DeviceConfig {
  uint64_t logical_capacity = 0;
  uint64_t physical_capacity = 0;
  uint32_t expansion_factor = 1;
  /// Empty path keeps the frames in memory only.
  std::string backing_path;
  std::chrono::nanoseconds read_delay{0};
  std::chrono::nanoseconds write_delay{0};
  const PageCodec* codec = nullptr;  // null selects lz77_codec()

  /// Config with logical = physical * factor.
  static DeviceConfig with_physical(uint64_t physical, uint32_t factor, std::string path = {});

  void validate() const;
  uint64_t block_count() const { return logical_capacity / kBlockSize; }
};

struct DeviceStats {
  uint64_t v_host = 0;  // bytes accepted over the block interface
  uint64_t v_nand = 0;  // compressed frame bytes + metadata written to flash
  uint64_t reads = 0;
  uint64_t writes = 0;
  uint64_t trims = 0;

  /// v_host / v_nand; 1 when nothing has been written.
  double wr_nand() const {
    return v_nand == 0 ? 1.0 : static_cast<double>(v_host) / static_cast<double>(v_nand);
  }

  static std::string csv_header();  // "v_host,v_nand,reads,writes"
  std::string csv_row() const;
};

/// Frame storage behind the device; see docs/formats.md for the file layout.
class FrameStore {
 public:
  virtual ~FrameStore() = default;
  /// Returns an empty vector for an unmapped block.
  virtual Bytes read(uint64_t lba) = 0;
  virtual void write(uint64_t lba, ByteSpan frame) = 0;
  virtual void erase(uint64_t lba) = 0;
  /// Length of the stored frame, 0 when unmapped.
  virtual uint32_t frame_length(uint64_t lba) const = 0;
  virtual void sync() {}
};

class CsdDevice {
 public:
  /// Opens (or creates) the device. An existing backing file must have been
  /// created with the same logical and physical capacity.
  explicit CsdDevice(DeviceConfig config);
  ~CsdDevice();

  CsdDevice(const CsdDevice&) = delete;
  CsdDevice& operator=(const CsdDevice&) = delete;

  const DeviceConfig& config() const { return config_; }
  uint64_t block_count() const { return config_.block_count(); }

  /// Throws CapacityError (state unchanged) when the compressed frame does not
  /// fit in the remaining physical space.
  void write_block(uint64_t lba, ByteSpan data);
  Bytes read_block(uint64_t lba);
  void read_block_into(uint64_t lba, MutableByteSpan out);
  void trim(uint64_t lba);

  DeviceStats stats() const;
  /// Bytes of physical space held by live frames (including metadata).
  uint64_t physical_used() const;

  /// Rewrites the backing log without dead frames. No-op for memory stores.
  void compact();
  void sync();

  /// Called under the device lock for every accepted write, in order.
  using WriteObserver = std::function<void(uint64_t lba, ByteSpan data)>;
  void set_write_observer(WriteObserver observer);

 private:
  void check_lba(uint64_t lba) const;

  DeviceConfig config_;
  const PageCodec* codec_;
  std::unique_ptr<FrameStore> store_;
  mutable std::mutex mu_;
  DeviceStats stats_;
  uint64_t physical_used_ = 0;
  WriteObserver observer_;
};

}  // namespace zipcache
