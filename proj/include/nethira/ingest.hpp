#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nethira/flow.hpp"

namespace nethira {

inline constexpr std::size_t kDefaultPacketsPerFlow = 5;  // M
inline constexpr std::size_t kDefaultPacketLen = 128;     // L

struct PcapContents {
  std::vector<RawPacket> packets;
  std::size_t truncated_records = 0;  // trailing record cut short by EOF
  std::size_t empty_records = 0;      // zero-length records, skipped
};

/// Reads a classic PCAP capture (either byte order, Ethernet link type).
/// Throws Error{kUnsupportedFormat} for pcapng, unknown magic or a non-Ethernet
/// link type, and Error{kCorruptHeader} when the global header is incomplete.
PcapContents read_pcap(const std::filesystem::path& path);
PcapContents parse_pcap(std::span<const std::uint8_t> file);

enum class ByteOrder { kLittle, kBig };

/// Writes a classic microsecond PCAP with Ethernet link type.
void write_pcap(const std::filesystem::path& path, std::span<const RawPacket> packets,
                ByteOrder order = ByteOrder::kLittle);
Bytes encode_pcap(std::span<const RawPacket> packets, ByteOrder order = ByteOrder::kLittle);

/// Five-tuple of a TCP or UDP packet, if it has one.
std::optional<FlowKey> extract_flow_key(const RawPacket& packet);

enum class FlowDirection { kBidirectional, kUnidirectional };

struct Flow {
  FlowKey key;
  std::vector<RawPacket> packets;  // capture order
};

struct Segmentation {
  std::vector<Flow> flows;  // ordered by first packet
  std::size_t skipped = 0;  // non-TCP/UDP or malformed
};

Segmentation segment_flows(std::span<const RawPacket> packets, FlowDirection direction);

/// Zeroes MAC addresses, IP addresses and TCP/UDP ports. Every other byte,
/// checksums included, is left as captured.
RawPacket anonymize(RawPacket packet);

/// Keeps the first `packets_per_flow` packets, truncates or zero-pads each to
/// `packet_len` bytes and pads the flow with all-zero packets.
FlowRecord normalize_flow(std::span<const RawPacket> flow, std::size_t packets_per_flow,
                          std::size_t packet_len);

/// Concatenation of the packet bodies; length packets_per_flow * packet_len.
Bytes flatten(const FlowRecord& record);

struct PreprocessOptions {
  std::size_t packets_per_flow = kDefaultPacketsPerFlow;
  std::size_t packet_len = kDefaultPacketLen;
  FlowDirection direction = FlowDirection::kBidirectional;
  bool label_from_dirname = false;
};

struct PreprocessStats {
  std::size_t captures = 0;
  std::size_t packets = 0;
  std::size_t skipped_packets = 0;
  std::size_t truncated_records = 0;
  std::size_t flows = 0;
  std::size_t packets_in_flows = 0;

  /// Average number of packets per flow, counted before the M cut.
  double anpf() const {
    return flows == 0 ? 0.0 : static_cast<double>(packets_in_flows) / static_cast<double>(flows);
  }
};

struct PreprocessResult {
  std::vector<FlowRecord> records;
  std::vector<std::string> class_names;
  PreprocessStats stats;
};

/// Full pipeline for one capture: segment, anonymize, normalize.
PreprocessResult preprocess_packets(std::span<const RawPacket> packets,
                                    const PreprocessOptions& options,
                                    std::optional<int> label = std::nullopt);

/// Runs the pipeline over every *.pcap below `dir` in sorted path order. With
/// label_from_dirname, the first directory component under `dir` names the
/// class and ids follow the sorted class names.
PreprocessResult preprocess_directory(const std::filesystem::path& dir,
                                      const PreprocessOptions& options);

}  // namespace nethira
