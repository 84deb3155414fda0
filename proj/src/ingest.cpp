#include "nethira/ingest.hpp"

#include <algorithm>
#include <fstream>
#include <iterator>
#include <map>
#include <set>
#include <sstream>
#include <tuple>

#include "nethira/error.hpp"
#include "nethira/protocol_map.hpp"

namespace nethira {

namespace {

constexpr std::uint32_t kPcapMagic = 0xA1B2C3D4;
constexpr std::uint32_t kPcapMagicSwapped = 0xD4C3B2A1;
constexpr std::uint32_t kPcapngMagic = 0x0A0D0D0A;
constexpr std::uint32_t kLinkTypeEthernet = 1;
constexpr std::size_t kGlobalHeaderLen = 24;
constexpr std::size_t kRecordHeaderLen = 16;

std::uint32_t read_u32(std::span<const std::uint8_t> b, std::size_t at, bool big_endian) {
  if (big_endian) {
    return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) |
           (std::uint32_t{b[at + 2]} << 8) | std::uint32_t{b[at + 3]};
  }
  return (std::uint32_t{b[at + 3]} << 24) | (std::uint32_t{b[at + 2]} << 16) |
         (std::uint32_t{b[at + 1]} << 8) | std::uint32_t{b[at]};
}

void put_u32(Bytes& out, std::uint32_t v, ByteOrder order) {
  if (order == ByteOrder::kBig) {
    for (int shift = 24; shift >= 0; shift -= 8) out.push_back(static_cast<std::uint8_t>(v >> shift));
  } else {
    for (int shift = 0; shift <= 24; shift += 8) out.push_back(static_cast<std::uint8_t>(v >> shift));
  }
}

void put_u16(Bytes& out, std::uint16_t v, ByteOrder order) {
  if (order == ByteOrder::kBig) {
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
  } else {
    out.push_back(static_cast<std::uint8_t>(v));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
  }
}

std::uint16_t read_be16(const Bytes& b, std::size_t at) {
  return static_cast<std::uint16_t>((b[at] << 8) | b[at + 1]);
}

IpAddress address_from(const Bytes& b, const FieldSpan& span) {
  IpAddress ip;
  ip.version = span.length == 4 ? 4 : 6;
  std::copy_n(b.begin() + static_cast<std::ptrdiff_t>(span.offset), span.length, ip.bytes.begin());
  return ip;
}

void zero_span(Bytes& b, const FieldSpan* span) {
  if (span == nullptr) return;
  std::fill_n(b.begin() + static_cast<std::ptrdiff_t>(span->offset), span->length, std::uint8_t{0});
}

}  // namespace

std::string IpAddress::to_string() const {
  std::ostringstream out;
  if (version == 4) {
    out << int{bytes[0]} << '.' << int{bytes[1]} << '.' << int{bytes[2]} << '.' << int{bytes[3]};
  } else {
    out << std::hex;
    for (std::size_t i = 0; i < 16; i += 2) {
      if (i) out << ':';
      out << ((bytes[i] << 8) | bytes[i + 1]);
    }
  }
  return out.str();
}

FlowKey FlowKey::canonical() const {
  if (std::tie(dst_ip, dst_port) < std::tie(src_ip, src_port)) {
    return FlowKey{dst_ip, dst_port, src_ip, src_port, transport};
  }
  return *this;
}

std::string FlowKey::to_string() const {
  std::ostringstream out;
  out << (transport == Transport::kTcp ? "TCP " : "UDP ") << src_ip.to_string() << ':' << src_port
      << " -> " << dst_ip.to_string() << ':' << dst_port;
  return out.str();
}

PcapContents parse_pcap(std::span<const std::uint8_t> file) {
  if (file.size() >= 4 && read_u32(file, 0, false) == kPcapngMagic) {
    throw Error(ErrorCode::kUnsupportedFormat, "pcapng captures are not supported");
  }
  if (file.size() < kGlobalHeaderLen) {
    throw Error(ErrorCode::kCorruptHeader, "file shorter than the 24-byte PCAP global header");
  }
  const std::uint32_t magic = read_u32(file, 0, false);
  bool big_endian = false;
  if (magic == kPcapMagic) {
    big_endian = false;
  } else if (magic == kPcapMagicSwapped) {
    big_endian = true;
  } else {
    std::ostringstream msg;
    msg << "unknown capture magic 0x" << std::hex << magic;
    throw Error(ErrorCode::kUnsupportedFormat, msg.str());
  }
  const std::uint32_t link_type = read_u32(file, 20, big_endian);
  if (link_type != kLinkTypeEthernet) {
    throw Error(ErrorCode::kUnsupportedFormat,
                "link type " + std::to_string(link_type) + " is not Ethernet");
  }

  PcapContents contents;
  std::size_t at = kGlobalHeaderLen;
  std::uint64_t index = 0;
  while (at < file.size()) {
    if (file.size() - at < kRecordHeaderLen) {
      ++contents.truncated_records;
      break;
    }
    const std::uint32_t ts_sec = read_u32(file, at, big_endian);
    const std::uint32_t ts_usec = read_u32(file, at + 4, big_endian);
    const std::uint32_t incl_len = read_u32(file, at + 8, big_endian);
    at += kRecordHeaderLen;
    if (file.size() - at < incl_len) {
      ++contents.truncated_records;
      break;
    }
    if (incl_len == 0) {
      ++contents.empty_records;
    } else {
      RawPacket packet;
      packet.capture_index = index;
      packet.timestamp_us = static_cast<std::int64_t>(ts_sec) * 1'000'000 + ts_usec;
      packet.link_bytes.assign(file.begin() + static_cast<std::ptrdiff_t>(at),
                               file.begin() + static_cast<std::ptrdiff_t>(at + incl_len));
      contents.packets.push_back(std::move(packet));
    }
    at += incl_len;
    ++index;
  }
  return contents;
}

PcapContents read_pcap(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  const Bytes file((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_pcap(file);
}

Bytes encode_pcap(std::span<const RawPacket> packets, ByteOrder order) {
  Bytes out;
  put_u32(out, kPcapMagic, order);
  put_u16(out, 2, order);
  put_u16(out, 4, order);
  put_u32(out, 0, order);  // thiszone
  put_u32(out, 0, order);  // sigfigs
  put_u32(out, 65535, order);
  put_u32(out, kLinkTypeEthernet, order);
  for (const RawPacket& p : packets) {
    put_u32(out, static_cast<std::uint32_t>(p.timestamp_us / 1'000'000), order);
    put_u32(out, static_cast<std::uint32_t>(p.timestamp_us % 1'000'000), order);
    put_u32(out, static_cast<std::uint32_t>(p.link_bytes.size()), order);
    put_u32(out, static_cast<std::uint32_t>(p.link_bytes.size()), order);
    out.insert(out.end(), p.link_bytes.begin(), p.link_bytes.end());
  }
  return out;
}

void write_pcap(const std::filesystem::path& path, std::span<const RawPacket> packets,
                ByteOrder order) {
  const Bytes data = encode_pcap(packets, order);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
}

std::optional<FlowKey> extract_flow_key(const RawPacket& packet) {
  const FieldSpanMap map = dissect_headers(packet.link_bytes);
  const Bytes& b = packet.link_bytes;

  FlowKey key;
  const FieldSpan* src = map.find("ip.src");
  const FieldSpan* dst = map.find("ip.dst");
  if (src == nullptr) {
    src = map.find("ipv6.src");
    dst = map.find("ipv6.dst");
  }
  if (src == nullptr || dst == nullptr) return std::nullopt;
  key.src_ip = address_from(b, *src);
  key.dst_ip = address_from(b, *dst);

  const FieldSpan* sport = map.find("tcp.src_port");
  const FieldSpan* dport = map.find("tcp.dst_port");
  key.transport = Transport::kTcp;
  if (sport == nullptr) {
    sport = map.find("udp.src_port");
    dport = map.find("udp.dst_port");
    key.transport = Transport::kUdp;
  }
  if (sport == nullptr || dport == nullptr) return std::nullopt;
  key.src_port = read_be16(b, sport->offset);
  key.dst_port = read_be16(b, dport->offset);
  return key;
}

Segmentation segment_flows(std::span<const RawPacket> packets, FlowDirection direction) {
  Segmentation result;
  std::map<FlowKey, std::size_t> index;
  for (const RawPacket& packet : packets) {
    std::optional<FlowKey> key = extract_flow_key(packet);
    if (!key) {
      ++result.skipped;
      continue;
    }
    if (direction == FlowDirection::kBidirectional) key = key->canonical();
    auto [it, inserted] = index.try_emplace(*key, result.flows.size());
    if (inserted) result.flows.push_back(Flow{*key, {}});
    result.flows[it->second].packets.push_back(packet);
  }
  return result;
}

RawPacket anonymize(RawPacket packet) {
  const FieldSpanMap map = dissect_headers(packet.link_bytes);
  for (std::string_view name : {"eth.dst", "eth.src", "ip.src", "ip.dst", "ipv6.src", "ipv6.dst",
                                "tcp.src_port", "tcp.dst_port", "udp.src_port", "udp.dst_port"}) {
    zero_span(packet.link_bytes, map.find(name));
  }
  return packet;
}

FlowRecord normalize_flow(std::span<const RawPacket> flow, std::size_t packets_per_flow,
                          std::size_t packet_len) {
  if (flow.empty()) throw Error(ErrorCode::kEmptyFlow, "cannot normalize an empty flow");
  if (packets_per_flow == 0 || packet_len == 0) {
    throw Error(ErrorCode::kInvalidArgument, "packets_per_flow and packet_len must be positive");
  }
  FlowRecord record;
  record.real_packet_count = std::min(flow.size(), packets_per_flow);
  record.packets.resize(packets_per_flow, NormalizedPacket{Bytes(packet_len, 0), 0});
  for (std::size_t i = 0; i < record.real_packet_count; ++i) {
    const Bytes& src = flow[i].link_bytes;
    NormalizedPacket& dst = record.packets[i];
    std::copy_n(src.begin(), std::min(src.size(), packet_len), dst.bytes.begin());
    dst.original_length = src.size();
  }
  return record;
}

Bytes flatten(const FlowRecord& record) {
  Bytes out;
  out.reserve(record.packet_count() * record.packet_len());
  for (const NormalizedPacket& p : record.packets) out.insert(out.end(), p.bytes.begin(), p.bytes.end());
  return out;
}

PreprocessResult preprocess_packets(std::span<const RawPacket> packets,
                                    const PreprocessOptions& options, std::optional<int> label) {
  PreprocessResult result;
  result.stats.captures = 1;
  result.stats.packets = packets.size();
  Segmentation segments = segment_flows(packets, options.direction);
  result.stats.skipped_packets = segments.skipped;
  for (Flow& flow : segments.flows) {
    std::vector<RawPacket> clean;
    clean.reserve(flow.packets.size());
    for (RawPacket& p : flow.packets) clean.push_back(anonymize(std::move(p)));
    FlowRecord record = normalize_flow(clean, options.packets_per_flow, options.packet_len);
    record.key = flow.key;
    record.label = label;
    ++result.stats.flows;
    result.stats.packets_in_flows += clean.size();
    result.records.push_back(std::move(record));
  }
  return result;
}

PreprocessResult preprocess_directory(const std::filesystem::path& dir,
                                      const PreprocessOptions& options) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw Error(ErrorCode::kIo, dir.string() + " is not a directory");

  std::vector<fs::path> captures;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".pcap") {
      captures.push_back(entry.path());
    }
  }
  std::sort(captures.begin(), captures.end());

  auto class_of = [&](const fs::path& capture) -> std::string {
    const fs::path rel = fs::relative(capture, dir);
    auto first = rel.begin();
    return std::next(first) == rel.end() ? std::string{} : first->string();
  };

  PreprocessResult result;
  if (options.label_from_dirname) {
    std::set<std::string> names;
    for (const fs::path& c : captures) {
      const std::string name = class_of(c);
      if (name.empty()) {
        throw Error(ErrorCode::kInvalidArgument,
                    c.string() + " is not inside a class directory");
      }
      names.insert(name);
    }
    result.class_names.assign(names.begin(), names.end());
  }

  for (const fs::path& capture : captures) {
    const PcapContents contents = read_pcap(capture);
    std::optional<int> label;
    if (options.label_from_dirname) {
      const auto it = std::lower_bound(result.class_names.begin(), result.class_names.end(),
                                       class_of(capture));
      label = static_cast<int>(it - result.class_names.begin());
    }
    PreprocessResult part = preprocess_packets(contents.packets, options, label);
    result.stats.captures += 1;
    result.stats.packets += part.stats.packets + contents.empty_records;
    result.stats.skipped_packets += part.stats.skipped_packets + contents.empty_records;
    result.stats.truncated_records += contents.truncated_records;
    result.stats.flows += part.stats.flows;
    result.stats.packets_in_flows += part.stats.packets_in_flows;
    std::move(part.records.begin(), part.records.end(), std::back_inserter(result.records));
  }
  return result;
}

}  // namespace nethira
