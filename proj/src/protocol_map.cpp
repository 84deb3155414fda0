#include "nethira/protocol_map.hpp"

#include <algorithm>
#include <iomanip>
#include <sstream>

namespace nethira {

namespace {

constexpr std::uint16_t kEtherTypeIpv4 = 0x0800;
constexpr std::uint16_t kEtherTypeIpv6 = 0x86DD;
constexpr std::uint16_t kEtherTypeVlan = 0x8100;
constexpr std::size_t kEthHeaderLen = 14;
constexpr std::size_t kVlanTagLen = 4;
constexpr std::size_t kIpv6HeaderLen = 40;
constexpr std::size_t kUdpHeaderLen = 8;

std::uint16_t read_be16(std::span<const std::uint8_t> b, std::size_t at) {
  return static_cast<std::uint16_t>((b[at] << 8) | b[at + 1]);
}

// Appends fields in wire order and refuses anything that would run past the
// end of the frame.
class SpanBuilder {
 public:
  SpanBuilder(FieldSpanMap& map, std::size_t limit) : map_(map), limit_(limit) {}

  bool add(std::size_t offset, std::size_t length, Layer layer, std::string_view name) {
    if (length == 0) return true;
    if (offset + length > limit_) return false;
    map_.spans.push_back({offset, length, layer, name});
    map_.header_end = offset + length;
    return true;
  }

  bool fits(std::size_t end) const { return end <= limit_; }

 private:
  FieldSpanMap& map_;
  std::size_t limit_;
};

void dissect_tcp(SpanBuilder& out, std::span<const std::uint8_t> f, std::size_t at) {
  if (!out.add(at, 2, Layer::kTcp, "tcp.src_port") ||
      !out.add(at + 2, 2, Layer::kTcp, "tcp.dst_port") ||
      !out.add(at + 4, 4, Layer::kTcp, "tcp.seq") ||
      !out.add(at + 8, 4, Layer::kTcp, "tcp.ack") ||
      !out.add(at + 12, 1, Layer::kTcp, "tcp.data_offset") ||
      !out.add(at + 13, 1, Layer::kTcp, "tcp.flags") ||
      !out.add(at + 14, 2, Layer::kTcp, "tcp.window") ||
      !out.add(at + 16, 2, Layer::kTcp, "tcp.checksum") ||
      !out.add(at + 18, 2, Layer::kTcp, "tcp.urgent")) {
    return;
  }
  const std::size_t header_len = static_cast<std::size_t>(f[at + 12] >> 4) * 4;
  if (header_len > 20) out.add(at + 20, header_len - 20, Layer::kTcp, "tcp.options");
}

void dissect_udp(SpanBuilder& out, std::size_t at) {
  out.add(at, 2, Layer::kUdp, "udp.src_port") && out.add(at + 2, 2, Layer::kUdp, "udp.dst_port") &&
      out.add(at + 4, 2, Layer::kUdp, "udp.length") &&
      out.add(at + 6, 2, Layer::kUdp, "udp.checksum");
}

void dissect_transport(SpanBuilder& out, std::span<const std::uint8_t> f, std::uint8_t proto,
                       std::size_t at) {
  if (proto == static_cast<std::uint8_t>(Transport::kTcp)) {
    dissect_tcp(out, f, at);
  } else if (proto == static_cast<std::uint8_t>(Transport::kUdp)) {
    dissect_udp(out, at);
  }
}

void dissect_ipv4(SpanBuilder& out, std::span<const std::uint8_t> f, std::size_t at) {
  if (at >= f.size()) return;
  const std::uint8_t version = f[at] >> 4;
  const std::size_t header_len = static_cast<std::size_t>(f[at] & 0x0F) * 4;
  if (version != 4 || header_len < 20) return;
  if (!out.add(at, 1, Layer::kIpv4, "ip.version_ihl") ||
      !out.add(at + 1, 1, Layer::kIpv4, "ip.tos") ||
      !out.add(at + 2, 2, Layer::kIpv4, "ip.total_length") ||
      !out.add(at + 4, 2, Layer::kIpv4, "ip.id") ||
      !out.add(at + 6, 2, Layer::kIpv4, "ip.flags_fragment") ||
      !out.add(at + 8, 1, Layer::kIpv4, "ip.ttl") ||
      !out.add(at + 9, 1, Layer::kIpv4, "ip.protocol") ||
      !out.add(at + 10, 2, Layer::kIpv4, "ip.checksum") ||
      !out.add(at + 12, 4, Layer::kIpv4, "ip.src") ||
      !out.add(at + 16, 4, Layer::kIpv4, "ip.dst")) {
    return;
  }
  if (header_len > 20 && !out.add(at + 20, header_len - 20, Layer::kIpv4, "ip.options")) return;
  // Non-first fragments carry no transport header.
  const std::uint16_t fragment_offset = read_be16(f, at + 6) & 0x1FFF;
  if (fragment_offset != 0) return;
  dissect_transport(out, f, f[at + 9], at + header_len);
}

void dissect_ipv6(SpanBuilder& out, std::span<const std::uint8_t> f, std::size_t at) {
  if (at >= f.size() || (f[at] >> 4) != 6) return;
  if (!out.add(at, 4, Layer::kIpv6, "ipv6.vtc_flow") ||
      !out.add(at + 4, 2, Layer::kIpv6, "ipv6.payload_length") ||
      !out.add(at + 6, 1, Layer::kIpv6, "ipv6.next_header") ||
      !out.add(at + 7, 1, Layer::kIpv6, "ipv6.hop_limit") ||
      !out.add(at + 8, 16, Layer::kIpv6, "ipv6.src") ||
      !out.add(at + 24, 16, Layer::kIpv6, "ipv6.dst")) {
    return;
  }
  // Extension headers are not walked.
  dissect_transport(out, f, f[at + 6], at + kIpv6HeaderLen);
}

}  // namespace

std::string_view to_string(Layer layer) {
  switch (layer) {
    case Layer::kEth: return "ETH";
    case Layer::kIpv4: return "IPV4";
    case Layer::kIpv6: return "IPV6";
    case Layer::kTcp: return "TCP";
    case Layer::kUdp: return "UDP";
  }
  return "?";
}

const FieldSpan* FieldSpanMap::find(std::string_view name) const {
  auto it = std::find_if(spans.begin(), spans.end(),
                         [&](const FieldSpan& s) { return s.name == name; });
  return it == spans.end() ? nullptr : &*it;
}

bool FieldSpanMap::has_layer(Layer layer) const {
  return std::any_of(spans.begin(), spans.end(),
                     [&](const FieldSpan& s) { return s.layer == layer; });
}

FieldSpanMap dissect_headers(std::span<const std::uint8_t> frame) {
  FieldSpanMap map;
  SpanBuilder out(map, frame.size());
  if (!out.add(0, 6, Layer::kEth, "eth.dst") || !out.add(6, 6, Layer::kEth, "eth.src") ||
      !out.add(12, 2, Layer::kEth, "eth.type")) {
    return map;
  }
  std::uint16_t ether_type = read_be16(frame, 12);
  std::size_t l3 = kEthHeaderLen;
  if (ether_type == kEtherTypeVlan) {
    if (!out.add(14, 2, Layer::kEth, "eth.vlan_tci") ||
        !out.add(16, 2, Layer::kEth, "eth.vlan_type")) {
      return map;
    }
    ether_type = read_be16(frame, 16);
    l3 += kVlanTagLen;
  }
  if (ether_type == kEtherTypeIpv4) {
    dissect_ipv4(out, frame, l3);
  } else if (ether_type == kEtherTypeIpv6) {
    dissect_ipv6(out, frame, l3);
  }
  return map;
}

FieldSpanMap parse_fields(const NormalizedPacket& packet, std::size_t packet_index) {
  FieldSpanMap map = dissect_headers(packet.bytes);
  map.packet_index = packet_index;
  return map;
}

namespace {

// Concatenates `blocks` in `order` and writes the result over `slots`.
void write_permuted(Bytes& out, std::span<const std::uint8_t> packet,
                    const std::vector<const FieldSpan*>& blocks,
                    const std::vector<std::size_t>& order) {
  std::vector<std::size_t> slots;
  for (const FieldSpan* s : blocks) {
    for (std::size_t i = 0; i < s->length; ++i) slots.push_back(s->offset + i);
  }
  std::size_t cursor = 0;
  for (std::size_t idx : order) {
    const FieldSpan* s = blocks[idx];
    for (std::size_t i = 0; i < s->length; ++i) out[slots[cursor++]] = packet[s->offset + i];
  }
}

}  // namespace

Bytes shuffle_fields(std::span<const std::uint8_t> packet, const FieldSpanMap& map, Rng& rng,
                     bool within_layer) {
  Bytes out(packet.begin(), packet.end());
  if (map.spans.size() <= 1) return out;

  if (!within_layer) {
    std::vector<const FieldSpan*> blocks;
    for (const FieldSpan& s : map.spans) blocks.push_back(&s);
    write_permuted(out, packet, blocks, rng.permutation(blocks.size()));
    return out;
  }

  for (Layer layer : {Layer::kEth, Layer::kIpv4, Layer::kIpv6, Layer::kTcp, Layer::kUdp}) {
    std::vector<const FieldSpan*> blocks;
    for (const FieldSpan& s : map.spans) {
      if (s.layer == layer) blocks.push_back(&s);
    }
    if (blocks.size() <= 1) continue;
    write_permuted(out, packet, blocks, rng.permutation(blocks.size()));
  }
  return out;
}

std::string format_field_table(const FieldSpanMap& map, std::span<const std::uint8_t> packet) {
  std::ostringstream out;
  out << "packet " << map.packet_index << "  header_end=" << map.header_end << '\n';
  out << std::left << std::setw(8) << "offset" << std::setw(8) << "length" << std::setw(7)
      << "layer" << std::setw(22) << "field" << "bytes\n";
  for (const FieldSpan& s : map.spans) {
    out << std::left << std::setw(8) << s.offset << std::setw(8) << s.length << std::setw(7)
        << to_string(s.layer) << std::setw(22) << s.name;
    for (std::size_t i = 0; i < s.length && s.offset + i < packet.size(); ++i) {
      out << std::hex << std::setw(2) << std::setfill('0') << std::right
          << static_cast<int>(packet[s.offset + i]) << std::dec << std::setfill(' ') << std::left;
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace nethira
