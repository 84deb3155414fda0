#include "nethira/dataset.hpp"

#include <openssl/evp.h>

#include <array>
#include <fstream>
#include <iomanip>
#include <iterator>
#include <sstream>

#include "nethira/error.hpp"

namespace nethira {

std::string base64_encode(std::span<const std::uint8_t> data) {
  std::string out(4 * ((data.size() + 2) / 3) + 1, '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), data.data(),
                                static_cast<int>(data.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

Bytes base64_decode(std::string_view text) {
  // EVP_DecodeBlock tolerates surrounding whitespace; canonical records have none.
  if (text.size() % 4 != 0 || text.find_first_of(" \t\r\n") != std::string_view::npos) {
    throw Error(ErrorCode::kCorruptFile, "invalid base64 text");
  }
  Bytes out(text.size() / 4 * 3);
  const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(text.data()),
                                static_cast<int>(text.size()));
  if (n < 0) throw Error(ErrorCode::kCorruptFile, "invalid base64 text");
  std::size_t pad = 0;
  if (!text.empty() && text.back() == '=') ++pad;
  if (text.size() > 1 && text[text.size() - 2] == '=') ++pad;
  out.resize(static_cast<std::size_t>(n) - pad);
  return out;
}

std::string sha256_hex(std::span<const std::uint8_t> data) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest.data(), &len, EVP_sha256(), nullptr) != 1) {
    throw Error(ErrorCode::kIo, "SHA-256 failed");
  }
  std::ostringstream out;
  out << std::hex << std::setfill('0');
  for (unsigned int i = 0; i < len; ++i) out << std::setw(2) << static_cast<int>(digest[i]);
  return out.str();
}

std::string sha256_hex(std::string_view text) {
  return sha256_hex(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::string serialize_record(const FlowRecord& record) {
  nlohmann::json j;
  j["label"] = record.label ? nlohmann::json(*record.label) : nlohmann::json(nullptr);
  j["real_packet_count"] = record.real_packet_count;
  auto& packets = j["packets"] = nlohmann::json::array();
  for (const NormalizedPacket& p : record.packets) packets.push_back(base64_encode(p.bytes));
  return j.dump();
}

FlowRecord parse_record(std::string_view line) {
  FlowRecord record;
  try {
    const nlohmann::json j = nlohmann::json::parse(line);
    if (!j.at("label").is_null()) record.label = j.at("label").get<int>();
    record.real_packet_count = j.at("real_packet_count").get<std::size_t>();
    for (const auto& p : j.at("packets")) {
      NormalizedPacket packet;
      packet.bytes = base64_decode(p.get<std::string>());
      packet.original_length = packet.bytes.size();
      record.packets.push_back(std::move(packet));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kCorruptFile, std::string("bad dataset record: ") + e.what());
  }
  if (record.packets.empty() || record.real_packet_count == 0 ||
      record.real_packet_count > record.packets.size()) {
    throw Error(ErrorCode::kCorruptFile, "record has an invalid packet count");
  }
  for (const NormalizedPacket& p : record.packets) {
    if (p.bytes.size() != record.packets.front().bytes.size() || p.bytes.empty()) {
      throw Error(ErrorCode::kCorruptFile, "packets within a record differ in length");
    }
  }
  return record;
}

void write_dataset(std::ostream& out, std::span<const FlowRecord> records) {
  for (const FlowRecord& r : records) out << serialize_record(r) << '\n';
}

void write_dataset(const std::filesystem::path& path, std::span<const FlowRecord> records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  write_dataset(out, records);
}

std::vector<FlowRecord> read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  std::vector<FlowRecord> records;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    FlowRecord r = parse_record(line);
    if (!records.empty() && (r.packet_count() != records.front().packet_count() ||
                             r.packet_len() != records.front().packet_len())) {
      throw Error(ErrorCode::kCorruptFile, "records disagree on M or L in " + path.string());
    }
    records.push_back(std::move(r));
  }
  return records;
}

nlohmann::json to_json(const DatasetManifest& m) {
  return nlohmann::json{{"M", m.packets_per_flow},
                        {"L", m.packet_len},
                        {"classes", m.class_names},
                        {"tool_version", m.tool_version},
                        {"config_hash", m.config_hash},
                        {"dataset_sha256", m.dataset_sha256},
                        {"flows", m.flows},
                        {"anpf", m.anpf},
                        {"skipped_packets", m.skipped_packets},
                        {"truncated_records", m.truncated_records}};
}

DatasetManifest manifest_from_json(const nlohmann::json& j) {
  DatasetManifest m;
  m.packets_per_flow = j.at("M").get<std::size_t>();
  m.packet_len = j.at("L").get<std::size_t>();
  m.class_names = j.value("classes", std::vector<std::string>{});
  m.tool_version = j.value("tool_version", std::string{});
  m.config_hash = j.value("config_hash", std::string{});
  m.dataset_sha256 = j.value("dataset_sha256", std::string{});
  m.flows = j.value("flows", std::size_t{0});
  m.anpf = j.value("anpf", 0.0);
  m.skipped_packets = j.value("skipped_packets", std::size_t{0});
  m.truncated_records = j.value("truncated_records", std::size_t{0});
  return m;
}

void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out << j.dump(2) << '\n';
}

nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kCorruptFile, path.string() + ": " + e.what());
  }
}

std::filesystem::path manifest_path(const std::filesystem::path& dataset) {
  return dataset.string() + ".manifest.json";
}

std::string file_sha256(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  const Bytes data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return sha256_hex(data);
}

}  // namespace nethira
