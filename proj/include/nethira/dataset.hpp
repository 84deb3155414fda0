#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "nethira/flow.hpp"

namespace nethira {

inline constexpr std::string_view kToolVersion = "0.1.0";

std::string base64_encode(std::span<const std::uint8_t> data);
Bytes base64_decode(std::string_view text);

/// Hex SHA-256 digest.
std::string sha256_hex(std::span<const std::uint8_t> data);
std::string sha256_hex(std::string_view text);

/// One JSON object per line:
///   {"label": int|null, "packets": [base64 of L bytes] x M, "real_packet_count": int}
/// Keys are emitted in sorted order so equal datasets serialize to equal bytes.
std::string serialize_record(const FlowRecord& record);
FlowRecord parse_record(std::string_view line);

void write_dataset(std::ostream& out, std::span<const FlowRecord> records);
void write_dataset(const std::filesystem::path& path, std::span<const FlowRecord> records);
/// Throws Error{kCorruptFile} on malformed lines or inconsistent M/L.
std::vector<FlowRecord> read_dataset(const std::filesystem::path& path);

struct DatasetManifest {
  std::size_t packets_per_flow = 0;
  std::size_t packet_len = 0;
  std::vector<std::string> class_names;
  std::string tool_version{kToolVersion};
  std::string config_hash;
  std::string dataset_sha256;
  std::size_t flows = 0;
  double anpf = 0.0;
  std::size_t skipped_packets = 0;
  std::size_t truncated_records = 0;
};

nlohmann::json to_json(const DatasetManifest& manifest);
DatasetManifest manifest_from_json(const nlohmann::json& j);
void write_json(const std::filesystem::path& path, const nlohmann::json& j);
nlohmann::json read_json(const std::filesystem::path& path);

/// Path of the sidecar manifest for a dataset file: "<file>.manifest.json".
std::filesystem::path manifest_path(const std::filesystem::path& dataset);

/// SHA-256 of a file's bytes.
std::string file_sha256(const std::filesystem::path& path);

}  // namespace nethira
