#include "nethira/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "nethira/error.hpp"

namespace nethira {

namespace {

constexpr char kMagic[8] = {'N', 'T', 'H', 'R', 'C', 'K', 'P', 'T'};
constexpr std::size_t kPreambleLen = 20;

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are written as native little-endian doubles");

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

template <typename T>
T get_le(std::span<const std::uint8_t> in, std::size_t at) {
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(in[at + i]) << (8 * i);
  return v;
}

}  // namespace

ModelCheckpoint ModelCheckpoint::from_model(const Model& model, std::uint64_t step,
                                            std::string rng_state) {
  return ModelCheckpoint{model.config(), model.parameters(), step, std::move(rng_state)};
}

Model ModelCheckpoint::to_model() const {
  // Every tensor must have the name and shape the config implies.
  const Model reference(config, std::uint64_t{0});
  const auto& expected = reference.parameters();
  bool ok = expected.size() == parameters.size();
  for (std::size_t i = 0; ok && i < expected.size(); ++i) {
    ok = expected[i].name == parameters[i].name &&
         expected[i].value.rows() == parameters[i].value.rows() &&
         expected[i].value.cols() == parameters[i].value.cols();
  }
  if (!ok) throw Error(ErrorCode::kCorruptFile, "checkpoint tensors do not match its config");
  return Model(config, parameters);
}

std::vector<std::uint8_t> encode_checkpoint(const ModelCheckpoint& ckpt) {
  nlohmann::json header;
  header["config"] = ckpt.config.to_json();
  header["step"] = ckpt.step;
  header["rng_state"] = ckpt.rng_state;
  auto& tensors = header["tensors"] = nlohmann::json::array();
  for (const NamedTensor& t : ckpt.parameters) {
    tensors.push_back({{"name", t.name}, {"rows", t.value.rows()}, {"cols", t.value.cols()}});
  }
  const std::string text = header.dump();

  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint64_t>(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  for (const NamedTensor& t : ckpt.parameters) {
    const auto* raw = reinterpret_cast<const std::uint8_t*>(t.value.data());
    out.insert(out.end(), raw, raw + t.value.size() * static_cast<Eigen::Index>(sizeof(double)));
  }
  return out;
}

ModelCheckpoint decode_checkpoint(std::span<const std::uint8_t> data) {
  if (data.size() < kPreambleLen || std::memcmp(data.data(), kMagic, sizeof(kMagic)) != 0) {
    throw Error(ErrorCode::kCorruptFile, "not a checkpoint file");
  }
  const auto version = get_le<std::uint32_t>(data, 8);
  if (version != kCheckpointVersion) {
    throw Error(ErrorCode::kVersionMismatch,
                "checkpoint format " + std::to_string(version) + ", expected " +
                    std::to_string(kCheckpointVersion));
  }
  const auto header_len = get_le<std::uint64_t>(data, 12);
  if (data.size() - kPreambleLen < header_len) throw Error(ErrorCode::kCorruptFile, "truncated header");

  ModelCheckpoint ckpt;
  std::size_t at = kPreambleLen + header_len;
  try {
    const auto header = nlohmann::json::parse(data.begin() + kPreambleLen, data.begin() + static_cast<std::ptrdiff_t>(at));
    ckpt.config = ModelConfig::from_json(header.at("config"));
    ckpt.step = header.at("step").get<std::uint64_t>();
    ckpt.rng_state = header.at("rng_state").get<std::string>();
    for (const auto& t : header.at("tensors")) {
      const auto rows = t.at("rows").get<Eigen::Index>();
      const auto cols = t.at("cols").get<Eigen::Index>();
      const std::size_t bytes = static_cast<std::size_t>(rows * cols) * sizeof(double);
      if (data.size() - at < bytes) throw Error(ErrorCode::kCorruptFile, "truncated tensor payload");
      NamedTensor tensor{t.at("name").get<std::string>(), Matrix(rows, cols)};
      std::memcpy(tensor.value.data(), data.data() + at, bytes);
      at += bytes;
      ckpt.parameters.push_back(std::move(tensor));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kCorruptFile, std::string("bad checkpoint header: ") + e.what());
  }
  if (at != data.size()) throw Error(ErrorCode::kCorruptFile, "trailing bytes after payload");
  return ckpt;
}

void save_checkpoint(const ModelCheckpoint& ckpt, const std::filesystem::path& path) {
  const auto data = encode_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
}

ModelCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  const std::vector<std::uint8_t> data((std::istreambuf_iterator<char>(in)),
                                       std::istreambuf_iterator<char>());
  return decode_checkpoint(data);
}

}  // namespace nethira
