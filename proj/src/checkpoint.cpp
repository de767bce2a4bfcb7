#include "fedil/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "fedil/errors.hpp"
#include "json.hpp"

namespace fedil {

namespace {

constexpr char kMagic[4] = {'F', 'D', 'I', 'L'};

template <typename U>
void put_le(std::vector<std::uint8_t>& out, U v) {
  for (std::size_t b = 0; b < sizeof(U); ++b) out.push_back(static_cast<std::uint8_t>(v >> (8 * b)));
}

template <typename U>
U get_le(const std::vector<std::uint8_t>& in, std::size_t offset) {
  U v = 0;
  for (std::size_t b = 0; b < sizeof(U); ++b) v |= static_cast<U>(in[offset + b]) << (8 * b);
  return v;
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const ParamVector& params) {
  std::vector<std::uint8_t> out;
  out.reserve(kCheckpointHeaderSize + 8 * params.size());
  out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint64_t>(out, params.size());
  for (double v : params.values) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  return out;
}

ParamVector decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < kCheckpointHeaderSize) {
    throw FormatError("checkpoint truncated: header needs 16 bytes, got " +
                      std::to_string(bytes.size()));
  }
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError("checkpoint has bad magic at offset 0");
  const auto version = get_le<std::uint32_t>(bytes, 4);
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version) + " at offset 4");
  }
  const auto count = get_le<std::uint64_t>(bytes, 8);
  const std::uint64_t expected = kCheckpointHeaderSize + 8 * count;
  if (bytes.size() != expected) {
    throw FormatError("checkpoint payload length mismatch: expected " + std::to_string(expected) +
                      " bytes, got " + std::to_string(bytes.size()));
  }
  ParamVector params(static_cast<std::size_t>(count));
  for (std::size_t k = 0; k < count; ++k) {
    params.values[k] = std::bit_cast<double>(get_le<std::uint64_t>(bytes, kCheckpointHeaderSize + 8 * k));
  }
  return params;
}

void save_checkpoint(const std::filesystem::path& path, const ParamVector& params) {
  const auto bytes = encode_checkpoint(params);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open checkpoint for writing: " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing checkpoint: " + path.string());
}

ParamVector load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

std::string checkpoint_json(const ParamVector& params, const ModelArch& arch,
                            const std::string& config_hash) {
  nlohmann::json j;
  j["magic"] = "FDIL";
  j["version"] = kCheckpointVersion;
  j["param_count"] = params.size();
  j["arch"] = {{"input_dim", arch.input_dim},
               {"hidden_dims", arch.hidden_dims},
               {"num_classes", arch.num_classes},
               {"activation", to_string(arch.activation)}};
  if (!config_hash.empty()) j["config_hash"] = config_hash;
  j["values"] = params.values;
  return j.dump(2);
}

}  // namespace fedil
