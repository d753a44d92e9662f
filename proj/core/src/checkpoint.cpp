#include "vilsum/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>

#include "vilsum/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint serialization assumes a little-endian host");

namespace vilsum {

namespace {

constexpr char kMagic[4] = {'V', 'L', 'S', 'M'};

void put_u16(std::string& out, std::uint16_t v) {
  out.append(reinterpret_cast<const char*>(&v), sizeof(v));
}

void put_u32(std::string& out, std::uint32_t v) {
  out.append(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint32_t crc_of(const std::string& bytes) {
  return static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  std::uint16_t u16() { return read_raw<std::uint16_t>(); }
  std::uint32_t u32() { return read_raw<std::uint32_t>(); }

  std::string str(size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  void floats(float* dst, size_t count) {
    size_t n = count * sizeof(float);
    need(n);
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }

  bool done() const { return pos_ == bytes_.size(); }
  size_t pos() const { return pos_; }

 private:
  template <typename T>
  T read_raw() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  void need(size_t n) {
    if (pos_ + n > bytes_.size()) {
      throw CheckpointError(CheckpointError::Kind::Corrupt,
                            "checkpoint truncated at byte " + std::to_string(pos_));
    }
  }

  const std::string& bytes_;
  size_t pos_ = 0;
};

std::string build_config_text(const std::map<std::string, std::string>& config) {
  std::string text;
  for (const auto& [k, v] : config) {
    if (k.find('=') != std::string::npos || k.find('\n') != std::string::npos ||
        v.find('\n') != std::string::npos) {
      throw ContractError("checkpoint config entries must be single-line key=value: " + k);
    }
    text += k;
    text.push_back('=');
    text += v;
    text.push_back('\n');
  }
  return text;
}

std::map<std::string, std::string> parse_config_text(const std::string& text) {
  std::map<std::string, std::string> config;
  size_t start = 0;
  while (start < text.size()) {
    size_t nl = text.find('\n', start);
    if (nl == std::string::npos) {
      throw CheckpointError(CheckpointError::Kind::Corrupt,
                            "checkpoint config text not newline-terminated");
    }
    std::string line = text.substr(start, nl - start);
    start = nl + 1;
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw CheckpointError(CheckpointError::Kind::Corrupt,
                            "malformed checkpoint config line: " + line);
    }
    std::string key = line.substr(0, eq);
    if (config.count(key)) {
      throw CheckpointError(CheckpointError::Kind::Corrupt,
                            "duplicate checkpoint config key: " + key);
    }
    config[key] = line.substr(eq + 1);
  }
  return config;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const CheckpointData& data) {
  std::string payload;
  std::string config_text = build_config_text(data.config);
  put_u32(payload, static_cast<std::uint32_t>(config_text.size()));
  payload += config_text;

  for (const auto& [name, tensor] : data.tensors) {
    if (name.empty() || name.size() > 0xFFFF) {
      throw ContractError("checkpoint tensor name length out of range: " + name);
    }
    if (tensor.rank() < 1 || tensor.rank() > 0xFF) {
      throw ContractError("checkpoint tensor rank out of range for " + name);
    }
    put_u16(payload, static_cast<std::uint16_t>(name.size()));
    payload += name;
    payload.push_back(static_cast<char>(tensor.rank()));
    for (int i = 0; i < tensor.rank(); ++i) {
      put_u32(payload, static_cast<std::uint32_t>(tensor.dim(i)));
    }
    payload.append(reinterpret_cast<const char*>(tensor.data().data()),
                   tensor.size() * sizeof(float));
  }

  std::string file_bytes;
  file_bytes.append(kMagic, sizeof(kMagic));
  put_u32(file_bytes, kCheckpointVersion);
  file_bytes += payload;
  put_u32(file_bytes, crc_of(payload));

  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint: " + tmp.string());
    out.write(file_bytes.data(), static_cast<std::streamsize>(file_bytes.size()));
    out.flush();
    if (!out) throw IoError("failed writing checkpoint: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    throw IoError("cannot move checkpoint into place: " + path.string() + ": " + ec.message());
  }
}

CheckpointData load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint: " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  if (bytes.size() < sizeof(kMagic) + 2 * sizeof(std::uint32_t)) {
    throw CheckpointError(CheckpointError::Kind::Corrupt, "checkpoint file too small");
  }
  if (std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw CheckpointError(CheckpointError::Kind::BadMagic,
                          "not a checkpoint file (bad magic): " + path.string());
  }
  std::uint32_t version;
  std::memcpy(&version, bytes.data() + sizeof(kMagic), sizeof(version));
  if (version != kCheckpointVersion) {
    throw CheckpointError(CheckpointError::Kind::VersionMismatch,
                          "checkpoint version " + std::to_string(version) + ", expected " +
                              std::to_string(kCheckpointVersion));
  }

  size_t header = sizeof(kMagic) + sizeof(std::uint32_t);
  std::string payload = bytes.substr(header, bytes.size() - header - sizeof(std::uint32_t));
  std::uint32_t stored_crc;
  std::memcpy(&stored_crc, bytes.data() + bytes.size() - sizeof(std::uint32_t),
              sizeof(stored_crc));
  if (crc_of(payload) != stored_crc) {
    throw CheckpointError(CheckpointError::Kind::Corrupt,
                          "checkpoint CRC mismatch: " + path.string());
  }

  Reader r(payload);
  CheckpointData data;
  std::uint32_t config_len = r.u32();
  data.config = parse_config_text(r.str(config_len));

  while (!r.done()) {
    std::uint16_t name_len = r.u16();
    if (name_len == 0) {
      throw CheckpointError(CheckpointError::Kind::Corrupt, "checkpoint tensor with empty name");
    }
    std::string name = r.str(name_len);
    std::uint8_t rank = static_cast<std::uint8_t>(r.str(1)[0]);
    if (rank == 0) {
      throw CheckpointError(CheckpointError::Kind::Corrupt, "tensor '" + name + "' has rank 0");
    }
    std::vector<int> shape(rank);
    size_t numel = 1;
    for (int i = 0; i < rank; ++i) {
      std::uint32_t d = r.u32();
      if (d == 0 || d > (1u << 28) || numel > (1u << 28)) {
        throw CheckpointError(CheckpointError::Kind::Corrupt,
                              "tensor '" + name + "' has an implausible shape");
      }
      shape[static_cast<size_t>(i)] = static_cast<int>(d);
      numel *= d;
    }
    Tensor t(shape);
    r.floats(t.data().data(), numel);
    for (const auto& [existing, unused] : data.tensors) {
      (void)unused;
      if (existing == name) {
        throw CheckpointError(CheckpointError::Kind::Corrupt,
                              "duplicate tensor '" + name + "' in checkpoint");
      }
    }
    data.tensors.emplace_back(std::move(name), std::move(t));
  }
  return data;
}

}  // namespace vilsum
