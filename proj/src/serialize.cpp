#include "gbe/serialize.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>

namespace gbe {

namespace {

static_assert(std::endian::native == std::endian::little, "GBET I/O assumes a little-endian host");

constexpr char kMagic[4] = {'G', 'B', 'E', 'T'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

}  // namespace

std::vector<std::uint8_t> encode_tensor(const Tensor<float>& t) {
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  out.push_back(kGbetVersion);
  out.push_back(static_cast<std::uint8_t>(t.rank()));
  for (int d : t.shape()) put_u32(out, static_cast<std::uint32_t>(d));
  const std::size_t head = out.size();
  out.resize(head + t.size() * sizeof(float));
  std::memcpy(out.data() + head, t.ptr(), t.size() * sizeof(float));
  return out;
}

Tensor<float> decode_tensor(const std::vector<std::uint8_t>& bytes, std::size_t& offset, const std::string& what) {
  auto need = [&](std::size_t n) {
    if (offset + n > bytes.size()) throw CorruptFileError(what + ": truncated GBET data");
  };
  need(6);
  if (std::memcmp(bytes.data() + offset, kMagic, 4) != 0) throw CorruptFileError(what + ": bad GBET magic");
  if (bytes[offset + 4] != kGbetVersion)
    throw CorruptFileError(what + ": unsupported GBET version " + std::to_string(bytes[offset + 4]));
  const int rank = bytes[offset + 5];
  offset += 6;
  need(4 * static_cast<std::size_t>(rank));
  Shape shape;
  std::size_t numel = 1;
  for (int i = 0; i < rank; ++i) {
    const std::uint32_t d = get_u32(bytes.data() + offset);
    if (d == 0) throw CorruptFileError(what + ": zero dimension in GBET header");
    shape.push_back(static_cast<int>(d));
    numel *= d;
    offset += 4;
  }
  need(numel * sizeof(float));
  std::vector<float> data(numel);
  std::memcpy(data.data(), bytes.data() + offset, numel * sizeof(float));
  offset += numel * sizeof(float);
  return Tensor<float>(std::move(shape), std::move(data));
}

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorruptFileError(path.string() + ": cannot open");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error(path.string() + ": cannot open for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void write_tensor(const std::filesystem::path& path, const Tensor<float>& t) { write_bytes(path, encode_tensor(t)); }

Tensor<float> read_tensor(const std::filesystem::path& path) {
  const auto bytes = read_bytes(path);
  std::size_t off = 0;
  auto t = decode_tensor(bytes, off, path.string());
  if (off != bytes.size()) throw CorruptFileError(path.string() + ": trailing bytes after tensor");
  return t;
}

std::string sha256_hex(const std::vector<std::uint8_t>& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr);
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
  return os.str();
}

void write_checkpoint(const std::filesystem::path& stem,
                      const std::vector<std::pair<std::string, Tensor<float>>>& tensors) {
  std::vector<std::uint8_t> blob;
  nlohmann::ordered_json index = nlohmann::ordered_json::object();
  for (const auto& [name, t] : tensors) {
    index[name] = blob.size();
    const auto enc = encode_tensor(t);
    blob.insert(blob.end(), enc.begin(), enc.end());
  }
  auto bin = stem;
  bin += ".gbet";
  auto idx = stem;
  idx += ".json";
  write_bytes(bin, blob);
  std::ofstream(idx) << index.dump(2) << '\n';
}

NamedTensors read_checkpoint(const std::filesystem::path& stem) {
  auto bin = stem;
  bin += ".gbet";
  auto idx = stem;
  idx += ".json";
  const auto blob = read_bytes(bin);
  std::ifstream in(idx);
  if (!in) throw CorruptFileError(idx.string() + ": cannot open");
  nlohmann::json index;
  try {
    in >> index;
  } catch (const nlohmann::json::exception& e) {
    throw CorruptFileError(idx.string() + ": " + e.what());
  }
  NamedTensors out;
  for (const auto& [name, off] : index.items()) {
    std::size_t pos = off.get<std::size_t>();
    out.emplace(name, decode_tensor(blob, pos, bin.string() + " [" + name + "]"));
  }
  return out;
}

}  // namespace gbe
