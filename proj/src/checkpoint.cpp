#include "waveden/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace waveden {

namespace {

constexpr char kMagic[5] = {'D', 'N', 'S', 'W', '1'};

void put_u32(std::string& buf, uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(char((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& buf, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(buf, bits);
}

void put_u64(std::string& buf, uint64_t v) {
  for (int i = 0; i < 8; ++i) buf.push_back(char((v >> (8 * i)) & 0xff));
}

struct Reader {
  const std::string& buf;
  size_t pos = 0;

  void need(size_t n) const {
    if (pos + n > buf.size()) throw CheckpointError("checkpoint: truncated file");
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= uint32_t(uint8_t(buf[pos + size_t(i)])) << (8 * i);
    pos += 4;
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= uint64_t(uint8_t(buf[pos + size_t(i)])) << (8 * i);
    pos += 8;
    return v;
  }
  float f32() {
    const uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  std::string bytes(size_t n) {
    need(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

uint64_t fnv1a(const char* data, size_t n) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (size_t i = 0; i < n; ++i) {
    h ^= uint8_t(data[i]);
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace

void save_checkpoint(const std::string& path, const std::vector<CheckpointEntry>& entries) {
  std::string buf;
  buf.append(kMagic, 5);
  put_u32(buf, uint32_t(entries.size()));
  for (const auto& e : entries) {
    put_u32(buf, uint32_t(e.name.size()));
    buf.append(e.name);
    put_u32(buf, uint32_t(e.shape.size()));
    int64_t numel = 1;
    for (int64_t ext : e.shape) {
      put_u32(buf, uint32_t(ext));
      numel *= ext;
    }
    if (numel != int64_t(e.data.size()))
      throw std::invalid_argument("save_checkpoint: entry '" + e.name + "' shape/data mismatch");
  }
  const size_t payload_start = buf.size();
  for (const auto& e : entries)
    for (float v : e.data) put_f32(buf, v);
  put_u64(buf, fnv1a(buf.data() + payload_start, buf.size() - payload_start));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
  out.write(buf.data(), std::streamsize(buf.size()));
  if (!out) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

std::vector<CheckpointEntry> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("checkpoint: cannot open " + path);
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  Reader r{buf};
  if (r.bytes(5) != std::string(kMagic, 5)) throw CheckpointError("checkpoint: bad magic");
  const uint32_t count = r.u32();
  std::vector<CheckpointEntry> entries(count);
  for (auto& e : entries) {
    const uint32_t name_len = r.u32();
    e.name = r.bytes(name_len);
    const uint32_t rank = r.u32();
    int64_t numel = 1;
    e.shape.resize(rank);
    for (uint32_t d = 0; d < rank; ++d) {
      e.shape[d] = int64_t(r.u32());
      if (e.shape[d] <= 0) throw CheckpointError("checkpoint: bad extent in '" + e.name + "'");
      numel *= e.shape[d];
    }
    e.data.resize(size_t(numel));
  }
  const size_t payload_start = r.pos;
  for (auto& e : entries)
    for (float& v : e.data) v = r.f32();
  const size_t payload_end = r.pos;
  const uint64_t stored = r.u64();
  if (r.pos != buf.size()) throw CheckpointError("checkpoint: trailing bytes");
  const uint64_t actual = fnv1a(buf.data() + payload_start, payload_end - payload_start);
  if (stored != actual) throw CheckpointError("checkpoint: checksum mismatch");
  return entries;
}

}  // namespace waveden
