#include "pand/container.hpp"

#include <cstdio>
#include <fstream>

namespace pand {

namespace {

constexpr char kMagic[8] = {'P', 'A', 'N', 'D', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& buf, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

struct Reader {
  const std::string& buf;
  const std::string& path;
  std::size_t pos = 0;

  void need(std::size_t n, const char* field) {
    if (pos + n > buf.size()) {
      throw FormatError("container " + path + ": truncated while reading " + field);
    }
  }
  std::uint32_t u32(const char* field) {
    need(4, field);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + static_cast<std::size_t>(i)])) << (8 * i);
    pos += 4;
    return v;
  }
  std::uint64_t u64(const char* field) {
    need(8, field);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos + static_cast<std::size_t>(i)])) << (8 * i);
    pos += 8;
    return v;
  }
  std::string bytes(std::size_t n, const char* field) {
    need(n, field);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

}  // namespace

const Mat<float>& Container::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return t.value;
  }
  throw FormatError("container is missing tensor '" + name + "'");
}

bool Container::contains(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return true;
  }
  return false;
}

void save_container(const std::string& path, const Container& container) {
  std::string buf;
  buf.append(kMagic, sizeof(kMagic));
  put_u32(buf, kVersion);
  put_u32(buf, static_cast<std::uint32_t>(container.tensors.size()));
  for (const auto& t : container.tensors) {
    put_u32(buf, static_cast<std::uint32_t>(t.name.size()));
    buf += t.name;
    put_u32(buf, static_cast<std::uint32_t>(t.value.rows()));
    put_u32(buf, static_cast<std::uint32_t>(t.value.cols()));
    buf.append(reinterpret_cast<const char*>(t.value.data()),
               sizeof(float) * static_cast<std::size_t>(t.value.size()));
  }
  put_u32(buf, static_cast<std::uint32_t>(container.meta.size()));
  buf += container.meta;
  put_u64(buf, fnv1a64(buf.data(), buf.size()));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open for writing: " + path);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw Error("write failed: " + path);
}

Container load_container(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open container: " + path);
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  Reader r{buf, path};
  const std::string magic = r.bytes(8, "magic");
  if (std::memcmp(magic.data(), kMagic, 8) != 0) {
    throw FormatError("container " + path + ": bad magic, expected PANDCKPT");
  }
  const std::uint32_t version = r.u32("version");
  if (version != kVersion) {
    throw FormatError("container " + path + ": unsupported version " + std::to_string(version));
  }

  Container c;
  const std::uint32_t count = r.u32("tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    const std::uint32_t name_len = r.u32("tensor name length");
    t.name = r.bytes(name_len, "tensor name");
    const std::uint32_t rows = r.u32("tensor rows");
    const std::uint32_t cols = r.u32("tensor cols");
    const std::size_t payload = sizeof(float) * static_cast<std::size_t>(rows) * cols;
    r.need(payload, "tensor payload");
    t.value.resize(rows, cols);
    std::memcpy(t.value.data(), buf.data() + r.pos, payload);
    r.pos += payload;
    c.tensors.push_back(std::move(t));
  }
  const std::uint32_t meta_len = r.u32("meta length");
  c.meta = r.bytes(meta_len, "meta");

  const std::size_t hashed = r.pos;
  const std::uint64_t stored = r.u64("content hash");
  const std::uint64_t actual = fnv1a64(buf.data(), hashed);
  if (stored != actual) {
    throw FormatError("container " + path + ": content hash mismatch");
  }
  return c;
}

}  // namespace pand
