#include "pand/anchors.hpp"

#include <cstring>
#include <fstream>

namespace pand {

// Anchor file, little-endian:
//   magic "PANDANCH" (8 bytes) | u32 version=1 | u32 C | u32 d
//   C*d float32, row-major | C entries of (u32 byte length, UTF-8 class name)

namespace {

constexpr char kMagic[8] = {'P', 'A', 'N', 'D', 'A', 'N', 'C', 'H'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ofstream& out, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b, 4);
}

std::uint32_t get_u32(const std::string& buf, std::size_t& pos, const std::string& path,
                      const char* field) {
  if (pos + 4 > buf.size()) {
    throw FormatError("anchor file " + path + ": truncated " + field);
  }
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) {
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + static_cast<std::size_t>(i)])) << (8 * i);
  }
  pos += 4;
  return v;
}

}  // namespace

void save_anchors(const SemanticAnchors& anchors, const std::string& path) {
  if (!anchors.frozen) {
    throw FreezeError("anchors must be frozen before saving to " + path);
  }
  if (anchors.matrix.rows() != static_cast<Index>(anchors.class_names.size())) {
    throw ShapeError("anchor rows " + std::to_string(anchors.matrix.rows()) +
                     " vs class name count " + std::to_string(anchors.class_names.size()));
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open for writing: " + path);
  out.write(kMagic, sizeof(kMagic));
  put_u32(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(anchors.matrix.rows()));
  put_u32(out, static_cast<std::uint32_t>(anchors.matrix.cols()));
  out.write(reinterpret_cast<const char*>(anchors.matrix.data()),
            static_cast<std::streamsize>(sizeof(float) * static_cast<std::size_t>(anchors.matrix.size())));
  for (const auto& name : anchors.class_names) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
  }
  if (!out) throw Error("write failed: " + path);
}

SemanticAnchors load_anchors(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open anchor file: " + path);
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  std::size_t pos = 0;
  if (buf.size() < 8 || std::memcmp(buf.data(), kMagic, 8) != 0) {
    throw FormatError("anchor file " + path + ": bad magic, expected PANDANCH");
  }
  pos = 8;
  const std::uint32_t version = get_u32(buf, pos, path, "version");
  if (version != kVersion) {
    throw FormatError("anchor file " + path + ": unsupported version " +
                      std::to_string(version));
  }
  const std::uint32_t c = get_u32(buf, pos, path, "class count");
  const std::uint32_t d = get_u32(buf, pos, path, "feature dim");
  if (c == 0 || d == 0) {
    throw FormatError("anchor file " + path + ": empty shape (" + std::to_string(c) + "," +
                      std::to_string(d) + ")");
  }
  const std::size_t want = static_cast<std::size_t>(c) * d;
  if (pos + sizeof(float) * want > buf.size()) {
    throw FormatError("anchor file " + path + ": payload short: expected " +
                      std::to_string(want) + " floats");
  }
  SemanticAnchors anchors;
  anchors.matrix.resize(static_cast<Index>(c), static_cast<Index>(d));
  std::memcpy(anchors.matrix.data(), buf.data() + pos, sizeof(float) * want);
  pos += sizeof(float) * want;
  for (std::uint32_t i = 0; i < c; ++i) {
    const std::uint32_t len = get_u32(buf, pos, path, "class name length");
    if (pos + len > buf.size()) {
      throw FormatError("anchor file " + path + ": truncated class name " + std::to_string(i));
    }
    anchors.class_names.push_back(buf.substr(pos, len));
    pos += len;
  }
  for (Index row = 0; row < anchors.matrix.rows(); ++row) {
    const float norm = anchors.matrix.row(row).norm();
    if (std::abs(norm - 1.0f) > 1e-5f) {
      throw FormatError("anchor file " + path + ": row " + std::to_string(row) +
                        " norm " + std::to_string(norm) + " is not unit");
    }
  }
  anchors.frozen = true;
  return anchors;
}

}  // namespace pand
