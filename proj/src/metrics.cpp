#include "pand/metrics.hpp"

#include "pand/core.hpp"

#include <cstdio>
#include <fstream>

namespace pand {

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

}  // namespace

std::string MetricsLog::to_jsonl() const {
  std::string out;
  for (const auto& r : records_) {
    out += "{\"stage\":\"" + r.stage + "\",\"epoch\":" + std::to_string(r.epoch) +
           ",\"lr\":" + fmt(r.lr) + ",\"cls\":" + fmt(r.cls) + ",\"vis\":" + fmt(r.vis) +
           ",\"txt\":" + fmt(r.txt) + ",\"nsd\":" + fmt(r.nsd) + ",\"base\":" + fmt(r.base) +
           ",\"total\":" + fmt(r.total) + ",\"top1\":" + fmt(r.top1) + "}\n";
  }
  return out;
}

void MetricsLog::write_jsonl(const std::string& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open for writing: " + path);
  const std::string text = to_jsonl();
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw Error("write failed: " + path);
}

}  // namespace pand
