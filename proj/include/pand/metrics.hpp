#pragma once

#include <string>
#include <vector>

namespace pand {

/// One completed epoch. Stage-PSC rows carry the calibration loss in
/// `total` (component fields stay zero); Stage-NSD rows carry the full
/// breakdown. `top1` is the held-out accuracy when evaluated that epoch,
/// otherwise -1. `wall_ms` is informational only and deliberately excluded
/// from the serialized form so identical runs produce identical files.
struct EpochRecord {
  std::string stage;
  int epoch = 0;
  double lr = 0;
  double cls = 0, vis = 0, txt = 0, nsd = 0, base = 0, total = 0;
  double top1 = -1;
  double wall_ms = 0;
};

/// Append-only per-epoch log; serializes to one JSON object per line with a
/// fixed field order and %.9g numbers, so equal runs are byte-equal.
class MetricsLog {
 public:
  void append(const EpochRecord& rec) { records_.push_back(rec); }
  const std::vector<EpochRecord>& records() const { return records_; }
  bool empty() const { return records_.empty(); }

  std::string to_jsonl() const;
  void write_jsonl(const std::string& path) const;

 private:
  std::vector<EpochRecord> records_;
};

}  // namespace pand
