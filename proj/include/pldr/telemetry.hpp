#pragma once

#include <cstdint>
#include <fstream>
#include <string>

namespace pldr {

// One training log line. Non finite dl values mean the trace overflowed and
// are rendered as the string "overflow"; dlr is null when no regularized
// deductive term is active; val fields are null outside validation steps.
struct TelemetryRecord {
  int64_t step = 0;
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double dl_alm = 0.0;
  double dl_ap = 0.0;
  double dl_glm = 0.0;
  bool has_dlr = false;
  double dlr = 0.0;
  int overflow_flags = 0;
  bool has_val = false;
  double val_loss = 0.0;
  double val_acc = 0.0;
};

std::string telemetry_json(const TelemetryRecord& rec);

// Appends JSONL records under out_dir (or PLDR_TELEMETRY_DIR when set) and
// flushes after every line so crashes lose at most the line in flight.
class TelemetryWriter {
 public:
  TelemetryWriter(const std::string& out_dir, const std::string& run_id, bool append);
  void log(const TelemetryRecord& rec);
  const std::string& path() const { return path_; }

 private:
  std::string path_;
  std::ofstream out_;
};

}  // namespace pldr
