#include "pldr/telemetry.hpp"

#include <cmath>
#include <cstdlib>
#include <filesystem>

#include "json.hpp"
#include "pldr/errors.hpp"

namespace pldr {

namespace {

nlohmann::json dl_field(double v) {
  if (!std::isfinite(v)) return "overflow";
  return v;
}

}  // namespace

std::string telemetry_json(const TelemetryRecord& rec) {
  nlohmann::json j;
  j["step"] = rec.step;
  j["epoch"] = rec.epoch;
  j["lr"] = rec.lr;
  j["train_loss"] = rec.train_loss;
  j["train_acc"] = rec.train_acc;
  j["dl_alm"] = dl_field(rec.dl_alm);
  j["dl_ap"] = dl_field(rec.dl_ap);
  j["dl_glm"] = dl_field(rec.dl_glm);
  j["dlr"] = rec.has_dlr ? dl_field(rec.dlr) : nlohmann::json(nullptr);
  j["overflow_flags"] = rec.overflow_flags;
  j["val_loss"] = rec.has_val ? nlohmann::json(rec.val_loss) : nlohmann::json(nullptr);
  j["val_acc"] = rec.has_val ? nlohmann::json(rec.val_acc) : nlohmann::json(nullptr);
  return j.dump();
}

TelemetryWriter::TelemetryWriter(const std::string& out_dir, const std::string& run_id,
                                 bool append) {
  std::string dir = out_dir;
  if (const char* env = std::getenv("PLDR_TELEMETRY_DIR"); env && *env) dir = env;
  std::filesystem::create_directories(dir);
  path_ = dir + "/" + run_id + "_telemetry.jsonl";
  out_.open(path_, append ? std::ios::app : std::ios::trunc);
  if (!out_) throw io_error("cannot open telemetry file: " + path_);
}

void TelemetryWriter::log(const TelemetryRecord& rec) {
  out_ << telemetry_json(rec) << '\n';
  out_.flush();
  if (!out_) throw io_error("telemetry write failed: " + path_);
}

}  // namespace pldr
