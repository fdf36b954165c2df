#include "pldr/dag.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace pldr {

namespace {

const char* kHeader = "model_id,tensor,lambda,dl_value";

std::string format_number(double v) {
  if (std::fabs(v) < 1e-30) return "0";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string format_value(const DagValue& r) {
  if (!r.has_value) return "NA";
  if (!std::isfinite(r.value)) return "overflow";
  return format_number(r.value);
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  fields.push_back(cur);
  return fields;
}

}  // namespace

std::string dag_report_csv(const DagReport& report) {
  std::ostringstream out;
  out << kHeader << '\n';
  for (const auto& r : report.rows) {
    out << report.model_id << ',' << r.tensor << ',';
    out << (r.has_lambda ? format_number(r.lambda) : "NA") << ',';
    out << format_value(r) << '\n';
  }
  return out.str();
}

DagReport dag_report_from_csv(const std::string& csv) {
  std::istringstream in(csv);
  std::string line;
  if (!std::getline(in, line) || line != kHeader)
    throw io_error("dag report: bad or missing CSV header");
  DagReport rep;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f = split_csv_line(line);
    if (f.size() != 4) throw io_error("dag report: malformed CSV row: " + line);
    if (rep.rows.empty())
      rep.model_id = f[0];
    else if (rep.model_id != f[0])
      throw io_error("dag report: mixed model_id values");
    DagValue r;
    r.tensor = f[1];
    if (f[2] == "NA") {
      r.has_lambda = false;
    } else {
      r.lambda = std::strtod(f[2].c_str(), nullptr);
    }
    if (f[3] == "NA") {
      r.has_value = false;
    } else if (f[3] == "overflow") {
      r.value = std::numeric_limits<double>::infinity();
    } else {
      r.value = std::strtod(f[3].c_str(), nullptr);
    }
    rep.rows.push_back(std::move(r));
  }
  if (rep.rows.empty()) throw io_error("dag report: no rows");
  return rep;
}

void save_dag_report(const std::string& path, const DagReport& report) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw io_error("cannot write dag report: " + path);
  out << dag_report_csv(report);
  if (!out) throw io_error("dag report write failed: " + path);
}

DagReport load_dag_report(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open dag report: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return dag_report_from_csv(buf.str());
}

std::string dag_report_table(const DagReport& report) {
  std::ostringstream head, vals;
  head << "model";
  vals << report.model_id;
  auto cell = [](const DagValue& r) {
    if (!r.has_value) return std::string("NA");
    if (!std::isfinite(r.value)) return std::string("overflow");
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4g", r.value);
    return std::string(buf);
  };
  for (const auto& r : report.rows) {
    if (r.has_lambda) {
      head << "  lambda(" << r.tensor << ")";
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.4g", r.lambda);
      vals << "  " << buf;
    }
    if (r.tensor == "DLR")
      head << "  DLR";
    else
      head << "  DL(" << r.tensor << ")";
    vals << "  " << cell(r);
  }
  return head.str() + "\n" + vals.str() + "\n";
}

}  // namespace pldr
