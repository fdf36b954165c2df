#include "pldr/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "json.hpp"

namespace pldr {

namespace {

constexpr char kMagic[4] = {'P', 'L', 'D', 'R'};
constexpr uint32_t kVersion = 1;

void write_bytes(std::ofstream& out, const void* p, size_t n) {
  out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

void write_u32(std::ofstream& out, uint32_t v) { write_bytes(out, &v, 4); }
void write_u64(std::ofstream& out, uint64_t v) { write_bytes(out, &v, 8); }

void write_str(std::ofstream& out, const std::string& s) {
  write_u64(out, s.size());
  write_bytes(out, s.data(), s.size());
}

void write_values(std::ofstream& out, const std::vector<double>& v, uint32_t dtype_size) {
  if (dtype_size == 8) {
    write_bytes(out, v.data(), v.size() * 8);
    return;
  }
  std::vector<float> f(v.begin(), v.end());
  write_bytes(out, f.data(), f.size() * 4);
}

void read_bytes(std::ifstream& in, void* p, size_t n) {
  in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (static_cast<size_t>(in.gcount()) != n) throw io_error("checkpoint truncated");
}

uint32_t read_u32(std::ifstream& in) {
  uint32_t v = 0;
  read_bytes(in, &v, 4);
  return v;
}

uint64_t read_u64(std::ifstream& in) {
  uint64_t v = 0;
  read_bytes(in, &v, 8);
  return v;
}

std::string read_str(std::ifstream& in, uint64_t cap) {
  uint64_t n = read_u64(in);
  if (n > cap) throw io_error("checkpoint corrupt: oversized string");
  std::string s(n, '\0');
  read_bytes(in, s.data(), n);
  return s;
}

std::vector<double> read_values(std::ifstream& in, size_t count, uint32_t dtype_size) {
  if (dtype_size == 8) {
    std::vector<double> v(count);
    read_bytes(in, v.data(), count * 8);
    return v;
  }
  std::vector<float> f(count);
  read_bytes(in, f.data(), count * 4);
  return std::vector<double>(f.begin(), f.end());
}

}  // namespace

void save_checkpoint(const std::string& path, const CheckpointData& data) {
  if (data.dtype_size != 4 && data.dtype_size != 8)
    throw io_error("checkpoint dtype_size must be 4 or 8");
  std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw io_error("cannot write checkpoint: " + path);
    write_bytes(out, kMagic, 4);
    write_u32(out, kVersion);
    write_u32(out, data.dtype_size);
    write_str(out, data.config_json);
    write_u64(out, data.arrays.size());
    for (const auto& a : data.arrays) {
      write_str(out, a.name);
      write_u32(out, static_cast<uint32_t>(a.shape.size()));
      size_t numel = 1;
      for (int d : a.shape) {
        write_u32(out, static_cast<uint32_t>(d));
        numel *= static_cast<size_t>(d);
      }
      if (numel != a.data.size())
        throw io_error("checkpoint array " + a.name + " shape does not match data");
      write_values(out, a.data, data.dtype_size);
    }
    write_u64(out, data.step);
    write_u64(out, static_cast<uint64_t>(data.epoch));
    write_u64(out, data.rng_state);
    write_u64(out, data.loss_window.size());
    write_bytes(out, data.loss_window.data(), data.loss_window.size() * 8);
    if (!out) throw io_error("write failed for checkpoint: " + path);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw io_error("cannot finalize checkpoint: " + path);
}

CheckpointData load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open checkpoint: " + path);
  char magic[4];
  read_bytes(in, magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) throw io_error("not a checkpoint file: " + path);
  uint32_t version = read_u32(in);
  if (version != kVersion)
    throw io_error("unsupported checkpoint version " + std::to_string(version));
  CheckpointData data;
  data.dtype_size = read_u32(in);
  if (data.dtype_size != 4 && data.dtype_size != 8)
    throw io_error("checkpoint corrupt: dtype_size " + std::to_string(data.dtype_size));
  data.config_json = read_str(in, 1ull << 24);
  uint64_t n_arrays = read_u64(in);
  if (n_arrays > (1ull << 20)) throw io_error("checkpoint corrupt: array count");
  data.arrays.resize(n_arrays);
  for (auto& a : data.arrays) {
    a.name = read_str(in, 1ull << 16);
    uint32_t rank = read_u32(in);
    if (rank > 8) throw io_error("checkpoint corrupt: rank of " + a.name);
    size_t numel = 1;
    a.shape.resize(rank);
    for (auto& d : a.shape) {
      d = static_cast<int>(read_u32(in));
      numel *= static_cast<size_t>(d);
    }
    if (numel > (1ull << 32)) throw io_error("checkpoint corrupt: size of " + a.name);
    a.data = read_values(in, numel, data.dtype_size);
  }
  data.step = read_u64(in);
  data.epoch = static_cast<int>(read_u64(in));
  data.rng_state = read_u64(in);
  uint64_t wn = read_u64(in);
  if (wn > (1ull << 20)) throw io_error("checkpoint corrupt: loss window size");
  data.loss_window.resize(wn);
  read_bytes(in, data.loss_window.data(), wn * 8);
  return data;
}

const NamedArray& find_array(const CheckpointData& data, const std::string& name) {
  for (const auto& a : data.arrays)
    if (a.name == name) return a;
  throw io_error("checkpoint is missing array: " + name);
}

void check_checkpoint_config(const CheckpointData& data, const std::string& run_config_json,
                             uint32_t expected_dtype_size) {
  if (data.dtype_size != expected_dtype_size)
    throw io_error("checkpoint mismatch: precision is " +
                   std::string(data.dtype_size == 8 ? "f64" : "f32") + ", run expects " +
                   (expected_dtype_size == 8 ? "f64" : "f32"));
  nlohmann::json saved = nlohmann::json::parse(data.config_json, nullptr, false);
  nlohmann::json run = nlohmann::json::parse(run_config_json, nullptr, false);
  if (saved.is_discarded() || !saved.is_object() || !saved.contains("model"))
    throw io_error("checkpoint config is not a valid run config");
  if (run.is_discarded() || !run.is_object() || !run.contains("model"))
    throw io_error("run config is not valid json");
  const auto& sm = saved["model"];
  const auto& rm = run["model"];
  for (auto it = sm.begin(); it != sm.end(); ++it) {
    if (!rm.contains(it.key()) || rm[it.key()] != it.value())
      throw io_error("checkpoint mismatch: model." + it.key() + " is " + it.value().dump() +
                     ", run config has " +
                     (rm.contains(it.key()) ? rm[it.key()].dump() : "nothing"));
  }
  for (auto it = rm.begin(); it != rm.end(); ++it)
    if (!sm.contains(it.key()))
      throw io_error("checkpoint mismatch: model." + it.key() + " missing from checkpoint");
}

}  // namespace pldr
