#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pldr/errors.hpp"

namespace pldr {

struct NamedArray {
  std::string name;
  std::vector<int> shape;
  std::vector<double> data;  // serialized at dtype_size, doubles hold f32 exactly
};

// Self describing training snapshot: model config, parameter and optimizer
// arrays, and enough trainer state to resume bit for bit.
struct CheckpointData {
  uint32_t dtype_size = 4;  // 4 or 8
  std::string config_json;
  std::vector<NamedArray> arrays;
  uint64_t step = 0;
  int epoch = 0;
  uint64_t rng_state = 0;
  std::vector<double> loss_window;
};

void save_checkpoint(const std::string& path, const CheckpointData& data);
CheckpointData load_checkpoint(const std::string& path);

const NamedArray& find_array(const CheckpointData& data, const std::string& name);

// rejects loading into a run whose model section or precision disagrees,
// naming the first mismatching field
void check_checkpoint_config(const CheckpointData& data, const std::string& run_config_json,
                             uint32_t expected_dtype_size);

}  // namespace pldr
