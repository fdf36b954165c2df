#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "pldr/errors.hpp"

namespace pldr {

// Byte-fallback mode covers ids 0..255 plus [PAD]/[END]/<unk> and round-trips
// any UTF-8 input exactly. Unigram mode loads an externally trained
// vocabulary (tab separated piece<TAB>score lines) and segments by Viterbi.
class Tokenizer {
 public:
  static Tokenizer byte_fallback();
  static Tokenizer load_unigram(const std::string& path, bool digit_split);
  // "byte" selects byte_fallback, anything else is a vocab file path
  static Tokenizer from_spec(const std::string& spec, bool digit_split);

  std::vector<int> encode(const std::string& text) const;  // appends end_id once
  std::string decode(const std::vector<int>& ids) const;   // pad and end render empty

  int vocab_size() const { return static_cast<int>(pieces_.size()); }
  int pad_id() const { return pad_id_; }
  int end_id() const { return end_id_; }
  int unk_id() const { return unk_id_; }
  bool is_byte_mode() const { return byte_mode_; }
  const std::string& piece(int id) const;

 private:
  std::vector<std::string> pieces_;
  std::vector<double> scores_;
  std::unordered_map<std::string, int> piece_to_id_;
  std::vector<int> byte_piece_ids_;  // 256 entries when byte pieces exist, else empty
  int pad_id_ = -1, end_id_ = -1, unk_id_ = -1;
  bool byte_mode_ = false;
  bool digit_split_ = true;
  int max_piece_bytes_ = 1;

  std::vector<int> encode_unigram(const std::string& text) const;
};

}  // namespace pldr
