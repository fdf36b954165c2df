#include "pldr/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

namespace pldr {

namespace {

const std::string kSpace = "\xe2\x96\x81";  // the sentencepiece whitespace piece
constexpr double kByteScore = -20.0;

bool is_digit_byte(char c) { return c >= '0' && c <= '9'; }

// pieces containing a digit must be exactly one digit when splitting is on
bool piece_allowed(const std::string& p, bool digit_split) {
  if (!digit_split) return true;
  bool has_digit = false;
  for (char c : p) has_digit = has_digit || is_digit_byte(c);
  return !has_digit || p.size() == 1;
}

}  // namespace

Tokenizer Tokenizer::byte_fallback() {
  Tokenizer t;
  t.byte_mode_ = true;
  for (int b = 0; b < 256; ++b) t.pieces_.push_back(std::string(1, static_cast<char>(b)));
  t.pieces_.push_back("[PAD]");
  t.pieces_.push_back("[END]");
  t.pieces_.push_back("<unk>");
  t.pad_id_ = 256;
  t.end_id_ = 257;
  t.unk_id_ = 258;
  t.scores_.assign(t.pieces_.size(), 0.0);
  return t;
}

Tokenizer Tokenizer::load_unigram(const std::string& path, bool digit_split) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open vocab file: " + path);
  Tokenizer t;
  t.digit_split_ = digit_split;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    size_t tab = line.find('\t');
    std::string piece = tab == std::string::npos ? line : line.substr(0, tab);
    double score = 0.0;
    if (tab != std::string::npos) {
      try {
        score = std::stod(line.substr(tab + 1));
      } catch (...) {
        throw io_error("bad score in vocab file at line " + std::to_string(lineno));
      }
    }
    if (t.piece_to_id_.count(piece))
      throw io_error("duplicate piece in vocab file at line " + std::to_string(lineno));
    t.piece_to_id_[piece] = static_cast<int>(t.pieces_.size());
    t.pieces_.push_back(piece);
    t.scores_.push_back(score);
  }
  if (t.pieces_.empty()) throw io_error("empty vocab file: " + path);
  auto ensure = [&t](const std::string& piece, int& slot) {
    auto it = t.piece_to_id_.find(piece);
    if (it != t.piece_to_id_.end()) {
      slot = it->second;
      return;
    }
    slot = static_cast<int>(t.pieces_.size());
    t.piece_to_id_[piece] = slot;
    t.pieces_.push_back(piece);
    t.scores_.push_back(0.0);
  };
  ensure("[PAD]", t.pad_id_);
  ensure("[END]", t.end_id_);
  ensure("<unk>", t.unk_id_);
  t.byte_piece_ids_.assign(256, -1);
  bool all_bytes = true;
  for (int b = 0; b < 256; ++b) {
    char buf[8];
    std::snprintf(buf, sizeof buf, "<0x%02X>", b);
    auto it = t.piece_to_id_.find(buf);
    if (it != t.piece_to_id_.end())
      t.byte_piece_ids_[static_cast<size_t>(b)] = it->second;
    else
      all_bytes = false;
  }
  if (!all_bytes) t.byte_piece_ids_.clear();
  for (const auto& p : t.pieces_)
    t.max_piece_bytes_ = std::max(t.max_piece_bytes_, static_cast<int>(p.size()));
  return t;
}

Tokenizer Tokenizer::from_spec(const std::string& spec, bool digit_split) {
  if (spec.empty() || spec == "byte") return byte_fallback();
  return load_unigram(spec, digit_split);
}

const std::string& Tokenizer::piece(int id) const {
  if (id < 0 || id >= vocab_size()) throw input_error("piece: id out of range");
  return pieces_[static_cast<size_t>(id)];
}

std::vector<int> Tokenizer::encode(const std::string& text) const {
  if (byte_mode_) {
    std::vector<int> ids;
    ids.reserve(text.size() + 1);
    for (unsigned char c : text) ids.push_back(static_cast<int>(c));
    ids.push_back(end_id_);
    return ids;
  }
  return encode_unigram(text);
}

std::vector<int> Tokenizer::encode_unigram(const std::string& text) const {
  if (text.empty()) return {end_id_};
  std::string norm = kSpace;  // dummy prefix, spaces become the meta symbol
  for (char c : text) {
    if (c == ' ')
      norm += kSpace;
    else
      norm += c;
  }
  size_t n = norm.size();
  const double neg_inf = -std::numeric_limits<double>::infinity();
  std::vector<double> best(n + 1, neg_inf);
  std::vector<int> back_id(n + 1, -1);
  std::vector<size_t> back_len(n + 1, 0);
  best[0] = 0.0;
  for (size_t i = 0; i < n; ++i) {
    if (best[i] == neg_inf) continue;
    size_t maxlen = std::min(static_cast<size_t>(max_piece_bytes_), n - i);
    for (size_t len = 1; len <= maxlen; ++len) {
      std::string sub = norm.substr(i, len);
      auto it = piece_to_id_.find(sub);
      if (it == piece_to_id_.end()) continue;
      if (!piece_allowed(sub, digit_split_)) continue;
      double cand = best[i] + scores_[static_cast<size_t>(it->second)];
      if (cand > best[i + len]) {
        best[i + len] = cand;
        back_id[i + len] = it->second;
        back_len[i + len] = len;
      }
    }
    // byte fallback keeps the lattice connected on unknown input
    double cand = best[i] + kByteScore;
    if (cand > best[i + 1] && back_id[i + 1] == -1) {
      int id = byte_piece_ids_.empty() ? unk_id_
                                       : byte_piece_ids_[static_cast<unsigned char>(norm[i])];
      best[i + 1] = cand;
      back_id[i + 1] = id;
      back_len[i + 1] = 1;
    }
  }
  std::vector<int> rev;
  size_t pos = n;
  while (pos > 0) {
    rev.push_back(back_id[pos]);
    pos -= back_len[pos];
  }
  std::vector<int> ids(rev.rbegin(), rev.rend());
  ids.push_back(end_id_);
  return ids;
}

std::string Tokenizer::decode(const std::vector<int>& ids) const {
  std::string out;
  for (int id : ids) {
    if (id < 0 || id >= vocab_size()) throw input_error("decode: id out of range");
    if (id == pad_id_ || id == end_id_) continue;
    if (byte_mode_) {
      out += pieces_[static_cast<size_t>(id)];
      continue;
    }
    if (id == unk_id_) continue;
    const std::string& p = pieces_[static_cast<size_t>(id)];
    if (p.size() == 6 && p.rfind("<0x", 0) == 0 && p[5] == '>') {
      out += static_cast<char>(std::stoi(p.substr(3, 2), nullptr, 16));
      continue;
    }
    out += p;
  }
  if (byte_mode_) return out;
  // fold the whitespace meta symbol back into spaces
  std::string folded;
  for (size_t i = 0; i < out.size();) {
    if (out.compare(i, kSpace.size(), kSpace) == 0) {
      folded += ' ';
      i += kSpace.size();
    } else {
      folded += out[i];
      ++i;
    }
  }
  if (!folded.empty() && folded[0] == ' ') folded.erase(folded.begin());
  return folded;
}

}  // namespace pldr
