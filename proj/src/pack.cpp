#include "pldr/pack.hpp"

#include <fstream>
#include <numeric>

#include "json.hpp"
#include "pldr/errors.hpp"

namespace pldr {

namespace {

bool has_suffix(const std::string& s, const std::string& suf) {
  return s.size() >= suf.size() && s.compare(s.size() - suf.size(), suf.size(), suf) == 0;
}

}  // namespace

std::vector<std::string> load_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open corpus file: " + path);
  bool ndjson = has_suffix(path, ".jsonl") || has_suffix(path, ".ndjson");
  std::vector<std::string> docs;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (!ndjson) {
      docs.push_back(line);
      continue;
    }
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("text") || !j["text"].is_string())
      throw io_error("corpus line " + std::to_string(lineno) +
                     " is not a JSON object with a \"text\" string");
    docs.push_back(j["text"].get<std::string>());
  }
  return docs;
}

std::vector<PackedChunk> pack_documents(const std::vector<std::string>& docs,
                                        const Tokenizer& tok, int context_length) {
  if (context_length < 2) throw input_error("pack_documents: context_length must be >= 2");
  std::vector<int> stream;
  for (const auto& d : docs) {
    std::vector<int> ids = tok.encode(d);
    stream.insert(stream.end(), ids.begin(), ids.end());
  }
  std::vector<PackedChunk> chunks;
  size_t ctx = static_cast<size_t>(context_length);
  for (size_t i = 0; i < stream.size(); i += ctx) {
    PackedChunk c;
    size_t take = std::min(ctx, stream.size() - i);
    c.ids.assign(stream.begin() + static_cast<long>(i),
                 stream.begin() + static_cast<long>(i + take));
    c.pad_start = static_cast<int>(take);
    c.ids.resize(ctx, tok.pad_id());
    chunks.push_back(std::move(c));
  }
  return chunks;
}

std::vector<PackedChunk> pack_corpus_file(const std::string& path, const Tokenizer& tok,
                                          int context_length) {
  return pack_documents(load_corpus(path), tok, context_length);
}

std::vector<int> epoch_order(int n_chunks, bool shuffle, uint64_t seed, int epoch) {
  std::vector<int> order(static_cast<size_t>(n_chunks));
  std::iota(order.begin(), order.end(), 0);
  if (!shuffle) return order;
  Rng rng(seed);
  Rng epoch_rng = rng.fork(0x9e3779b97f4a7c15ull + static_cast<uint64_t>(epoch));
  for (int i = n_chunks - 1; i > 0; --i) {
    int j = static_cast<int>(epoch_rng.next_below(static_cast<uint64_t>(i) + 1));
    std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
  }
  return order;
}

}  // namespace pldr
