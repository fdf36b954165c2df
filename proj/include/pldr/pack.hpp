#pragma once

#include <string>
#include <vector>

#include "pldr/rng.hpp"
#include "pldr/tokenizer.hpp"

namespace pldr {

// One training chunk of exactly context_length ids. Positions at and past
// pad_start hold pad_id and contribute nothing to the loss.
struct PackedChunk {
  std::vector<int> ids;
  int pad_start = 0;
};

// Reads one document per line; .jsonl/.ndjson files must carry a "text"
// string field per line, anything else is taken as raw text lines.
std::vector<std::string> load_corpus(const std::string& path);

// Concatenates encoded documents in corpus order and splits into
// context_length chunks, padding only the final partial chunk.
std::vector<PackedChunk> pack_documents(const std::vector<std::string>& docs,
                                        const Tokenizer& tok, int context_length);

std::vector<PackedChunk> pack_corpus_file(const std::string& path, const Tokenizer& tok,
                                          int context_length);

// Chunk visit order for one epoch. Identity when shuffle is off, otherwise a
// permutation drawn from the seed and epoch alone so resume replays it.
std::vector<int> epoch_order(int n_chunks, bool shuffle, uint64_t seed, int epoch);

}  // namespace pldr
