#pragma once

// Shared contextual encoder producing one L×h matrix per language. A small
// trainable transformer stands in for a pretrained multilingual encoder;
// externally computed hidden states can be loaded instead.

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "xlrc/corpus.hpp"
#include "xlrc/tensor.hpp"

namespace xlrc {

struct EncoderConfig {
  std::size_t vocab_size = 0;
  std::size_t hidden_dim = 16;
  std::size_t num_layers = 2;
  std::size_t num_heads = 2;
  std::size_t max_position = 64;
  bool freeze = false;  // exclude encoder parameters from optimization

  void validate() const;
  std::size_t ffn_dim() const { return 2 * hidden_dim; }
};

struct EncoderLayer {
  Tensor w_query, b_query, w_key, b_key, w_value, b_value, w_out, b_out;
  Tensor attn_norm_gamma, attn_norm_beta;
  Tensor w_ffn_in, b_ffn_in, w_ffn_out, b_ffn_out;
  Tensor ffn_norm_gamma, ffn_norm_beta;
};

struct EncoderParams {
  EncoderConfig config;
  Tensor token_embedding;     // vocab_size × h
  Tensor position_embedding;  // max_position × h
  std::vector<EncoderLayer> layers;

  static EncoderParams init(const EncoderConfig& config, std::mt19937_64& rng);
  // Canonical "encoder.*" names in a fixed order.
  std::vector<std::pair<std::string, Tensor>> named() const;
};

// Embedding sum followed by post-norm transformer blocks. [PAD] keys are
// masked out of attention unless every position is padding.
Tensor encode(std::span<const std::size_t> token_ids, const EncoderParams& params);
Tensor encode(const TokenSequence& seq, const EncoderParams& params);

struct EncodedBatch {
  std::string target_language;
  Tensor target;                          // L_T × h
  std::map<std::string, Tensor> sources;  // language → L_src × h, lexicographic order

  std::size_t hidden_dim() const { return target.cols(); }
  // All matrices rank 2 with a common column count.
  void validate() const;
};

EncodedBatch encode_batch(const TokenizedExample& example, const EncoderParams& params);

// Precomputed hidden states, JSON Lines:
// {"id", "target": "<lang>", "states": {"<lang>": {"shape": [L, h], "values": [...]}}}
// "target" is optional when the caller names the target language.
class PrecomputedStates {
 public:
  static PrecomputedStates load(const std::filesystem::path& path);
  static PrecomputedStates parse(std::string_view jsonl);

  bool contains(const std::string& id) const { return entries_.contains(id); }
  std::size_t size() const { return entries_.size(); }
  EncodedBatch get(const std::string& id, const std::string& target_language = {}) const;

 private:
  struct Entry {
    std::string target_language;
    std::map<std::string, Tensor> states;
  };
  std::map<std::string, Entry> entries_;
};

EncodedBatch load_precomputed(const std::filesystem::path& path, const std::string& example_id,
                              const std::string& target_language = {});
std::string write_precomputed_text(std::span<const std::pair<std::string, EncodedBatch>> batches);
void store_precomputed(const std::filesystem::path& path,
                       std::span<const std::pair<std::string, EncodedBatch>> batches);

}  // namespace xlrc
