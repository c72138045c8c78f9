#include "xlrc/encoder.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "init.hpp"
#include "xlrc/error.hpp"

namespace xlrc {

using nlohmann::json;

void EncoderConfig::validate() const {
  if (vocab_size == 0 || hidden_dim == 0 || num_heads == 0 || max_position == 0) {
    throw ContractError("encoder config: vocab_size, hidden_dim, num_heads, max_position must be positive");
  }
  if (hidden_dim % num_heads != 0) {
    throw ContractError(fmt::format("encoder config: hidden_dim {} not divisible by num_heads {}",
                                    hidden_dim, num_heads));
  }
}

EncoderParams EncoderParams::init(const EncoderConfig& config, std::mt19937_64& rng) {
  config.validate();
  const std::size_t h = config.hidden_dim;
  EncoderParams p;
  p.config = config;
  p.token_embedding = detail::normal_tensor({config.vocab_size, h}, 0.02, rng);
  p.position_embedding = detail::normal_tensor({config.max_position, h}, 0.02, rng);
  for (std::size_t l = 0; l < config.num_layers; ++l) {
    EncoderLayer layer;
    layer.w_query = detail::dense_weight(h, h, rng);
    layer.b_query = detail::zeros_param(h);
    layer.w_key = detail::dense_weight(h, h, rng);
    layer.b_key = detail::zeros_param(h);
    layer.w_value = detail::dense_weight(h, h, rng);
    layer.b_value = detail::zeros_param(h);
    layer.w_out = detail::dense_weight(h, h, rng);
    layer.b_out = detail::zeros_param(h);
    layer.attn_norm_gamma = detail::ones_param(h);
    layer.attn_norm_beta = detail::zeros_param(h);
    layer.w_ffn_in = detail::dense_weight(h, config.ffn_dim(), rng);
    layer.b_ffn_in = detail::zeros_param(config.ffn_dim());
    layer.w_ffn_out = detail::dense_weight(config.ffn_dim(), h, rng);
    layer.b_ffn_out = detail::zeros_param(h);
    layer.ffn_norm_gamma = detail::ones_param(h);
    layer.ffn_norm_beta = detail::zeros_param(h);
    p.layers.push_back(std::move(layer));
  }
  return p;
}

std::vector<std::pair<std::string, Tensor>> EncoderParams::named() const {
  std::vector<std::pair<std::string, Tensor>> out = {
      {"encoder.token_embedding", token_embedding},
      {"encoder.position_embedding", position_embedding},
  };
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const EncoderLayer& L = layers[l];
    const std::string prefix = fmt::format("encoder.layer{}.", l);
    for (const auto& [name, t] : std::initializer_list<std::pair<const char*, const Tensor&>>{
             {"attn.w_query", L.w_query},       {"attn.b_query", L.b_query},
             {"attn.w_key", L.w_key},           {"attn.b_key", L.b_key},
             {"attn.w_value", L.w_value},       {"attn.b_value", L.b_value},
             {"attn.w_out", L.w_out},           {"attn.b_out", L.b_out},
             {"attn_norm.gamma", L.attn_norm_gamma}, {"attn_norm.beta", L.attn_norm_beta},
             {"ffn.w_in", L.w_ffn_in},          {"ffn.b_in", L.b_ffn_in},
             {"ffn.w_out", L.w_ffn_out},        {"ffn.b_out", L.b_ffn_out},
             {"ffn_norm.gamma", L.ffn_norm_gamma}, {"ffn_norm.beta", L.ffn_norm_beta}}) {
      out.emplace_back(prefix + name, t);
    }
  }
  return out;
}

namespace {

Tensor attention_block(const Tensor& x, const EncoderLayer& layer, std::size_t heads,
                       const std::vector<bool>* key_mask) {
  const std::size_t h = x.cols();
  const std::size_t head_dim = h / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));
  const Tensor q = affine(x, layer.w_query, layer.b_query);
  const Tensor k = affine(x, layer.w_key, layer.b_key);
  const Tensor v = affine(x, layer.w_value, layer.b_value);
  std::vector<Tensor> head_outputs;
  for (std::size_t hd = 0; hd < heads; ++hd) {
    const std::size_t b = hd * head_dim, e = b + head_dim;
    const Tensor scores = scale(matmul(slice_cols(q, b, e), transpose(slice_cols(k, b, e))), inv_sqrt);
    const Tensor probs = key_mask ? softmax_rows(scores, *key_mask) : softmax_rows(scores);
    head_outputs.push_back(matmul(probs, slice_cols(v, b, e)));
  }
  const Tensor merged = heads == 1 ? head_outputs.front() : concat_cols(head_outputs);
  return affine(merged, layer.w_out, layer.b_out);
}

}  // namespace

Tensor encode(std::span<const std::size_t> token_ids, const EncoderParams& params) {
  const EncoderConfig& cfg = params.config;
  const std::size_t len = token_ids.size();
  if (len == 0) throw ContractError("encode: empty sequence");
  if (len > cfg.max_position) {
    throw ContractError(fmt::format("encode: sequence length {} exceeds max_position {}", len, cfg.max_position));
  }
  for (std::size_t id : token_ids) {
    if (id >= cfg.vocab_size) {
      throw ContractError(fmt::format("encode: token id {} out of range for vocab_size {}", id, cfg.vocab_size));
    }
  }
  std::vector<std::size_t> positions(len);
  for (std::size_t i = 0; i < len; ++i) positions[i] = i;

  Tensor x = add(gather_rows(params.token_embedding, token_ids), gather_rows(params.position_embedding, positions));

  std::vector<bool> key_mask(len);
  bool any_real = false;
  for (std::size_t i = 0; i < len; ++i) {
    key_mask[i] = token_ids[i] != Vocabulary::kPad;
    any_real = any_real || key_mask[i];
  }
  const bool any_pad = std::find(key_mask.begin(), key_mask.end(), false) != key_mask.end();
  const std::vector<bool>* mask = (any_real && any_pad) ? &key_mask : nullptr;

  for (const EncoderLayer& layer : params.layers) {
    x = layer_norm_rows(add(x, attention_block(x, layer, cfg.num_heads, mask)), layer.attn_norm_gamma,
                        layer.attn_norm_beta);
    const Tensor ffn = affine(gelu(affine(x, layer.w_ffn_in, layer.b_ffn_in)), layer.w_ffn_out, layer.b_ffn_out);
    x = layer_norm_rows(add(x, ffn), layer.ffn_norm_gamma, layer.ffn_norm_beta);
  }
  return x;
}

Tensor encode(const TokenSequence& seq, const EncoderParams& params) { return encode(seq.token_ids, params); }

void EncodedBatch::validate() const {
  if (!target.defined() || target.dim() != 2) throw ShapeError("encoded batch: target matrix missing");
  const std::size_t h = target.cols();
  for (const auto& [lang, m] : sources) {
    if (m.dim() != 2 || m.cols() != h) {
      throw ShapeError(fmt::format("encoded batch: '{}' states have shape {} but target has h={}", lang,
                                   shape_to_string(m.shape()), h));
    }
  }
}

EncodedBatch encode_batch(const TokenizedExample& example, const EncoderParams& params) {
  EncodedBatch batch;
  batch.target_language = example.target.language;
  batch.target = encode(example.target, params);
  for (const auto& [lang, seq] : example.sources) batch.sources.emplace(lang, encode(seq, params));
  return batch;
}

// ---- precomputed states --------------------------------------------------------------

PrecomputedStates PrecomputedStates::parse(std::string_view jsonl) {
  PrecomputedStates out;
  std::size_t line_no = 0, pos = 0;
  while (pos < jsonl.size()) {
    std::size_t next = jsonl.find('\n', pos);
    if (next == std::string_view::npos) next = jsonl.size();
    const std::string_view line = jsonl.substr(pos, next - pos);
    ++line_no;
    const std::size_t offset = pos;
    pos = next + 1;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(fmt::format("states line {}: malformed JSON at byte {}", line_no, offset + e.byte),
                       offset + e.byte);
    }
    if (!obj.contains("id") || !obj.contains("states")) {
      throw SchemaError(fmt::format("states line {}: missing 'id' or 'states'", line_no));
    }
    Entry entry;
    const std::string id = obj.at("id").get<std::string>();
    if (obj.contains("target")) entry.target_language = obj.at("target").get<std::string>();
    for (const auto& [lang, st] : obj.at("states").items()) {
      if (!st.contains("shape") || !st.contains("values")) {
        throw SchemaError(fmt::format("states of '{}' ({}) need 'shape' and 'values'", id, lang));
      }
      const auto shape = st.at("shape").get<std::vector<std::size_t>>();
      if (shape.size() != 2) throw SchemaError(fmt::format("states of '{}' ({}) must be a matrix", id, lang));
      entry.states.emplace(lang, Tensor::from(shape, st.at("values").get<std::vector<double>>()));
    }
    if (!out.entries_.emplace(id, std::move(entry)).second) {
      throw ValidationError(fmt::format("duplicate states for id '{}'", id));
    }
  }
  return out;
}

PrecomputedStates PrecomputedStates::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(fmt::format("cannot open {}", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

EncodedBatch PrecomputedStates::get(const std::string& id, const std::string& target_language) const {
  auto it = entries_.find(id);
  if (it == entries_.end()) throw LookupError(fmt::format("no precomputed states for id '{}'", id));
  const Entry& entry = it->second;
  const std::string target = target_language.empty() ? entry.target_language : target_language;
  if (target.empty()) throw ContractError(fmt::format("states for '{}' do not name a target language", id));
  EncodedBatch batch;
  batch.target_language = target;
  for (const auto& [lang, m] : entry.states) {
    if (lang == target) {
      batch.target = m;
    } else {
      batch.sources.emplace(lang, m);
    }
  }
  if (!batch.target.defined()) {
    throw LookupError(fmt::format("states for '{}' lack target language '{}'", id, target));
  }
  batch.validate();
  return batch;
}

EncodedBatch load_precomputed(const std::filesystem::path& path, const std::string& example_id,
                              const std::string& target_language) {
  return PrecomputedStates::load(path).get(example_id, target_language);
}

std::string write_precomputed_text(std::span<const std::pair<std::string, EncodedBatch>> batches) {
  std::string out;
  for (const auto& [id, batch] : batches) {
    json states = json::object();
    auto put = [&](const std::string& lang, const Tensor& m) {
      states[lang] = {{"shape", m.shape()}, {"values", std::vector<double>(m.values().begin(), m.values().end())}};
    };
    put(batch.target_language, batch.target);
    for (const auto& [lang, m] : batch.sources) put(lang, m);
    out += json{{"id", id}, {"target", batch.target_language}, {"states", std::move(states)}}.dump();
    out += '\n';
  }
  return out;
}

void store_precomputed(const std::filesystem::path& path,
                       std::span<const std::pair<std::string, EncodedBatch>> batches) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(fmt::format("cannot write {}", path.string()));
  out << write_precomputed_text(batches);
}

}  // namespace xlrc
