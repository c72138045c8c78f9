#include "xlrc/fusion.hpp"

#include <fmt/format.h>

#include <cmath>

#include "init.hpp"
#include "xlrc/error.hpp"

namespace xlrc {

using nlohmann::json;

FusionParams FusionParams::init(std::size_t hidden_dim, std::size_t num_sources, std::mt19937_64& rng) {
  if (hidden_dim == 0) throw ContractError("fusion: hidden_dim must be positive");
  const std::size_t width = std::max<std::size_t>(num_sources, 1) * hidden_dim;
  FusionParams p;
  p.w_c = detail::uniform_tensor({width, hidden_dim}, 1.0 / std::sqrt(static_cast<double>(width)), rng);
  p.b_c = detail::zeros_param(hidden_dim);
  p.gamma = detail::ones_param(hidden_dim);
  p.beta = detail::zeros_param(hidden_dim);
  return p;
}

std::vector<std::pair<std::string, Tensor>> FusionParams::named() const {
  return {{"fusion.w_c", w_c}, {"fusion.b_c", b_c}, {"fusion.norm.gamma", gamma}, {"fusion.norm.beta", beta}};
}

namespace {

Tensor similarity(const Tensor& a, const Tensor& b, const FusionOptions& options) {
  if (a.cols() != b.cols()) {
    throw ShapeError(fmt::format("fusion: hidden sizes differ ({} vs {})", shape_to_string(a.shape()),
                                 shape_to_string(b.shape())));
  }
  Tensor logits = matmul(a, transpose(b));
  if (options.scale_logits) logits = scale(logits, 1.0 / std::sqrt(static_cast<double>(a.cols())));
  return logits;
}

}  // namespace

Tensor self_attention(const Tensor& states, const FusionOptions& options) {
  return softmax_rows(similarity(states, states, options));
}

Tensor inter_attention(const Tensor& target, const Tensor& source, const FusionOptions& options) {
  return similarity(target, source, options);
}

AdaptiveAttention self_adaptive_attention(const Tensor& target_self, const Tensor& inter,
                                          const Tensor& source_self, const Tensor& source_states) {
  const Tensor adaptive = matmul(matmul(target_self, inter), transpose(source_self));
  return {adaptive, matmul(softmax_rows(adaptive), source_states)};
}

Tensor multilingual_attention(std::span<const Tensor> attended) {
  if (attended.empty()) throw ContractError("multilingual_attention: no attended representations");
  for (const Tensor& t : attended) {
    if (t.shape() != attended.front().shape()) {
      throw ShapeError(fmt::format("multilingual_attention: shapes {} and {} differ",
                                   shape_to_string(attended.front().shape()), shape_to_string(t.shape())));
    }
  }
  return attended.size() == 1 ? attended.front() : concat_cols(attended);
}

Enhanced enhance_target(const Tensor& target, const Tensor& multilingual, const FusionParams& params) {
  if (multilingual.cols() != params.w_c.rows()) {
    throw ShapeError(fmt::format("enhance_target: C' width {} does not match W_C {}", multilingual.cols(),
                                 shape_to_string(params.w_c.shape())));
  }
  const Tensor projected = affine(multilingual, params.w_c, params.b_c);
  const Tensor normed = layer_norm_rows(add(target, projected), params.gamma, params.beta);
  return {projected, concat_cols(target, normed)};
}

FusionTrace fuse(const EncodedBatch& batch, const FusionParams& params, const FusionOptions& options) {
  batch.validate();
  const std::size_t h = batch.hidden_dim();
  if (params.hidden_dim() != h) {
    throw ShapeError(fmt::format("fuse: states have h={} but fusion parameters h={}", h, params.hidden_dim()));
  }
  FusionTrace trace;
  const Tensor& target = batch.target;
  trace.target_self_attention = self_attention(target, options);

  if (batch.sources.empty()) {
    trace.projected = Tensor::zeros({target.rows(), h});
    trace.enhanced = concat_cols(target, layer_norm_rows(target, params.gamma, params.beta));
    return trace;
  }
  if (batch.sources.size() * h != params.w_c.rows()) {
    throw ContractError(fmt::format("fuse: {} source languages need W_C with {} rows, have {}",
                                    batch.sources.size(), batch.sources.size() * h, params.w_c.rows()));
  }
  std::vector<Tensor> attended;
  for (const auto& [lang, states] : batch.sources) {
    SourceTrace st;
    st.self_attention = self_attention(states, options);
    st.inter = inter_attention(target, states, options);
    AdaptiveAttention saa = self_adaptive_attention(trace.target_self_attention, st.inter, st.self_attention, states);
    st.adaptive = saa.adaptive;
    st.attended = saa.attended;
    attended.push_back(st.attended);
    trace.sources.emplace(lang, std::move(st));
  }
  trace.multilingual = multilingual_attention(attended);
  Enhanced e = enhance_target(target, trace.multilingual, params);
  trace.projected = e.projected;
  trace.enhanced = e.enhanced;
  return trace;
}

namespace {

json matrix_json(const Tensor& t) {
  if (!t.defined()) return nullptr;
  return {{"shape", t.shape()}, {"values", std::vector<double>(t.values().begin(), t.values().end())}};
}

}  // namespace

json trace_to_json(const std::string& example_id, const FusionTrace& trace) {
  json sources = json::object();
  for (const auto& [lang, st] : trace.sources) {
    sources[lang] = {{"A_src", matrix_json(st.self_attention)},
                     {"A_T_src", matrix_json(st.inter)},
                     {"A_tilde_T_src", matrix_json(st.adaptive)},
                     {"C_prime_src", matrix_json(st.attended)}};
  }
  return {{"id", example_id},
          {"A_T", matrix_json(trace.target_self_attention)},
          {"sources", std::move(sources)},
          {"C_prime", matrix_json(trace.multilingual)},
          {"C", matrix_json(trace.projected)},
          {"G_T", matrix_json(trace.enhanced)}};
}

}  // namespace xlrc
