#pragma once

// Self-adaptive attention and multilingual attention: fuses translated
// source-language states into the target representation.
//
//   A_T      = softmax(B_T B_Tᵀ)                 L_T × L_T
//   A_src    = softmax(B_src B_srcᵀ)             L_src × L_src
//   A_T,src  = B_T B_srcᵀ                        L_T × L_src   (raw)
//   Ã_T,src  = A_T A_T,src A_srcᵀ                L_T × L_src
//   C'_src   = softmax(Ã_T,src) B_src            L_T × h
//   C'       = [C'_src1 | C'_src2 | ...]         L_T × n·h
//   C        = C' W_C + b_C                      L_T × h
//   G_T      = [B_T | LayerNorm(B_T + C)]        L_T × 2h
//
// All softmaxes are row-wise. With no sources, C is taken as zero.

#include <cstddef>
#include <map>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "xlrc/encoder.hpp"
#include "xlrc/tensor.hpp"

namespace xlrc {

struct FusionOptions {
  // Fusion attention is single-head.
  static constexpr std::size_t kHeads = 1;
  // Multiply B·Bᵀ products by 1/sqrt(h). Off by default: the fusion equations are unscaled.
  bool scale_logits = false;
};

struct FusionParams {
  Tensor w_c;    // n·h × h
  Tensor b_c;    // h
  Tensor gamma;  // h
  Tensor beta;   // h

  static FusionParams init(std::size_t hidden_dim, std::size_t num_sources, std::mt19937_64& rng);
  std::size_t hidden_dim() const { return w_c.cols(); }
  std::size_t num_sources() const { return w_c.rows() / w_c.cols(); }
  std::vector<std::pair<std::string, Tensor>> named() const;
};

struct SourceTrace {
  Tensor self_attention;  // A_src
  Tensor inter;           // A_T,src
  Tensor adaptive;        // Ã_T,src
  Tensor attended;        // C'_src
};

struct FusionTrace {
  Tensor target_self_attention;          // A_T
  std::map<std::string, SourceTrace> sources;
  Tensor multilingual;                   // C'; undefined without sources
  Tensor projected;                      // C
  Tensor enhanced;                       // G_T
};

Tensor self_attention(const Tensor& states, const FusionOptions& options = {});
Tensor inter_attention(const Tensor& target, const Tensor& source, const FusionOptions& options = {});

struct AdaptiveAttention {
  Tensor adaptive;  // Ã
  Tensor attended;  // C'_src
};

AdaptiveAttention self_adaptive_attention(const Tensor& target_self, const Tensor& inter,
                                          const Tensor& source_self, const Tensor& source_states);
// Column-wise concatenation in the given order.
Tensor multilingual_attention(std::span<const Tensor> attended);

struct Enhanced {
  Tensor projected;  // C
  Tensor enhanced;   // G_T
};

Enhanced enhance_target(const Tensor& target, const Tensor& multilingual, const FusionParams& params);

// Throws ContractError when the batch's source count does not match W_C.
FusionTrace fuse(const EncodedBatch& batch, const FusionParams& params, const FusionOptions& options = {});

nlohmann::json trace_to_json(const std::string& example_id, const FusionTrace& trace);

}  // namespace xlrc
