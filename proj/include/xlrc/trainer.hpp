#pragma once

// End-to-end optimization of encoder + fusion + span head, staged
// pretraining → fine-tuning schedules, checkpoints and prediction.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "xlrc/corpus.hpp"
#include "xlrc/encoder.hpp"
#include "xlrc/fusion.hpp"
#include "xlrc/metrics.hpp"
#include "xlrc/span_head.hpp"

namespace xlrc {

// (L, E, T, M): learning rate = L × 1e-5, epochs, batch size, max sequence length.
struct HyperParams {
  double lr_multiplier = 2.0;
  std::size_t epochs = 2;
  std::size_t batch_size = 12;
  std::size_t max_seq_len = 128;

  static constexpr double kRateUnit = 1.0e-5;
  double learning_rate() const { return lr_multiplier * kRateUnit; }
  std::string to_string() const;
};

// Parses "L,E,T,M"; throws ParseError quoting the input.
HyperParams parse_hparams(std::string_view text);

struct Stage {
  std::filesystem::path data;  // .jsonl parallel corpus, otherwise SQuAD JSON
  HyperParams hparams;
  bool multilingual = false;
  std::filesystem::path states;  // optional precomputed hidden states
};

struct StageSchedule {
  std::vector<Stage> stages;
  std::filesystem::path target_dev;
  EncoderConfig encoder;  // vocab_size is filled from the data
  FusionOptions fusion;
  std::size_t max_answer_len = kDefaultMaxAnswerLen;

  // Relative paths resolve against base_dir.
  static StageSchedule from_json(const nlohmann::json& doc, const std::filesystem::path& base_dir = {});
  static StageSchedule load(const std::filesystem::path& path);
  void validate() const;
};

struct Model {
  Vocabulary vocab;
  EncoderParams encoder;
  FusionParams fusion;
  SpanHeadParams span;
  std::vector<std::string> source_languages;  // lexicographic; fixes the C' column order
  FusionOptions fusion_options;

  static Model init(Vocabulary vocab, EncoderConfig config, std::vector<std::string> source_languages,
                    std::uint64_t seed, FusionOptions fusion_options = {});
  std::vector<std::pair<std::string, Tensor>> named_parameters() const;
  // Parameters updated by the optimizer (encoder excluded when frozen).
  std::vector<std::pair<std::string, Tensor>> trainable_parameters() const;
  nlohmann::json config_json() const;
  std::size_t hidden_dim() const { return encoder.config.hidden_dim; }
};

struct AdamState {
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEpsilon = 1e-8;

  std::uint64_t step = 0;
  std::map<std::string, std::vector<double>> first_moment;
  std::map<std::string, std::vector<double>> second_moment;

  // One update of every parameter that received a gradient.
  void apply(const std::vector<std::pair<std::string, Tensor>>& params, double learning_rate);
};

// Forward pass for one example; `states`, when given, replaces the encoder.
struct ForwardResult {
  FusionTrace trace;
  SpanDistributions distributions;
};

ForwardResult forward(const Model& model, const TokenizedExample& example,
                      const PrecomputedStates* states = nullptr);

struct StageResult {
  std::vector<double> epoch_losses;  // mean training loss of each epoch
  AdamState optimizer;
  std::size_t skipped_examples = 0;  // answer truncated away
};

// Mini-batch Adam on the span loss for E epochs with seeded shuffling.
// Monolingual stages drop the source texts and use the fusion fallback.
StageResult train_stage(Model& model, const std::vector<ParallelExample>& data, const HyperParams& hparams,
                        bool multilingual, std::uint64_t seed, const PrecomputedStates* states = nullptr);

struct Checkpoint {
  Model model;
  AdamState optimizer;
  std::uint64_t seed = 0;
  std::size_t stage_index = 0;
  // Settings of the last stage, reused for prediction.
  std::size_t max_seq_len = 128;
  std::size_t max_answer_len = kDefaultMaxAnswerLen;
  bool multilingual = false;

  std::string fingerprint() const;
  void save(const std::filesystem::path& dir) const;
  static Checkpoint load(const std::filesystem::path& dir);
};

struct ScheduleResult {
  Checkpoint checkpoint;
  EvalReport report;
  std::vector<std::vector<double>> stage_losses;
};

// Loads a dataset: .jsonl files are parallel corpora, anything else SQuAD JSON.
std::vector<ParallelExample> load_dataset(const std::filesystem::path& path);

// Vocabulary over every stage's data.
Vocabulary schedule_vocabulary(const StageSchedule& schedule);
Model initial_model(const StageSchedule& schedule, std::uint64_t seed);
std::uint64_t stage_seed(std::uint64_t seed, std::size_t stage_index);

ScheduleResult run_schedule(const StageSchedule& schedule, std::uint64_t seed);

// Decodes one answer per question. Source texts are ignored unless `multilingual`.
std::map<std::string, std::string> predict(const Model& model, const std::vector<ParallelExample>& data,
                                           std::size_t max_seq_len, bool multilingual,
                                           std::size_t max_answer_len = kDefaultMaxAnswerLen,
                                           const PrecomputedStates* states = nullptr);

// Loads a checkpoint, predicts every question of `data` and writes the prediction file.
void predict_file(const std::filesystem::path& checkpoint_dir, const std::filesystem::path& data,
                  const std::filesystem::path& output, const std::filesystem::path& states = {});

}  // namespace xlrc
