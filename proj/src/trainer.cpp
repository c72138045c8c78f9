#include "xlrc/trainer.hpp"

#include <fmt/format.h>
#include <fmt/ranges.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "xlrc/error.hpp"

namespace xlrc {

using nlohmann::json;

// ---- hyperparameters ------------------------------------------------------------

std::string HyperParams::to_string() const {
  return fmt::format("({},{},{},{})", lr_multiplier, epochs, batch_size, max_seq_len);
}

HyperParams parse_hparams(std::string_view text) {
  std::vector<std::string_view> fields;
  std::size_t pos = 0;
  while (true) {
    const std::size_t comma = text.find(',', pos);
    fields.push_back(text.substr(pos, comma == std::string_view::npos ? std::string_view::npos : comma - pos));
    if (comma == std::string_view::npos) break;
    pos = comma + 1;
  }
  auto fail = [&](const std::string& why) {
    return ParseError(fmt::format("hyperparameters \"{}\": {}", text, why));
  };
  if (fields.size() != 4) throw fail("expected four comma-separated values L,E,T,M");
  for (auto& f : fields) {
    while (!f.empty() && f.front() == ' ') f.remove_prefix(1);
    while (!f.empty() && f.back() == ' ') f.remove_suffix(1);
  }
  HyperParams hp;
  {
    const std::string rate(fields[0]);
    std::size_t used = 0;
    try {
      hp.lr_multiplier = std::stod(rate, &used);
    } catch (const std::exception&) {
      throw fail("L is not a number");
    }
    if (used != rate.size() || !std::isfinite(hp.lr_multiplier) || hp.lr_multiplier <= 0.0) {
      throw fail("L must be a positive number");
    }
  }
  std::size_t* targets[] = {&hp.epochs, &hp.batch_size, &hp.max_seq_len};
  const char* names[] = {"E", "T", "M"};
  for (std::size_t k = 0; k < 3; ++k) {
    const std::string_view f = fields[k + 1];
    std::size_t value = 0;
    auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), value);
    if (ec != std::errc() || ptr != f.data() + f.size() || f.empty() || value == 0) {
      throw fail(fmt::format("{} must be a positive integer", names[k]));
    }
    *targets[k] = value;
  }
  return hp;
}

// ---- schedule -------------------------------------------------------------------

StageSchedule StageSchedule::from_json(const json& doc, const std::filesystem::path& base_dir) {
  auto resolve = [&](const std::string& p) {
    std::filesystem::path path(p);
    return path.is_absolute() || base_dir.empty() ? path : base_dir / path;
  };
  StageSchedule s;
  try {
    for (const json& st : doc.at("stages")) {
      Stage stage;
      stage.data = resolve(st.at("data").get<std::string>());
      stage.hparams = parse_hparams(st.at("hparams").get<std::string>());
      stage.multilingual = st.value("multilingual", false);
      if (st.contains("states")) stage.states = resolve(st.at("states").get<std::string>());
      s.stages.push_back(std::move(stage));
    }
    s.target_dev = resolve(doc.at("target_dev").get<std::string>());
    if (doc.contains("encoder")) {
      const json& e = doc.at("encoder");
      s.encoder.hidden_dim = e.value("hidden_dim", s.encoder.hidden_dim);
      s.encoder.num_layers = e.value("num_layers", s.encoder.num_layers);
      s.encoder.num_heads = e.value("num_heads", s.encoder.num_heads);
      s.encoder.max_position = e.value("max_position", s.encoder.max_position);
      s.encoder.freeze = e.value("freeze", false);
    }
    if (doc.contains("fusion")) s.fusion.scale_logits = doc.at("fusion").value("scale_logits", false);
    s.max_answer_len = doc.value("max_answer_len", s.max_answer_len);
  } catch (const json::exception& e) {
    throw SchemaError(fmt::format("schedule: {}", e.what()));
  }
  s.validate();
  return s;
}

StageSchedule StageSchedule::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(fmt::format("cannot open {}", path.string()));
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(fmt::format("schedule {}: malformed JSON at byte {}", path.string(), e.byte), e.byte);
  }
  return from_json(doc, path.parent_path());
}

void StageSchedule::validate() const {
  if (stages.empty()) throw SchemaError("schedule: at least one stage is required");
  if (target_dev.empty()) throw SchemaError("schedule: target_dev is required");
  if (max_answer_len == 0) throw SchemaError("schedule: max_answer_len must be positive");
  for (const Stage& st : stages) {
    if (st.hparams.max_seq_len > encoder.max_position) {
      throw SchemaError(fmt::format("schedule: max sequence length {} exceeds encoder max_position {}",
                                    st.hparams.max_seq_len, encoder.max_position));
    }
  }
}

// ---- model ----------------------------------------------------------------------

Model Model::init(Vocabulary vocab, EncoderConfig config, std::vector<std::string> source_languages,
                  std::uint64_t seed, FusionOptions fusion_options) {
  std::sort(source_languages.begin(), source_languages.end());
  config.vocab_size = vocab.size();
  std::mt19937_64 rng(seed);
  Model m;
  m.vocab = std::move(vocab);
  m.encoder = EncoderParams::init(config, rng);
  const std::size_t n_sources = source_languages.empty() ? 2 : source_languages.size();
  m.fusion = FusionParams::init(config.hidden_dim, n_sources, rng);
  m.span = SpanHeadParams::init(2 * config.hidden_dim, rng);
  m.source_languages = std::move(source_languages);
  m.fusion_options = fusion_options;
  return m;
}

std::vector<std::pair<std::string, Tensor>> Model::named_parameters() const {
  auto out = encoder.named();
  for (auto& p : fusion.named()) out.push_back(std::move(p));
  for (auto& p : span.named()) out.push_back(std::move(p));
  return out;
}

std::vector<std::pair<std::string, Tensor>> Model::trainable_parameters() const {
  if (!encoder.config.freeze) return named_parameters();
  auto out = fusion.named();
  for (auto& p : span.named()) out.push_back(std::move(p));
  return out;
}

json Model::config_json() const {
  const EncoderConfig& c = encoder.config;
  return {{"encoder",
           {{"vocab_size", c.vocab_size},
            {"hidden_dim", c.hidden_dim},
            {"num_layers", c.num_layers},
            {"num_heads", c.num_heads},
            {"max_position", c.max_position},
            {"freeze", c.freeze}}},
          {"fusion", {{"scale_logits", fusion_options.scale_logits}, {"heads", FusionOptions::kHeads},
                      {"sources", fusion.num_sources()}}},
          {"source_languages", source_languages}};
}

// ---- optimizer ------------------------------------------------------------------

void AdamState::apply(const std::vector<std::pair<std::string, Tensor>>& params, double learning_rate) {
  ++step;
  const double correction1 = 1.0 - std::pow(kBeta1, static_cast<double>(step));
  const double correction2 = 1.0 - std::pow(kBeta2, static_cast<double>(step));
  for (const auto& [name, tensor] : params) {
    if (!tensor.has_grad()) continue;
    Tensor param = tensor;
    auto values = param.mutable_values();
    const auto grad = param.grad();
    auto& m = first_moment[name];
    auto& v = second_moment[name];
    if (m.empty()) {
      m.assign(values.size(), 0.0);
      v.assign(values.size(), 0.0);
    }
    for (std::size_t i = 0; i < values.size(); ++i) {
      m[i] = kBeta1 * m[i] + (1.0 - kBeta1) * grad[i];
      v[i] = kBeta2 * v[i] + (1.0 - kBeta2) * grad[i] * grad[i];
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      values[i] -= learning_rate * m_hat / (std::sqrt(v_hat) + kEpsilon);
    }
  }
}

// ---- forward / training ----------------------------------------------------------

ForwardResult forward(const Model& model, const TokenizedExample& example, const PrecomputedStates* states) {
  EncodedBatch batch;
  if (states != nullptr) {
    batch = states->get(example.id, example.target.language);
    if (batch.hidden_dim() != model.hidden_dim()) {
      throw TrainingError(fmt::format("precomputed states of '{}' have h={}, model has h={}", example.id,
                                      batch.hidden_dim(), model.hidden_dim()));
    }
    auto check_rows = [&](const Tensor& m, const TokenSequence& seq, const std::string& lang) {
      if (m.rows() != seq.size()) {
        throw ShapeError(fmt::format("precomputed states of '{}' ({}) have {} rows for {} tokens", example.id, lang,
                                     m.rows(), seq.size()));
      }
    };
    check_rows(batch.target, example.target, example.target.language);
    std::map<std::string, Tensor> kept;
    for (const auto& [lang, seq] : example.sources) {
      auto it = batch.sources.find(lang);
      if (it == batch.sources.end()) {
        throw LookupError(fmt::format("precomputed states of '{}' lack language '{}'", example.id, lang));
      }
      check_rows(it->second, seq, lang);
      kept.emplace(lang, it->second);
    }
    batch.sources = std::move(kept);
  } else {
    batch = encode_batch(example, model.encoder);
  }
  if (!batch.sources.empty()) {
    std::vector<std::string> langs;
    for (const auto& [lang, m] : batch.sources) langs.push_back(lang);
    if (langs != model.source_languages) {
      throw ContractError(fmt::format("example '{}' has sources [{}] but the model expects [{}]", example.id,
                                      fmt::join(langs, ","), fmt::join(model.source_languages, ",")));
    }
  }
  ForwardResult out;
  out.trace = fuse(batch, model.fusion, model.fusion_options);
  out.distributions = predict_distributions(out.trace.enhanced, model.span, answer_mask(example.target));
  return out;
}

namespace {

std::vector<std::string> stage_languages(const std::vector<ParallelExample>& data) {
  std::set<std::string> langs;
  for (const ParallelExample& ex : data)
    for (const auto& [lang, src] : ex.sources) langs.insert(lang);
  return {langs.begin(), langs.end()};
}

}  // namespace

StageResult train_stage(Model& model, const std::vector<ParallelExample>& data, const HyperParams& hparams,
                        bool multilingual, std::uint64_t seed, const PrecomputedStates* states) {
  if (data.empty()) throw TrainingError("train_stage: empty dataset");
  if (hparams.batch_size == 0) throw TrainingError("train_stage: batch size must be positive");

  if (multilingual) {
    const std::vector<std::string> langs = stage_languages(data);
    std::vector<std::string> missing;
    for (const ParallelExample& ex : data)
      for (const std::string& lang : langs)
        if (!ex.sources.contains(lang)) missing.push_back(fmt::format("{}:{}", ex.target.id, lang));
    if (!missing.empty()) {
      throw TrainingError(fmt::format("multilingual stage lacks translations for {} (id:lang) pairs, e.g. {}",
                                      missing.size(), missing.front()));
    }
    if (!langs.empty() && langs != model.source_languages) {
      if (langs.size() != model.fusion.num_sources()) {
        spdlog::info("source languages changed from [{}] to [{}]; reinitializing W_C",
                     fmt::join(model.source_languages, ","), fmt::join(langs, ","));
        std::mt19937_64 rng(seed ^ 0x5bd1e995ULL);
        const FusionParams fresh = FusionParams::init(model.hidden_dim(), langs.size(), rng);
        model.fusion.w_c = fresh.w_c;
      } else {
        spdlog::info("source languages changed from [{}] to [{}]; reusing fusion weights",
                     fmt::join(model.source_languages, ","), fmt::join(langs, ","));
      }
      model.source_languages = langs;
    }
  }

  std::vector<TokenizedExample> examples;
  std::vector<SpanLabel> labels;
  StageResult result;
  for (const ParallelExample& raw : data) {
    ParallelExample ex = raw;
    if (!multilingual) ex.sources.clear();
    TokenizedExample tok = tokenize_example(ex, model.vocab, hparams.max_seq_len);
    if (tok.target.answer_lost) {
      ++result.skipped_examples;
      continue;
    }
    if (!tok.target.answer_span) {
      throw ValidationError(fmt::format("training example '{}' has no answer", ex.target.id));
    }
    labels.push_back({tok.target.answer_span->start, tok.target.answer_span->end});
    examples.push_back(std::move(tok));
  }
  if (result.skipped_examples > 0) {
    spdlog::warn("{} training examples excluded: answer truncated by max_seq_len {}", result.skipped_examples,
                 hparams.max_seq_len);
  }
  if (examples.empty()) throw TrainingError("train_stage: no trainable examples after truncation");

  const auto params = model.named_parameters();
  const auto trainable = model.trainable_parameters();
  const double rate = hparams.learning_rate();
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (std::size_t epoch = 0; epoch < hparams.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_total = 0.0;
    for (std::size_t begin = 0, batch_index = 0; begin < order.size(); begin += hparams.batch_size, ++batch_index) {
      const std::size_t end = std::min(order.size(), begin + hparams.batch_size);
      std::vector<SpanDistributions> dists;
      std::vector<SpanLabel> batch_labels;
      for (std::size_t k = begin; k < end; ++k) {
        dists.push_back(forward(model, examples[order[k]], states).distributions);
        batch_labels.push_back(labels[order[k]]);
      }
      const Tensor loss = span_loss(dists, batch_labels);
      if (!std::isfinite(loss.item())) {
        throw TrainingError(fmt::format("non-finite loss in epoch {} batch {} (first example '{}')", epoch,
                                        batch_index, examples[order[begin]].id));
      }
      for (auto [name, t] : params) t.zero_grad();
      backward(loss);
      result.optimizer.apply(trainable, rate);
      epoch_total += loss.item() * static_cast<double>(end - begin);
    }
    result.epoch_losses.push_back(epoch_total / static_cast<double>(examples.size()));
    spdlog::debug("epoch {} loss {:.6f}", epoch, result.epoch_losses.back());
  }
  for (auto [name, t] : params) t.zero_grad();
  return result;
}

// ---- schedules ---------------------------------------------------------------------

std::vector<ParallelExample> load_dataset(const std::filesystem::path& path) {
  if (path.extension() == ".jsonl") return read_parallel_corpus(path);
  std::vector<ParallelExample> out;
  for (RawExample& ex : parse_squad(path)) out.push_back({std::move(ex), {}});
  return out;
}

Vocabulary schedule_vocabulary(const StageSchedule& schedule) {
  std::vector<ParallelExample> all;
  for (const Stage& stage : schedule.stages) {
    auto data = load_dataset(stage.data);
    all.insert(all.end(), std::make_move_iterator(data.begin()), std::make_move_iterator(data.end()));
  }
  return Vocabulary::build(all);
}

std::uint64_t stage_seed(std::uint64_t seed, std::size_t stage_index) {
  return seed * 0x9E3779B97F4A7C15ULL + stage_index + 1;
}

Model initial_model(const StageSchedule& schedule, std::uint64_t seed) {
  std::vector<std::string> langs;
  for (const Stage& stage : schedule.stages) {
    if (!stage.multilingual) continue;
    langs = stage_languages(load_dataset(stage.data));
    if (!langs.empty()) break;
  }
  return Model::init(schedule_vocabulary(schedule), schedule.encoder, langs, seed, schedule.fusion);
}

ScheduleResult run_schedule(const StageSchedule& schedule, std::uint64_t seed) {
  schedule.validate();
  ScheduleResult result;
  Model model = initial_model(schedule, seed);
  AdamState optimizer;
  for (std::size_t i = 0; i < schedule.stages.size(); ++i) {
    const Stage& stage = schedule.stages[i];
    spdlog::info("stage {}: {} {} multilingual={}", i, stage.data.string(), stage.hparams.to_string(),
                 stage.multilingual);
    const auto data = load_dataset(stage.data);
    std::optional<PrecomputedStates> states;
    if (!stage.states.empty()) states = PrecomputedStates::load(stage.states);
    StageResult sr = train_stage(model, data, stage.hparams, stage.multilingual, stage_seed(seed, i),
                                 states ? &*states : nullptr);
    result.stage_losses.push_back(std::move(sr.epoch_losses));
    optimizer = std::move(sr.optimizer);
  }
  const Stage& last = schedule.stages.back();
  const auto dev = load_dataset(schedule.target_dev);
  const auto predictions = predict(model, dev, last.hparams.max_seq_len, last.multilingual, schedule.max_answer_len);
  result.report = evaluate(predictions, golds_from_examples(dev));
  result.checkpoint = Checkpoint{std::move(model), std::move(optimizer), seed, schedule.stages.size() - 1,
                                 last.hparams.max_seq_len, schedule.max_answer_len, last.multilingual};
  return result;
}

// ---- prediction -----------------------------------------------------------------------

std::map<std::string, std::string> predict(const Model& model, const std::vector<ParallelExample>& data,
                                           std::size_t max_seq_len, bool multilingual, std::size_t max_answer_len,
                                           const PrecomputedStates* states) {
  NoGradGuard no_grad;
  std::map<std::string, std::string> out;
  std::size_t unknown = 0, total = 0;
  for (const ParallelExample& raw : data) {
    ParallelExample ex = raw;
    if (!multilingual) ex.sources.clear();
    const TokenizedExample tok = tokenize_example(ex, model.vocab, max_seq_len);
    unknown += tok.target.unknown_tokens;
    total += tok.target.size();
    for (const auto& [lang, seq] : tok.sources) {
      unknown += seq.unknown_tokens;
      total += seq.size();
    }
    const ForwardResult fr = forward(model, tok, states);
    const SpanPrediction pred = predict_answer(tok.target, fr.distributions, max_answer_len);
    if (!out.emplace(tok.id, pred.answer_text).second) {
      throw ValidationError(fmt::format("duplicate question id '{}'", tok.id));
    }
  }
  if (unknown > 0) {
    spdlog::warn("vocabulary coverage {:.2f}%: {} of {} tokens mapped to [UNK]",
                 100.0 * static_cast<double>(total - unknown) / static_cast<double>(total), unknown, total);
  }
  return out;
}

void predict_file(const std::filesystem::path& checkpoint_dir, const std::filesystem::path& data,
                  const std::filesystem::path& output, const std::filesystem::path& states_path) {
  const Checkpoint ckpt = Checkpoint::load(checkpoint_dir);
  std::optional<PrecomputedStates> states;
  if (!states_path.empty()) states = PrecomputedStates::load(states_path);
  const auto predictions = predict(ckpt.model, load_dataset(data), ckpt.max_seq_len, ckpt.multilingual,
                                   ckpt.max_answer_len, states ? &*states : nullptr);
  write_predictions(output, predictions);
}

}  // namespace xlrc
