// xlrc command-line driver.

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <fstream>
#include <iostream>

#include "xlrc/corpus.hpp"
#include "xlrc/error.hpp"
#include "xlrc/gradcheck.hpp"
#include "xlrc/metrics.hpp"
#include "xlrc/trainer.hpp"

namespace fs = std::filesystem;
using namespace xlrc;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(fmt::format("cannot write {}", path.string()));
  out << text;
}

// A translations argument is a directory of <lang>.jsonl / <lang>.tsv files or one such file.
std::vector<Translation> collect_translations(const std::vector<RawExample>& targets,
                                              const std::vector<fs::path>& inputs) {
  std::vector<fs::path> files;
  for (const fs::path& in : inputs) {
    if (fs::is_directory(in)) {
      for (const auto& entry : fs::directory_iterator(in)) {
        const auto ext = entry.path().extension();
        if (entry.is_regular_file() && (ext == ".jsonl" || ext == ".tsv")) files.push_back(entry.path());
      }
    } else if (fs::exists(in)) {
      files.push_back(in);
    } else {
      throw IoError(fmt::format("translations path {} does not exist", in.string()));
    }
  }
  std::sort(files.begin(), files.end());
  std::vector<Translation> out;
  for (const fs::path& file : files) {
    const std::string lang = file.stem().string();
    if (file.extension() == ".tsv") {
      const Lexicon lexicon = read_lexicon(file);
      for (const RawExample& ex : targets) {
        const SourceText src = pseudo_translate(ex, lang, lexicon);
        out.push_back({ex.id, lang, src.passage, src.question});
      }
      spdlog::info("pseudo-translated {} examples into '{}' with {}", targets.size(), lang, file.string());
    } else {
      auto records = read_translations(file, lang);
      spdlog::info("read {} '{}' translations from {}", records.size(), lang, file.string());
      out.insert(out.end(), records.begin(), records.end());
    }
  }
  return out;
}

int build_corpus(const fs::path& target, const std::vector<fs::path>& translations, const fs::path& out_path,
                 bool allow_missing) {
  const auto targets = parse_squad(target);
  const ParallelCorpus corpus = build_parallel_corpus(targets, collect_translations(targets, translations));
  for (const MissingTranslation& m : corpus.missing) spdlog::warn("missing translation: {} ({})", m.id, m.language);
  if (!corpus.missing.empty() && !allow_missing) {
    spdlog::error("{} translations missing; pass --allow-missing to write the corpus anyway", corpus.missing.size());
    return 1;
  }
  write_parallel_corpus(out_path, corpus.examples);
  fmt::print("wrote {} examples to {}\n", corpus.examples.size(), out_path.string());
  return 0;
}

int synth(std::size_t count, std::uint64_t seed, const std::string& prefix, const fs::path& out_dir,
          const std::vector<fs::path>& exclude_from) {
  SyntheticOptions options;
  options.count = count;
  options.seed = seed;
  options.id_prefix = prefix;
  for (const fs::path& path : exclude_from) {
    for (const ParallelExample& ex : load_dataset(path)) options.exclude.push_back(example_key(ex.target));
  }
  const auto corpus = generate_synthetic_corpus(options);
  fs::create_directories(out_dir);
  std::vector<RawExample> targets;
  for (const ParallelExample& ex : corpus) targets.push_back(ex.target);
  write_squad(out_dir / "target.json", targets);
  write_parallel_corpus(out_dir / "corpus.jsonl", corpus);
  for (const std::string& lang : options.source_languages) {
    std::string tsv;
    for (const auto& [from, to] : synthetic_lexicon(lang)) tsv += from + "\t" + to + "\n";
    write_text(out_dir / (lang + ".tsv"), tsv);
  }
  fmt::print("wrote {} synthetic examples to {}\n", corpus.size(), out_dir.string());
  return 0;
}

int train(const fs::path& schedule_path, std::uint64_t seed, const fs::path& out_dir) {
  const StageSchedule schedule = StageSchedule::load(schedule_path);
  const ScheduleResult result = run_schedule(schedule, seed);
  result.checkpoint.save(out_dir);
  nlohmann::json log = nlohmann::json::object();
  log["stage_losses"] = result.stage_losses;
  log["dev"] = result.report.to_json();
  write_text(out_dir / "train_log.json", log.dump(2) + "\n");
  fmt::print("{}", result.report.summary());
  return 0;
}

int predict_cmd(const fs::path& ckpt_dir, const fs::path& data, const fs::path& out, const fs::path& states,
                const std::string& trace_id, const fs::path& trace_out) {
  predict_file(ckpt_dir, data, out, states);
  if (!trace_id.empty()) {
    const Checkpoint ckpt = Checkpoint::load(ckpt_dir);
    std::optional<PrecomputedStates> precomputed;
    if (!states.empty()) precomputed = PrecomputedStates::load(states);
    for (ParallelExample ex : load_dataset(data)) {
      if (ex.target.id != trace_id) continue;
      if (!ckpt.multilingual) ex.sources.clear();
      NoGradGuard no_grad;
      const TokenizedExample tok = tokenize_example(ex, ckpt.model.vocab, ckpt.max_seq_len);
      const ForwardResult fr = forward(ckpt.model, tok, precomputed ? &*precomputed : nullptr);
      const fs::path path = trace_out.empty() ? fs::path(trace_id + ".trace.json") : trace_out;
      write_text(path, trace_to_json(trace_id, fr.trace).dump(1) + "\n");
      return 0;
    }
    throw LookupError(fmt::format("trace id '{}' not found in {}", trace_id, data.string()));
  }
  return 0;
}

int eval_cmd(const fs::path& pred, const fs::path& gold, const fs::path& report_path) {
  const auto golds = golds_from_examples(load_dataset(gold));
  const EvalReport report = evaluate(read_predictions(pred), golds);
  if (!report_path.empty()) write_text(report_path, report.to_json().dump(2) + "\n");
  fmt::print("{}", report.summary());
  return 0;
}

int gradcheck_cmd(std::uint64_t seed, std::size_t configs, double step) {
  const GradSuiteReport report = run_gradient_suite(seed, configs, step);
  std::size_t failed = 0;
  for (const GradCheckResult& r : report.results) {
    if (!r.ok()) {
      ++failed;
      fmt::print("FAIL {}: {} of {} entries, worst {} rel {:.3e}\n", r.name, r.failures, r.checked, r.worst_entry,
                 r.max_relative_error);
    }
  }
  fmt::print("{} checks, {} failed\n", report.results.size(), failed);
  return failed == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross-lingual span-extraction reading comprehension"};
  app.require_subcommand(1);
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "debug logging");

  fs::path target, corpus_out;
  std::vector<fs::path> translations;
  bool allow_missing = false;
  auto* bc = app.add_subcommand("build-corpus", "align a SQuAD file with its translations");
  bc->add_option("--target", target, "target-language SQuAD JSON")->required()->check(CLI::ExistingFile);
  bc->add_option("--translations", translations, "directory or <lang>.jsonl / <lang>.tsv lexicon")->required();
  bc->add_option("--out", corpus_out, "output JSON Lines corpus")->required();
  bc->add_flag("--allow-missing", allow_missing, "write the corpus even when translations are missing");

  std::size_t synth_count = 32;
  std::uint64_t synth_seed = 0;
  std::string synth_prefix = "syn";
  fs::path synth_out;
  std::vector<fs::path> synth_exclude;
  auto* sy = app.add_subcommand("synth", "generate a synthetic trilingual corpus");
  sy->add_option("--count", synth_count, "number of questions");
  sy->add_option("--seed", synth_seed, "generator seed");
  sy->add_option("--prefix", synth_prefix, "question id prefix");
  sy->add_option("--exclude", synth_exclude, "dataset whose passage/question pairs must not recur (repeatable)");
  sy->add_option("--out", synth_out, "output directory")->required();

  fs::path schedule_path, ckpt_out;
  std::uint64_t seed = 0;
  auto* tr = app.add_subcommand("train", "run a staged training schedule");
  tr->add_option("--schedule", schedule_path, "schedule JSON")->required()->check(CLI::ExistingFile);
  tr->add_option("--seed", seed, "random seed");
  tr->add_option("--out", ckpt_out, "checkpoint directory")->required();

  fs::path ckpt_dir, data, pred_out, states, trace_out;
  std::string trace_id;
  auto* pr = app.add_subcommand("predict", "decode answers with a checkpoint");
  pr->add_option("--ckpt", ckpt_dir, "checkpoint directory")->required()->check(CLI::ExistingDirectory);
  pr->add_option("--data", data, "SQuAD JSON or parallel corpus")->required()->check(CLI::ExistingFile);
  pr->add_option("--out", pred_out, "prediction JSON")->required();
  pr->add_option("--states", states, "precomputed hidden states")->check(CLI::ExistingFile);
  pr->add_option("--trace-id", trace_id, "dump intermediate attention matrices for this question");
  pr->add_option("--trace-out", trace_out, "trace output file");

  fs::path pred_in, gold, report_path;
  auto* ev = app.add_subcommand("eval", "score predictions");
  ev->add_option("--pred", pred_in, "prediction JSON")->required()->check(CLI::ExistingFile);
  ev->add_option("--gold", gold, "gold SQuAD JSON or parallel corpus")->required()->check(CLI::ExistingFile);
  ev->add_option("--report", report_path, "per-question report JSON");

  std::uint64_t gc_seed = 1;
  std::size_t gc_configs = 20;
  double gc_step = 1e-4;
  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  gc->add_option("--seed", gc_seed, "configuration seed");
  gc->add_option("--configs", gc_configs, "number of random configurations");
  gc->add_option("--step", gc_step, "finite-difference step");

  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(verbose ? spdlog::level::debug : spdlog::level::info);

  try {
    if (*bc) return build_corpus(target, translations, corpus_out, allow_missing);
    if (*sy) return synth(synth_count, synth_seed, synth_prefix, synth_out, synth_exclude);
    if (*tr) return train(schedule_path, seed, ckpt_out);
    if (*pr) return predict_cmd(ckpt_dir, data, pred_out, states, trace_id, trace_out);
    if (*ev) return eval_cmd(pred_in, gold, report_path);
    if (*gc) return gradcheck_cmd(gc_seed, gc_configs, gc_step);
  } catch (const xlrc::Error& e) {
    spdlog::error("{}", e.what());
    return 2;
  } catch (const std::filesystem::filesystem_error& e) {
    spdlog::error("{}", e.what());
    return 2;
  }
  return 0;
}
