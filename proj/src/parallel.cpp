#include <fmt/format.h>

#include <fstream>
#include <json.hpp>
#include <set>
#include <sstream>

#include "xlrc/corpus.hpp"
#include "xlrc/error.hpp"

namespace xlrc {

using nlohmann::json;

namespace {

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(fmt::format("cannot open {}", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

template <typename Fn>
void for_each_line(std::string_view body, Fn&& fn) {
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= body.size()) {
    std::size_t next = body.find('\n', pos);
    if (next == std::string_view::npos) next = body.size();
    std::string_view line = body.substr(pos, next - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    ++line_no;
    fn(line, line_no, pos);
    pos = next + 1;
  }
}

json parse_json_line(std::string_view line, std::size_t line_no, std::size_t line_offset) {
  try {
    return json::parse(line);
  } catch (const json::parse_error& e) {
    throw ParseError(fmt::format("line {}: malformed JSON at byte {}: {}", line_no,
                                 line_offset + e.byte, e.what()),
                     line_offset + e.byte);
  }
}

std::string string_field(const json& obj, const char* field, const std::string& where) {
  if (!obj.is_object() || !obj.contains(field) || !obj.at(field).is_string()) {
    throw SchemaError(fmt::format("missing string field '{}' in {}", field, where));
  }
  return obj.at(field).get<std::string>();
}

}  // namespace

ParallelCorpus build_parallel_corpus(std::span<const RawExample> targets,
                                     std::span<const Translation> translations) {
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (!index.emplace(targets[i].id, i).second) {
      throw ValidationError(fmt::format("duplicate target id '{}'", targets[i].id));
    }
  }
  ParallelCorpus corpus;
  for (const RawExample& t : targets) corpus.examples.push_back({t, {}});

  std::set<std::string> languages;
  for (const Translation& tr : translations) {
    auto it = index.find(tr.id);
    if (it == index.end()) {
      throw ValidationError(fmt::format("translation '{}' ({}) has no target example", tr.id, tr.language));
    }
    ParallelExample& ex = corpus.examples[it->second];
    if (tr.language == ex.target.language) {
      throw ValidationError(fmt::format("translation of '{}' is in the target language {}", tr.id, tr.language));
    }
    if (!ex.sources.emplace(tr.language, SourceText{tr.passage, tr.question}).second) {
      throw ValidationError(fmt::format("duplicate translation ('{}', {})", tr.id, tr.language));
    }
    languages.insert(tr.language);
  }
  for (const ParallelExample& ex : corpus.examples) {
    for (const std::string& lang : languages) {
      if (!ex.sources.contains(lang)) corpus.missing.push_back({ex.target.id, lang});
    }
  }
  return corpus;
}

std::string write_parallel_corpus_text(std::span<const ParallelExample> examples) {
  std::string out;
  for (const ParallelExample& ex : examples) {
    json answers = json::array();
    for (const Answer& a : ex.target.answers) answers.push_back({{"text", a.text}, {"answer_start", a.answer_start}});
    json target = {{"lang", ex.target.language},
                   {"passage", ex.target.passage},
                   {"question", ex.target.question},
                   {"answers", std::move(answers)}};
    if (ex.target.is_impossible) target["is_impossible"] = true;
    json sources = json::object();
    for (const auto& [lang, src] : ex.sources) sources[lang] = {{"passage", src.passage}, {"question", src.question}};
    json line = {{"id", ex.target.id}, {"target", std::move(target)}, {"sources", std::move(sources)}};
    out += line.dump();
    out += '\n';
  }
  return out;
}

void write_parallel_corpus(const std::filesystem::path& path, std::span<const ParallelExample> examples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(fmt::format("cannot write {}", path.string()));
  out << write_parallel_corpus_text(examples);
}

std::vector<ParallelExample> parse_parallel_corpus_text(std::string_view jsonl) {
  std::vector<ParallelExample> out;
  for_each_line(jsonl, [&](std::string_view line, std::size_t line_no, std::size_t offset) {
    if (line.find_first_not_of(" \t") == std::string_view::npos) return;
    const json obj = parse_json_line(line, line_no, offset);
    const std::string where = fmt::format("line {}", line_no);
    ParallelExample ex;
    ex.target.id = string_field(obj, "id", where);
    if (!obj.contains("target")) throw SchemaError(fmt::format("missing field 'target' in {}", where));
    const json& target = obj.at("target");
    const std::string twhere = fmt::format("target of '{}'", ex.target.id);
    ex.target.language = string_field(target, "lang", twhere);
    ex.target.passage = string_field(target, "passage", twhere);
    ex.target.question = string_field(target, "question", twhere);
    if (target.contains("is_impossible")) ex.target.is_impossible = target.at("is_impossible").get<bool>();
    if (target.contains("answers")) {
      for (const json& a : target.at("answers")) {
        if (!a.contains("answer_start") || !a.at("answer_start").is_number_unsigned()) {
          throw SchemaError(fmt::format("answer without 'answer_start' in {}", twhere));
        }
        ex.target.answers.push_back({string_field(a, "text", twhere), a.at("answer_start").get<std::size_t>()});
      }
    }
    validate_example(ex.target);
    if (obj.contains("sources")) {
      for (const auto& [lang, src] : obj.at("sources").items()) {
        const std::string swhere = fmt::format("source '{}' of '{}'", lang, ex.target.id);
        if (lang == ex.target.language) throw ValidationError(fmt::format("{} repeats the target language", swhere));
        ex.sources.emplace(lang, SourceText{string_field(src, "passage", swhere), string_field(src, "question", swhere)});
      }
    }
    out.push_back(std::move(ex));
  });
  return out;
}

std::vector<ParallelExample> read_parallel_corpus(const std::filesystem::path& path) {
  return parse_parallel_corpus_text(slurp(path));
}

std::vector<Translation> read_translations(const std::filesystem::path& path, const std::string& language) {
  std::vector<Translation> out;
  const std::string body = slurp(path);
  for_each_line(body, [&](std::string_view line, std::size_t line_no, std::size_t offset) {
    if (line.find_first_not_of(" \t") == std::string_view::npos) return;
    const json obj = parse_json_line(line, line_no, offset);
    const std::string where = fmt::format("{} line {}", path.string(), line_no);
    out.push_back({string_field(obj, "id", where), language, string_field(obj, "passage", where),
                   string_field(obj, "question", where)});
  });
  return out;
}

// ---- pseudo-translation ---------------------------------------------------------

Lexicon parse_lexicon_text(std::string_view tsv) {
  Lexicon lexicon;
  for_each_line(tsv, [&](std::string_view line, std::size_t line_no, std::size_t offset) {
    if (line.empty()) return;
    const std::size_t tab = line.find('\t');
    if (tab == std::string_view::npos || line.find('\t', tab + 1) != std::string_view::npos) {
      throw ParseError(fmt::format("lexicon line {}: expected two tab-separated columns", line_no), offset);
    }
    std::string from(line.substr(0, tab));
    std::string to(line.substr(tab + 1));
    auto [it, inserted] = lexicon.emplace(from, to);
    if (!inserted && it->second != to) {
      throw ParseError(fmt::format("lexicon line {}: conflicting entry for '{}'", line_no, from), offset);
    }
  });
  return lexicon;
}

Lexicon read_lexicon(const std::filesystem::path& path) { return parse_lexicon_text(slurp(path)); }

SourceText pseudo_translate(const RawExample& example, const std::string& language, const Lexicon& lexicon) {
  auto translate = [&](const std::string& text) {
    std::string out;
    for (const std::string& token : tokenize(text, example.language)) {
      if (!out.empty()) out += ' ';
      auto it = lexicon.find(token);
      if (it != lexicon.end()) {
        out += it->second;
      } else {
        out += language;
        out += '_';
        out += token;
      }
    }
    return out;
  };
  return {translate(example.passage), translate(example.question)};
}

}  // namespace xlrc
