#include <fmt/format.h>

#include <fstream>
#include <json.hpp>
#include <sstream>

#include "xlrc/corpus.hpp"
#include "xlrc/error.hpp"
#include "xlrc/text.hpp"

namespace xlrc {

using nlohmann::json;

namespace {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(fmt::format("cannot open {}", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const json& require_field(const json& obj, const char* field, const std::string& where) {
  if (!obj.is_object() || !obj.contains(field)) {
    throw SchemaError(fmt::format("missing field '{}' in {}", field, where));
  }
  return obj.at(field);
}

std::string require_string(const json& obj, const char* field, const std::string& where) {
  const json& v = require_field(obj, field, where);
  if (!v.is_string()) throw SchemaError(fmt::format("field '{}' in {} must be a string", field, where));
  return v.get<std::string>();
}

}  // namespace

std::string detect_language(std::string_view text) {
  bool han = false;
  for (char32_t cp : text::decode_utf8(text)) {
    if ((cp >= 0x3040 && cp <= 0x30FF) || (cp >= 0x31F0 && cp <= 0x31FF)) return "ja";
    if (cp >= 0xAC00 && cp <= 0xD7AF) return "ko";
    if (text::is_cjk(cp)) han = true;
  }
  return han ? "zh" : "en";
}

void validate_example(const RawExample& example) {
  const std::u32string passage = text::decode_utf8(example.passage);
  for (const Answer& answer : example.answers) {
    const std::u32string answer_text = text::decode_utf8(answer.text);
    if (answer.answer_start + answer_text.size() > passage.size() ||
        passage.compare(answer.answer_start, answer_text.size(), answer_text) != 0) {
      throw ValidationError(fmt::format("answer '{}' at offset {} does not match the passage of {}",
                                        answer.text, answer.answer_start, example.id));
    }
  }
}

std::vector<RawExample> parse_squad_text(std::string_view json_text, const std::string& language) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ParseError(fmt::format("malformed JSON at byte {}: {}", e.byte, e.what()), e.byte);
  }
  const json& data = require_field(doc, "data", "document root");
  if (!data.is_array()) throw SchemaError("field 'data' must be an array");

  std::vector<RawExample> out;
  for (std::size_t a = 0; a < data.size(); ++a) {
    const std::string article_where = fmt::format("data[{}]", a);
    const json& paragraphs = require_field(data[a], "paragraphs", article_where);
    if (!paragraphs.is_array()) throw SchemaError(fmt::format("'paragraphs' of {} must be an array", article_where));
    for (std::size_t p = 0; p < paragraphs.size(); ++p) {
      const std::string para_where = fmt::format("{}.paragraphs[{}]", article_where, p);
      const std::string context = require_string(paragraphs[p], "context", para_where);
      const std::string lang = language.empty() ? detect_language(context) : language;
      const json& qas = require_field(paragraphs[p], "qas", para_where);
      if (!qas.is_array()) throw SchemaError(fmt::format("'qas' of {} must be an array", para_where));
      for (std::size_t q = 0; q < qas.size(); ++q) {
        const json& qa = qas[q];
        const std::string id = require_string(qa, "id", fmt::format("{}.qas[{}]", para_where, q));
        const std::string qa_where = fmt::format("qa '{}'", id);
        RawExample ex;
        ex.id = id;
        ex.passage = context;
        ex.question = require_string(qa, "question", qa_where);
        ex.language = lang;
        if (qa.contains("is_impossible")) {
          if (!qa.at("is_impossible").is_boolean()) {
            throw SchemaError(fmt::format("'is_impossible' of {} must be a boolean", qa_where));
          }
          ex.is_impossible = qa.at("is_impossible").get<bool>();
        }
        const json& answers = require_field(qa, "answers", qa_where);
        if (!answers.is_array()) throw SchemaError(fmt::format("'answers' of {} must be an array", qa_where));
        for (const json& ans : answers) {
          Answer answer;
          answer.text = require_string(ans, "text", qa_where);
          const json& start = require_field(ans, "answer_start", qa_where);
          if (!start.is_number_integer() || start.get<long long>() < 0) {
            throw SchemaError(fmt::format("'answer_start' of {} must be a non-negative integer", qa_where));
          }
          answer.answer_start = start.get<std::size_t>();
          ex.answers.push_back(std::move(answer));
        }
        validate_example(ex);
        out.push_back(std::move(ex));
      }
    }
  }
  return out;
}

std::vector<RawExample> parse_squad(const std::filesystem::path& path, const std::string& language) {
  return parse_squad_text(read_file(path), language);
}

std::string write_squad_text(std::span<const RawExample> examples) {
  json paragraphs = json::array();
  const std::string* current = nullptr;
  for (const RawExample& ex : examples) {
    if (current == nullptr || *current != ex.passage) {
      paragraphs.push_back({{"context", ex.passage}, {"qas", json::array()}});
      current = &ex.passage;
    }
    json answers = json::array();
    for (const Answer& a : ex.answers) answers.push_back({{"text", a.text}, {"answer_start", a.answer_start}});
    json qa = {{"id", ex.id}, {"question", ex.question}, {"answers", std::move(answers)}};
    if (ex.is_impossible) qa["is_impossible"] = true;
    paragraphs.back()["qas"].push_back(std::move(qa));
  }
  json doc = {{"version", "1.1"},
              {"data", json::array({json{{"title", ""}, {"paragraphs", std::move(paragraphs)}}})}};
  return doc.dump(1) + "\n";
}

void write_squad(const std::filesystem::path& path, std::span<const RawExample> examples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(fmt::format("cannot write {}", path.string()));
  out << write_squad_text(examples);
}

}  // namespace xlrc
