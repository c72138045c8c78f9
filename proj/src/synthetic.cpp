#include <fmt/format.h>

#include <algorithm>
#include <array>
#include <random>
#include <set>

#include "xlrc/corpus.hpp"
#include "xlrc/error.hpp"
#include "xlrc/text.hpp"

namespace xlrc {

namespace {

struct Entry {
  const char* zh;
  const char* en;
};

constexpr std::array kPersons = {
    Entry{"王", "wang"}, Entry{"李", "li"},     Entry{"张", "zhang"}, Entry{"刘", "liu"},
    Entry{"陈", "chen"}, Entry{"杨", "yang"},   Entry{"赵", "zhao"},  Entry{"黄", "huang"},
    Entry{"周", "zhou"}, Entry{"吴", "wu"},     Entry{"徐", "xu"},    Entry{"孙", "sun"},
    Entry{"马", "ma"},   Entry{"朱", "zhu"},    Entry{"胡", "hu"},    Entry{"郭", "guo"},
};

constexpr std::array kPlaces = {
    Entry{"京", "beijing"},  Entry{"沪", "shanghai"}, Entry{"津", "tianjin"}, Entry{"渝", "chongqing"},
    Entry{"粤", "guangdong"}, Entry{"闽", "fujian"},  Entry{"浙", "zhejiang"}, Entry{"苏", "jiangsu"},
    Entry{"鲁", "shandong"}, Entry{"豫", "henan"},    Entry{"晋", "shanxi"},  Entry{"冀", "hebei"},
};

constexpr std::array kItems = {
    Entry{"茶", "tea"},  Entry{"酒", "wine"},  Entry{"书", "book"},  Entry{"花", "flower"},
    Entry{"画", "painting"}, Entry{"琴", "zither"}, Entry{"棋", "chess"}, Entry{"鱼", "fish"},
    Entry{"米", "rice"}, Entry{"面", "noodle"},
};

constexpr std::array kFunctionWords = {
    Entry{"住", "lives"}, Entry{"在", "in"},    Entry{"喜", "really"}, Entry{"欢", "likes"},
    Entry{"哪", "which"}, Entry{"里", "place"}, Entry{"谁", "who"},    Entry{"什", "what"},
    Entry{"么", "thing"},
};

struct Fact {
  bool lives = true;  // "住在" vs "喜欢"
  std::size_t person = 0;
  std::size_t object = 0;  // place or item index
};

std::string fact_text(const Fact& f) {
  return fmt::format("{}{}{}。", kPersons[f.person].zh, f.lives ? "住在" : "喜欢",
                     f.lives ? kPlaces[f.object].zh : kItems[f.object].zh);
}

std::vector<std::size_t> sample_distinct(std::size_t pool, std::size_t k, std::mt19937_64& rng) {
  std::vector<std::size_t> idx(pool);
  for (std::size_t i = 0; i < pool; ++i) idx[i] = i;
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, pool - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(k);
  return idx;
}

}  // namespace

std::string example_key(const RawExample& example) { return example.passage + "\n" + example.question; }

Lexicon synthetic_lexicon(const std::string& language) {
  Lexicon lex;
  const bool ja = language == "ja";
  auto add = [&](const Entry& e) { lex.emplace(e.zh, ja ? std::string(e.en) + "_ja" : std::string(e.en)); };
  for (const auto& e : kPersons) add(e);
  for (const auto& e : kPlaces) add(e);
  for (const auto& e : kItems) add(e);
  for (const auto& e : kFunctionWords) add(e);
  lex.emplace("。", ja ? "。" : ".");
  lex.emplace("？", ja ? "？" : "?");
  return lex;
}

std::vector<RawExample> generate_synthetic_targets(const SyntheticOptions& options) {
  const std::size_t facts = options.facts_per_passage;
  if (facts == 0 || facts > kPlaces.size() || facts > kItems.size()) {
    throw ContractError(fmt::format("facts_per_passage must be in [1, {}]", kItems.size()));
  }
  std::mt19937_64 rng(options.seed);
  std::set<std::string> seen(options.exclude.begin(), options.exclude.end());
  std::vector<RawExample> out;
  std::size_t attempts = 0;
  while (out.size() < options.count) {
    if (++attempts > options.count * 1000 + 1000) {
      throw ContractError("synthetic generator could not produce enough distinct examples");
    }
    const auto persons = sample_distinct(kPersons.size(), facts, rng);
    const auto places = sample_distinct(kPlaces.size(), facts, rng);
    const auto items = sample_distinct(kItems.size(), facts, rng);
    std::bernoulli_distribution coin(0.5);
    std::vector<Fact> fs;
    for (std::size_t i = 0; i < facts; ++i) {
      Fact f;
      f.lives = coin(rng);
      f.person = persons[i];
      f.object = f.lives ? places[i] : items[i];
      fs.push_back(f);
    }
    std::uniform_int_distribution<std::size_t> which(0, facts - 1);
    const std::size_t asked = which(rng);
    const bool ask_person = coin(rng);

    RawExample ex;
    ex.language = "zh";
    std::size_t answer_offset = 0;  // codepoints
    for (std::size_t i = 0; i < facts; ++i) {
      const std::string sentence = fact_text(fs[i]);
      if (i == asked) {
        const std::size_t base = text::decode_utf8(ex.passage).size();
        answer_offset = ask_person ? base : base + 3;
      }
      ex.passage += sentence;
    }
    const Fact& f = fs[asked];
    const char* person = kPersons[f.person].zh;
    const char* object = f.lives ? kPlaces[f.object].zh : kItems[f.object].zh;
    if (f.lives) {
      ex.question = ask_person ? fmt::format("谁住在{}？", object) : fmt::format("{}住在哪里？", person);
    } else {
      ex.question = ask_person ? fmt::format("谁喜欢{}？", object) : fmt::format("{}喜欢什么？", person);
    }
    ex.answers.push_back({ask_person ? person : object, answer_offset});
    if (!seen.insert(example_key(ex)).second) continue;
    ex.id = fmt::format("{}-{:04d}", options.id_prefix, out.size());
    validate_example(ex);
    out.push_back(std::move(ex));
  }
  return out;
}

std::vector<ParallelExample> generate_synthetic_corpus(const SyntheticOptions& options) {
  const std::vector<RawExample> targets = generate_synthetic_targets(options);
  std::vector<Translation> translations;
  for (const std::string& lang : options.source_languages) {
    const Lexicon lexicon = synthetic_lexicon(lang);
    for (const RawExample& ex : targets) {
      SourceText t = pseudo_translate(ex, lang, lexicon);
      translations.push_back({ex.id, lang, std::move(t.passage), std::move(t.question)});
    }
  }
  return build_parallel_corpus(targets, translations).examples;
}

}  // namespace xlrc
