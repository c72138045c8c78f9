#include <fmt/format.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "xlrc/error.hpp"
#include "xlrc/trainer.hpp"

namespace xlrc {

using nlohmann::json;

namespace {

constexpr int kFormatVersion = 1;

std::uint64_t fnv1a(std::string_view data) {
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    hash ^= c;
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

void write_f64(const std::filesystem::path& path, std::span<const double> values) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(fmt::format("cannot write {}", path.string()));
  for (double v : values) {
    std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
    unsigned char bytes[8];
    for (int b = 0; b < 8; ++b) bytes[b] = static_cast<unsigned char>(bits >> (8 * b));
    out.write(reinterpret_cast<const char*>(bytes), 8);
  }
  if (!out) throw IoError(fmt::format("write failed: {}", path.string()));
}

std::vector<double> read_f64(const std::filesystem::path& path, std::size_t expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(fmt::format("cannot open {}", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string bytes = ss.str();
  if (bytes.size() != expected * 8) {
    throw ValidationError(
        fmt::format("{}: expected {} values, file holds {} bytes", path.string(), expected, bytes.size()));
  }
  std::vector<double> out(expected);
  for (std::size_t i = 0; i < expected; ++i) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[8 * i + b])) << (8 * b);
    out[i] = std::bit_cast<double>(bits);
  }
  return out;
}

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(fmt::format("cannot open {}", path.string()));
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(fmt::format("{}: malformed JSON at byte {}", path.string(), e.byte), e.byte);
  }
}

}  // namespace

std::string Checkpoint::fingerprint() const {
  return fmt::format("{:016x}", fnv1a(model.config_json().dump()));
}

void Checkpoint::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir / "params");
  std::filesystem::create_directories(dir / "optimizer");
  json params = json::array();
  for (const auto& [name, tensor] : model.named_parameters()) {
    params.push_back({{"name", name}, {"shape", tensor.shape()}});
    write_f64(dir / "params" / (name + ".bin"), tensor.values());
  }
  json moments = json::array();
  for (const auto& [name, m] : optimizer.first_moment) {
    const auto& v = optimizer.second_moment.at(name);
    moments.push_back({{"name", name}, {"size", m.size()}});
    write_f64(dir / "optimizer" / (name + ".m.bin"), m);
    write_f64(dir / "optimizer" / (name + ".v.bin"), v);
  }
  std::vector<std::string> vocab_tokens;
  for (std::size_t i = 0; i < model.vocab.size(); ++i) vocab_tokens.push_back(model.vocab.token_of(i));
  const json manifest = {{"format_version", kFormatVersion},
                         {"fingerprint", fingerprint()},
                         {"config", model.config_json()},
                         {"seed", seed},
                         {"stage_index", stage_index},
                         {"max_seq_len", max_seq_len},
                         {"max_answer_len", max_answer_len},
                         {"multilingual", multilingual},
                         {"optimizer_step", optimizer.step},
                         {"params", params},
                         {"moments", moments},
                         {"vocab", vocab_tokens}};
  std::ofstream out(dir / "manifest.json", std::ios::binary);
  if (!out) throw IoError(fmt::format("cannot write {}", (dir / "manifest.json").string()));
  out << manifest.dump(2) << "\n";
}

Checkpoint Checkpoint::load(const std::filesystem::path& dir) {
  const json manifest = read_json(dir / "manifest.json");
  Checkpoint ckpt;
  try {
    if (manifest.at("format_version").get<int>() != kFormatVersion) {
      throw ValidationError(fmt::format("{}: unsupported checkpoint format", dir.string()));
    }
    const json& config = manifest.at("config");
    const json& enc = config.at("encoder");
    EncoderConfig ec;
    ec.hidden_dim = enc.at("hidden_dim").get<std::size_t>();
    ec.num_layers = enc.at("num_layers").get<std::size_t>();
    ec.num_heads = enc.at("num_heads").get<std::size_t>();
    ec.max_position = enc.at("max_position").get<std::size_t>();
    ec.freeze = enc.at("freeze").get<bool>();
    FusionOptions fo;
    fo.scale_logits = config.at("fusion").at("scale_logits").get<bool>();
    const std::size_t n_sources = config.at("fusion").at("sources").get<std::size_t>();
    auto langs = config.at("source_languages").get<std::vector<std::string>>();

    Vocabulary vocab = Vocabulary::from_tokens(manifest.at("vocab").get<std::vector<std::string>>());
    if (vocab.size() != enc.at("vocab_size").get<std::size_t>()) {
      throw ValidationError(fmt::format("{}: vocabulary size disagrees with the config", dir.string()));
    }
    ckpt.model = Model::init(std::move(vocab), ec, langs, 0, fo);
    if (ckpt.model.fusion.num_sources() != n_sources) {
      std::mt19937_64 rng(0);
      ckpt.model.fusion.w_c = FusionParams::init(ec.hidden_dim, n_sources, rng).w_c;
    }
    if (ckpt.fingerprint() != manifest.at("fingerprint").get<std::string>()) {
      throw ValidationError(fmt::format("{}: fingerprint mismatch", dir.string()));
    }

    std::map<std::string, Tensor> by_name;
    for (auto& [name, t] : ckpt.model.named_parameters()) by_name.emplace(name, t);
    const json& params = manifest.at("params");
    if (params.size() != by_name.size()) {
      throw ValidationError(fmt::format("{}: expected {} parameters, manifest lists {}", dir.string(),
                                        by_name.size(), params.size()));
    }
    for (const json& p : params) {
      const std::string name = p.at("name").get<std::string>();
      auto it = by_name.find(name);
      if (it == by_name.end()) throw ValidationError(fmt::format("{}: unknown parameter '{}'", dir.string(), name));
      if (p.at("shape").get<Shape>() != it->second.shape()) {
        throw ShapeError(fmt::format("{}: parameter '{}' has the wrong shape", dir.string(), name));
      }
      auto values = it->second.mutable_values();
      const auto stored = read_f64(dir / "params" / (name + ".bin"), values.size());
      std::copy(stored.begin(), stored.end(), values.begin());
    }
    ckpt.optimizer.step = manifest.at("optimizer_step").get<std::uint64_t>();
    for (const json& m : manifest.at("moments")) {
      const std::string name = m.at("name").get<std::string>();
      const std::size_t size = m.at("size").get<std::size_t>();
      ckpt.optimizer.first_moment[name] = read_f64(dir / "optimizer" / (name + ".m.bin"), size);
      ckpt.optimizer.second_moment[name] = read_f64(dir / "optimizer" / (name + ".v.bin"), size);
    }
    ckpt.seed = manifest.at("seed").get<std::uint64_t>();
    ckpt.stage_index = manifest.at("stage_index").get<std::size_t>();
    ckpt.max_seq_len = manifest.at("max_seq_len").get<std::size_t>();
    ckpt.max_answer_len = manifest.at("max_answer_len").get<std::size_t>();
    ckpt.multilingual = manifest.at("multilingual").get<bool>();
  } catch (const json::exception& e) {
    throw SchemaError(fmt::format("{}: {}", (dir / "manifest.json").string(), e.what()));
  }
  return ckpt;
}

}  // namespace xlrc
