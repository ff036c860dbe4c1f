#include "paraclap/checkpoint.hpp"

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"
#include "paraclap/error.hpp"

namespace paraclap {

using nlohmann::json;

std::string content_hash(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string checkpoint_to_string(const ClapModel& model) {
  const auto& c = model.config;
  json doc;
  doc["format_version"] = kCheckpointVersion;
  doc["d"] = c.shared_dim;
  doc["dims"] = {{"vocab_size", c.vocab_size},   {"text_dim", c.text_dim},
                 {"text_hidden", c.text_hidden}, {"audio_dim", c.audio_dim},
                 {"audio_hidden", c.audio_hidden}, {"shared_dim", c.shared_dim},
                 {"init_log_tau", c.init_log_tau}, {"embedding_init_std", c.embedding_init_std}};
  doc["vocab"] = model.vocab.tokens();
  doc["vocab_hash"] = model.vocab.hash();
  doc["feature_mean"] = model.scaler.mean;
  doc["feature_std"] = model.scaler.stddev;
  json ts = json::array();
  for (const auto& t : tensors(model.params)) {
    ts.push_back({{"name", t.name},
                  {"shape", {t.rows, t.cols}},
                  {"data", std::vector<double>(t.data.begin(), t.data.end())}});
  }
  doc["tensors"] = std::move(ts);
  return doc.dump() + "\n";
}

ClapModel checkpoint_from_string(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("checkpoint: ") + e.what());
  }
  try {
    if (doc.at("format_version").get<int>() != kCheckpointVersion) {
      throw ValidationError("unsupported checkpoint version " + doc.at("format_version").dump());
    }
    ClapModel m;
    const auto& dims = doc.at("dims");
    m.config.vocab_size = dims.at("vocab_size").get<std::size_t>();
    m.config.text_dim = dims.at("text_dim").get<std::size_t>();
    m.config.text_hidden = dims.at("text_hidden").get<std::size_t>();
    m.config.audio_dim = dims.at("audio_dim").get<std::size_t>();
    m.config.audio_hidden = dims.at("audio_hidden").get<std::size_t>();
    m.config.shared_dim = dims.at("shared_dim").get<std::size_t>();
    m.config.init_log_tau = dims.at("init_log_tau").get<double>();
    m.config.embedding_init_std = dims.at("embedding_init_std").get<double>();
    if (doc.at("d").get<std::size_t>() != m.config.shared_dim) {
      throw ValidationError("checkpoint d disagrees with dims.shared_dim");
    }

    m.vocab = Vocab(doc.at("vocab").get<std::vector<std::string>>());
    if (m.vocab.hash() != doc.at("vocab_hash").get<std::string>()) {
      throw ValidationError("checkpoint vocabulary hash mismatch");
    }
    if (m.vocab.size() != m.config.vocab_size) {
      throw ValidationError("checkpoint vocabulary size disagrees with dims.vocab_size");
    }
    m.scaler.mean = doc.at("feature_mean").get<std::array<double, kNumFeatures>>();
    m.scaler.stddev = doc.at("feature_std").get<std::array<double, kNumFeatures>>();

    // Allocate with the right shapes, then fill by name.
    Rng rng(0);
    m.params = zeros_like(init_params(m.config, rng));
    std::map<std::string, const json*> by_name;
    for (const auto& t : doc.at("tensors")) by_name[t.at("name").get<std::string>()] = &t;
    for (auto& t : tensors(m.params)) {
      auto it = by_name.find(t.name);
      if (it == by_name.end()) throw ValidationError("checkpoint is missing tensor " + t.name);
      const json& j = *it->second;
      const auto shape = j.at("shape").get<std::vector<std::size_t>>();
      if (shape.size() != 2 || shape[0] != t.rows || shape[1] != t.cols) {
        throw ShapeError("checkpoint tensor " + t.name + " has shape " + j.at("shape").dump());
      }
      const auto data = j.at("data").get<std::vector<double>>();
      if (data.size() != t.data.size()) throw ShapeError("checkpoint tensor " + t.name + " has wrong length");
      std::copy(data.begin(), data.end(), t.data.begin());
      by_name.erase(it);
    }
    if (!by_name.empty()) throw ValidationError("checkpoint has unknown tensor " + by_name.begin()->first);
    validate_shapes(m.params, m.config);
    return m;
  } catch (const json::exception& e) {
    throw ParseError(std::string("checkpoint: ") + e.what());
  }
}

void save_checkpoint(const std::filesystem::path& path, const ClapModel& model) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out << checkpoint_to_string(model);
  if (!out) throw IoError("write failed for " + path.string());
}

ClapModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return checkpoint_from_string(ss.str());
}

}  // namespace paraclap
