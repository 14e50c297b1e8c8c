// Checkpoint serialization: a magic tag, a JSON header describing the model
// and its parameter table, then raw little-endian float32 blobs in header
// order. Headers use sorted keys, so identical state produces identical
// bytes, which the reproducibility tests rely on.
#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cadence/masking.hpp"
#include "cadence/model.hpp"

namespace cadence {

using json = nlohmann::json;

inline constexpr char kCheckpointMagic[8] = {'C', 'A', 'D', 'N', 'C', 'K', 'P', '1'};

inline json model_config_json(const ModelConfig& c) {
  return json{{"layers", c.layers},
              {"dim", c.dim},
              {"ff", c.ff},
              {"heads", c.heads},
              {"phoneme_vocab", c.phoneme_vocab},
              {"pitch_buckets", c.pitch_buckets},
              {"pitch_min", c.pitch_min},
              {"pitch_max", c.pitch_max},
              {"max_duration", c.max_duration},
              {"codec_vocab", c.codec_vocab},
              {"codec_layers", c.codec_layers},
              {"dropout", c.dropout},
              {"max_positions", c.max_positions}};
}

inline ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  c.layers = j.at("layers");
  c.dim = j.at("dim");
  c.ff = j.at("ff");
  c.heads = j.at("heads");
  c.phoneme_vocab = j.at("phoneme_vocab");
  c.pitch_buckets = j.at("pitch_buckets");
  c.pitch_min = j.at("pitch_min");
  c.pitch_max = j.at("pitch_max");
  c.max_duration = j.at("max_duration");
  c.codec_vocab = j.at("codec_vocab");
  c.codec_layers = j.at("codec_layers");
  c.dropout = j.at("dropout");
  c.max_positions = j.at("max_positions");
  c.validate();
  return c;
}

inline json mask_config_json(const MaskConfig& c) {
  return json{{"window_k", c.window_k},
              {"grouping", c.grouping},
              {"plain", c.plain},
              {"heads_phoneme", c.heads_phoneme},
              {"heads_prosody", c.heads_prosody},
              {"heads_context", c.heads_context}};
}

inline MaskConfig mask_config_from_json(const json& j) {
  MaskConfig c;
  c.window_k = j.at("window_k");
  c.grouping = j.at("grouping");
  c.plain = j.at("plain");
  c.heads_phoneme = j.at("heads_phoneme");
  c.heads_prosody = j.at("heads_prosody");
  c.heads_context = j.at("heads_context");
  c.validate();
  return c;
}

template <typename S>
void save_checkpoint(const std::filesystem::path& path, const std::string& kind,
                     const json& extra, std::vector<nn::Parameter<S>*> params) {
  json header;
  header["format"] = 1;
  header["kind"] = kind;
  header["extra"] = extra;
  json table = json::array();
  for (auto* p : params)
    table.push_back(json{{"name", p->name},
                         {"rows", static_cast<int>(p->value.rows())},
                         {"cols", static_cast<int>(p->value.cols())}});
  header["params"] = table;
  std::string head = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("checkpoint: cannot write " + path.string());
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  uint64_t len = head.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(head.data(), static_cast<std::streamsize>(head.size()));
  std::vector<float> buf;
  for (auto* p : params) {
    buf.resize(static_cast<size_t>(p->count()));
    for (int r = 0, i = 0; r < p->value.rows(); ++r)
      for (int c = 0; c < p->value.cols(); ++c, ++i)
        buf[static_cast<size_t>(i)] = static_cast<float>(p->value(r, c));
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * sizeof(float)));
  }
  if (!out) throw IoError("checkpoint: write failed for " + path.string());
}

// Reads only the JSON header, to decide how to construct the model.
inline json peek_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("checkpoint: cannot open " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
    throw IoError("checkpoint: bad magic in " + path.string());
  uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in || len == 0 || len > (1u << 30))
    throw IoError("checkpoint: bad header length in " + path.string());
  std::string head(len, '\0');
  in.read(head.data(), static_cast<std::streamsize>(len));
  if (!in) throw IoError("checkpoint: truncated header in " + path.string());
  json j = json::parse(head, nullptr, false);
  if (j.is_discarded()) throw IoError("checkpoint: invalid header JSON");
  return j;
}

template <typename S>
void load_checkpoint(const std::filesystem::path& path, const std::string& expect_kind,
                     std::vector<nn::Parameter<S>*> params) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("checkpoint: cannot open " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
    throw IoError("checkpoint: bad magic in " + path.string());
  uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  std::string head(len, '\0');
  in.read(head.data(), static_cast<std::streamsize>(len));
  if (!in) throw IoError("checkpoint: truncated header");
  json header = json::parse(head);
  if (header.at("kind") != expect_kind)
    throw IoError("checkpoint: expected kind '" + expect_kind + "', found '" +
                  header.at("kind").get<std::string>() + "'");
  const json& table = header.at("params");
  if (table.size() != params.size())
    throw IoError("checkpoint: parameter count mismatch");
  std::vector<float> buf;
  for (size_t i = 0; i < params.size(); ++i) {
    auto* p = params[i];
    const json& e = table[i];
    if (e.at("name") != p->name)
      throw IoError("checkpoint: parameter '" + p->name + "' expected, found '" +
                    e.at("name").get<std::string>() + "'");
    if (e.at("rows") != static_cast<int>(p->value.rows()) ||
        e.at("cols") != static_cast<int>(p->value.cols()))
      throw IoError("checkpoint: shape mismatch for " + p->name);
    buf.resize(static_cast<size_t>(p->count()));
    in.read(reinterpret_cast<char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!in) throw IoError("checkpoint: truncated blob for " + p->name);
    for (int r = 0, k = 0; r < p->value.rows(); ++r)
      for (int c = 0; c < p->value.cols(); ++c, ++k)
        p->value(r, c) = static_cast<S>(buf[static_cast<size_t>(k)]);
  }
}

}  // namespace cadence
