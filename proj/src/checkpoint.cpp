#include "nllm/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "nllm/error.hpp"

namespace nllm {

namespace {

using json = nlohmann::json;

constexpr std::array<char, 8> kMagic = {'N', 'L', 'L', 'M', 'C', 'K', 'P', 'T'};

template <typename U>
void write_le(std::ostream& out, U v) {
  char buf[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(buf, sizeof(U));
}

template <typename U>
U read_le(std::istream& in, const char* what) {
  unsigned char buf[sizeof(U)];
  if (!in.read(reinterpret_cast<char*>(buf), sizeof(U))) throw FormatError(std::string("checkpoint truncated in ") + what);
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(buf[i]) << (8 * i);
  return v;
}

json config_json(const ModelConfig& c) {
  return {{"kind", c.kind == ModelKind::Chunk ? "chunk" : "sense"},
          {"lattice_size", c.max_chunk_len},
          {"embeddings_per_token", c.senses},
          {"embed_dim", c.embed_dim},
          {"hidden_dim", c.hidden_dim},
          {"layers", c.layers},
          {"split", std::string(to_string(c.split))},
          {"approx", std::string(to_string(c.approx))},
          {"max_sentence_len", c.max_sentence_len}};
}

ModelConfig config_from(const json& j) {
  ModelConfig c;
  const std::string kind = j.at("kind").get<std::string>();
  if (kind != "chunk" && kind != "sense") throw FormatError("unknown model kind in checkpoint: " + kind);
  c.kind = kind == "chunk" ? ModelKind::Chunk : ModelKind::Sense;
  c.max_chunk_len = j.at("lattice_size").get<int>();
  c.senses = j.at("embeddings_per_token").get<int>();
  c.embed_dim = j.at("embed_dim").get<int>();
  c.hidden_dim = j.at("hidden_dim").get<int>();
  c.layers = j.at("layers").get<int>();
  c.split = parse_split_mode(j.at("split").get<std::string>());
  c.approx = parse_approx_mode(j.at("approx").get<std::string>());
  c.max_sentence_len = j.at("max_sentence_len").get<int>();
  return c;
}

}  // namespace

void save_checkpoint(const Model& model, std::ostream& out) {
  std::ostringstream vocab, chunks;
  model.vocab().save(vocab);
  model.chunks().save(chunks);
  json arrays = json::array();
  std::uint64_t offset = 0;
  const ParamSet& params = model.params();
  for (int i = 0; i < params.size(); ++i) {
    const Parameter& p = params[i];
    json shape = json::array();
    if (p.shape().rank() == 1) {
      shape.push_back(p.shape().size());
    } else {
      shape.push_back(p.shape().rows());
      shape.push_back(p.shape().cols());
    }
    arrays.push_back({{"name", p.name()}, {"shape", shape}, {"offset", offset}});
    offset += static_cast<std::uint64_t>(p.shape().size());
  }
  const json manifest = {{"config", config_json(model.config())},
                         {"vocab", vocab.str()},
                         {"chunks", chunks.str()},
                         {"arrays", arrays},
                         {"payload_values", offset}};
  const std::string text = manifest.dump();
  out.write(kMagic.data(), kMagic.size());
  write_le<std::uint32_t>(out, kCheckpointVersion);
  write_le<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (int i = 0; i < params.size(); ++i) {
    for (double v : params[i].value().values) write_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  if (!out) throw IoError("failed to write checkpoint");
}

void save_checkpoint(const Model& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  save_checkpoint(model, out);
  out.close();
  if (!out) throw IoError("failed to write checkpoint: " + path);
}

std::unique_ptr<Model> load_checkpoint(std::istream& in) {
  std::array<char, 8> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kMagic) throw FormatError("not a checkpoint file");
  const auto version = read_le<std::uint32_t>(in, "header");
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  }
  const auto length = read_le<std::uint64_t>(in, "header");
  if (length > (1ULL << 32)) throw FormatError("checkpoint manifest length is implausible");
  std::string text(static_cast<std::size_t>(length), '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(length))) throw FormatError("checkpoint truncated in manifest");

  json manifest;
  try {
    manifest = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad checkpoint manifest: ") + e.what());
  }
  std::unique_ptr<Model> model;
  try {
    const ModelConfig config = config_from(manifest.at("config"));
    std::istringstream vocab_in(manifest.at("vocab").get<std::string>());
    TokenVocab vocab = TokenVocab::load(vocab_in);
    std::istringstream chunks_in(manifest.at("chunks").get<std::string>());
    ChunkVocab chunks = ChunkVocab::load(chunks_in, vocab.size(), config.max_chunk_len);
    model = std::make_unique<Model>(config, std::move(vocab), std::move(chunks));

    const json& arrays = manifest.at("arrays");
    ParamSet& params = model->params();
    if (static_cast<int>(arrays.size()) != params.size()) throw FormatError("checkpoint array count does not match the model");
    std::uint64_t expected = 0;
    for (int i = 0; i < params.size(); ++i) {
      const json& a = arrays.at(static_cast<std::size_t>(i));
      Parameter& p = params[i];
      if (a.at("name").get<std::string>() != p.name()) throw FormatError("checkpoint array order differs at " + p.name());
      const auto shape = a.at("shape").get<std::vector<int>>();
      const bool same = p.shape().rank() == 1 ? shape == std::vector<int>{p.shape().size()}
                                              : shape == std::vector<int>{p.shape().rows(), p.shape().cols()};
      if (!same) throw FormatError("checkpoint shape mismatch for " + p.name());
      if (a.at("offset").get<std::uint64_t>() != expected) throw FormatError("checkpoint offset mismatch for " + p.name());
      expected += static_cast<std::uint64_t>(p.shape().size());
    }
    if (manifest.at("payload_values").get<std::uint64_t>() != expected) throw FormatError("checkpoint payload size mismatch");
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad checkpoint manifest: ") + e.what());
  }

  ParamSet& params = model->params();
  for (int i = 0; i < params.size(); ++i) {
    for (double& v : params[i].value().values) v = std::bit_cast<double>(read_le<std::uint64_t>(in, "payload"));
  }
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError("checkpoint has trailing bytes after the payload");
  return model;
}

std::unique_ptr<Model> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  return load_checkpoint(in);
}

}  // namespace nllm
