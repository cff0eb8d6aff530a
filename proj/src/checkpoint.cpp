#include "nightcap/checkpoint.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <set>

#include "nightcap/error.hpp"

namespace nightcap {

namespace {

constexpr char kMagic[8] = {'N', 'C', 'A', 'P', 'C', 'K', 'P', 'T'};
constexpr std::size_t kPrefix = 16;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return v;
}

std::uint64_t get_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

}  // namespace

nlohmann::json hyperparameters_to_json(const ModelConfig& c) {
  return {{"image_size", c.image_size},
          {"channels", c.channels},
          {"embed_dim", c.embed_dim},
          {"attention_dim", c.attention_dim},
          {"state_dim", c.state_dim},
          {"attention_mode", std::string(name(c.attention_mode))},
          {"max_caption_tokens", c.max_caption_tokens},
          {"max_decode_len", c.max_decode_len}};
}

ModelConfig hyperparameters_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.image_size = j.at("image_size").get<std::size_t>();
  c.channels = j.at("channels").get<std::array<std::size_t, 3>>();
  c.embed_dim = j.at("embed_dim").get<std::size_t>();
  c.attention_dim = j.at("attention_dim").get<std::size_t>();
  c.state_dim = j.at("state_dim").get<std::size_t>();
  c.attention_mode = parse_attention_mode(j.at("attention_mode").get<std::string>());
  c.max_caption_tokens = j.at("max_caption_tokens").get<std::size_t>();
  c.max_decode_len = j.at("max_decode_len").get<std::size_t>();
  return c;
}

std::vector<std::uint8_t> serialize_checkpoint(const CaptionModel& model) {
  nlohmann::json header;
  header["format_version"] = kCheckpointFormatVersion;
  header["hyperparameters"] = hyperparameters_to_json(model.config);
  header["vocabulary"] = model.vocab.corpus_words();
  nlohmann::json directory = nlohmann::json::object();
  std::vector<std::uint8_t> blob;
  for (const auto& [name, t] : model.named_parameters()) {
    const std::size_t offset = blob.size();
    for (double v : t.data()) put_u32(blob, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    directory[name] = {{"shape", t.shape()}, {"byte_offset", offset}, {"byte_length", blob.size() - offset}};
  }
  header["tensors"] = std::move(directory);
  const std::string text = header.dump();

  std::vector<std::uint8_t> out(kMagic, kMagic + sizeof kMagic);
  put_u64(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  out.insert(out.end(), blob.begin(), blob.end());
  return out;
}

CaptionModel deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kPrefix) throw FormatError("checkpoint truncated before header", bytes.size());
  if (std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
    throw FormatError("not a checkpoint file (bad magic)", 0);
  }
  const std::uint64_t header_len = get_u64(bytes.data() + 8);
  if (header_len > bytes.size() - kPrefix) {
    throw FormatError("checkpoint truncated inside header", bytes.size());
  }
  const auto* header_begin = reinterpret_cast<const char*>(bytes.data() + kPrefix);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_begin, header_begin + header_len);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("corrupt checkpoint header: ") + e.what(), kPrefix + e.byte - 1);
  }

  CaptionModel model;
  std::map<std::string, nlohmann::json> directory;
  try {
    const int version = header.at("format_version").get<int>();
    if (version != kCheckpointFormatVersion) {
      throw FormatError("unsupported checkpoint format_version " + std::to_string(version) +
                        " (expected " + std::to_string(kCheckpointFormatVersion) + ")");
    }
    model.config = hyperparameters_from_json(header.at("hyperparameters"));
    const auto words = header.at("vocabulary").get<std::vector<std::string>>();
    model.vocab = Vocabulary::from_words(words);
    for (const auto& [name, entry] : header.at("tensors").items()) directory[name] = entry;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("invalid checkpoint header: ") + e.what());
  } catch (const DataError& e) {
    throw FormatError(std::string("invalid checkpoint vocabulary: ") + e.what());
  } catch (const ParameterError& e) {
    throw FormatError(std::string("invalid checkpoint hyperparameters: ") + e.what());
  }

  // Shapes come from a freshly initialized model of the stored configuration.
  CaptionModel shaped = init_model(model.config, model.vocab, 0);
  model.encoder = shaped.encoder;
  model.attention = shaped.attention;
  model.decoder = shaped.decoder;

  const std::span<const std::uint8_t> blob = bytes.subspan(kPrefix + header_len);
  const auto params = model.named_parameters();
  if (directory.size() != params.size()) {
    throw FormatError("checkpoint lists " + std::to_string(directory.size()) + " tensors, expected " +
                      std::to_string(params.size()));
  }
  std::vector<std::pair<std::size_t, std::size_t>> extents;
  for (auto [name, tensor] : params) {
    auto it = directory.find(name);
    if (it == directory.end()) throw FormatError("checkpoint is missing tensor " + name);
    Shape shape;
    std::size_t offset = 0, length = 0;
    try {
      shape = it->second.at("shape").get<Shape>();
      offset = it->second.at("byte_offset").get<std::size_t>();
      length = it->second.at("byte_length").get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("invalid directory entry for " + name + ": " + e.what());
    }
    if (shape != tensor.shape()) {
      throw FormatError("tensor " + name + " has shape " + to_string(shape) + ", expected " +
                        to_string(tensor.shape()));
    }
    if (length != tensor.size() * 4) {
      throw FormatError("tensor " + name + " has byte_length " + std::to_string(length));
    }
    if (offset > blob.size() || length > blob.size() - offset) {
      throw FormatError("checkpoint blob truncated in tensor " + name, bytes.size());
    }
    auto values = tensor.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      values[i] = static_cast<double>(std::bit_cast<float>(get_u32(blob.data() + offset + 4 * i)));
    }
    extents.emplace_back(offset, length);
  }
  std::sort(extents.begin(), extents.end());
  std::size_t cursor = 0;
  for (const auto& [offset, length] : extents) {
    if (offset != cursor) throw FormatError("tensor extents overlap or leave gaps", kPrefix + header_len + offset);
    cursor += length;
  }
  if (cursor != blob.size()) {
    throw FormatError("checkpoint has " + std::to_string(blob.size() - cursor) + " trailing bytes",
                      kPrefix + header_len + cursor);
  }
  return model;
}

void save_checkpoint(const CaptionModel& model, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(model);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing checkpoint " + path.string());
}

CaptionModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

std::string model_id(const CaptionModel& model) {
  const auto bytes = serialize_checkpoint(model);
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  EVP_Digest(bytes.data(), bytes.size(), digest, &length, EVP_sha256(), nullptr);
  static constexpr char kHex[] = "0123456789abcdef";
  std::string id;
  for (int i = 0; i < 6; ++i) {
    id += kHex[digest[i] >> 4];
    id += kHex[digest[i] & 0xF];
  }
  return id;
}

}  // namespace nightcap
