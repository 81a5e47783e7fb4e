#include "distlab/checkpoint.hpp"

#include <bit>
#include <cstring>

#include "distlab/corpus.hpp"

namespace distlab {

namespace {

constexpr char kMagic[8] = {'D', 'L', 'A', 'B', 'C', 'K', 'P', 'T'};

static_assert(std::numeric_limits<float>::is_iec559, "checkpoint payload assumes IEEE-754 binary32");

void put_u32_le(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64_le(std::string_view s) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(s[i]);
  return v;
}

std::uint32_t get_u32_le(const char* p) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(p[i]);
  return v;
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  check_shapes(ckpt.params, ckpt.config);
  nlohmann::json tensors = nlohmann::json::object();
  std::string payload;
  nlohmann::json order = nlohmann::json::array();
  for (const auto& t : named_tensors(ckpt.params)) {
    const auto& m = *t.tensor;
    tensors[t.name] = {{"offset", payload.size()}, {"shape", {m.rows(), m.cols()}}};
    order.push_back(t.name);
    for (Eigen::Index i = 0; i < m.size(); ++i) put_u32_le(payload, std::bit_cast<std::uint32_t>(m.data()[i]));
  }
  const nlohmann::json header = {{"format_version", Checkpoint::kFormatVersion},
                                 {"model_config", ckpt.config},
                                 {"tokenizer_hash", ckpt.tokenizer_hash},
                                 {"metadata", ckpt.metadata},
                                 {"dtype", "f32-le"},
                                 {"tensor_order", order},
                                 {"tensors", tensors}};
  const std::string h = header.dump();
  std::string out(kMagic, sizeof(kMagic));
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((static_cast<std::uint64_t>(h.size()) >> (8 * i)) & 0xff));
  out += h;
  out += payload;
  return out;
}

Checkpoint deserialize_checkpoint(std::string_view bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw CheckpointError("not a checkpoint file");
  }
  const std::uint64_t hlen = get_u64_le(bytes.substr(8, 8));
  if (hlen > bytes.size() - 16) throw CheckpointError("truncated checkpoint header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(16, hlen));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("malformed checkpoint header: ") + e.what());
  }
  if (header.value("format_version", 0) != Checkpoint::kFormatVersion) {
    throw CheckpointError("unsupported checkpoint format version");
  }
  const std::string_view payload = bytes.substr(16 + hlen);

  Checkpoint ckpt;
  try {
    ckpt.config = header.at("model_config").get<ModelConfig>();
    ckpt.config.validate();
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("invalid model config in checkpoint: ") + e.what());
  }
  ckpt.tokenizer_hash = header.value("tokenizer_hash", "");
  ckpt.metadata = header.value("metadata", nlohmann::json::object());
  ckpt.params = ModelParams<float>::zeros(ckpt.config);
  if (!header.contains("tensors") || !header["tensors"].is_object()) throw CheckpointError("checkpoint lacks tensor table");
  const auto& tensors = header.at("tensors");
  for (auto& t : named_tensors(ckpt.params)) {
    if (!tensors.contains(t.name)) throw CheckpointError("checkpoint lacks tensor " + t.name);
    const auto& entry = tensors.at(t.name);
    auto& m = *t.tensor;
    const auto shape = entry.at("shape").get<std::vector<std::int64_t>>();
    if (shape.size() != 2 || shape[0] != m.rows() || shape[1] != m.cols()) {
      throw CheckpointError("tensor " + t.name + " shape disagrees with model config");
    }
    const auto offset = entry.at("offset").get<std::uint64_t>();
    const std::uint64_t nbytes = 4 * static_cast<std::uint64_t>(m.size());
    if (offset > payload.size() || nbytes > payload.size() - offset) {
      throw CheckpointError("tensor " + t.name + " exceeds payload");
    }
    const char* p = payload.data() + offset;
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = std::bit_cast<float>(get_u32_le(p + 4 * i));
  }
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  write_file(path, serialize_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw CheckpointError("checkpoint not found: " + path.string());
  return deserialize_checkpoint(read_file(path));
}

bool params_bit_equal(const ModelParams<float>& a, const ModelParams<float>& b) {
  const auto ta = named_tensors(a);
  const auto tb = named_tensors(b);
  if (ta.size() != tb.size()) return false;
  for (std::size_t i = 0; i < ta.size(); ++i) {
    const auto& x = *ta[i].tensor;
    const auto& y = *tb[i].tensor;
    if (x.rows() != y.rows() || x.cols() != y.cols()) return false;
    if (std::memcmp(x.data(), y.data(), sizeof(float) * static_cast<std::size_t>(x.size())) != 0) return false;
  }
  return true;
}

}  // namespace distlab
