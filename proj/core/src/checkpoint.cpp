#include "prodcat/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <sstream>

#include "prodcat/error.hpp"

namespace prodcat {

namespace {

constexpr std::string_view kMagic = "PRODCKPT";

template <typename U>
void put(std::string& out, U value) {
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    out += static_cast<char>((value >> (8 * i)) & 0xFF);
  }
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename U>
  U get() {
    need(sizeof(U));
    U value = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      value |= static_cast<U>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(U);
    return value;
  }

  std::string_view take(std::size_t n) {
    need(n);
    auto out = bytes_.substr(pos_, n);
    pos_ += n;
    return out;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) {
      throw Error("checkpoint: truncated data");
    }
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

const Tensor& Checkpoint::find(std::string_view name) const {
  for (const auto& b : blocks) {
    if (b.name == name) {
      return b.value;
    }
  }
  throw Error("checkpoint: missing block '" + std::string(name) + "'");
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  std::string out(kMagic);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, ckpt.config_hash);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.blocks.size()));
  for (const auto& block : ckpt.blocks) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(block.name.size()));
    out += block.name;
    put<std::uint32_t>(out, static_cast<std::uint32_t>(block.value.rank()));
    for (auto d : block.value.shape()) {
      put<std::uint64_t>(out, d);
    }
    for (float v : block.value.data()) {
      put<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
    }
  }
  return out;
}

Checkpoint deserialize_checkpoint(std::string_view bytes) {
  Reader in(bytes);
  if (in.take(kMagic.size()) != kMagic) {
    throw Error("checkpoint: bad magic");
  }
  const auto version = in.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw Error("checkpoint: unsupported format version " + std::to_string(version));
  }
  Checkpoint ckpt;
  ckpt.config_hash = in.get<std::uint64_t>();
  const auto count = in.get<std::uint32_t>();
  for (std::uint32_t b = 0; b < count; ++b) {
    NamedTensor block;
    block.name = std::string(in.take(in.get<std::uint32_t>()));
    const auto rank = in.get<std::uint32_t>();
    Shape shape(rank);
    for (auto& d : shape) {
      d = static_cast<std::size_t>(in.get<std::uint64_t>());
    }
    std::vector<float> data(shape_volume(shape));
    for (auto& v : data) {
      v = std::bit_cast<float>(in.get<std::uint32_t>());
    }
    block.value = Tensor(std::move(shape), std::move(data));
    ckpt.blocks.push_back(std::move(block));
  }
  if (!in.done()) {
    throw Error("checkpoint: trailing bytes");
  }
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw IoError("cannot write checkpoint " + path.string());
  }
  const auto bytes = serialize_checkpoint(ckpt);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot read checkpoint " + path.string());
  }
  std::stringstream buffer;
  buffer << in.rdbuf();
  return deserialize_checkpoint(buffer.str());
}

Checkpoint snapshot(std::span<const Parameter* const> params, std::uint64_t config_hash) {
  Checkpoint ckpt;
  ckpt.config_hash = config_hash;
  for (const auto* p : params) {
    ckpt.blocks.push_back(NamedTensor{p->name, p->value});
  }
  return ckpt;
}

void restore(const Checkpoint& ckpt, std::span<Parameter* const> params) {
  for (auto* p : params) {
    const Tensor& src = ckpt.find(p->name);
    if (src.shape() != p->value.shape()) {
      throw ShapeError("checkpoint block '" + p->name + "' has shape " + shape_string(src.shape()) + ", expected " +
                       shape_string(p->value.shape()));
    }
    p->value = src;
  }
}

}  // namespace prodcat
