#include "ppmn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace ppmn {

namespace {

constexpr char kMagic[4] = {'P', 'P', 'M', 'N'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  std::uint32_t u32() {
    need(4, "integer");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }

  std::string str(std::size_t len) {
    need(len, "name");
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), len);
    pos_ += len;
    return s;
  }

  float f32() { return std::bit_cast<float>(u32()); }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) {
      throw FormatError(std::string("checkpoint truncated while reading ") + what + " at byte " +
                        std::to_string(pos_));
    }
  }

  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const std::vector<NamedTensor>& tensors) {
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const NamedTensor& t : tensors) {
    put_u32(out, static_cast<std::uint32_t>(t.name.size()));
    out.insert(out.end(), t.name.begin(), t.name.end());
    const Shape& s = t.value.shape();
    std::vector<std::uint32_t> extents{static_cast<std::uint32_t>(s.n), static_cast<std::uint32_t>(s.c),
                                       static_cast<std::uint32_t>(s.h), static_cast<std::uint32_t>(s.w)};
    while (extents.size() > 1 && extents.back() == 1) extents.pop_back();
    put_u32(out, static_cast<std::uint32_t>(extents.size()));
    for (std::uint32_t e : extents) put_u32(out, e);
    for (float v : t.value.data()) put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

std::vector<NamedTensor> decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw FormatError("not a PPMN checkpoint (bad magic)");
  }
  const std::vector<std::uint8_t> body(bytes.begin() + 4, bytes.end());
  Reader r(body);
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  const std::uint32_t count = r.u32();
  std::vector<NamedTensor> tensors;
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name = r.str(r.u32());
    const std::uint32_t rank = r.u32();
    if (rank == 0 || rank > 4) {
      throw FormatError("tensor '" + t.name + "' has unsupported rank " + std::to_string(rank));
    }
    std::size_t extents[4] = {1, 1, 1, 1};
    for (std::uint32_t d = 0; d < rank; ++d) extents[d] = r.u32();
    const Shape shape{extents[0], extents[1], extents[2], extents[3]};
    std::vector<float> values(shape.numel());
    for (float& v : values) v = r.f32();
    t.value = Tensor(shape, std::move(values));
    tensors.push_back(std::move(t));
  }
  if (!r.done()) {
    throw FormatError("trailing bytes after the last checkpoint tensor");
  }
  return tensors;
}

std::vector<NamedTensor> snapshot(const ParamStore& params) {
  std::vector<NamedTensor> out;
  for (const auto& e : params.entries()) out.push_back({e.name, e.value});
  return out;
}

void restore(ParamStore& params, const std::vector<NamedTensor>& tensors) {
  if (tensors.size() != params.size()) {
    throw FormatError("checkpoint holds " + std::to_string(tensors.size()) + " tensors but the model has " +
                      std::to_string(params.size()));
  }
  for (const NamedTensor& t : tensors) {
    if (!params.contains(t.name)) {
      throw FormatError("checkpoint tensor '" + t.name + "' is not a model parameter");
    }
    auto& entry = params.at(t.name);
    if (entry.value.shape() != t.value.shape()) {
      throw FormatError("checkpoint tensor '" + t.name + "' has shape " + t.value.shape().str() +
                        ", model expects " + entry.value.shape().str());
    }
    entry.value = t.value;
    entry.grad.zero();
    entry.momentum.zero();
  }
}

void save_checkpoint(const std::filesystem::path& path, const ParamStore& params) {
  const auto bytes = encode_checkpoint(snapshot(params));
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::vector<NamedTensor> read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

void load_checkpoint(const std::filesystem::path& path, ParamStore& params) { restore(params, read_checkpoint(path)); }

}  // namespace ppmn
