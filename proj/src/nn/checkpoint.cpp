#include "cgmlp/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <vector>

namespace cgmlp {
namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  void u32(std::uint32_t v) { bytes(&v, sizeof v); }
  void u64(std::uint64_t v) { bytes(&v, sizeof v); }
  void f32(float v) { bytes(&v, sizeof v); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  const std::vector<char>& buffer() const { return buf_; }

 private:
  std::vector<char> buf_;
};

class Reader {
 public:
  explicit Reader(std::vector<char> buf) : buf_(std::move(buf)) {}

  void bytes(void* p, std::size_t n, const char* what) {
    if (buf_.size() - pos_ < n) {
      throw TruncatedCheckpointError(std::string("checkpoint truncated while reading ") + what);
    }
    std::memcpy(p, buf_.data() + pos_, n);
    pos_ += n;
  }
  std::uint32_t u32(const char* what) {
    std::uint32_t v;
    bytes(&v, sizeof v, what);
    return v;
  }
  std::uint64_t u64(const char* what) {
    std::uint64_t v;
    bytes(&v, sizeof v, what);
    return v;
  }
  std::string str(const char* what) {
    const std::uint32_t n = u32(what);
    std::string s(n, '\0');
    bytes(s.data(), n, what);
    return s;
  }

 private:
  std::vector<char> buf_;
  std::size_t pos_ = 0;
};

std::vector<char> read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  return std::vector<char>(std::istreambuf_iterator<char>(in), {});
}

ModelConfig read_header(Reader& r) {
  char magic[sizeof kCheckpointMagic];
  r.bytes(magic, sizeof magic, "magic");
  if (std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) {
    throw BadMagicError("bad magic: not a CGMLP1 checkpoint");
  }
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion) {
    throw UnsupportedVersionError("unsupported checkpoint version " + std::to_string(version));
  }
  return ModelConfig::from_text(r.str("config"));
}

data::NormStats read_tensors(Reader& r, Model<float>& model) {
  auto params = model.parameters();
  const std::uint32_t count = r.u32("tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.str("tensor name");
    const std::uint32_t rank = r.u32("tensor rank");
    Shape shape;
    for (std::uint32_t k = 0; k < rank; ++k) shape.push_back(r.u64("tensor dims"));
    if (i >= params.size()) {
      throw TensorMismatchError("tensor #" + std::to_string(i) + ": checkpoint has extra tensor " +
                                name + " " + to_string(shape));
    }
    auto& [expected_name, target] = params[i];
    if (name != expected_name || shape != target.shape()) {
      throw TensorMismatchError("tensor #" + std::to_string(i) + ": checkpoint has " + name + " " +
                                to_string(shape) + ", model expects " + expected_name + " " +
                                to_string(target.shape()));
    }
    auto dst = target.mutable_data();
    r.bytes(dst.data(), dst.size() * sizeof(float), "tensor payload");
  }
  if (count < params.size()) {
    throw TensorMismatchError("tensor #" + std::to_string(count) + ": checkpoint lacks " +
                              params[count].first);
  }
  data::NormStats stats;
  const std::uint32_t channels = r.u32("norm stats");
  if (channels != stats.mean.size()) {
    throw CheckpointError("norm stats: expected 3 channels, got " + std::to_string(channels));
  }
  r.bytes(stats.mean.data(), sizeof(float) * 3, "norm stats");
  r.bytes(stats.stddev.data(), sizeof(float) * 3, "norm stats");
  return stats;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Model<float>& model,
                     const data::NormStats& stats) {
  Writer w;
  w.bytes(kCheckpointMagic, sizeof kCheckpointMagic);
  w.u32(kCheckpointVersion);
  w.str(model.config().to_text());
  const auto params = model.parameters();
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, t] : params) {
    w.str(name);
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) w.u64(d);
    w.bytes(t.raw(), t.numel() * sizeof(float));
  }
  w.u32(3);
  for (float m : stats.mean) w.f32(m);
  for (float s : stats.stddev) w.f32(s);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
  out.write(w.buffer().data(), static_cast<std::streamsize>(w.buffer().size()));
  if (!out) throw CheckpointError("write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  Reader r(read_all(path));
  const ModelConfig cfg = read_header(r);
  Checkpoint ck{Model<float>::build(cfg), {}};
  ck.norm_stats = read_tensors(r, ck.model);
  return ck;
}

data::NormStats load_into(Model<float>& model, const std::filesystem::path& path) {
  Reader r(read_all(path));
  read_header(r);
  // Stage into a copy so a mismatch midway leaves `model` untouched.
  Model<float> staged = model.clone();
  data::NormStats stats = read_tensors(r, staged);
  auto src = staged.parameters();
  std::size_t i = 0;
  model.for_each_param([&](const std::string&, Tensor<float>& t) {
    auto dst = t.mutable_data();
    auto s = src[i++].second.data();
    std::copy(s.begin(), s.end(), dst.begin());
  });
  return stats;
}

std::string checkpoint_id(const std::filesystem::path& path) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : read_all(path)) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

}  // namespace cgmlp
