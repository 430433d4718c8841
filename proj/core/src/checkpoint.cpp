#include "lisa/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "lisa/errors.hpp"

namespace lisa {

namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint encoding assumes a little-endian host");

constexpr char kMagic[10] = {'L', 'I', 'S', 'A', '-', 'C', 'K', 'P', 'T', '\0'};

class Writer {
 public:
  template <typename T>
  void pod(T v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    out.insert(out.end(), p, p + sizeof(T));
  }
  void str(const std::string& s) {
    pod<std::uint64_t>(s.size());
    out.insert(out.end(), s.begin(), s.end());
  }
  void table(const std::vector<NamedTensor>& ts) {
    pod<std::uint32_t>(static_cast<std::uint32_t>(ts.size()));
    for (const auto& t : ts) {
      str(t.name);
      pod<std::uint32_t>(static_cast<std::uint32_t>(t.value.rank()));
      for (int d : t.value.shape()) pod<std::uint32_t>(static_cast<std::uint32_t>(d));
      const auto* p = reinterpret_cast<const std::uint8_t*>(t.value.data());
      out.insert(out.end(), p, p + t.value.size() * sizeof(double));
    }
  }
  std::vector<std::uint8_t> out;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : bytes(b) {}

  void need(std::size_t n, const char* what) const {
    if (bytes.size() - pos < n) throw ParseError(std::string("checkpoint truncated in ") + what, pos);
  }
  template <typename T>
  T pod(const char* what) {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, bytes.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
  }
  std::string str(const char* what) {
    const std::size_t at = pos;
    const auto n = pod<std::uint64_t>(what);
    if (n > bytes.size() - pos) throw ParseError(std::string("checkpoint bad length for ") + what, at);
    std::string s(reinterpret_cast<const char*>(bytes.data() + pos), n);
    pos += n;
    return s;
  }
  std::vector<NamedTensor> table(const char* what) {
    const auto count = pod<std::uint32_t>(what);
    std::vector<NamedTensor> out;
    for (std::uint32_t i = 0; i < count; ++i) {
      NamedTensor t;
      t.name = str(what);
      const std::size_t rank_at = pos;
      const auto rank = pod<std::uint32_t>(what);
      if (rank > 8) throw ParseError(std::string("checkpoint bad tensor rank in ") + what, rank_at);
      std::vector<int> shape;
      std::size_t n = 1;
      for (std::uint32_t d = 0; d < rank; ++d) {
        const std::size_t dim_at = pos;
        const auto dim = pod<std::uint32_t>(what);
        if (dim == 0 || dim > (1u << 30)) {
          throw ParseError(std::string("checkpoint bad tensor dim in ") + what, dim_at);
        }
        shape.push_back(static_cast<int>(dim));
        n *= dim;
        if (n > bytes.size()) throw ParseError(std::string("checkpoint tensor too large in ") + what, dim_at);
      }
      need(n * sizeof(double), what);
      t.value = Tensor(shape);
      std::memcpy(t.value.data(), bytes.data() + pos, n * sizeof(double));
      pos += n * sizeof(double);
      out.push_back(std::move(t));
    }
    return out;
  }

  std::span<const std::uint8_t> bytes;
  std::size_t pos = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& c) {
  Writer w;
  w.out.insert(w.out.end(), kMagic, kMagic + sizeof kMagic);
  w.pod<std::uint32_t>(c.version);
  w.pod<std::uint64_t>(c.step);
  w.pod<std::uint64_t>(c.optimizer_steps);
  w.str(c.config_json);
  w.str(c.rng_state);
  w.table(c.parameters);
  w.table(c.first_moments);
  w.table(c.second_moments);
  w.table(c.buffers);
  return std::move(w.out);
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  for (std::size_t i = 0; i < sizeof kMagic; ++i) {
    if (i >= bytes.size() || bytes[i] != static_cast<std::uint8_t>(kMagic[i])) {
      throw ParseError("not a checkpoint file (bad magic)", i);
    }
  }
  Reader r(bytes);
  r.pos = sizeof kMagic;
  Checkpoint c;
  c.version = r.pod<std::uint32_t>("version");
  if (c.version != Checkpoint::kVersion) {
    throw ParseError("unsupported checkpoint version " + std::to_string(c.version), sizeof kMagic);
  }
  c.step = r.pod<std::uint64_t>("step");
  c.optimizer_steps = r.pod<std::uint64_t>("optimizer steps");
  c.config_json = r.str("config");
  c.rng_state = r.str("rng state");
  c.parameters = r.table("parameters");
  c.first_moments = r.table("first moments");
  c.second_moments = r.table("second moments");
  c.buffers = r.table("buffers");
  if (r.pos != bytes.size()) throw ParseError("trailing bytes after checkpoint", r.pos);
  return c;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(ckpt);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw std::runtime_error("cannot write checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)),
                                  std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace lisa
