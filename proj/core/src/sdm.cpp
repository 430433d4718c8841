#include "lisa/sdm.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include <nlohmann/json.hpp>

#include "lisa/errors.hpp"
#include "lisa/random.hpp"

namespace lisa {

namespace {

constexpr char kMagic[10] = {'L', 'I', 'S', 'A', '-', 'A', 'N', 'C', 'H', '\0'};
constexpr std::uint32_t kVersion = 1;
constexpr std::size_t kHeaderBytes = sizeof(kMagic) + 3 * sizeof(std::uint32_t);

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> b, std::size_t off) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[off + i]) << (8 * i);
  return v;
}

}  // namespace

AnchorSet::AnchorSet(Tensor embeddings, std::vector<std::string> prompts)
    : embeddings_(std::move(embeddings)), prompts_(std::move(prompts)) {
  if (embeddings_.rank() != 2 || embeddings_.dim(0) < 1 || embeddings_.dim(1) < 1) {
    throw InvalidArgument("anchor set needs an [N, D] matrix with N >= 1, got " +
                          embeddings_.shape_str());
  }
  if (static_cast<int>(prompts_.size()) != embeddings_.dim(0)) {
    throw InvalidArgument("anchor set: " + std::to_string(prompts_.size()) + " prompts for " +
                          std::to_string(embeddings_.dim(0)) + " embeddings");
  }
  const int n = embeddings_.dim(0), d = embeddings_.dim(1);
  for (int i = 0; i < n; ++i) {
    double ss = 0.0;
    for (int j = 0; j < d; ++j) ss += embeddings_.at(i, j) * embeddings_.at(i, j);
    const double norm = std::sqrt(ss);
    if (!(norm > 0.0) || !std::isfinite(norm)) {
      throw InvalidArgument("anchor row " + std::to_string(i) + " has zero or non-finite norm");
    }
    if (std::abs(norm - 1.0) > 1e-6) {
      for (int j = 0; j < d; ++j) embeddings_.at(i, j) /= norm;
    }
  }
}

const Tensor& AnchorSet::embeddings() const {
  accesses_->fetch_add(1, std::memory_order_relaxed);
  return embeddings_;
}

std::vector<std::uint8_t> encode_anchors(const AnchorSet& anchors) {
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_u32(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(anchors.count()));
  put_u32(out, static_cast<std::uint32_t>(anchors.dim()));
  const Tensor& e = anchors.embeddings();
  for (double v : e.values()) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  const std::string prompts = nlohmann::json(anchors.prompts()).dump();
  out.insert(out.end(), prompts.begin(), prompts.end());
  return out;
}

void save_anchors(const AnchorSet& anchors, const std::filesystem::path& path) {
  const auto bytes = encode_anchors(anchors);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw std::runtime_error("failed writing " + path.string());
}

AnchorSet decode_anchors(std::span<const std::uint8_t> b, std::optional<int> expected_dim) {
  if (b.size() < sizeof(kMagic)) throw ParseError("anchor file: truncated magic", b.size());
  for (std::size_t i = 0; i < sizeof(kMagic); ++i) {
    if (b[i] != static_cast<std::uint8_t>(kMagic[i])) {
      throw ParseError("anchor file: bad magic byte", i);
    }
  }
  if (b.size() < kHeaderBytes) throw ParseError("anchor file: truncated header", b.size());
  const std::uint32_t version = get_u32(b, 10);
  if (version != kVersion) {
    throw ParseError("anchor file: unsupported version " + std::to_string(version), 10);
  }
  const std::uint32_t n = get_u32(b, 14);
  const std::uint32_t d = get_u32(b, 18);
  if (n == 0) throw ParseError("anchor file: N must be at least 1", 14);
  if (d == 0) throw ParseError("anchor file: D must be at least 1", 18);
  if (expected_dim && static_cast<int>(d) != *expected_dim) {
    throw ConfigError("anchor file dimension D = " + std::to_string(d) +
                      " does not match the configured embedding dimension " +
                      std::to_string(*expected_dim));
  }
  const std::size_t floats = static_cast<std::size_t>(n) * d;
  if ((b.size() - kHeaderBytes) / 4 < floats) {
    throw ParseError("anchor file: truncated embedding block", b.size());
  }
  Tensor e({static_cast<int>(n), static_cast<int>(d)});
  for (std::size_t i = 0; i < floats; ++i) {
    const float f = std::bit_cast<float>(get_u32(b, kHeaderBytes + 4 * i));
    if (!std::isfinite(f)) throw ParseError("anchor file: non-finite value", kHeaderBytes + 4 * i);
    e[i] = f;
  }
  const std::size_t json_off = kHeaderBytes + 4 * floats;
  const std::string text(b.begin() + static_cast<std::ptrdiff_t>(json_off), b.end());
  nlohmann::json prompts;
  try {
    prompts = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& err) {
    throw ParseError(std::string("anchor file: bad prompt list: ") + err.what(),
                     json_off + (err.byte > 0 ? err.byte - 1 : 0));
  }
  if (!prompts.is_array() || prompts.size() != n) {
    throw ParseError("anchor file: prompt list must be a JSON array of " + std::to_string(n) +
                         " strings",
                     json_off);
  }
  std::vector<std::string> names;
  for (const auto& p : prompts) {
    if (!p.is_string()) throw ParseError("anchor file: prompt is not a string", json_off);
    names.push_back(p.get<std::string>());
  }
  return AnchorSet(std::move(e), std::move(names));
}

AnchorSet load_anchors(const std::filesystem::path& path, std::optional<int> expected_dim) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open anchor file " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)),
                                  std::istreambuf_iterator<char>());
  return decode_anchors(bytes, expected_dim);
}

std::vector<double> pseudo_text_encoder(std::string_view prompt, int dim) {
  if (dim < 1) throw InvalidArgument("pseudo text encoder: dim must be >= 1");
  Rng rng(splitmix64(fnv1a64(prompt)));
  std::vector<double> v(dim);
  double ss = 0.0;
  do {
    ss = 0.0;
    for (double& x : v) {
      x = rng.normal();
      ss += x * x;
    }
  } while (ss == 0.0);
  const double inv = 1.0 / std::sqrt(ss);
  for (double& x : v) x *= inv;
  return v;
}

AnchorSet build_pseudo_anchors(const std::vector<std::string>& prompts, int dim) {
  Tensor e({static_cast<int>(prompts.size()), dim});
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    const auto v = pseudo_text_encoder(prompts[i], dim);
    std::copy(v.begin(), v.end(), e.data() + i * dim);
  }
  return AnchorSet(std::move(e), prompts);
}

const std::vector<std::string>& default_prompt_pool() {
  static const std::vector<std::string> pool = {
      "a driver wearing sunglasses", "a driver wearing a face mask",
      "a driver wearing eyeglasses", "a face in harsh sunlight",
      "a face in low light",         "a face with a beard",
      "a driver wearing a hat",      "an occluded face",
  };
  return pool;
}

SeparationResult separation_loss(std::span<const double> e, const AnchorSet& anchors) {
  const Tensor& a = anchors.embeddings();
  const int n = a.dim(0), d = a.dim(1);
  if (static_cast<int>(e.size()) != d) {
    throw ShapeError("separation loss: embedding has " + std::to_string(e.size()) +
                     " entries, anchors have D = " + std::to_string(d));
  }
  SeparationResult r;
  r.grad.assign(d, 0.0);
  double ss = 0.0;
  for (double x : e) ss += x * x;
  const double en = std::sqrt(ss);
  if (en < 1e-8) {
    r.degenerate = true;
    return r;
  }
  for (int i = 0; i < n; ++i) {
    const double* row = a.data() + static_cast<std::size_t>(i) * d;
    double dot = 0.0, an2 = 0.0;
    for (int j = 0; j < d; ++j) {
      dot += e[j] * row[j];
      an2 += row[j] * row[j];
    }
    const double an = std::sqrt(an2);
    const double cos = dot / (en * an);
    r.loss += std::abs(cos);
    const double sign = cos > 0.0 ? 1.0 : (cos < 0.0 ? -1.0 : 0.0);
    if (sign == 0.0) continue;
    // d cos / d e = row / (|e||a|) - cos * e / |e|^2
    for (int j = 0; j < d; ++j) {
      r.grad[j] += sign * (row[j] / (en * an) - cos * e[j] / ss);
    }
  }
  r.loss /= n;
  for (double& g : r.grad) g /= n;
  return r;
}

std::vector<double> project_gaze(std::span<const double> f_gaze, const Tensor& weight,
                                 const Tensor& bias) {
  if (weight.rank() != 2 || weight.dim(1) != static_cast<int>(f_gaze.size()) ||
      bias.rank() != 1 || bias.dim(0) != weight.dim(0)) {
    throw ShapeError("project_gaze: weight " + weight.shape_str() + ", bias " + bias.shape_str() +
                     " vs feature of length " + std::to_string(f_gaze.size()));
  }
  const int out = weight.dim(0), in = weight.dim(1);
  std::vector<double> e(out);
  for (int o = 0; o < out; ++o) {
    double acc = bias[o];
    for (int i = 0; i < in; ++i) acc += weight.at(o, i) * f_gaze[i];
    e[o] = acc;
  }
  return e;
}

}  // namespace lisa
