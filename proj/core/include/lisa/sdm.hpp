#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lisa/layers.hpp"
#include "lisa/tensor.hpp"

// Semantic disentanglement: a linear projection of the pooled gaze feature into
// the text-embedding space, and a loss pushing it away from a fixed set of
// appearance anchors.

namespace lisa {

/// N unit-norm text embeddings ([N, D]) with the prompts that produced them.
/// Immutable after construction; reads of the matrix are counted so callers
/// can verify a code path never touched the anchors.
class AnchorSet {
 public:
  AnchorSet() = default;
  /// Rows whose norm is already within 1e-6 of one are kept bit-exact, others
  /// are normalized. Throws InvalidArgument for N = 0, a zero row, or a
  /// prompt count that does not match N.
  AnchorSet(Tensor embeddings, std::vector<std::string> prompts);

  int count() const { return embeddings_.rank() == 2 ? embeddings_.dim(0) : 0; }
  int dim() const { return embeddings_.rank() == 2 ? embeddings_.dim(1) : 0; }
  bool normalized() const { return count() > 0; }

  const Tensor& embeddings() const;
  const std::vector<std::string>& prompts() const { return prompts_; }
  std::uint64_t access_count() const { return accesses_ ? accesses_->load() : 0; }

 private:
  Tensor embeddings_;
  std::vector<std::string> prompts_;
  std::shared_ptr<std::atomic<std::uint64_t>> accesses_ =
      std::make_shared<std::atomic<std::uint64_t>>(0);
};

/// Binary anchor file:
///   "LISA-ANCH\0" | u32 version = 1 | u32 N | u32 D |
///   N*D little-endian f32 row-major | UTF-8 JSON array of N prompt strings
void save_anchors(const AnchorSet& anchors, const std::filesystem::path& path);
std::vector<std::uint8_t> encode_anchors(const AnchorSet& anchors);

/// Throws ParseError (with byte offset) for malformed content and ConfigError
/// when `expected_dim` is given and differs from the header's D.
AnchorSet load_anchors(const std::filesystem::path& path,
                       std::optional<int> expected_dim = std::nullopt);
AnchorSet decode_anchors(std::span<const std::uint8_t> bytes,
                         std::optional<int> expected_dim = std::nullopt);

/// Deterministic stand-in for a frozen text encoder: FNV-1a of the prompt seeds
/// a PRNG whose Gaussian draws are normalized to a unit vector of length `dim`.
std::vector<double> pseudo_text_encoder(std::string_view prompt, int dim);

AnchorSet build_pseudo_anchors(const std::vector<std::string>& prompts, int dim);

/// The eight appearance-distractor prompts shipped as the default pool.
const std::vector<std::string>& default_prompt_pool();

struct SeparationResult {
  double loss = 0.0;         ///< (1/N) sum_i |cos(e, E_i)|, in [0, 1]
  std::vector<double> grad;  ///< dL/de
  bool degenerate = false;   ///< ||e|| < 1e-8: loss and gradient set to 0
};

/// The kink of |.| at cos = 0 gets subgradient 0.
SeparationResult separation_loss(std::span<const double> embedding, const AnchorSet& anchors);

/// One linear layer from the pooled feature (C + 2) to the anchor space D.
class ProjectionHead {
 public:
  ProjectionHead() = default;
  ProjectionHead(int in_features, int embed_dim) : linear("sdm.proj", in_features, embed_dim) {}

  void init(Rng& rng) { linear.init(rng, 1.0); }
  Tensor forward(const Tensor& f_gaze) { return linear.forward(f_gaze); }
  Tensor backward(const Tensor& d_embed) { return linear.backward(d_embed); }
  void collect(std::vector<Param*>& out) { linear.collect(out); }

  Linear linear;
};

/// e_gaze = W f_gaze + b for a single vector.
std::vector<double> project_gaze(std::span<const double> f_gaze, const Tensor& weight,
                                 const Tensor& bias);

}  // namespace lisa
