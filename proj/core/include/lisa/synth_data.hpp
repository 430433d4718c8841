#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "lisa/geometry.hpp"
#include "lisa/random.hpp"
#include "lisa/tensor.hpp"

// Procedural stand-in for driver-face datasets: stylized faces whose iris
// offsets are an exact function of the gaze label, plus appearance and
// photometric corruptions.

namespace lisa {

/// Attribute tags in their canonical order.
const std::vector<std::string>& attribute_tags();
bool is_known_tag(std::string_view tag);

struct CorruptionRule {
  std::string tag;
  double severity = 0.5;
  double probability = 0.0;
};

struct SceneSpec {
  double yaw_min = -0.5;
  double yaw_max = 0.5;
  double pitch_min = -0.35;
  double pitch_max = 0.35;
  int height = 64;
  int width = 64;
  int n_subjects = 28;
  std::vector<CorruptionRule> corruptions;
  std::uint64_t seed = 0;

  void validate() const;
};

struct GazeSample {
  Tensor image;  ///< [3, H, W], values in [0, 1]
  GazeAngles gaze;
  std::vector<std::string> attrs;
  int subject_id = 1;  ///< 1-based
  int index = 0;
};

/// Axis-aligned pixel box [x0, x1) x [y0, y1).
struct PixelBox {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  int area() const { return std::max(0, x1 - x0) * std::max(0, y1 - y0); }
  bool contains(int x, int y) const { return x >= x0 && x < x1 && y >= y0 && y < y1; }
};

/// Per-subject appearance and geometry, in pixels.
struct SubjectStyle {
  double head_cx, head_cy, head_rx, head_ry;
  std::array<double, 3> skin, iris, background;
  double sclera;
  double eye_dx;  ///< horizontal offset of each eye from the head center
  double eye_dy;  ///< vertical offset (negative = above center)
  double eye_rx, eye_ry;
  double iris_r, pupil_r;
  double gain_x;  ///< iris displacement per unit sin(yaw), pixels
  double gain_y;  ///< iris displacement per unit sin(pitch), pixels
};

SubjectStyle subject_style(int subject_id, int height, int width);

/// Centers of the two irises for a given gaze: eye center +
/// (gain_x sin(yaw), -gain_y sin(pitch)).
std::array<std::pair<double, double>, 2> iris_centers(const SubjectStyle& s, GazeAngles g);

/// Bounding boxes of both eyes (sclera ellipse plus a one-pixel margin).
std::array<PixelBox, 2> eye_boxes(const SubjectStyle& s, int height, int width);

/// Lower-face region covered by the mask corruption.
PixelBox mask_box(const SubjectStyle& s, int height, int width);

/// Clean anti-aliased rendering.
Tensor render_face(const SubjectStyle& s, GazeAngles g, int height, int width);

/// Deterministic in (spec.seed, index); applies the spec's corruption schedule.
GazeSample render_sample(const SceneSpec& spec, int index);

/// Applies one corruption. Severity 0 leaves the pixels untouched. The gaze
/// label never changes; the tag is appended to attrs (and "clean" dropped).
/// Throws InvalidArgument for an unknown tag or severity outside [0, 1].
GazeSample corrupt(const GazeSample& sample, std::string_view tag, double severity, Rng& rng);

std::vector<GazeSample> generate_dataset(const SceneSpec& spec, int count, int first_index = 0);

struct ManifestRecord {
  int index = 0;
  GazeAngles gaze;
  std::vector<std::string> attrs;
  int subject_id = 1;
  std::string image;  ///< path relative to the dataset directory
};

struct Dataset {
  std::vector<ManifestRecord> manifest;
  std::vector<GazeSample> samples;
};

/// Manifest header of manifest.csv.
constexpr std::string_view kManifestHeader = "index,yaw,pitch,attrs,subject_id,image";

/// Writes manifest.csv and images/NNNNNN.png (16-bit RGB). Pixel values
/// survive the round trip within 0.5 / 65535.
void write_dataset(const std::filesystem::path& dir, const std::vector<GazeSample>& samples);
/// Throws ParseError with the offending record index.
Dataset read_dataset(const std::filesystem::path& dir);
std::vector<ManifestRecord> read_manifest(const std::filesystem::path& dir);

/// Subjects with id <= last_train_id train, the rest test.
std::pair<std::vector<GazeSample>, std::vector<GazeSample>> split_by_subject(
    const std::vector<GazeSample>& samples, int last_train_id);

/// k-fold split over subject ids: subjects with (id - 1) % k == fold form the
/// held-out fold.
std::pair<std::vector<GazeSample>, std::vector<GazeSample>> kfold_by_subject(
    const std::vector<GazeSample>& samples, int k, int fold);

}  // namespace lisa
