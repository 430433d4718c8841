#include "lisa/synth_data.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "lisa/errors.hpp"
#include "lisa/image_io.hpp"

namespace lisa {

namespace {

using Rgb = std::array<double, 3>;

double ellipse_coverage(double px, double py, double cx, double cy, double rx, double ry) {
  const double dx = px - cx, dy = py - cy;
  const double f = (dx * dx) / (rx * rx) + (dy * dy) / (ry * ry) - 1.0;
  const double gx = 2.0 * dx / (rx * rx), gy = 2.0 * dy / (ry * ry);
  const double gn = std::sqrt(gx * gx + gy * gy);
  if (gn < 1e-12) return f < 0.0 ? 1.0 : 0.0;
  return std::clamp(0.5 - f / gn, 0.0, 1.0);
}

void blend(Rgb& dst, const Rgb& src, double a) {
  for (int k = 0; k < 3; ++k) dst[k] = dst[k] * (1.0 - a) + src[k] * a;
}

Rgb scaled(const Rgb& c, double s) { return {c[0] * s, c[1] * s, c[2] * s}; }

int clamp_px(double v, int hi) { return std::clamp(static_cast<int>(std::floor(v)), 0, hi); }

void set_clean_removed(std::vector<std::string>& attrs, std::string_view tag) {
  attrs.erase(std::remove(attrs.begin(), attrs.end(), "clean"), attrs.end());
  if (std::find(attrs.begin(), attrs.end(), tag) == attrs.end()) attrs.emplace_back(tag);
}

double box_overlap(const PixelBox& a, const PixelBox& b) {
  const int w = std::min(a.x1, b.x1) - std::max(a.x0, b.x0);
  const int h = std::min(a.y1, b.y1) - std::max(a.y0, b.y0);
  return w > 0 && h > 0 ? static_cast<double>(w) * h : 0.0;
}

std::string join_attrs(const std::vector<std::string>& attrs) {
  std::string s;
  for (std::size_t i = 0; i < attrs.size(); ++i) {
    if (i) s += '|';
    s += attrs[i];
  }
  return s;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep)) out.push_back(cur);
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

}  // namespace

const std::vector<std::string>& attribute_tags() {
  static const std::vector<std::string> tags = {"clean", "glasses", "mask",    "bright",
                                                "dark",  "noise",   "occluder"};
  return tags;
}

bool is_known_tag(std::string_view tag) {
  const auto& t = attribute_tags();
  return std::find(t.begin(), t.end(), tag) != t.end();
}

void SceneSpec::validate() const {
  const double lim = kPi / 2.0;
  if (!(yaw_min > -lim && yaw_max < lim && yaw_min <= yaw_max && pitch_min > -lim &&
        pitch_max < lim && pitch_min <= pitch_max)) {
    throw InvalidArgument("scene spec: angle ranges must lie inside (-pi/2, pi/2)");
  }
  if (height < 16 || width < 16) throw InvalidArgument("scene spec: image must be >= 16x16");
  if (n_subjects < 1) throw InvalidArgument("scene spec: n_subjects must be >= 1");
  for (const auto& c : corruptions) {
    if (!is_known_tag(c.tag) || c.tag == "clean") {
      throw InvalidArgument("scene spec: unknown corruption tag '" + c.tag + "'");
    }
    if (!(c.probability >= 0.0 && c.probability <= 1.0) ||
        !(c.severity >= 0.0 && c.severity <= 1.0)) {
      throw InvalidArgument("scene spec: severity and probability must lie in [0, 1]");
    }
  }
}

SubjectStyle subject_style(int subject_id, int height, int width) {
  Rng rng(splitmix64(0x5eedf00dULL + static_cast<std::uint64_t>(subject_id) * 7919ULL));
  const double H = height, W = width;
  SubjectStyle s{};
  s.head_cx = 0.5 * W + rng.uniform(-0.03, 0.03) * W;
  s.head_cy = 0.52 * H + rng.uniform(-0.03, 0.03) * H;
  s.head_rx = rng.uniform(0.36, 0.42) * W;
  s.head_ry = rng.uniform(0.43, 0.47) * H;
  const double tone = rng.uniform(0.35, 0.85);
  s.skin = {std::min(1.0, tone * 1.08 + 0.05), tone * 0.85, tone * 0.72};
  const double iris_tone = rng.uniform(0.15, 0.45);
  s.iris = {iris_tone * rng.uniform(0.5, 1.0), iris_tone * rng.uniform(0.6, 1.0),
            iris_tone * rng.uniform(0.5, 1.2)};
  s.background = {rng.uniform(0.1, 0.6), rng.uniform(0.1, 0.6), rng.uniform(0.1, 0.6)};
  s.sclera = rng.uniform(0.88, 0.97);
  s.eye_dx = rng.uniform(0.16, 0.18) * W;
  s.eye_dy = -rng.uniform(0.07, 0.09) * H;
  s.eye_rx = rng.uniform(0.11, 0.12) * W;
  s.eye_ry = rng.uniform(0.065, 0.075) * H;
  s.iris_r = rng.uniform(0.048, 0.054) * W;
  s.pupil_r = 0.4 * s.iris_r;
  s.gain_x = s.eye_rx;
  s.gain_y = 1.2 * s.eye_ry;
  return s;
}

std::array<std::pair<double, double>, 2> iris_centers(const SubjectStyle& s, GazeAngles g) {
  const double ox = s.gain_x * std::sin(g.yaw);
  const double oy = -s.gain_y * std::sin(g.pitch);
  const double ey = s.head_cy + s.eye_dy;
  return {{{s.head_cx - s.eye_dx + ox, ey + oy}, {s.head_cx + s.eye_dx + ox, ey + oy}}};
}

std::array<PixelBox, 2> eye_boxes(const SubjectStyle& s, int height, int width) {
  std::array<PixelBox, 2> out;
  const double ey = s.head_cy + s.eye_dy;
  for (int i = 0; i < 2; ++i) {
    const double ex = s.head_cx + (i == 0 ? -s.eye_dx : s.eye_dx);
    out[i] = {clamp_px(ex - s.eye_rx - 1.0, width), clamp_px(ey - s.eye_ry - 1.0, height),
              clamp_px(ex + s.eye_rx + 2.0, width), clamp_px(ey + s.eye_ry + 2.0, height)};
  }
  return out;
}

PixelBox mask_box(const SubjectStyle& s, int height, int width) {
  return {clamp_px(s.head_cx - s.head_rx, width), clamp_px(s.head_cy + 0.12 * height, height),
          clamp_px(s.head_cx + s.head_rx + 1.0, width),
          clamp_px(s.head_cy + s.head_ry + 1.0, height)};
}

Tensor render_face(const SubjectStyle& s, GazeAngles g, int height, int width) {
  Tensor img({3, height, width});
  const auto irises = iris_centers(s, g);
  const double ey = s.head_cy + s.eye_dy;
  const double H = height, W = width;
  const Rgb brow = scaled(s.skin, 0.35);
  const Rgb nose = scaled(s.skin, 0.82);
  const Rgb mouth{0.62, 0.26, 0.27};
  const Rgb sclera{s.sclera, s.sclera, s.sclera * 0.98};
  const Rgb pupil{0.04, 0.04, 0.05};

  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      Rgb c = scaled(s.background, 0.85 + 0.3 * py / H);

      const double head = ellipse_coverage(px, py, s.head_cx, s.head_cy, s.head_rx, s.head_ry);
      if (head > 0.0) {
        const double u = (px - s.head_cx) / s.head_rx, v = (py - s.head_cy) / s.head_ry;
        blend(c, scaled(s.skin, 1.0 - 0.18 * u * u - 0.08 * v), head);
      }
      blend(c, nose, ellipse_coverage(px, py, s.head_cx, s.head_cy + 0.07 * H, 0.04 * W, 0.07 * H));
      blend(c, mouth,
            ellipse_coverage(px, py, s.head_cx, s.head_cy + 0.25 * H, 0.12 * W, 0.03 * H));

      for (int e = 0; e < 2; ++e) {
        const double ex = s.head_cx + (e == 0 ? -s.eye_dx : s.eye_dx);
        blend(c, brow,
              ellipse_coverage(px, py, ex, ey - 1.9 * s.eye_ry, 1.1 * s.eye_rx, 0.35 * s.eye_ry));
        const double eye = ellipse_coverage(px, py, ex, ey, s.eye_rx, s.eye_ry);
        if (eye <= 0.0) continue;
        blend(c, sclera, eye);
        const auto [ix, iy] = irises[e];
        blend(c, s.iris, eye * ellipse_coverage(px, py, ix, iy, s.iris_r, s.iris_r));
        blend(c, pupil, eye * ellipse_coverage(px, py, ix, iy, s.pupil_r, s.pupil_r));
      }
      for (int k = 0; k < 3; ++k) img.at(k, y, x) = std::clamp(c[k], 0.0, 1.0);
    }
  }
  return img;
}

GazeSample render_sample(const SceneSpec& spec, int index) {
  spec.validate();
  if (index < 0) throw InvalidArgument("render_sample: index must be >= 0");
  Rng rng(splitmix64(spec.seed ^ splitmix64(static_cast<std::uint64_t>(index) + 1)));
  GazeSample s;
  s.index = index;
  s.subject_id = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.n_subjects)));
  s.gaze = {rng.uniform(spec.yaw_min, spec.yaw_max), rng.uniform(spec.pitch_min, spec.pitch_max)};
  s.image = render_face(subject_style(s.subject_id, spec.height, spec.width), s.gaze, spec.height,
                        spec.width);
  s.attrs = {"clean"};
  for (const auto& rule : spec.corruptions) {
    if (rng.uniform() < rule.probability) s = corrupt(s, rule.tag, rule.severity, rng);
  }
  return s;
}

GazeSample corrupt(const GazeSample& sample, std::string_view tag, double severity, Rng& rng) {
  if (!is_known_tag(tag) || tag == "clean") {
    throw InvalidArgument("unknown corruption tag '" + std::string(tag) + "'");
  }
  if (!(severity >= 0.0 && severity <= 1.0)) {
    throw InvalidArgument("corruption severity must lie in [0, 1]");
  }
  GazeSample out = sample;
  set_clean_removed(out.attrs, tag);
  if (severity == 0.0) return out;

  Tensor& img = out.image;
  const int height = img.dim(1), width = img.dim(2);
  const SubjectStyle style = subject_style(sample.subject_id, height, width);

  auto paint_box = [&](const PixelBox& b, const Rgb& color, double opacity) {
    for (int y = b.y0; y < b.y1; ++y) {
      for (int x = b.x0; x < b.x1; ++x) {
        for (int k = 0; k < 3; ++k) {
          img.at(k, y, x) = img.at(k, y, x) * (1.0 - opacity) + color[k] * opacity;
        }
      }
    }
  };

  if (tag == "bright" || tag == "dark") {
    const double k = tag == "bright" ? 1.0 + 0.8 * severity : 1.0 - 0.8 * severity;
    for (double& v : img.values()) v = std::clamp(v * k, 0.0, 1.0);
  } else if (tag == "noise") {
    const double sigma = 0.2 * severity;
    for (double& v : img.values()) v = std::clamp(v + sigma * rng.normal(), 0.0, 1.0);
  } else if (tag == "glasses") {
    const Rgb lens{0.05, 0.05, 0.08};
    const auto eyes = eye_boxes(style, height, width);
    for (const auto& b : eyes) {
      paint_box({std::max(0, b.x0 - 1), std::max(0, b.y0 - 1), std::min(width, b.x1 + 1),
                 std::min(height, b.y1 + 1)},
                lens, severity);
    }
    const int bridge_y = (eyes[0].y0 + eyes[0].y1) / 2;
    paint_box({eyes[0].x1 + 1, bridge_y, eyes[1].x0 - 1, std::min(height, bridge_y + 1)}, lens,
              severity);
  } else if (tag == "mask") {
    paint_box(mask_box(style, height, width), {0.55, 0.75, 0.9}, severity);
  } else if (tag == "occluder") {
    const auto eyes = eye_boxes(style, height, width);
    const int side = std::max(1, static_cast<int>(std::lround(severity * 0.4 * width)));
    const int bw = std::max(1, static_cast<int>(side * rng.uniform(0.7, 1.3)));
    const int bh = std::max(1, static_cast<int>(side * rng.uniform(0.7, 1.3)));
    PixelBox box;
    bool placed = false;
    for (int attempt = 0; attempt < 64 && !placed; ++attempt) {
      const int x0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(width - bw + 1)));
      const int y0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(height - bh + 1)));
      box = {x0, y0, x0 + bw, y0 + bh};
      for (const auto& e : eyes) {
        if (box_overlap(box, e) <= 0.5 * e.area()) placed = true;
      }
    }
    if (!placed) box = {0, height - bh, bw, height};
    const double grey = rng.uniform(0.1, 0.9);
    paint_box(box, {grey, grey, grey}, 1.0);
  }
  return out;
}

std::vector<GazeSample> generate_dataset(const SceneSpec& spec, int count, int first_index) {
  std::vector<GazeSample> out;
  out.reserve(static_cast<std::size_t>(std::max(count, 0)));
  for (int i = 0; i < count; ++i) out.push_back(render_sample(spec, first_index + i));
  return out;
}

// ---------------------------------------------------------------------------

void write_dataset(const std::filesystem::path& dir, const std::vector<GazeSample>& samples) {
  std::filesystem::create_directories(dir / "images");
  std::ofstream manifest(dir / "manifest.csv");
  if (!manifest) throw std::runtime_error("cannot write manifest in " + dir.string());
  manifest << kManifestHeader << '\n';
  char num[64];
  for (const auto& s : samples) {
    char name[32];
    std::snprintf(name, sizeof name, "images/%06d.png", s.index);
    write_png(dir / name, s.image, 16);
    manifest << s.index << ',';
    std::snprintf(num, sizeof num, "%.17g", s.gaze.yaw);
    manifest << num << ',';
    std::snprintf(num, sizeof num, "%.17g", s.gaze.pitch);
    manifest << num << ',' << join_attrs(s.attrs) << ',' << s.subject_id << ',' << name << '\n';
  }
  if (!manifest) throw std::runtime_error("failed writing manifest in " + dir.string());
}

std::vector<ManifestRecord> read_manifest(const std::filesystem::path& dir) {
  std::ifstream is(dir / "manifest.csv");
  if (!is) throw std::runtime_error("no manifest.csv in " + dir.string());
  std::string line;
  if (!std::getline(is, line) || line != kManifestHeader) {
    throw ParseError("manifest header must be '" + std::string(kManifestHeader) + "'", 0);
  }
  std::vector<ManifestRecord> out;
  std::size_t record = 0;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != 6) throw ParseError("manifest record has " + std::to_string(f.size()) +
                                            " fields, expected 6", record);
    ManifestRecord r;
    try {
      std::size_t used = 0;
      r.index = std::stoi(f[0], &used);
      if (used != f[0].size()) throw std::invalid_argument("index");
      r.gaze.yaw = std::stod(f[1], &used);
      if (used != f[1].size()) throw std::invalid_argument("yaw");
      r.gaze.pitch = std::stod(f[2], &used);
      if (used != f[2].size()) throw std::invalid_argument("pitch");
      r.subject_id = std::stoi(f[4], &used);
      if (used != f[4].size()) throw std::invalid_argument("subject_id");
    } catch (const std::exception&) {
      throw ParseError("manifest record has a malformed number", record);
    }
    r.attrs = split(f[3], '|');
    for (const auto& a : r.attrs) {
      if (!is_known_tag(a)) throw ParseError("manifest record has unknown tag '" + a + "'", record);
    }
    if (f[5].empty()) throw ParseError("manifest record has no image path", record);
    r.image = f[5];
    out.push_back(std::move(r));
    ++record;
  }
  return out;
}

Dataset read_dataset(const std::filesystem::path& dir) {
  Dataset d;
  d.manifest = read_manifest(dir);
  d.samples.reserve(d.manifest.size());
  for (std::size_t i = 0; i < d.manifest.size(); ++i) {
    const auto& r = d.manifest[i];
    GazeSample s;
    s.index = r.index;
    s.gaze = r.gaze;
    s.attrs = r.attrs;
    s.subject_id = r.subject_id;
    try {
      s.image = read_png(dir / r.image);
    } catch (const std::exception& e) {
      throw ParseError(std::string("cannot read image: ") + e.what(), i);
    }
    if (s.image.dim(0) != 3) throw ParseError("image is not RGB", i);
    d.samples.push_back(std::move(s));
  }
  return d;
}

std::pair<std::vector<GazeSample>, std::vector<GazeSample>> split_by_subject(
    const std::vector<GazeSample>& samples, int last_train_id) {
  std::pair<std::vector<GazeSample>, std::vector<GazeSample>> out;
  for (const auto& s : samples) {
    (s.subject_id <= last_train_id ? out.first : out.second).push_back(s);
  }
  return out;
}

std::pair<std::vector<GazeSample>, std::vector<GazeSample>> kfold_by_subject(
    const std::vector<GazeSample>& samples, int k, int fold) {
  if (k < 2 || fold < 0 || fold >= k) throw InvalidArgument("kfold: need k >= 2, 0 <= fold < k");
  std::pair<std::vector<GazeSample>, std::vector<GazeSample>> out;
  for (const auto& s : samples) {
    ((s.subject_id - 1) % k == fold ? out.second : out.first).push_back(s);
  }
  return out;
}

}  // namespace lisa
