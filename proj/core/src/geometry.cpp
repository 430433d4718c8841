#include "lisa/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "lisa/errors.hpp"

namespace lisa {

namespace {

GazeVector3 normalized(GazeVector3 v) {
  if (!std::isfinite(v.x) || !std::isfinite(v.y) || !std::isfinite(v.z)) {
    throw InvalidArgument("gaze vector has non-finite components");
  }
  const double n = v.norm();
  if (n == 0.0) throw InvalidArgument("gaze vector is zero");
  return {v.x / n, v.y / n, v.z / n};
}

}  // namespace

double GazeVector3::norm() const { return std::sqrt(x * x + y * y + z * z); }

GazeVector3 angles_to_vector(GazeAngles g) {
  if (!std::isfinite(g.yaw) || !std::isfinite(g.pitch)) {
    throw InvalidArgument("gaze angles must be finite");
  }
  const double cp = std::cos(g.pitch);
  return {-cp * std::sin(g.yaw), -std::sin(g.pitch), -cp * std::cos(g.yaw)};
}

GazeAngles vector_to_angles(GazeVector3 v) {
  const GazeVector3 u = normalized(v);
  const double pitch = std::asin(std::clamp(-u.y, -1.0, 1.0));
  const double yaw = std::atan2(-u.x, -u.z);
  return {yaw, pitch};
}

GazeAngles normalize_angles(GazeAngles g) {
  return vector_to_angles(angles_to_vector(g));
}

double angular_error_deg(GazeVector3 v, GazeVector3 v_hat) {
  const GazeVector3 a = normalized(v);
  const GazeVector3 b = normalized(v_hat);
  return std::acos(std::clamp(a.dot(b), -1.0, 1.0)) * kRadToDeg;
}

double angular_error_deg(GazeAngles truth, GazeAngles pred) {
  return angular_error_deg(angles_to_vector(truth), angles_to_vector(pred));
}

std::string MetricReport::to_csv_row() const {
  char buf[128];
  std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g", mean_deg, std_deg, acc_lt_8deg);
  return buf;
}

MetricReport summarize_errors(std::span<const double> errors_deg) {
  if (errors_deg.empty()) throw InvalidArgument("metric suite needs at least one sample");
  MetricReport r;
  r.count = errors_deg.size();
  double sum = 0.0;
  std::size_t hits = 0;
  for (double e : errors_deg) {
    sum += e;
    if (e < 8.0) ++hits;
  }
  r.mean_deg = sum / static_cast<double>(r.count);
  double ss = 0.0;
  for (double e : errors_deg) ss += (e - r.mean_deg) * (e - r.mean_deg);
  r.std_deg = std::sqrt(ss / static_cast<double>(r.count));
  r.acc_lt_8deg = static_cast<double>(hits) / static_cast<double>(r.count);
  return r;
}

MetricReport metric_suite(std::span<const GazeAngles> preds, std::span<const GazeAngles> truths) {
  if (preds.size() != truths.size()) {
    throw InvalidArgument("metric suite: " + std::to_string(preds.size()) + " predictions vs " +
                          std::to_string(truths.size()) + " labels");
  }
  std::vector<double> errors(preds.size());
  for (std::size_t i = 0; i < preds.size(); ++i) {
    errors[i] = angular_error_deg(truths[i], preds[i]);
  }
  return summarize_errors(errors);
}

}  // namespace lisa
