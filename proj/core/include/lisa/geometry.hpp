#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

// Gaze representations and evaluation metrics.
//
// Axis convention used everywhere in this library:
//   v = (-cos(pitch) sin(yaw), -sin(pitch), -cos(pitch) cos(yaw))
// so (yaw, pitch) = (0, 0) looks down the negative z axis. Angles are radians;
// degrees appear only in reported errors.

namespace lisa {

struct GazeAngles {
  double yaw = 0.0;    ///< phi, radians
  double pitch = 0.0;  ///< theta, radians
};

struct GazeVector3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  double norm() const;
  double dot(const GazeVector3& o) const { return x * o.x + y * o.y + z * o.z; }
};

constexpr double kPi = 3.14159265358979323846;
constexpr double kRadToDeg = 180.0 / kPi;
constexpr double kDegToRad = kPi / 180.0;

/// Throws InvalidArgument on non-finite input.
GazeVector3 angles_to_vector(GazeAngles g);

/// Normalizes first; throws InvalidArgument on a zero or non-finite vector.
/// Returns yaw in (-pi, pi], pitch in [-pi/2, pi/2].
GazeAngles vector_to_angles(GazeVector3 v);

/// Wraps yaw into (-pi, pi] and folds pitch into [-pi/2, pi/2] while keeping
/// the direction unchanged.
GazeAngles normalize_angles(GazeAngles g);

/// Angle between two directions in degrees, [0, 180]. Both inputs are
/// normalized, so positive rescaling has no effect.
double angular_error_deg(GazeVector3 v, GazeVector3 v_hat);

/// Angular error between two angle pairs, in degrees.
double angular_error_deg(GazeAngles truth, GazeAngles pred);

struct MetricReport {
  std::size_t count = 0;
  double mean_deg = 0.0;
  double std_deg = 0.0;      ///< population standard deviation
  double acc_lt_8deg = 0.0;  ///< fraction in [0, 1]

  static std::string csv_header() { return "mean_deg,std_deg,acc_lt_8deg"; }
  std::string to_csv_row() const;
};

/// Mean / std / accuracy(<8 deg) over per-sample angular errors.
MetricReport metric_suite(std::span<const GazeAngles> preds, std::span<const GazeAngles> truths);

/// Same statistics from precomputed per-sample errors (degrees).
MetricReport summarize_errors(std::span<const double> errors_deg);

}  // namespace lisa
