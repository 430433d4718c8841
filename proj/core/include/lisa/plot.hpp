#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "lisa/tensor.hpp"

namespace lisa {

/// A parsed CSV table: header plus rows of raw fields.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  /// Index of a column, or -1.
  int column(const std::string& name) const;
};

/// Throws ParseError (record index) on ragged rows and InvalidArgument for an
/// empty file.
CsvTable read_csv(const std::filesystem::path& path);
CsvTable parse_csv(const std::string& text);

struct HeatmapCell {
  int yaw_bin = 0;
  int pitch_bin = 0;
  double yaw_lo = 0, yaw_hi = 0, pitch_lo = 0, pitch_hi = 0;
  std::size_t count = 0;
  double mean_error_deg = 0.0;  ///< NaN for an empty cell
};

struct ErrorHeatmap {
  int yaw_bins = 0;
  int pitch_bins = 0;
  double yaw_min = 0, yaw_max = 0, pitch_min = 0, pitch_max = 0;
  std::vector<HeatmapCell> cells;  ///< pitch-major: cells[p * yaw_bins + y]

  const HeatmapCell& at(int yaw_bin, int pitch_bin) const {
    return cells[static_cast<std::size_t>(pitch_bin * yaw_bins + yaw_bin)];
  }
};

/// Mean angular error binned over the ground-truth (yaw, pitch) range of the
/// inputs. Bins are half-open except the last, which includes the maximum.
ErrorHeatmap compute_error_heatmap(const std::vector<double>& yaw, const std::vector<double>& pitch,
                                   const std::vector<double>& error_deg, int yaw_bins = 8,
                                   int pitch_bins = 8);
std::string heatmap_csv(const ErrorHeatmap& h);

/// Renders whatever the table supports and returns the written paths:
///   metrics (step,total,l1,ang,sep)       -> {run_id}_loss.png
///   predictions (yaw,pitch,error_deg)     -> {run_id}_heatmap.png + .csv
///   eval or ablation (group|variant, mean_deg) -> {run_id}_groups.png
/// Nothing is written when the input is empty or matches no schema; the
/// error message lists the accepted schemas.
std::vector<std::filesystem::path> plot_csv(const std::filesystem::path& input,
                                            const std::filesystem::path& out_dir,
                                            const std::string& run_id);

}  // namespace lisa
