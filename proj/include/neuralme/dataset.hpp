#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "neuralme/me_model.hpp"

namespace neuralme {

struct PatientMeta {
  double heart_rate = 73.0; // bpm
  std::string label;
};

/// Resampled reference pressure waveforms: uniform time grid at `rate`,
/// one pressure column per observed segment.
struct Dataset {
  std::vector<double> times;       // s, uniform grid
  Mat pressures;                   // (time x n_obs), Pa
  std::vector<std::string> segment_ids;
  PatientMeta patient;
  double rate = 0.0;               // Hz

  int n_samples() const { return static_cast<int>(times.size()); }
  int n_channels() const { return static_cast<int>(segment_ids.size()); }
  void validate() const;
};

/// Waveform CSV: header `t,p_<segid>,...`, seconds and Pa, '.' decimal,
/// comma separator, LF line endings. Doubles are written shortest
/// round-trip so export/import is bit-exact.
void write_waveform_csv(const std::filesystem::path& path,
                        const std::vector<double>& times, const Mat& columns,
                        const std::vector<std::string>& segment_ids);

Dataset read_waveform_csv(const std::filesystem::path& path);

/// Resamples raw waveforms onto a uniform grid at `rate` (linear
/// interpolation) and drops every sample inside the first cardiac period,
/// retaining the cycles after the transient.
Dataset build_dataset(const Dataset& raw, double heart_rate, double rate);

} // namespace neuralme
