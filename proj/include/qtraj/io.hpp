#pragma once

// Configuration files and the output bundle. CSV files open with
// "# format_version=1" and use 17 significant digits; JSON files carry a
// "format_version" field.

#include <filesystem>
#include <string>
#include <vector>

#include "qtraj/ensemble.hpp"

namespace qtraj {

inline constexpr int kFormatVersion = 1;

/// Strict parse: unknown keys, wrong types and bad values are configuration
/// errors naming the offending key. Missing keys keep their defaults.
EnsembleConfig parse_config(const std::string& json_text);
EnsembleConfig load_config(const std::filesystem::path& path);
/// Full config document; `deterministic` leaves out parallelism and the
/// output directory, which never change results.
std::string config_to_json(const EnsembleConfig& config, bool deterministic = false);

void write_report_json(const EnsembleReport& report, const std::filesystem::path& path);
/// Config, kernel summary, statistics and rows; raw records and kernel samples
/// live in their own files.
EnsembleReport read_report_json(const std::filesystem::path& path);

/// Wall time and worker count, kept apart from the deterministic report.
void write_runtime_json(const EnsembleReport& report, const std::filesystem::path& path);

void write_results_csv(const std::vector<TrajectoryRow>& rows, const std::filesystem::path& path);
std::vector<TrajectoryRow> read_results_csv(const std::filesystem::path& path);

void write_histogram_csv(const Histogram& hist, const std::filesystem::path& path);
Histogram read_histogram_csv(const std::filesystem::path& path);

void write_kernel_csv(const FilterKernel& kernel, const std::filesystem::path& path);
FilterKernel read_kernel_csv(const std::filesystem::path& path);

void write_record_csv(const TrajectoryRecord& record, const std::filesystem::path& path);
TrajectoryRecord read_record_csv(const std::filesystem::path& path);

/// Columns t, value, reference.
void write_traces_csv(const MeanTrace& value, const MeanTrace& reference, const std::filesystem::path& path);

/// report.json, runtime.json, results.csv, histogram.csv, kernel.csv, and
/// records/<id>.csv for any records held in memory.
void write_bundle(const EnsembleReport& report, const std::filesystem::path& dir);

/// Record sink writing records/<id>.csv under `dir`.
RecordSink record_file_sink(const std::filesystem::path& dir);

/// "%.17g".
std::string format_double(double x);

}  // namespace qtraj
