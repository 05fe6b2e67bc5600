#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

namespace qsim {

/// Appends rows to one run's metrics.csv. Column order is frozen; see
/// docs/formats.md.
class MetricsWriter {
 public:
  MetricsWriter(const std::string& path, std::string variant, std::uint64_t seed);

  struct Row {
    std::int64_t step = 0;
    double eval_return = 0.0;
    double td_loss = 0.0;
    double ae_loss = 0.0;
    double mean_target = 0.0;
    double mean_qtot = 0.0;
    double delta_q = 0.0;
    double epsilon = 0.0;
    double kappa = 0.0;
  };

  void append(const Row& row);
  void flush();

  static const char* header();

 private:
  std::ofstream out_;
  std::string variant_;
  std::uint64_t seed_;
};

/// Writes manifest.json next to the metrics: schema tag, seed, the full
/// config echo, and an FNV-1a content hash of the echo.
void write_manifest(const std::string& run_dir, const std::string& config_echo_json,
                    std::uint64_t config_hash, std::uint64_t seed);

}  // namespace qsim
