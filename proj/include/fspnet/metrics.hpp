#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace fspnet {

/// h x w prediction map with values in [0, 1].
struct ScoreMap {
  std::size_t h = 0, w = 0;
  std::vector<double> v;

  std::size_t size() const { return h * w; }
};

/// h x w strictly binary mask.
struct BinaryMask {
  std::size_t h = 0, w = 0;
  std::vector<std::uint8_t> v;

  std::size_t size() const { return h * w; }
};

struct FMeasures {
  double adaptive = 0, mean = 0, max = 0;
};

struct EMeasures {
  double adaptive = 0, mean = 0, max = 0;
};

struct MetricValues {
  double mae = 0;
  double s_measure = 0;
  double f_adaptive = 0, f_mean = 0, f_max = 0;
  double weighted_f = 0;
  double e_adaptive = 0, e_mean = 0, e_max = 0;
};

struct MetricReport {
  std::vector<std::pair<std::string, MetricValues>> per_image;
  MetricValues aggregate;
};

// Binarization is strict (value > threshold) throughout; swept metrics use
// the 255 thresholds k/255 for k = 0..254, the adaptive variants use
// min(2 * mean(prediction), 1).

double mae(const ScoreMap& c, const BinaryMask& g);
FMeasures f_measures(const ScoreMap& c, const BinaryMask& g);
double s_measure(const ScoreMap& c, const BinaryMask& g, double alpha = 0.5);
double weighted_f(const ScoreMap& c, const BinaryMask& g);
EMeasures e_measures(const ScoreMap& c, const BinaryMask& g);

MetricValues evaluate_pair(const ScoreMap& c, const BinaryMask& g);

/// Per-image metrics plus dataset aggregates. Swept metrics average the
/// per-threshold precision/recall (F) and alignment scores (E) over images
/// before the mean/max reduction; everything else averages per-image values.
MetricReport evaluate_dataset(
    const std::vector<std::pair<ScoreMap, BinaryMask>>& pairs,
    const std::vector<std::string>* names = nullptr);

void write_report_csv(const MetricReport& report, const std::string& path);
void write_report_json(const MetricReport& report, const std::string& path);

namespace detail {
// Pieces of the structure measure, exposed so the alpha combination is
// testable in isolation.
double s_object(const ScoreMap& c, const BinaryMask& g);
double s_region(const ScoreMap& c, const BinaryMask& g);
}  // namespace detail

}  // namespace fspnet
