#pragma once

#include <tuple>

#include "fspnet/metrics.hpp"

// Brute-force reference implementations of the six evaluation metrics,
// written directly from the original definitions (structure measure,
// weighted F-measure, enhanced-alignment measure, frequency-tuned F) as
// independent oracles. Deliberately naive: explicit per-pixel and
// per-threshold loops, no shared code with the library implementations.
namespace oracle {

double mae(const fspnet::ScoreMap& c, const fspnet::BinaryMask& g);

// (adaptive, mean, max) over thresholds k/255, k = 0..254, binarizing with
// strict >; adaptive threshold is min(2 * mean(c), 1). beta^2 = 0.3.
std::tuple<double, double, double> f_measures(const fspnet::ScoreMap& c,
                                              const fspnet::BinaryMask& g);

double s_measure(const fspnet::ScoreMap& c, const fspnet::BinaryMask& g,
                 double alpha = 0.5);

double weighted_f(const fspnet::ScoreMap& c, const fspnet::BinaryMask& g);

std::tuple<double, double, double> e_measures(const fspnet::ScoreMap& c,
                                              const fspnet::BinaryMask& g);

}  // namespace oracle
