#include "fspnet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "fspnet/errors.hpp"
#include "fspnet/threads.hpp"
#include "json.hpp"

namespace fspnet {

namespace {

constexpr std::size_t kNumThresholds = 255;
constexpr double kBetaSq = 0.3;

void check_pair(const char* op, const ScoreMap& c, const BinaryMask& g) {
  if (c.h != g.h || c.w != g.w || c.v.size() != c.size() ||
      g.v.size() != g.size()) {
    throw DataError(std::string(op) + ": prediction " + std::to_string(c.h) +
                    "x" + std::to_string(c.w) + " and mask " +
                    std::to_string(g.h) + "x" + std::to_string(g.w) +
                    " do not line up");
  }
  if (c.size() == 0) throw DataError(std::string(op) + ": empty maps");
}

std::size_t foreground_count(const BinaryMask& g) {
  std::size_t n = 0;
  for (std::uint8_t v : g.v) n += (v != 0);
  return n;
}

double map_mean(const ScoreMap& c) {
  double s = 0.0;
  for (double v : c.v) s += v;
  return s / static_cast<double>(c.size());
}

double f_beta(double precision, double recall) {
  const double denom = kBetaSq * precision + recall;
  if (denom == 0.0) return 0.0;
  return (1.0 + kBetaSq) * precision * recall / denom;
}

double adaptive_threshold(const ScoreMap& c) {
  return std::min(2.0 * map_mean(c), 1.0);
}

// Sorted foreground/background prediction values; counting values above a
// threshold is then two binary searches instead of an image scan.
struct SplitScores {
  std::vector<double> fg, bg;
};

SplitScores split_scores(const ScoreMap& c, const BinaryMask& g) {
  SplitScores s;
  for (std::size_t i = 0; i < c.size(); ++i)
    (g.v[i] ? s.fg : s.bg).push_back(c.v[i]);
  std::sort(s.fg.begin(), s.fg.end());
  std::sort(s.bg.begin(), s.bg.end());
  return s;
}

std::size_t count_above(const std::vector<double>& sorted, double t) {
  return static_cast<std::size_t>(
      sorted.end() - std::upper_bound(sorted.begin(), sorted.end(), t));
}

// E-measure of a binarized map summarized through its confusion counts: the
// alignment value is constant within each (prediction, mask) combination.
double e_from_counts(std::size_t tp, std::size_t fp, std::size_t n_fg,
                     std::size_t n) {
  const std::size_t n_pos = tp + fp;
  if (n_fg == 0) {
    return static_cast<double>(n - n_pos) / static_cast<double>(n);
  }
  if (n_fg == n) {
    return static_cast<double>(n_pos) / static_cast<double>(n);
  }
  const double mu_fm = static_cast<double>(n_pos) / static_cast<double>(n);
  const double mu_gt = static_cast<double>(n_fg) / static_cast<double>(n);
  auto enhanced = [](double phi_fm, double phi_gt) {
    const double denom = phi_fm * phi_fm + phi_gt * phi_gt;
    const double align = denom == 0.0 ? 0.0 : 2.0 * phi_fm * phi_gt / denom;
    return (align + 1.0) * (align + 1.0) / 4.0;
  };
  const double e_tp = enhanced(1.0 - mu_fm, 1.0 - mu_gt);
  const double e_fp = enhanced(1.0 - mu_fm, -mu_gt);
  const double e_fn = enhanced(-mu_fm, 1.0 - mu_gt);
  const double e_tn = enhanced(-mu_fm, -mu_gt);
  const std::size_t fn = n_fg - tp;
  const std::size_t tn = n - n_fg - fp;
  return (static_cast<double>(tp) * e_tp + static_cast<double>(fp) * e_fp +
          static_cast<double>(fn) * e_fn + static_cast<double>(tn) * e_tn) /
         static_cast<double>(n);
}

struct PairEval {
  MetricValues values;
  std::array<double, kNumThresholds> precision{}, recall{}, e_curve{};
};

}  // namespace

double mae(const ScoreMap& c, const BinaryMask& g) {
  check_pair("mae", c, g);
  double acc = 0.0;
  for (std::size_t i = 0; i < c.size(); ++i)
    acc += std::fabs(c.v[i] - static_cast<double>(g.v[i]));
  return acc / static_cast<double>(c.size());
}

FMeasures f_measures(const ScoreMap& c, const BinaryMask& g) {
  check_pair("f_measures", c, g);
  const std::size_t n_fg = foreground_count(g);
  if (n_fg == 0) {
    throw DataError("f_measures: ground truth has no foreground, recall undefined");
  }
  SplitScores s = split_scores(c, g);
  FMeasures out;
  out.max = 0.0;
  double acc = 0.0;
  for (std::size_t k = 0; k < kNumThresholds; ++k) {
    const double t = static_cast<double>(k) / 255.0;
    const std::size_t tp = count_above(s.fg, t);
    const std::size_t fp = count_above(s.bg, t);
    const double p = (tp + fp) == 0
                         ? 0.0
                         : static_cast<double>(tp) / static_cast<double>(tp + fp);
    const double r = static_cast<double>(tp) / static_cast<double>(n_fg);
    const double f = f_beta(p, r);
    acc += f;
    out.max = std::max(out.max, f);
  }
  out.mean = acc / static_cast<double>(kNumThresholds);
  const double ta = adaptive_threshold(c);
  const std::size_t tp = count_above(s.fg, ta);
  const std::size_t fp = count_above(s.bg, ta);
  const double p =
      (tp + fp) == 0 ? 0.0
                     : static_cast<double>(tp) / static_cast<double>(tp + fp);
  out.adaptive = f_beta(p, static_cast<double>(tp) / static_cast<double>(n_fg));
  return out;
}

EMeasures e_measures(const ScoreMap& c, const BinaryMask& g) {
  check_pair("e_measures", c, g);
  const std::size_t n_fg = foreground_count(g);
  const std::size_t n = g.size();
  SplitScores s = split_scores(c, g);
  EMeasures out;
  out.max = 0.0;
  double acc = 0.0;
  for (std::size_t k = 0; k < kNumThresholds; ++k) {
    const double t = static_cast<double>(k) / 255.0;
    const double e = e_from_counts(count_above(s.fg, t), count_above(s.bg, t),
                                   n_fg, n);
    acc += e;
    out.max = std::max(out.max, e);
  }
  out.mean = acc / static_cast<double>(kNumThresholds);
  const double ta = adaptive_threshold(c);
  out.adaptive =
      e_from_counts(count_above(s.fg, ta), count_above(s.bg, ta), n_fg, n);
  return out;
}

// ---------------------------------------------------------------------------
// structure measure
// ---------------------------------------------------------------------------

namespace detail {

namespace {

// 2 * mean / (mean^2 + 1 + std) over the pixels selected by the mask,
// sample standard deviation.
double object_score(const std::vector<double>& vals) {
  if (vals.empty()) return 0.0;
  double m = 0.0;
  for (double v : vals) m += v;
  m /= static_cast<double>(vals.size());
  double sd = 0.0;
  if (vals.size() > 1) {
    double acc = 0.0;
    for (double v : vals) acc += (v - m) * (v - m);
    sd = std::sqrt(acc / static_cast<double>(vals.size() - 1));
  }
  return 2.0 * m / (m * m + 1.0 + sd);
}

// Region similarity of one quadrant, variances normalized by N-1.
double region_ssim(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t n = x.size();
  if (n == 0) return 0.0;
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sx = 0.0, sy = 0.0, sxy = 0.0;
  if (n > 1) {
    for (std::size_t i = 0; i < n; ++i) {
      sx += (x[i] - mx) * (x[i] - mx);
      sy += (y[i] - my) * (y[i] - my);
      sxy += (x[i] - mx) * (y[i] - my);
    }
    sx /= static_cast<double>(n - 1);
    sy /= static_cast<double>(n - 1);
    sxy /= static_cast<double>(n - 1);
  }
  const double alpha = 4.0 * mx * my * sxy;
  const double beta = (mx * mx + my * my) * (sx + sy);
  if (alpha != 0.0) return alpha / beta;
  if (beta == 0.0) return 1.0;
  return 0.0;
}

}  // namespace

double s_object(const ScoreMap& c, const BinaryMask& g) {
  std::vector<double> fg_vals, bg_vals;
  std::size_t n_fg = 0;
  for (std::size_t i = 0; i < c.size(); ++i) {
    if (g.v[i]) {
      fg_vals.push_back(c.v[i]);
      ++n_fg;
    } else {
      bg_vals.push_back(1.0 - c.v[i]);
    }
  }
  const double u = static_cast<double>(n_fg) / static_cast<double>(g.size());
  return u * object_score(fg_vals) + (1.0 - u) * object_score(bg_vals);
}

double s_region(const ScoreMap& c, const BinaryMask& g) {
  const std::size_t h = g.h, w = g.w;
  // Mask centroid, 1-based rounding as in the original definition; an empty
  // mask centers the split.
  std::size_t total = 0;
  double sum_x = 0.0, sum_y = 0.0;
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      if (g.v[y * w + x]) {
        ++total;
        sum_x += static_cast<double>(x + 1);
        sum_y += static_cast<double>(y + 1);
      }
  std::size_t cx, cy;
  if (total == 0) {
    cx = static_cast<std::size_t>(std::llround(static_cast<double>(w) / 2.0));
    cy = static_cast<std::size_t>(std::llround(static_cast<double>(h) / 2.0));
  } else {
    cx = static_cast<std::size_t>(
        std::llround(sum_x / static_cast<double>(total)));
    cy = static_cast<std::size_t>(
        std::llround(sum_y / static_cast<double>(total)));
  }

  double score = 0.0;
  const double inv_area = 1.0 / static_cast<double>(h * w);
  for (int qy = 0; qy < 2; ++qy)
    for (int qx = 0; qx < 2; ++qx) {
      const std::size_t y0 = qy == 0 ? 0 : cy;
      const std::size_t y1 = qy == 0 ? cy : h;
      const std::size_t x0 = qx == 0 ? 0 : cx;
      const std::size_t x1 = qx == 0 ? cx : w;
      std::vector<double> pq, gq;
      for (std::size_t y = y0; y < y1; ++y)
        for (std::size_t x = x0; x < x1; ++x) {
          pq.push_back(c.v[y * w + x]);
          gq.push_back(static_cast<double>(g.v[y * w + x]));
        }
      const double weight = static_cast<double>(pq.size()) * inv_area;
      if (weight > 0.0) score += weight * region_ssim(pq, gq);
    }
  return score;
}

}  // namespace detail

double s_measure(const ScoreMap& c, const BinaryMask& g, double alpha) {
  check_pair("s_measure", c, g);
  const std::size_t n_fg = foreground_count(g);
  if (n_fg == 0) return 1.0 - map_mean(c);
  if (n_fg == g.size()) return map_mean(c);
  const double q =
      alpha * detail::s_object(c, g) + (1.0 - alpha) * detail::s_region(c, g);
  return q < 0.0 ? 0.0 : q;
}

// ---------------------------------------------------------------------------
// weighted F-measure
// ---------------------------------------------------------------------------

namespace {

// Exact nearest-foreground assignment; ties go to the smallest linear
// index. Quadratic in pixels, fine at evaluation sizes.
void nearest_foreground(const BinaryMask& g, std::vector<double>& dist,
                        std::vector<std::size_t>& index) {
  const std::size_t h = g.h, w = g.w, n = g.size();
  std::vector<std::size_t> fg;
  for (std::size_t i = 0; i < n; ++i)
    if (g.v[i]) fg.push_back(i);
  dist.assign(n, 0.0);
  index.assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    if (g.v[i]) {
      index[i] = i;
      continue;
    }
    const double y = static_cast<double>(i / w);
    const double x = static_cast<double>(i % w);
    double best = std::numeric_limits<double>::infinity();
    std::size_t best_idx = 0;
    for (std::size_t j : fg) {
      const double dy = static_cast<double>(j / w) - y;
      const double dx = static_cast<double>(j % w) - x;
      const double d2 = dy * dy + dx * dx;
      if (d2 < best) {
        best = d2;
        best_idx = j;
      }
    }
    dist[i] = std::sqrt(best);
    index[i] = best_idx;
  }
  (void)h;
}

// Separable 7x7 Gaussian, sigma 5, zero padding (constants from the
// weighted F-measure reference definition).
std::vector<double> gaussian_blur_7x7(const std::vector<double>& src,
                                      std::size_t h, std::size_t w) {
  constexpr int kRad = 3;
  double k1[2 * kRad + 1];
  double ksum = 0.0;
  for (int d = -kRad; d <= kRad; ++d) {
    k1[d + kRad] = std::exp(-static_cast<double>(d * d) / (2.0 * 25.0));
    ksum += k1[d + kRad];
  }
  std::vector<double> tmp(h * w, 0.0), out(h * w, 0.0);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int d = -kRad; d <= kRad; ++d) {
        const std::ptrdiff_t xx = static_cast<std::ptrdiff_t>(x) + d;
        if (xx >= 0 && xx < static_cast<std::ptrdiff_t>(w))
          acc += k1[d + kRad] * src[y * w + xx];
      }
      tmp[y * w + x] = acc;
    }
  const double inv_norm = 1.0 / (ksum * ksum);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int d = -kRad; d <= kRad; ++d) {
        const std::ptrdiff_t yy = static_cast<std::ptrdiff_t>(y) + d;
        if (yy >= 0 && yy < static_cast<std::ptrdiff_t>(h))
          acc += k1[d + kRad] * tmp[yy * w + x];
      }
      out[y * w + x] = acc * inv_norm;
    }
  return out;
}

}  // namespace

double weighted_f(const ScoreMap& c, const BinaryMask& g) {
  check_pair("weighted_f", c, g);
  const std::size_t n = g.size();
  const std::size_t n_fg = foreground_count(g);
  if (n_fg == 0) {
    throw DataError("weighted_f: ground truth has no foreground");
  }

  std::vector<double> err(n);
  for (std::size_t i = 0; i < n; ++i)
    err[i] = std::fabs(c.v[i] - static_cast<double>(g.v[i]));

  std::vector<double> dist;
  std::vector<std::size_t> nearest;
  nearest_foreground(g, dist, nearest);

  // Background errors take the value at their nearest foreground pixel
  // before smoothing, so the blur sees the object's own boundary error.
  std::vector<double> err_t = err;
  for (std::size_t i = 0; i < n; ++i)
    if (!g.v[i]) err_t[i] = err[nearest[i]];
  const std::vector<double> smoothed = gaussian_blur_7x7(err_t, g.h, g.w);

  const double decay = std::log(0.5) / 5.0;
  double sum_ew_fg = 0.0, sum_ew_bg = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (g.v[i]) {
      const double e = smoothed[i] < err[i] ? smoothed[i] : err[i];
      sum_ew_fg += e;  // importance weight is 1 on the foreground
    } else {
      const double importance = 2.0 - std::exp(decay * dist[i]);
      sum_ew_bg += err[i] * importance;
    }
  }

  const double tp_w = static_cast<double>(n_fg) - sum_ew_fg;
  const double fp_w = sum_ew_bg;
  const double recall = 1.0 - sum_ew_fg / static_cast<double>(n_fg);
  const double precision = (tp_w + fp_w) == 0.0 ? 0.0 : tp_w / (tp_w + fp_w);
  return f_beta(precision, recall);
}

// ---------------------------------------------------------------------------
// aggregation
// ---------------------------------------------------------------------------

namespace {

PairEval evaluate_pair_full(const ScoreMap& c, const BinaryMask& g) {
  PairEval out;
  out.values.mae = mae(c, g);
  out.values.s_measure = s_measure(c, g);
  out.values.weighted_f = weighted_f(c, g);

  const std::size_t n_fg = foreground_count(g);
  if (n_fg == 0) {
    throw DataError("evaluate: ground truth has no foreground");
  }
  const std::size_t n = g.size();
  SplitScores s = split_scores(c, g);
  double f_acc = 0.0, e_acc = 0.0, f_max = 0.0, e_max = 0.0;
  for (std::size_t k = 0; k < kNumThresholds; ++k) {
    const double t = static_cast<double>(k) / 255.0;
    const std::size_t tp = count_above(s.fg, t);
    const std::size_t fp = count_above(s.bg, t);
    out.precision[k] =
        (tp + fp) == 0 ? 0.0
                       : static_cast<double>(tp) / static_cast<double>(tp + fp);
    out.recall[k] = static_cast<double>(tp) / static_cast<double>(n_fg);
    out.e_curve[k] = e_from_counts(tp, fp, n_fg, n);
    const double f = f_beta(out.precision[k], out.recall[k]);
    f_acc += f;
    f_max = std::max(f_max, f);
    e_acc += out.e_curve[k];
    e_max = std::max(e_max, out.e_curve[k]);
  }
  out.values.f_mean = f_acc / static_cast<double>(kNumThresholds);
  out.values.f_max = f_max;
  out.values.e_mean = e_acc / static_cast<double>(kNumThresholds);
  out.values.e_max = e_max;

  const double ta = adaptive_threshold(c);
  const std::size_t tp = count_above(s.fg, ta);
  const std::size_t fp = count_above(s.bg, ta);
  const double p =
      (tp + fp) == 0 ? 0.0
                     : static_cast<double>(tp) / static_cast<double>(tp + fp);
  out.values.f_adaptive =
      f_beta(p, static_cast<double>(tp) / static_cast<double>(n_fg));
  out.values.e_adaptive = e_from_counts(tp, fp, n_fg, n);
  return out;
}

}  // namespace

MetricValues evaluate_pair(const ScoreMap& c, const BinaryMask& g) {
  return evaluate_pair_full(c, g).values;
}

MetricReport evaluate_dataset(
    const std::vector<std::pair<ScoreMap, BinaryMask>>& pairs,
    const std::vector<std::string>* names) {
  if (pairs.empty()) throw DataError("evaluate_dataset: empty dataset");
  if (names && names->size() != pairs.size()) {
    throw DataError("evaluate_dataset: name count does not match pairs");
  }
  std::vector<PairEval> evals(pairs.size());
  std::vector<std::string> errors(pairs.size());
  parallel_for(pairs.size(), [&](std::size_t i) {
    try {
      evals[i] = evaluate_pair_full(pairs[i].first, pairs[i].second);
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  });
  for (const std::string& e : errors)
    if (!e.empty()) throw DataError(e);

  MetricReport report;
  const double inv = 1.0 / static_cast<double>(pairs.size());
  MetricValues agg;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const std::string name = names ? (*names)[i]
                                   : "image_" + std::to_string(i);
    report.per_image.emplace_back(name, evals[i].values);
    agg.mae += evals[i].values.mae * inv;
    agg.s_measure += evals[i].values.s_measure * inv;
    agg.weighted_f += evals[i].values.weighted_f * inv;
    agg.f_adaptive += evals[i].values.f_adaptive * inv;
    agg.e_adaptive += evals[i].values.e_adaptive * inv;
  }
  // Curve averaging across images, then the mean/max reduction.
  double f_acc = 0.0, e_acc = 0.0, f_max = 0.0, e_max = 0.0;
  for (std::size_t k = 0; k < kNumThresholds; ++k) {
    double p = 0.0, r = 0.0, e = 0.0;
    for (const PairEval& ev : evals) {
      p += ev.precision[k] * inv;
      r += ev.recall[k] * inv;
      e += ev.e_curve[k] * inv;
    }
    const double f = f_beta(p, r);
    f_acc += f;
    f_max = std::max(f_max, f);
    e_acc += e;
    e_max = std::max(e_max, e);
  }
  agg.f_mean = f_acc / static_cast<double>(kNumThresholds);
  agg.f_max = f_max;
  agg.e_mean = e_acc / static_cast<double>(kNumThresholds);
  agg.e_max = e_max;
  report.aggregate = agg;
  return report;
}

// ---------------------------------------------------------------------------
// report export
// ---------------------------------------------------------------------------

namespace {

constexpr const char* kColumns[] = {"mae",        "s_measure", "f_adaptive",
                                    "f_mean",     "f_max",     "weighted_f",
                                    "e_adaptive", "e_mean",    "e_max"};

std::array<double, 9> values_row(const MetricValues& v) {
  return {v.mae,        v.s_measure, v.f_adaptive, v.f_mean, v.f_max,
          v.weighted_f, v.e_adaptive, v.e_mean,    v.e_max};
}

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void write_report_csv(const MetricReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write report: " + path);
  out << "name";
  for (const char* c : kColumns) out << ',' << c;
  out << '\n';
  auto row = [&out](const std::string& name, const MetricValues& v) {
    out << name;
    for (double x : values_row(v)) out << ',' << fmt_double(x);
    out << '\n';
  };
  for (const auto& [name, v] : report.per_image) row(name, v);
  row("AGGREGATE", report.aggregate);
}

void write_report_json(const MetricReport& report, const std::string& path) {
  nlohmann::json j;
  auto fill = [](const MetricValues& v) {
    nlohmann::json o;
    const auto vals = values_row(v);
    for (std::size_t i = 0; i < vals.size(); ++i) o[kColumns[i]] = vals[i];
    return o;
  };
  j["per_image"] = nlohmann::json::array();
  for (const auto& [name, v] : report.per_image) {
    nlohmann::json o = fill(v);
    o["name"] = name;
    j["per_image"].push_back(o);
  }
  j["aggregate"] = fill(report.aggregate);
  std::ofstream out(path);
  if (!out) throw DataError("cannot write report: " + path);
  out << j.dump(2) << '\n';
}

}  // namespace fspnet
