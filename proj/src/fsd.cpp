#include "fspnet/fsd.hpp"

#include <map>
#include <sstream>

namespace fspnet {

std::string FeatureRef::str() const {
  std::ostringstream os;
  os << (is_df ? "dF" : "F") << gen << "_" << index;
  return os.str();
}

DecodeSchedule DecodeSchedule::build(std::size_t num_inputs) {
  if (num_inputs != 12) {
    throw ShapeError("decode schedule: fixed for 12 inputs, got " +
                     std::to_string(num_inputs));
  }
  DecodeSchedule s;
  s.aim_counts = {6, 3, 2, 1};
  std::size_t available = num_inputs;  // features entering the current layer
  for (std::size_t layer = 0; layer < s.aim_counts.size(); ++layer) {
    const std::size_t m = s.aim_counts[layer];
    for (std::size_t n = m; n >= 1; --n) {
      AimWiring w;
      w.layer = layer;
      w.n = n;
      const std::size_t hi = std::min(2 * n, available);
      const std::size_t lo = std::min(2 * n - 1, hi - 1);
      w.in_hi = FeatureRef{layer, hi, false};
      w.in_lo = FeatureRef{layer, lo, false};
      if (n < m) w.in_df = FeatureRef{layer, n + 1, true};
      w.out_df = FeatureRef{layer, n, true};
      w.out_f = FeatureRef{layer + 1, n, false};
      s.aims.push_back(w);
    }
    available = m;
  }
  return s;
}

std::string DecodeSchedule::dump() const {
  std::ostringstream os;
  os << "FSD wiring: " << aim_counts.size() << " layers, " << aims.size()
     << " AIMs, outputs per layer [";
  for (std::size_t i = 0; i < aim_counts.size(); ++i)
    os << (i ? ", " : "") << aim_counts[i];
  os << "]\n";
  std::size_t id = 0;
  for (const AimWiring& w : aims) {
    os << "aim " << ++id << "  layer " << w.layer << "  pos " << w.n
       << "  in=(";
    if (w.in_df) os << w.in_df->str() << " cat ";
    os << w.in_hi.str() << ", " << w.in_lo.str() << ")  out=(" << w.out_df.str()
       << ", " << w.out_f.str() << ")\n";
  }
  for (std::size_t layer = 0; layer < aim_counts.size(); ++layer)
    os << "lateral P" << layer << " <- dF" << layer << "_1\n";
  return os.str();
}

ScheduleComparison compare_with_overlap_variant(std::size_t num_inputs) {
  ScheduleComparison c;
  DecodeSchedule s = DecodeSchedule::build(num_inputs);
  c.shrinkage_layers = s.aim_counts.size();
  c.shrinkage_aims = s.aims.size();
  // Overlapping pairwise aggregation: k features shrink to k-1 per layer.
  for (std::size_t k = num_inputs; k > 1; --k) {
    c.overlap_layers += 1;
    c.overlap_aims += k - 1;
  }
  return c;
}

Cbr::Cbr(const std::string& name, std::size_t cin, std::size_t cout,
         std::size_t kernel, Rng& rng)
    : w(make_param_kaiming(name + ".conv.w", {cout, cin, kernel, kernel},
                           cin * kernel * kernel, rng)),
      b(make_param_const(name + ".conv.b", {cout}, 0.0)),
      bn(name + ".bn", cout) {}

Tensor Cbr::forward(const Tensor& x, bool training) {
  return relu(bn.forward(conv2d(x, w.tensor, b.tensor), training));
}

void Cbr::collect(std::vector<Parameter*>& out) {
  out.push_back(&w);
  out.push_back(&b);
  out.push_back(&bn.gamma);
  out.push_back(&bn.beta);
}

void Cbr::collect_buffers(
    std::vector<std::pair<std::string, std::vector<double>*>>& out) {
  bn.collect_buffers(out);
}

Aim::Aim(const std::string& name, std::size_t width, bool has_prev_, Rng& rng)
    : has_prev(has_prev_),
      fuse1(name + ".fuse1", has_prev_ ? 2 * width : width, width, 3, rng),
      fuse2(name + ".fuse2", 2 * width, width, 3, rng),
      out(name + ".out", width, width, 3, rng) {}

std::pair<Tensor, Tensor> Aim::forward(const std::optional<Tensor>& f_prev,
                                       const Tensor& f_i, const Tensor& f_im1,
                                       bool training) {
  if (f_prev.has_value() != has_prev) {
    throw ShapeError("aim: wired for " +
                     std::string(has_prev ? "a" : "no") +
                     " previous pass feature");
  }
  if (f_i.shape() != f_im1.shape()) {
    throw ShapeError("aim: feature pair sizes differ: " +
                     shape_str(f_i.shape()) + " vs " +
                     shape_str(f_im1.shape()));
  }
  if (f_prev && (f_prev->dim(1) != f_i.dim(1) || f_prev->dim(2) != f_i.dim(2))) {
    throw ShapeError("aim: pass feature " + shape_str(f_prev->shape()) +
                     " does not match pair " + shape_str(f_i.shape()));
  }
  Tensor inner = f_prev ? concat({*f_prev, f_i}, 0) : f_i;
  Tensor f_p = fuse2.forward(concat({fuse1.forward(inner, training), f_im1}, 0),
                             training);
  Tensor f_out = bilinear_upsample_2x(out.forward(f_p, training));
  return {f_p, f_out};
}

void Aim::collect(std::vector<Parameter*>& out_params) {
  fuse1.collect(out_params);
  fuse2.collect(out_params);
  out.collect(out_params);
}

void Aim::collect_buffers(
    std::vector<std::pair<std::string, std::vector<double>*>>& out_bufs) {
  fuse1.collect_buffers(out_bufs);
  fuse2.collect_buffers(out_bufs);
  out.collect_buffers(out_bufs);
}

LateralHead::LateralHead(const std::string& name, std::size_t width)
    : w(make_param_const(name + ".w", {1, width, 1, 1}, 0.0)),
      b(make_param_const(name + ".b", {1}, 0.0)) {}

LateralPrediction LateralHead::forward(const Tensor& df, std::size_t target_h,
                                       std::size_t target_w) const {
  LateralPrediction p;
  p.logits = bilinear_upsample_2x(conv2d(df, w.tensor, b.tensor));
  p.prob = bilinear_resize(sigmoid(p.logits), target_h, target_w);
  return p;
}

void LateralHead::collect(std::vector<Parameter*>& out) {
  out.push_back(&w);
  out.push_back(&b);
}

Decoder::Decoder(const std::string& name, std::size_t in_channels_,
                 std::size_t width_, Rng& rng)
    : in_channels(in_channels_),
      width(width_),
      schedule(DecodeSchedule::build(12)) {
  for (std::size_t i = 0; i < 12; ++i) {
    adapter_w.push_back(make_param_kaiming(
        name + ".adapter" + std::to_string(i + 1) + ".w",
        {width, in_channels, 1, 1}, in_channels, rng));
    adapter_b.push_back(make_param_const(
        name + ".adapter" + std::to_string(i + 1) + ".b", {width}, 0.0));
  }
  for (const AimWiring& wiring : schedule.aims) {
    aims.emplace_back(name + ".layer" + std::to_string(wiring.layer) + ".aim" +
                          std::to_string(wiring.n),
                      width, wiring.in_df.has_value(), rng);
  }
  for (std::size_t layer = 0; layer < schedule.aim_counts.size(); ++layer)
    heads.emplace_back(name + ".head" + std::to_string(layer), width);
}

std::array<LateralPrediction, 4> Decoder::decode(
    const std::vector<Tensor>& features, std::size_t target_h,
    std::size_t target_w, bool training, DecodeTrace* trace) {
  if (features.size() != 12) {
    throw ShapeError("decode: expected 12 features, got " +
                     std::to_string(features.size()));
  }
  auto key = [](const FeatureRef& r) {
    return r.gen * 1000 + r.index * 2 + (r.is_df ? 1 : 0);
  };
  std::map<std::size_t, Tensor> pool;
  for (std::size_t i = 0; i < 12; ++i) {
    const Tensor& f = features[i];
    if (f.rank() != 3 || f.dim(0) != in_channels) {
      throw ShapeError("decode: feature " + std::to_string(i + 1) + " is " +
                       shape_str(f.shape()) + ", expected " +
                       std::to_string(in_channels) + " channels");
    }
    pool.emplace(key(FeatureRef{0, i + 1, false}),
                 conv2d(f, adapter_w[i].tensor, adapter_b[i].tensor));
  }

  std::array<LateralPrediction, 4> laterals;
  for (std::size_t ai = 0; ai < schedule.aims.size(); ++ai) {
    const AimWiring& wiring = schedule.aims[ai];
    std::optional<Tensor> prev;
    if (wiring.in_df) prev = pool.at(key(*wiring.in_df));
    auto [f_p, f_out] = aims[ai].forward(prev, pool.at(key(wiring.in_hi)),
                                         pool.at(key(wiring.in_lo)), training);
    pool.emplace(key(wiring.out_df), f_p);
    pool.emplace(key(wiring.out_f), f_out);
    if (trace) ++trace->aim_invocations;
    if (wiring.n == 1) {
      laterals[wiring.layer] = heads[wiring.layer].forward(
          pool.at(key(FeatureRef{wiring.layer, 1, true})), target_h, target_w);
      if (trace)
        trace->lateral_logit_shapes.push_back(laterals[wiring.layer].logits.shape());
    }
  }
  return laterals;
}

void Decoder::collect(std::vector<Parameter*>& out) {
  for (std::size_t i = 0; i < adapter_w.size(); ++i) {
    out.push_back(&adapter_w[i]);
    out.push_back(&adapter_b[i]);
  }
  for (Aim& a : aims) a.collect(out);
  for (LateralHead& h : heads) h.collect(out);
}

void Decoder::collect_buffers(
    std::vector<std::pair<std::string, std::vector<double>*>>& out) {
  for (Aim& a : aims) a.collect_buffers(out);
}

}  // namespace fspnet
