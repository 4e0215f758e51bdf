#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "fspnet/nn.hpp"
#include "fspnet/tensor.hpp"

namespace fspnet {

/// Identifies a feature flowing through the shrinkage pyramid. Generation g
/// covers F^g_n (inputs are generation 0); dF features belong to the layer
/// that produced them.
struct FeatureRef {
  std::size_t gen = 0;
  std::size_t index = 0;
  bool is_df = false;

  bool operator==(const FeatureRef&) const = default;
  std::string str() const;
};

struct AimWiring {
  std::size_t layer = 0;  // 0..3
  std::size_t n = 0;      // position within the layer, executed m..1
  FeatureRef in_hi, in_lo;
  std::optional<FeatureRef> in_df;  // previous AIM's same-layer pass
  FeatureRef out_df, out_f;
};

/// The 4-layer / 12-AIM wiring of the shrinkage pyramid. Fixed for 12
/// inputs; layer sizes [6, 3, 2, 1]. Layer 2 receives 3 features for its 2
/// AIMs, so pair indices clamp: hi = min(2n, k), lo = min(2n-1, hi-1).
struct DecodeSchedule {
  std::vector<std::size_t> aim_counts;
  std::vector<AimWiring> aims;  // execution order

  static DecodeSchedule build(std::size_t num_inputs);
  std::string dump() const;
};

/// AIM counts of this decoder vs the overlapping pairwise variant, for the
/// same input count (12 inputs: 4 layers / 12 AIMs vs 11 layers / 66 AIMs).
struct ScheduleComparison {
  std::size_t shrinkage_layers = 0, shrinkage_aims = 0;
  std::size_t overlap_layers = 0, overlap_aims = 0;
};
ScheduleComparison compare_with_overlap_variant(std::size_t num_inputs);

/// 3x3 conv + batch norm + ReLU.
struct Cbr {
  Parameter w, b;
  BatchNorm2d bn;

  Cbr() = default;
  Cbr(const std::string& name, std::size_t cin, std::size_t cout,
      std::size_t kernel, Rng& rng);
  Tensor forward(const Tensor& x, bool training);
  void collect(std::vector<Parameter*>& out);
  void collect_buffers(
      std::vector<std::pair<std::string, std::vector<double>*>>& out);
};

/// Adjacent interaction module: fuses a feature pair plus the previous
/// AIM's pass feature, emits the same-layer pass f_p and the upsampled
/// next-layer feature f_out.
struct Aim {
  bool has_prev = false;
  Cbr fuse1;  // (has_prev ? 2w : w) -> w
  Cbr fuse2;  // 2w -> w
  Cbr out;    // w -> w, then 2x upsampling

  Aim() = default;
  Aim(const std::string& name, std::size_t width, bool has_prev, Rng& rng);
  std::pair<Tensor, Tensor> forward(const std::optional<Tensor>& f_prev,
                                    const Tensor& f_i, const Tensor& f_im1,
                                    bool training);
  void collect(std::vector<Parameter*>& out);
  void collect_buffers(
      std::vector<std::pair<std::string, std::vector<double>*>>& out);
};

struct LateralPrediction {
  Tensor logits;  // 1 x 2g x 2g, native resolution of its layer's output
  Tensor prob;    // 1 x target_h x target_w, sigmoid of logits resized
};

/// 1x1 channel collapse (zero-init so an untrained model predicts 0.5
/// everywhere), 2x upsampling to the layer's output resolution, sigmoid,
/// then resize to the supervision resolution.
struct LateralHead {
  Parameter w, b;

  LateralHead() = default;
  LateralHead(const std::string& name, std::size_t width);
  LateralPrediction forward(const Tensor& df, std::size_t target_h,
                            std::size_t target_w) const;
  void collect(std::vector<Parameter*>& out);
};

struct DecodeTrace {
  std::size_t aim_invocations = 0;
  std::vector<Shape> lateral_logit_shapes;
};

/// Feature shrinkage decoder: per-input 1x1 adapters to the decoder width,
/// the 12-AIM schedule, and the four lateral heads.
struct Decoder {
  std::size_t in_channels = 0;
  std::size_t width = 0;
  DecodeSchedule schedule;
  std::vector<Parameter> adapter_w, adapter_b;
  std::vector<Aim> aims;            // schedule order
  std::vector<LateralHead> heads;   // one per layer

  Decoder() = default;
  Decoder(const std::string& name, std::size_t in_channels, std::size_t width,
          Rng& rng);

  /// features[k] is F_{k+1} (encoder layer k+1), each in_channels x g x g.
  std::array<LateralPrediction, 4> decode(const std::vector<Tensor>& features,
                                          std::size_t target_h,
                                          std::size_t target_w, bool training,
                                          DecodeTrace* trace = nullptr);

  void collect(std::vector<Parameter*>& out);
  void collect_buffers(
      std::vector<std::pair<std::string, std::vector<double>*>>& out);
};

}  // namespace fspnet
