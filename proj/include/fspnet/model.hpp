#pragma once

#include <memory>
#include <string>
#include <vector>

#include "fspnet/config.hpp"
#include "fspnet/fsd.hpp"
#include "fspnet/loss.hpp"
#include "fspnet/metrics.hpp"
#include "fspnet/nl_tem.hpp"

namespace fspnet {

/// Ablation variants: backbone with a flat fusion head (b12), backbone plus
/// shrinkage decoder (b12d), and the full model with token enhancement.
enum class Variant { b12, b12d, full };

std::string variant_name(Variant v);
Variant variant_from_name(const std::string& name);

struct ForwardResult {
  std::vector<LateralPrediction> laterals;  // 4 for decoder variants, 1 for b12
  DecodeTrace trace;
};

struct Model {
  ModelConfig cfg;
  Variant variant = Variant::full;
  bool training_mode = true;

  Encoder encoder;
  std::vector<NlTem> nltems;           // full: one per adjacent layer pair
  Decoder decoder;                     // b12d / full
  Parameter baseline_w, baseline_b;    // b12 fusion head (zero-init)

  explicit Model(const ModelConfig& cfg, Variant variant = Variant::full);

  std::vector<Parameter*> parameters();
  std::vector<std::pair<std::string, std::vector<double>*>> buffers();

  void set_training(bool training) { training_mode = training; }

  ForwardResult forward(const Tensor& image);

  /// Deep-supervision loss for decoder variants, plain bce for b12.
  Tensor compute_loss(const ForwardResult& result, const Tensor& ground_truth);

  /// Eval-mode, graph-free probability map (the final prediction P3).
  ScoreMap predict(const Tensor& image);

  /// All four lateral probability maps (decoder variants only).
  std::vector<ScoreMap> predict_laterals(const Tensor& image);
};

Tensor mask_to_tensor(const BinaryMask& mask);  // 1 x h x w

}  // namespace fspnet
