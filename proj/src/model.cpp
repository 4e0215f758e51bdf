#include "fspnet/model.hpp"

#include "fspnet/errors.hpp"

namespace fspnet {

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::b12: return "b12";
    case Variant::b12d: return "b12d";
    case Variant::full: return "full";
  }
  return "full";
}

Variant variant_from_name(const std::string& name) {
  if (name == "b12") return Variant::b12;
  if (name == "b12d") return Variant::b12d;
  if (name == "full") return Variant::full;
  throw ConfigError("unknown model variant '" + name + "'");
}

Model::Model(const ModelConfig& config, Variant variant_)
    : cfg(config), variant(variant_) {
  cfg.validate();
  Rng rng(cfg.seed);
  encoder = Encoder(cfg.encoder, rng);
  if (variant == Variant::full) {
    const std::size_t pairs = cfg.encoder.num_layers / 2;
    for (std::size_t j = 0; j < pairs; ++j)
      nltems.emplace_back("nl_tem" + std::to_string(j + 1),
                          cfg.encoder.embed_dim, cfg.n_vertices, rng);
  }
  if (variant != Variant::b12) {
    decoder = Decoder("decoder", cfg.encoder.embed_dim, cfg.decoder_width, rng);
  } else {
    baseline_w = make_param_const(
        "baseline_head.w",
        {1, cfg.encoder.num_layers * cfg.encoder.embed_dim, 1, 1}, 0.0);
    baseline_b = make_param_const("baseline_head.b", {1}, 0.0);
  }
}

std::vector<Parameter*> Model::parameters() {
  std::vector<Parameter*> out;
  encoder.collect(out);
  for (NlTem& t : nltems) t.collect(out);
  if (variant != Variant::b12) {
    decoder.collect(out);
  } else {
    out.push_back(&baseline_w);
    out.push_back(&baseline_b);
  }
  return out;
}

std::vector<std::pair<std::string, std::vector<double>*>> Model::buffers() {
  std::vector<std::pair<std::string, std::vector<double>*>> out;
  if (variant != Variant::b12) decoder.collect_buffers(out);
  return out;
}

ForwardResult Model::forward(const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != cfg.encoder.image_c ||
      image.dim(1) != cfg.encoder.image_h || image.dim(2) != cfg.encoder.image_w) {
    throw DataError("forward: image " + shape_str(image.shape()) +
                    " does not match configured size " +
                    std::to_string(cfg.encoder.image_c) + "x" +
                    std::to_string(cfg.encoder.image_h) + "x" +
                    std::to_string(cfg.encoder.image_w));
  }
  std::vector<TokenSequence> token_layers = encoder.encode(image);
  const std::size_t target_h = cfg.encoder.image_h;
  const std::size_t target_w = cfg.encoder.image_w;

  ForwardResult result;
  if (variant == Variant::b12) {
    // Flat fusion baseline: reshape every layer, concatenate, collapse.
    std::vector<Tensor> features;
    features.reserve(token_layers.size());
    for (const TokenSequence& t : token_layers)
      features.push_back(deserialize_tokens(t));
    Tensor stacked = concat(features, 0);
    LateralPrediction p;
    p.logits = conv2d(stacked, baseline_w.tensor, baseline_b.tensor);
    p.prob = bilinear_resize(sigmoid(p.logits), target_h, target_w);
    result.laterals.push_back(p);
    return result;
  }

  std::vector<Tensor> features(token_layers.size());
  if (variant == Variant::full) {
    for (std::size_t j = 0; j < nltems.size(); ++j) {
      auto [o1, o2] =
          nltems[j].forward(token_layers[2 * j], token_layers[2 * j + 1]);
      features[2 * j] = o1;
      features[2 * j + 1] = o2;
    }
  } else {
    for (std::size_t k = 0; k < token_layers.size(); ++k)
      features[k] = deserialize_tokens(token_layers[k]);
  }
  auto laterals =
      decoder.decode(features, target_h, target_w, training_mode, &result.trace);
  result.laterals.assign(laterals.begin(), laterals.end());
  return result;
}

Tensor Model::compute_loss(const ForwardResult& result,
                           const Tensor& ground_truth) {
  if (variant == Variant::b12) {
    for (double v : ground_truth.values()) {
      if (v != 0.0 && v != 1.0)
        throw ShapeError("compute_loss: ground truth is not binary");
    }
    return bce(result.laterals.at(0).prob, ground_truth);
  }
  SupervisionBundle bundle;
  for (std::size_t i = 0; i < 4; ++i)
    bundle.predictions[i] = result.laterals.at(i).prob;
  bundle.ground_truth = ground_truth;
  return total_loss(bundle);
}

namespace {

ScoreMap tensor_to_score(const Tensor& prob) {
  ScoreMap m{prob.dim(1), prob.dim(2), {}};
  m.v = prob.values();
  return m;
}

}  // namespace

ScoreMap Model::predict(const Tensor& image) {
  NoGradGuard no_grad;
  const bool was_training = training_mode;
  training_mode = false;
  ForwardResult result = forward(image);
  training_mode = was_training;
  return tensor_to_score(result.laterals.back().prob);
}

std::vector<ScoreMap> Model::predict_laterals(const Tensor& image) {
  NoGradGuard no_grad;
  const bool was_training = training_mode;
  training_mode = false;
  ForwardResult result = forward(image);
  training_mode = was_training;
  std::vector<ScoreMap> maps;
  for (const LateralPrediction& p : result.laterals)
    maps.push_back(tensor_to_score(p.prob));
  return maps;
}

Tensor mask_to_tensor(const BinaryMask& mask) {
  std::vector<double> data(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i)
    data[i] = mask.v[i] ? 1.0 : 0.0;
  return Tensor::from_data({1, mask.h, mask.w}, std::move(data));
}

}  // namespace fspnet
