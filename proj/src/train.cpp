#include "fspnet/train.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "fspnet/errors.hpp"

namespace fs = std::filesystem;

namespace fspnet {

void AdamState::init(const std::vector<Parameter*>& params) {
  if (m.size() == params.size()) return;
  m.clear();
  v.clear();
  for (const Parameter* p : params) {
    m.emplace_back(p->tensor.size(), 0.0);
    v.emplace_back(p->tensor.size(), 0.0);
  }
  t = 0;
}

void AdamState::step(const std::vector<Parameter*>& params, double lr) {
  if (m.size() != params.size()) {
    throw std::logic_error("adam: optimizer state does not match parameters");
  }
  ++t;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Parameter& p = *params[pi];
    const std::vector<double>& g = p.tensor.grad();
    std::vector<double>& val = p.tensor.mutable_values();
    for (std::size_t i = 0; i < val.size(); ++i) {
      m[pi][i] = beta1 * m[pi][i] + (1.0 - beta1) * g[i];
      v[pi][i] = beta2 * v[pi][i] + (1.0 - beta2) * g[i] * g[i];
      const double mhat = m[pi][i] / bc1;
      const double vhat = v[pi][i] / bc2;
      val[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

double lr_at_epoch(const ModelConfig& cfg, std::size_t epoch) {
  const std::size_t drops = epoch / cfg.lr_decay_epochs;
  return cfg.learning_rate / std::pow(cfg.lr_decay_factor,
                                      static_cast<double>(drops));
}

namespace {

// Joint horizontal flip of an image tensor and mask.
void flip_horizontal(std::vector<double>& image, std::size_t c, std::size_t h,
                     std::size_t w) {
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h; ++y) {
      double* row = image.data() + (ch * h + y) * w;
      for (std::size_t x = 0; x < w / 2; ++x) std::swap(row[x], row[w - 1 - x]);
    }
}

}  // namespace

TrainResult train(Model& model, const std::vector<DatasetPair>& data,
                  AdamState& adam, Rng& rng, const TrainOptions& opts) {
  if (data.empty()) throw DataError("train: empty dataset");
  const ModelConfig& cfg = model.cfg;
  std::vector<Parameter*> params = model.parameters();
  adam.init(params);
  model.set_training(true);

  TrainResult result;
  if (!opts.out_dir.empty()) fs::create_directories(opts.out_dir);
  auto save_epoch_ckpt = [&](std::size_t epoch, const char* tag) {
    if (opts.out_dir.empty()) return;
    char name[64];
    std::snprintf(name, sizeof(name), "checkpoint_%s.ckpt", tag);
    save_checkpoint((fs::path(opts.out_dir) / name).string(), model, adam,
                    epoch, rng.state());
  };

  bool done = false;
  std::size_t epoch = 0;
  for (; epoch < cfg.epochs && !done; ++epoch) {
    const double lr = lr_at_epoch(cfg, epoch);
    for (std::size_t start = 0; start < data.size() && !done;
         start += cfg.batch_size) {
      const std::size_t batch_n =
          std::min(cfg.batch_size, data.size() - start);
      for (Parameter* p : params) p->tensor.zero_grad();
      double batch_loss = 0.0;
      for (std::size_t bi = 0; bi < batch_n; ++bi) {
        const DatasetPair& sample = data[start + bi];
        std::vector<double> image = sample.image.values();
        Tensor gt = mask_to_tensor(sample.mask);
        if (opts.augment && rng.next_uniform() < 0.5) {
          const std::size_t h = sample.image.dim(1), w = sample.image.dim(2);
          flip_horizontal(image, sample.image.dim(0), h, w);
          std::vector<double> gv = gt.values();
          flip_horizontal(gv, 1, h, w);
          gt = Tensor::from_data({1, h, w}, std::move(gv));
        }
        Tensor input = Tensor::from_data(sample.image.shape(), std::move(image));
        ForwardResult fwd = model.forward(input);
        Tensor loss = model.compute_loss(fwd, gt);
        const double lv = loss.item();
        if (!std::isfinite(lv)) {
          throw DivergenceError("train: non-finite loss at step " +
                                std::to_string(result.steps + 1));
        }
        loss.backward();
        batch_loss += lv;
      }
      // Mean-over-batch objective: average the accumulated gradients.
      const double inv_batch = 1.0 / static_cast<double>(batch_n);
      for (Parameter* p : params)
        for (double& gv : p->tensor.mutable_grad()) gv *= inv_batch;
      adam.step(params, lr);
      batch_loss *= inv_batch;
      result.loss_trace.push_back(batch_loss);
      ++result.steps;
      if (opts.verbose) {
        std::printf("step %zu epoch %zu lr %.3e loss %.17g\n", result.steps,
                    epoch, lr, batch_loss);
      }
      if (opts.max_steps && result.steps >= opts.max_steps) done = true;
    }
    if (opts.checkpoint_every && (epoch + 1) % opts.checkpoint_every == 0 &&
        epoch + 1 < cfg.epochs) {
      char tag[32];
      std::snprintf(tag, sizeof(tag), "epoch%04zu", epoch + 1);
      save_epoch_ckpt(epoch + 1, tag);
    }
  }
  result.epochs_run = epoch;
  save_epoch_ckpt(epoch, "final");
  if (!opts.out_dir.empty()) {
    write_loss_trace((fs::path(opts.out_dir) / "loss_trace.csv").string(),
                     result);
  }
  return result;
}

void write_loss_trace(const std::string& path, const TrainResult& result) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write loss trace: " + path);
  out << "step,loss\n";
  char buf[32];
  for (std::size_t i = 0; i < result.loss_trace.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.17g", result.loss_trace[i]);
    out << (i + 1) << ',' << buf << '\n';
  }
}

// ---------------------------------------------------------------------------
// checkpoints
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'F', 'S', 'P', 'N', 'E', 'T', '0', '1'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ofstream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
void put_u64(std::ofstream& out, std::uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
void put_string(std::ofstream& out, const std::string& s) {
  put_u64(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}
void put_doubles(std::ofstream& out, const std::vector<double>& v) {
  put_u64(out, v.size());
  out.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
}

std::uint32_t get_u32(std::ifstream& in) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}
std::uint64_t get_u64(std::ifstream& in) {
  std::uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}
std::string get_string(std::ifstream& in) {
  const std::uint64_t n = get_u64(in);
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  return s;
}
std::vector<double> get_doubles(std::ifstream& in) {
  const std::uint64_t n = get_u64(in);
  std::vector<double> v(n);
  in.read(reinterpret_cast<char*>(v.data()),
          static_cast<std::streamsize>(n * sizeof(double)));
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, Model& model,
                     const AdamState& adam, std::size_t epoch,
                     std::uint64_t rng_state) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("checkpoint: cannot write " + path);
  out.write(kMagic, sizeof(kMagic));
  put_u32(out, kVersion);
  put_string(out, serialize_config(model.cfg));
  put_string(out, variant_name(model.variant));
  put_u64(out, epoch);
  put_u64(out, rng_state);
  put_u64(out, adam.t);

  std::vector<Parameter*> params = model.parameters();
  const bool has_adam = adam.m.size() == params.size();
  put_u64(out, params.size());
  put_u32(out, has_adam ? 1 : 0);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Parameter& p = *params[i];
    put_string(out, p.name);
    put_string(out, p.init_spec);
    const Shape& s = p.tensor.shape();
    put_u64(out, s.size());
    for (std::size_t d : s) put_u64(out, d);
    put_doubles(out, p.tensor.values());
    if (has_adam) {
      put_doubles(out, adam.m[i]);
      put_doubles(out, adam.v[i]);
    }
  }
  auto buffers = model.buffers();
  put_u64(out, buffers.size());
  for (const auto& [name, buf] : buffers) {
    put_string(out, name);
    put_doubles(out, *buf);
  }
  if (!out) throw DataError("checkpoint: failed writing " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("checkpoint: cannot open " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw DataError("checkpoint: bad magic in " + path);
  }
  if (get_u32(in) != kVersion) {
    throw DataError("checkpoint: unsupported format version in " + path);
  }
  LoadedCheckpoint loaded;
  ModelConfig cfg;
  try {
    cfg = parse_config_text(get_string(in));
  } catch (const ConfigError& e) {
    throw DataError("checkpoint: bad embedded config: " + std::string(e.what()));
  }
  const Variant variant = variant_from_name(get_string(in));
  loaded.epoch = get_u64(in);
  loaded.rng_state = get_u64(in);
  loaded.adam.t = get_u64(in);
  loaded.model = std::make_unique<Model>(cfg, variant);

  std::vector<Parameter*> params = loaded.model->parameters();
  const std::uint64_t n_params = get_u64(in);
  const bool has_adam = get_u32(in) != 0;
  if (n_params != params.size()) {
    throw DataError("checkpoint: parameter count mismatch in " + path);
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = *params[i];
    const std::string name = get_string(in);
    const std::string init_spec = get_string(in);
    const std::uint64_t rank = get_u64(in);
    Shape shape(rank);
    for (auto& d : shape) d = get_u64(in);
    if (name != p.name || shape != p.tensor.shape()) {
      throw DataError("checkpoint: parameter '" + name +
                      "' does not match model parameter '" + p.name + "' (" +
                      shape_str(shape) + " vs " + shape_str(p.tensor.shape()) +
                      ")");
    }
    std::vector<double> data = get_doubles(in);
    if (data.size() != p.tensor.size()) {
      throw DataError("checkpoint: data size mismatch for " + name);
    }
    p.tensor.mutable_values() = std::move(data);
    p.init_spec = init_spec;
    if (has_adam) {
      loaded.adam.m.push_back(get_doubles(in));
      loaded.adam.v.push_back(get_doubles(in));
    }
  }
  auto buffers = loaded.model->buffers();
  const std::uint64_t n_buffers = get_u64(in);
  if (n_buffers != buffers.size()) {
    throw DataError("checkpoint: buffer count mismatch in " + path);
  }
  for (auto& [name, buf] : buffers) {
    const std::string stored = get_string(in);
    std::vector<double> data = get_doubles(in);
    if (stored != name || data.size() != buf->size()) {
      throw DataError("checkpoint: buffer '" + stored +
                      "' does not match model buffer '" + name + "'");
    }
    *buf = std::move(data);
  }
  if (!in) throw DataError("checkpoint: truncated file " + path);
  return loaded;
}

}  // namespace fspnet
