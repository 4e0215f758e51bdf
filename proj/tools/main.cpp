#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fspnet/data.hpp"
#include "fspnet/errors.hpp"
#include "fspnet/image_io.hpp"
#include "fspnet/model.hpp"
#include "fspnet/train.hpp"

namespace fs = std::filesystem;
using namespace fspnet;

namespace {

int cmd_gen(std::size_t count, std::size_t size, std::uint64_t seed,
            const std::string& out_dir) {
  auto samples = gen_synthetic(count, size, size, seed);
  save_dataset(out_dir, samples);
  std::printf("wrote %zu samples (%zux%zu, seed %llu) to %s\n", samples.size(),
              size, size, static_cast<unsigned long long>(seed),
              out_dir.c_str());
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& data_dir,
              const std::string& out_dir, std::size_t ckpt_every,
              bool no_augment, bool quiet) {
  ModelConfig cfg = load_config(config_path);
  auto data = load_dataset(data_dir);
  Model model(cfg);
  AdamState adam;
  Rng rng(cfg.seed);
  TrainOptions opts;
  opts.out_dir = out_dir;
  opts.checkpoint_every = ckpt_every;
  opts.augment = !no_augment;
  opts.verbose = !quiet;
  TrainResult result = train(model, data, adam, rng, opts);
  std::printf("trained %zu steps over %zu epochs; final loss %.6g\n",
              result.steps, result.epochs_run,
              result.loss_trace.empty() ? 0.0 : result.loss_trace.back());
  std::printf("checkpoint: %s\n",
              (fs::path(out_dir) / "checkpoint_final.ckpt").string().c_str());
  return 0;
}

std::vector<std::string> list_images(const std::string& dir) {
  if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir);
  std::vector<std::string> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if ((has_suffix(name, ".png") || has_suffix(name, ".pgm")) &&
        name.rfind("mask_", 0) != 0 && name.rfind("pred_", 0) != 0)
      files.push_back(name);
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw DataError("no images found in " + dir);
  return files;
}

int cmd_predict(const std::string& ckpt_path, const std::string& images_dir,
                const std::string& out_dir, bool dump_laterals) {
  LoadedCheckpoint loaded = load_checkpoint(ckpt_path);
  Model& model = *loaded.model;
  fs::create_directories(out_dir);
  for (const std::string& name : list_images(images_dir)) {
    Tensor image = load_image_rgb((fs::path(images_dir) / name).string());
    const std::string stem = name.substr(0, name.find_last_of('.'));
    if (dump_laterals && model.variant != Variant::b12) {
      auto maps = model.predict_laterals(image);
      for (std::size_t i = 0; i + 1 < maps.size(); ++i) {
        save_score((fs::path(out_dir) /
                    ("pred_" + stem + "_p" + std::to_string(i) + ".png"))
                       .string(),
                   maps[i]);
      }
      save_score((fs::path(out_dir) / ("pred_" + stem + ".png")).string(),
                 maps.back());
    } else {
      save_score((fs::path(out_dir) / ("pred_" + stem + ".png")).string(),
                 model.predict(image));
    }
  }
  std::printf("predictions written to %s\n", out_dir.c_str());
  return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_dir,
             const std::string& report_path) {
  LoadedCheckpoint loaded = load_checkpoint(ckpt_path);
  Model& model = *loaded.model;
  auto data = load_dataset(data_dir);
  std::vector<std::pair<ScoreMap, BinaryMask>> pairs;
  std::vector<std::string> names;
  for (const DatasetPair& sample : data) {
    pairs.emplace_back(model.predict(sample.image), sample.mask);
    names.push_back(sample.name);
  }
  MetricReport report = evaluate_dataset(pairs, &names);

  std::string csv = report_path, json = report_path;
  if (has_suffix(report_path, ".csv")) {
    json = report_path.substr(0, report_path.size() - 4) + ".json";
  } else if (has_suffix(report_path, ".json")) {
    csv = report_path.substr(0, report_path.size() - 5) + ".csv";
  } else {
    csv += ".csv";
    json += ".json";
  }
  write_report_csv(report, csv);
  write_report_json(report, json);
  const MetricValues& a = report.aggregate;
  std::printf("images %zu  mae %.4f  s %.4f  f_adp %.4f  f_mean %.4f  "
              "f_max %.4f  wf %.4f  e_adp %.4f  e_mean %.4f  e_max %.4f\n",
              report.per_image.size(), a.mae, a.s_measure, a.f_adaptive,
              a.f_mean, a.f_max, a.weighted_f, a.e_adaptive, a.e_mean, a.e_max);
  std::printf("report: %s, %s\n", csv.c_str(), json.c_str());
  return 0;
}

int cmd_schedule() {
  std::fputs(DecodeSchedule::build(12).dump().c_str(), stdout);
  const ScheduleComparison cmp = compare_with_overlap_variant(12);
  std::printf("overlapping pairwise variant for comparison: %zu layers, %zu "
              "AIMs\n",
              cmp.overlap_layers, cmp.overlap_aims);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"camouflaged object detection: training, evaluation and "
               "synthetic data tooling"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen", "generate a synthetic dataset");
  std::size_t gen_count = 8, gen_size = 96;
  std::uint64_t gen_seed = 7;
  std::string gen_out;
  gen->add_option("--count", gen_count, "number of samples");
  gen->add_option("--size", gen_size, "square image size in pixels");
  gen->add_option("--seed", gen_seed, "generator seed");
  gen->add_option("--out", gen_out, "output directory")->required();

  auto* tr = app.add_subcommand("train", "train on an image/mask directory");
  std::string tr_config, tr_data, tr_out;
  std::size_t tr_ckpt_every = 50;
  bool tr_no_augment = false, tr_quiet = false;
  tr->add_option("--config", tr_config, "config file")->required();
  tr->add_option("--data", tr_data, "dataset directory")->required();
  tr->add_option("--out", tr_out, "output directory")->required();
  tr->add_option("--ckpt-every", tr_ckpt_every,
                 "periodic checkpoint interval in epochs (0 disables)");
  tr->add_flag("--no-augment", tr_no_augment, "disable flip augmentation");
  tr->add_flag("--quiet", tr_quiet, "suppress per-step loss lines");

  auto* pr = app.add_subcommand("predict", "write probability maps");
  std::string pr_ckpt, pr_images, pr_out;
  bool pr_laterals = false;
  pr->add_option("--ckpt", pr_ckpt, "checkpoint file")->required();
  pr->add_option("--images", pr_images, "input image directory")->required();
  pr->add_option("--out", pr_out, "output directory")->required();
  pr->add_flag("--dump-laterals", pr_laterals, "also write P0..P2");

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  std::string ev_ckpt, ev_data, ev_report;
  ev->add_option("--ckpt", ev_ckpt, "checkpoint file")->required();
  ev->add_option("--data", ev_data, "dataset directory")->required();
  ev->add_option("--report", ev_report, "report path (.csv/.json)")->required();

  auto* sc = app.add_subcommand("schedule", "print the decoder wiring table");
  bool sc_dump = false;
  sc->add_flag("--dump", sc_dump, "print the full wiring table");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (gen->parsed()) return cmd_gen(gen_count, gen_size, gen_seed, gen_out);
    if (tr->parsed())
      return cmd_train(tr_config, tr_data, tr_out, tr_ckpt_every,
                       tr_no_augment, tr_quiet);
    if (pr->parsed()) return cmd_predict(pr_ckpt, pr_images, pr_out, pr_laterals);
    if (ev->parsed()) return cmd_eval(ev_ckpt, ev_data, ev_report);
    if (sc->parsed()) return cmd_schedule();
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 3;
  } catch (const DivergenceError& e) {
    std::fprintf(stderr, "divergence: %s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
