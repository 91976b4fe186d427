// optounet: phantom generation, training, evaluation, inference and
// parameter tables from the command line.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "optounet/error.hpp"
#include "optounet/io.hpp"
#include "optounet/kv_config.hpp"
#include "optounet/model.hpp"
#include "optounet/parallel.hpp"
#include "optounet/phantom.hpp"
#include "optounet/train.hpp"

namespace fs = std::filesystem;
using namespace optounet;

namespace {

struct Globals {
  std::uint64_t seed = 42;
  std::string config;
  std::size_t threads = 1;
};

KeyValues config_file(const Globals& g) { return g.config.empty() ? KeyValues{} : read_kv_file(g.config); }

// One row per layer: tensors sharing a name up to the last '.' are summed.
void print_params(const Model<float>& m) {
  const std::string name = to_string(m.config().variant);
  std::vector<std::pair<std::string, std::size_t>> layers;
  for (const auto& p : m.params()) {
    const std::string layer = p.name.substr(0, p.name.rfind('.'));
    if (layers.empty() || layers.back().first != layer) layers.emplace_back(layer, 0);
    layers.back().second += p.value.size();
  }
  std::printf("%-40s %12s\n", "layer", "parameters");
  for (const auto& [layer, count] : layers) std::printf("%-40s %12zu\n", (name + ":" + layer).c_str(), count);
  const auto total = count_params(m);
  std::printf("%s total %zu (%.2fM)\n\n", name.c_str(), total, static_cast<double>(total) / 1e6);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Opto-UNet segmentation toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--seed", g.seed, "Random seed");
  app.add_option("--config", g.config, "key=value configuration file")->check(CLI::ExistingFile);
  app.add_option("--threads", g.threads, "Worker threads for batch-parallel convolution")->check(CLI::PositiveNumber);

  // gen-phantom
  auto* gen = app.add_subcommand("gen-phantom", "Write a synthetic vein-wall phantom dataset");
  std::string gen_out = "phantoms";
  PhantomParams phantom;
  bool no_speckle = false, no_annulus = false;
  gen->add_option("--out", gen_out, "Output directory");
  gen->add_option("--count", phantom.count, "Number of image/mask pairs");
  gen->add_option("--height", phantom.height, "Image height");
  gen->add_option("--width", phantom.width, "Image width");
  gen->add_flag("--no-speckle", no_speckle, "Disable multiplicative speckle");
  gen->add_flag("--no-annulus", no_annulus, "Flat background only (always rejected)");

  // train
  auto* tr = app.add_subcommand("train", "Train a model on a phantom-style dataset");
  std::string tr_data, tr_out, tr_variant;
  std::size_t tr_epochs = 0, tr_batch = 0, tr_height = 0, tr_width = 0;
  double tr_lr = 0;
  tr->add_option("--data", tr_data, "Dataset directory (with manifest.csv)")->required()->check(CLI::ExistingDirectory);
  tr->add_option("--out", tr_out, "Run directory for curves and checkpoints");
  tr->add_option("--epochs", tr_epochs, "Epochs");
  tr->add_option("--batch-size", tr_batch, "Mini-batch size");
  tr->add_option("--variant", tr_variant, "opto or baseline")->check(CLI::IsMember({"opto", "baseline"}));
  tr->add_option("--lr", tr_lr, "RMSprop learning rate");
  tr->add_option("--height", tr_height, "Input height");
  tr->add_option("--width", tr_width, "Input width");

  // eval
  auto* ev = app.add_subcommand("eval", "Metrics of a checkpoint on one dataset split");
  std::string ev_ckpt, ev_data, ev_split = "test", ev_out;
  ev->add_option("--checkpoint", ev_ckpt, "Checkpoint file")->required()->check(CLI::ExistingFile);
  ev->add_option("--data", ev_data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  ev->add_option("--split", ev_split, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));
  ev->add_option("--out", ev_out, "Also write the metrics CSV here");

  // infer
  auto* inf = app.add_subcommand("infer", "Segment one image tensor");
  std::string inf_ckpt, inf_image, inf_out = "prediction";
  inf->add_option("--checkpoint", inf_ckpt, "Checkpoint file")->required()->check(CLI::ExistingFile);
  inf->add_option("--image", inf_image, "Image tensor file (.ot4)")->required()->check(CLI::ExistingFile);
  inf->add_option("--out", inf_out, "Output prefix for .prob.ot4, .mask.ot4 and .pgm");

  // params
  auto* pa = app.add_subcommand("params", "Per-tensor and total parameter counts");
  std::string pa_variant = "both";
  pa->add_option("--variant", pa_variant, "opto, baseline or both")->check(CLI::IsMember({"opto", "baseline", "both"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    set_thread_count(g.threads);

    if (*gen) {
      // flags given on the command line override the config file
      for (const auto& [key, value] : config_file(g)) {
        if (key == "count" && gen->count("--count") == 0) phantom.count = parse_size(key, value);
        else if (key == "height" && gen->count("--height") == 0) phantom.height = parse_size(key, value);
        else if (key == "width" && gen->count("--width") == 0) phantom.width = parse_size(key, value);
        else if (key == "speckle" && !no_speckle) phantom.speckle = parse_bool(key, value);
        else if (key == "annulus" && !no_annulus) phantom.annulus = parse_bool(key, value);
        else if (key == "out" && gen->count("--out") == 0) gen_out = value;
      }
      if (no_speckle) phantom.speckle = false;
      if (no_annulus) phantom.annulus = false;
      const auto entries = gen_phantom(g.seed, phantom, gen_out);
      const auto sizes = default_split(entries.size());
      std::printf("wrote %zu phantoms (%zu train / %zu val / %zu test) to %s\n", entries.size(), sizes.train,
                  sizes.val, sizes.test, gen_out.c_str());
    } else if (*tr) {
      TrainConfig cfg;
      cfg.seed = g.seed;
      cfg.apply(config_file(g));
      if (app.count("--seed")) cfg.seed = g.seed;
      KeyValues flags;
      if (!tr_variant.empty()) flags.emplace_back("variant", tr_variant);
      if (tr->count("--epochs")) flags.emplace_back("epochs", std::to_string(tr_epochs));
      if (tr->count("--batch-size")) flags.emplace_back("batch_size", std::to_string(tr_batch));
      if (tr->count("--height")) flags.emplace_back("height", std::to_string(tr_height));
      if (tr->count("--width")) flags.emplace_back("width", std::to_string(tr_width));
      cfg.apply(flags);
      if (tr->count("--lr")) cfg.lr = tr_lr;
      cfg.data_dir = tr_data;
      if (!tr_out.empty()) cfg.out_dir = tr_out;
      const auto res = train(cfg, &std::cout);
      std::printf("best epoch %zu val_loss=%.6f; outputs in %s\n", res.best_epoch, res.best_val_loss,
                  cfg.out_dir.string().c_str());
    } else if (*ev) {
      const auto ck = load_checkpoint<float>(ev_ckpt);
      const auto report = evaluate(ck, ev_data, parse_split(ev_split));
      const std::string csv = format_metrics(report);
      std::fputs(csv.c_str(), stdout);
      if (!ev_out.empty()) write_file(ev_out, Bytes(csv.begin(), csv.end()));
    } else if (*inf) {
      auto model = restore_model(load_checkpoint<float>(inf_ckpt));
      const auto image = load_tensor<float>(inf_image);
      write_infer_outputs(inf_out, infer(model, image));
      std::printf("wrote %s.prob.ot4, %s.mask.ot4, %s.pgm\n", inf_out.c_str(), inf_out.c_str(), inf_out.c_str());
    } else if (*pa) {
      if (pa_variant != "baseline") {
        print_params(build_opto_unet<float>(ModelConfig::opto_default(), g.seed, Init::Shapes));
      }
      if (pa_variant != "opto") {
        print_params(build_baseline_unet<float>(ModelConfig::baseline_default(), g.seed, Init::Shapes));
      }
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
