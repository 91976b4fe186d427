#include "optounet/train.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>

#include "optounet/rmsprop.hpp"

namespace optounet {

void TrainConfig::apply(const KeyValues& kv) {
  for (const auto& [key, value] : kv) {
    if (key == "seed") seed = parse_u64(key, value);
    else if (key == "epochs") epochs = parse_size(key, value);
    else if (key == "batch_size") batch_size = parse_size(key, value);
    else if (key == "lr") lr = parse_double(key, value);
    else if (key == "rho") rho = parse_double(key, value);
    else if (key == "rms_eps") rms_eps = parse_double(key, value);
    else if (key == "loss_eps") dice.eps = parse_double(key, value);
    else if (key == "variant") {
      const Variant v = parse_variant(value);
      if (v != model.variant) {
        const auto h = model.height, w = model.width;
        model = v == Variant::Opto ? ModelConfig::opto_default() : ModelConfig::baseline_default();
        model.height = h;
        model.width = w;
      }
    } else if (key == "height") model.height = parse_size(key, value);
    else if (key == "width") model.width = parse_size(key, value);
    else if (key == "data") data_dir = value;
    else if (key == "out") out_dir = value;
    else throw ConfigError("unknown training config key '" + key + "'");
  }
}

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  if (epochs == 0) throw ConfigError("epochs must be >= 1");
  if (!(lr > 0) || !(rho >= 0 && rho < 1) || !(rms_eps > 0)) throw ConfigError("invalid RMSprop settings");
  dice.validate();
  model.validate();
  if (data_dir.empty()) throw ConfigError("no dataset directory given");
}

std::string format_curves(const std::vector<EpochStats>& rows) {
  std::string out(kCurvesHeader);
  out += '\n';
  char line[160];
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%zu,%.6f,%.6f,%.6f,%.6f\n", r.epoch, r.train_loss, r.val_loss, r.train_acc,
                  r.val_acc);
    out += line;
  }
  return out;
}

DatasetSplit load_split(const std::filesystem::path& data_dir, Split split) {
  DatasetSplit out;
  for (const auto& e : load_manifest(data_dir / kManifestName)) {
    if (e.split != split) continue;
    auto image = load_tensor<float>(data_dir / e.image_path);
    auto mask = load_tensor<float>(data_dir / e.mask_path);
    if (image.dims().n != 1 || mask.dims().n != 1 || mask.dims().c != 1 || image.dims().h != mask.dims().h ||
        image.dims().w != mask.dims().w) {
      throw FormatError("dataset: " + e.image_path + " / " + e.mask_path + " are not a (1,c,h,w) / (1,1,h,w) pair");
    }
    out.images.push_back(std::move(image));
    out.masks.push_back(std::move(mask));
  }
  return out;
}

namespace {

Tensor4<float> stack(const std::vector<Tensor4<float>>& items, const std::vector<std::size_t>& order,
                     std::size_t first, std::size_t count) {
  const Dims d = items[order[first]].dims();
  auto out = Tensor4<float>::zeros(Dims{count, d.c, d.h, d.w});
  for (std::size_t i = 0; i < count; ++i) {
    const auto& t = items[order[first + i]];
    if (t.dims() != d) throw ShapeError("dataset: mixed image extents within a batch");
    out.array().segment(i * d.image(), d.image()) = t.array();
  }
  return out;
}

std::uint64_t correct_pixels(const Tensor4<float>& prob, const Tensor4<float>& mask) {
  const auto c = confusion_counts(prob, mask);
  return c.tp + c.tn;
}

void check_extents(const DatasetSplit& split, const ModelConfig& model, const char* name) {
  for (const auto& img : split.images) {
    if (img.dims().c != model.in_channels || img.dims().h != model.height || img.dims().w != model.width) {
      throw ConfigError(std::string(name) + " split image dims " + img.dims().str() + " do not match model input (" +
                        std::to_string(model.in_channels) + "," + std::to_string(model.height) + "," +
                        std::to_string(model.width) + ")");
    }
  }
}

struct PassStats {
  double loss = 0;
  double acc = 0;
};

PassStats validation_pass(Model<float>& model, const DatasetSplit& split, std::size_t batch_size,
                          const DiceConfig& dice) {
  std::vector<std::size_t> order(split.size());
  std::iota(order.begin(), order.end(), 0);
  double loss_sum = 0;
  std::uint64_t correct = 0, pixels = 0;
  for (std::size_t first = 0; first < split.size(); first += batch_size) {
    const std::size_t count = std::min(batch_size, split.size() - first);
    Tape<float> tape;
    auto x = tape.constant(stack(split.images, order, first, count));
    auto y = tape.constant(stack(split.masks, order, first, count));
    auto out = model.forward(tape, x, BnMode::Infer);
    loss_sum += static_cast<double>(dice_loss(out, y, dice).value()[0]) * static_cast<double>(count);
    correct += correct_pixels(out.value(), y.value());
    pixels += y.value().size();
  }
  return PassStats{loss_sum / static_cast<double>(split.size()), static_cast<double>(correct) / pixels};
}

}  // namespace

TrainResult train(const TrainConfig& config, std::ostream* log) {
  config.validate();
  const auto train_set = load_split(config.data_dir, Split::Train);
  const auto val_set = load_split(config.data_dir, Split::Val);
  if (train_set.size() == 0) throw ConfigError("dataset has no training images");
  if (val_set.size() == 0) throw ConfigError("dataset has no validation images");
  check_extents(train_set, config.model, "train");
  check_extents(val_set, config.model, "val");

  std::error_code ec;
  std::filesystem::create_directories(config.out_dir, ec);
  if (!std::filesystem::is_directory(config.out_dir)) {
    throw IoError("cannot create output directory " + config.out_dir.string());
  }

  const std::size_t batch = std::min(config.batch_size, train_set.size());
  Model<float> model = build_model<float>(config.model, config.seed);
  RmspropState<float> opt(config.lr, config.rho, config.rms_eps);
  opt.init(model.params());
  Rng shuffle_rng(config.seed ^ 0x5851f42d4c957f2dULL);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);

  TrainResult result;
  bool have_initial = false;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle_rng.below(i)]);
    double loss_sum = 0;
    std::uint64_t correct = 0, pixels = 0;
    std::size_t batch_index = 0;
    for (std::size_t first = 0; first < order.size(); first += batch, ++batch_index) {
      const std::size_t count = std::min(batch, order.size() - first);
      Tape<float> tape;
      auto x = tape.constant(stack(train_set.images, order, first, count));
      auto y = tape.constant(stack(train_set.masks, order, first, count));
      std::vector<Var<float>> bound;
      auto out = model.forward(tape, x, BnMode::Train, &bound);
      if (!out.value().all_finite()) {
        throw DivergenceError("non-finite network output at epoch " + std::to_string(epoch) + ", batch " +
                              std::to_string(batch_index + 1));
      }
      auto loss = dice_loss(out, y, config.dice);
      const double lv = loss.value()[0];
      if (!std::isfinite(lv)) {
        throw DivergenceError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                              std::to_string(batch_index + 1));
      }
      if (!have_initial) {
        result.initial_train_loss = lv;
        have_initial = true;
      }
      loss_sum += lv * static_cast<double>(count);
      correct += correct_pixels(out.value(), y.value());
      pixels += y.value().size();

      auto grads = tape.backward(loss);
      std::vector<const Tensor4<float>*> gptr;
      gptr.reserve(bound.size());
      for (const auto& v : bound) gptr.push_back(grads.contains(v) ? &grads.at(v) : nullptr);
      rmsprop_step<float>(model.params(), gptr, opt);
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = loss_sum / static_cast<double>(order.size());
    stats.train_acc = static_cast<double>(correct) / static_cast<double>(pixels);
    const auto val = validation_pass(model, val_set, batch, config.dice);
    stats.val_loss = val.loss;
    stats.val_acc = val.acc;
    result.curves.push_back(stats);

    const std::string curves = format_curves(result.curves);
    write_file(config.out_dir / kCurvesName, Bytes(curves.begin(), curves.end()));
    const auto ck = make_checkpoint(model, &opt, static_cast<std::uint32_t>(epoch));
    if (epoch == 1 || stats.val_loss < result.best_val_loss) {
      result.best_val_loss = stats.val_loss;
      result.best_epoch = epoch;
      save_checkpoint(config.out_dir / kBestCheckpointName, ck);
    }
    save_checkpoint(config.out_dir / kLastCheckpointName, ck);
    if (log) {
      char line[200];
      std::snprintf(line, sizeof line, "epoch %zu/%zu train_loss=%.6f val_loss=%.6f train_acc=%.6f val_acc=%.6f\n",
                    epoch, config.epochs, stats.train_loss, stats.val_loss, stats.train_acc, stats.val_acc);
      *log << line << std::flush;
    }
  }
  return result;
}

EvalReport evaluate(const Checkpoint<float>& checkpoint, const std::filesystem::path& data_dir, Split split,
                    std::size_t batch_size) {
  const auto data = load_split(data_dir, split);
  if (data.size() == 0) throw EmptyInputError("split '" + to_string(split) + "' is empty");
  ModelConfig expected = checkpoint.config;
  expected.height = data.images.front().dims().h;
  expected.width = data.images.front().dims().w;
  expected.in_channels = data.images.front().dims().c;
  if (expected.digest() != checkpoint.config.digest()) {
    throw CompatibilityError("checkpoint was trained for " + std::to_string(checkpoint.config.height) + "x" +
                             std::to_string(checkpoint.config.width) + " input, data is " +
                             std::to_string(expected.height) + "x" + std::to_string(expected.width));
  }
  check_extents(data, checkpoint.config, to_string(split).c_str());
  Model<float> model = restore_model(checkpoint);

  EvalReport report;
  report.variant = checkpoint.config.variant;
  report.parameters = count_params(model);
  report.images = data.size();
  std::vector<MetricsRow> rows;
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t batch = std::max<std::size_t>(1, batch_size);
  for (std::size_t first = 0; first < data.size(); first += batch) {
    const std::size_t count = std::min(batch, data.size() - first);
    Tape<float> tape;
    auto out = model.forward(tape, tape.constant(stack(data.images, order, first, count)), BnMode::Infer);
    const auto& prob = out.value();
    const Dims d = prob.dims();
    for (std::size_t i = 0; i < count; ++i) {
      const auto& truth = data.masks[first + i];
      Tensor4<float> one(truth.dims(), prob.array().segment(i * d.image(), d.image()));
      const auto c = confusion_counts(one, truth);
      report.pooled_counts += c;
      rows.push_back(metrics_from_counts(c));
    }
  }
  report.pooled = metrics_from_counts(report.pooled_counts);
  report.per_image = mean_metrics(rows);
  return report;
}

std::string format_metrics(const EvalReport& report) {
  auto cell = [](const std::optional<double>& v) {
    if (!v) return std::string("n/a");
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", *v);
    return std::string(buf);
  };
  auto row = [&](const std::string& label, const MetricsRow& m) {
    return label + "," + cell(m.acc) + "," + cell(m.sen) + "," + cell(m.spe) + "," + cell(m.dsc) + "," +
           cell(m.iou) + "," + std::to_string(report.parameters) + "\n";
  };
  const std::string name = to_string(report.variant);
  return std::string(kMetricsHeader) + "\n" + row(name + "/pooled", report.pooled) +
         row(name + "/per-image", report.per_image);
}

InferResult infer(Model<float>& model, const Tensor4<float>& image) {
  Tape<float> tape;
  auto out = model.forward(tape, tape.constant(image), BnMode::Infer);
  Tensor4<float> prob = out.value();
  Tensor4<float> mask(prob.dims(), (prob.array() >= 0.5f).cast<float>());
  return InferResult{std::move(prob), std::move(mask)};
}

void write_infer_outputs(const std::filesystem::path& prefix, const InferResult& result) {
  auto with = [&](const char* suffix) {
    auto p = prefix;
    p += suffix;
    return p;
  };
  save_tensor(with(".prob.ot4"), result.probability);
  save_tensor(with(".mask.ot4"), result.mask);
  save_pgm(with(".pgm"), probability_preview(result.probability));
}

}  // namespace optounet
