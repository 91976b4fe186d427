#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "optounet/io.hpp"
#include "optounet/kv_config.hpp"
#include "optounet/loss.hpp"
#include "optounet/metrics.hpp"
#include "optounet/model.hpp"

namespace optounet {

struct TrainConfig {
  std::uint64_t seed = 42;
  std::size_t epochs = 20;
  /// Reduced to the training-set size when that is smaller.
  std::size_t batch_size = 16;
  double lr = 1e-4;
  double rho = 0.9;
  double rms_eps = 1e-8;
  DiceConfig dice{};
  ModelConfig model = ModelConfig::opto_default();
  std::filesystem::path data_dir;
  std::filesystem::path out_dir = "run";

  /// Applies recognised keys (seed, epochs, batch_size, lr, rho, rms_eps,
  /// loss_eps, variant, height, width, data, out); unknown keys are errors.
  void apply(const KeyValues& kv);
  void validate() const;
};

struct EpochStats {
  std::size_t epoch = 0;
  double train_loss = 0;
  double val_loss = 0;
  double train_acc = 0;
  double val_acc = 0;
};

inline constexpr std::string_view kCurvesHeader = "epoch,train_loss,val_loss,train_acc,val_acc";
inline constexpr std::string_view kCurvesName = "curves.csv";
inline constexpr std::string_view kBestCheckpointName = "best.ockp";
inline constexpr std::string_view kLastCheckpointName = "last.ockp";

std::string format_curves(const std::vector<EpochStats>& rows);

struct TrainResult {
  std::vector<EpochStats> curves;
  std::size_t best_epoch = 0;
  double best_val_loss = 0;
  /// Loss of the first training batch before any update.
  double initial_train_loss = 0;
};

/// In-memory split of a phantom-style dataset: (1,1,h,w) image/mask pairs.
struct DatasetSplit {
  std::vector<Tensor4<float>> images;
  std::vector<Tensor4<float>> masks;
  std::size_t size() const { return images.size(); }
};

DatasetSplit load_split(const std::filesystem::path& data_dir, Split split);

/// Shuffled mini-batch dice-loss minimisation with RMSprop. Writes
/// curves.csv, best.ockp (lowest validation loss) and last.ockp into
/// out_dir. log may be null.
TrainResult train(const TrainConfig& config, std::ostream* log = nullptr);

struct EvalReport {
  ConfusionCounts pooled_counts;
  MetricsRow pooled;
  MetricsRow per_image;
  std::size_t images = 0;
  std::size_t parameters = 0;
  Variant variant = Variant::Opto;
};

/// Inference-mode metrics over one split. Throws CompatibilityError when the
/// checkpoint was trained for different input extents.
EvalReport evaluate(const Checkpoint<float>& checkpoint, const std::filesystem::path& data_dir, Split split,
                    std::size_t batch_size = 16);

inline constexpr std::string_view kMetricsHeader = "model,acc,sen,spe,dsc,iou,parameters";
/// Header plus a pooled-pixel row and a per-image-mean row.
std::string format_metrics(const EvalReport& report);

struct InferResult {
  Tensor4<float> probability;
  Tensor4<float> mask;
};

/// Inference-mode forward of a (n, c, h, w) image batch; mask = prob >= 0.5.
InferResult infer(Model<float>& model, const Tensor4<float>& image);

/// Writes <prefix>.prob.ot4, <prefix>.mask.ot4 and <prefix>.pgm (first image).
void write_infer_outputs(const std::filesystem::path& prefix, const InferResult& result);

}  // namespace optounet
