#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>

#include "optounet/tensor.hpp"

namespace optounet {

struct ConfusionCounts {
  std::uint64_t tp = 0;
  std::uint64_t tn = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;

  std::uint64_t total() const { return tp + tn + fp + fn; }
  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    tn += o.tn;
    fp += o.fp;
    fn += o.fn;
    return *this;
  }
  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

/// ACC, SEN, SPE, DSC and IOU. A metric whose denominator is zero is empty,
/// never zero by convention. DSC is the harmonic mean of SEN and SPE.
struct MetricsRow {
  std::optional<double> acc;
  std::optional<double> sen;
  std::optional<double> spe;
  std::optional<double> dsc;
  std::optional<double> iou;
};

inline constexpr double kDefaultThreshold = 0.5;

/// A pixel counts as positive when pred >= threshold. truth is read as
/// positive when >= 0.5.
template <typename Scalar>
ConfusionCounts confusion_counts(const Tensor4<Scalar>& pred, const Tensor4<Scalar>& truth,
                                 double threshold = kDefaultThreshold) {
  if (pred.dims() != truth.dims()) {
    throw ShapeError("confusion_counts: " + pred.dims().str() + " vs " + truth.dims().str());
  }
  ConfusionCounts c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = static_cast<double>(pred[i]) >= threshold;
    const bool t = truth[i] >= Scalar(0.5);
    if (p && t) ++c.tp;
    else if (!p && !t) ++c.tn;
    else if (p) ++c.fp;
    else ++c.fn;
  }
  return c;
}

MetricsRow metrics_from_counts(const ConfusionCounts& c);

/// Dice of two rates as printed in the metric table: 2*sen*spe/(sen+spe).
std::optional<double> harmonic_dsc(double sen, double spe);

/// Mean of each metric over the rows where it is defined.
MetricsRow mean_metrics(std::span<const MetricsRow> rows);

}  // namespace optounet
