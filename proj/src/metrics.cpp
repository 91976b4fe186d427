#include "optounet/metrics.hpp"

#include "optounet/error.hpp"

namespace optounet {

namespace {

std::optional<double> ratio(std::uint64_t num, std::uint64_t den) {
  if (den == 0) return std::nullopt;
  return static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

std::optional<double> harmonic_dsc(double sen, double spe) {
  if (sen + spe == 0.0) return std::nullopt;
  return 2.0 * sen * spe / (sen + spe);
}

MetricsRow metrics_from_counts(const ConfusionCounts& c) {
  if (c.total() == 0) throw EmptyInputError("metrics_from_counts: no pixels");
  MetricsRow m;
  m.acc = ratio(c.tp + c.tn, c.total());
  m.sen = ratio(c.tp, c.tp + c.fn);
  m.spe = ratio(c.tn, c.tn + c.fp);
  if (m.sen && m.spe) m.dsc = harmonic_dsc(*m.sen, *m.spe);
  m.iou = ratio(c.tp, c.tp + c.fp + c.fn);
  return m;
}

MetricsRow mean_metrics(std::span<const MetricsRow> rows) {
  auto mean_of = [&](std::optional<double> MetricsRow::*field) -> std::optional<double> {
    double sum = 0;
    std::size_t n = 0;
    for (const auto& r : rows) {
      if (const auto& v = r.*field) {
        sum += *v;
        ++n;
      }
    }
    if (n == 0) return std::nullopt;
    return sum / static_cast<double>(n);
  };
  return MetricsRow{mean_of(&MetricsRow::acc), mean_of(&MetricsRow::sen), mean_of(&MetricsRow::spe),
                    mean_of(&MetricsRow::dsc), mean_of(&MetricsRow::iou)};
}

}  // namespace optounet
