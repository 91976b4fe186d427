// Acceptance checks, one PASS/FAIL line each.
//
//   acceptance                 run every check
//   acceptance --only 7        run a subset (comma-separated ids)
//   acceptance --skip 7        run everything else

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "optounet/conv.hpp"
#include "optounet/io.hpp"
#include "optounet/layers.hpp"
#include "optounet/loss.hpp"
#include "optounet/metrics.hpp"
#include "optounet/model.hpp"
#include "optounet/parallel.hpp"
#include "optounet/phantom.hpp"
#include "optounet/train.hpp"
#include "test_util.hpp"

using namespace optounet;
using namespace optounet::test;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + std::string("failed: ") + what;
    }
  }
  void note(const std::string& what) { detail += (detail.empty() ? "" : "; ") + what; }
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("optounet_acceptance_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string run_command(const std::string& cmd, int& status) {
  std::string out;
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) {
    status = -1;
    return out;
  }
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, p)) > 0) out.append(buf, n);
  status = pclose(p);
  return out;
}

const std::optional<Var<double>> kNoBias{};

// ---------------------------------------------------------------------------

Outcome baseline_count() {
  Outcome o;
  const auto t0 = Clock::now();
  int status = 0;
  const std::string out = run_command(std::string(OPTOUNET_CLI) + " params --variant baseline", status);
  const double secs = seconds_since(t0);
  o.require(status == 0, "params exited with status " + std::to_string(status));
  const auto pos = out.find("baseline total ");
  o.require(pos != std::string::npos, "no total line in params output");
  if (pos == std::string::npos) return o;
  const double total = std::stod(out.substr(pos + 15));
  const double rel = std::abs(total - 31.04e6) / 31.04e6;
  o.note("total " + std::to_string(static_cast<long>(total)) + " (" + fmt("%+.3f%%", 100 * (total - 31.04e6) / 31.04e6) +
         " vs 31.04M), " + fmt("%.3f s", secs));
  o.require(rel <= 0.001, "outside +-0.1%");
  o.require(secs < 1.0, "runtime >= 1 s");
  return o;
}

Outcome opto_count() {
  Outcome o;
  const auto opto = static_cast<double>(count_params(build_opto_unet<float>(ModelConfig::opto_default(), 1, Init::Shapes)));
  const auto base =
      static_cast<double>(count_params(build_baseline_unet<float>(ModelConfig::baseline_default(), 1, Init::Shapes)));
  o.note("opto " + std::to_string(static_cast<long>(opto)) + " (" + fmt("%+.2f%%", 100 * (opto - 8.54e6) / 8.54e6) +
         " vs 8.54M), baseline/opto " + fmt("%.2f", base / opto));
  o.require(std::abs(opto - 8.54e6) <= 0.05 * 8.54e6, "outside +-5% of 8.54M");
  o.require(opto < base / 3, "not below baseline/3");
  std::ifstream readme(fs::path(OPTOUNET_SOURCE_DIR) / "README.md");
  std::stringstream ss;
  ss << readme.rdbuf();
  std::string grouped = std::to_string(static_cast<long>(opto));
  for (auto i = static_cast<long>(grouped.size()) - 3; i > 0; i -= 3) grouped.insert(static_cast<std::size_t>(i), ",");
  o.require(ss.str().find(grouped) != std::string::npos,
            "README does not document the calibrated count");
  return o;
}

Outcome table_dsc() {
  Outcome o;
  struct Row {
    ConfusionCounts counts;
    double sen, spe, dsc;
  };
  // counts whose SEN/SPE equal the tabulated rates exactly
  const Row rows[] = {{{8425, 9980, 20, 1575}, 0.8425, 0.9980, 0.9136}, {{8346, 9968, 32, 1654}, 0.8346, 0.9968, 0.9085}};
  for (const auto& r : rows) {
    const auto m = metrics_from_counts(r.counts);
    o.require(std::abs(*m.sen - r.sen) < 1e-12 && std::abs(*m.spe - r.spe) < 1e-12, "rates not reproduced");
    // agreement in the first four decimals
    const long got = static_cast<long>(std::floor(*m.dsc * 1e4 + 1e-9));
    const long want = std::lround(r.dsc * 1e4);
    o.note("SEN " + fmt("%.4f", r.sen) + " SPE " + fmt("%.4f", r.spe) + " -> DSC " + fmt("%.6f", *m.dsc));
    o.require(got == want, "DSC digits differ from " + fmt("%.4f", r.dsc));
  }
  return o;
}

Outcome gradient_suite() {
  Outcome o;
  const auto t0 = Clock::now();
  Rng rng(2024);
  double worst = 0;
  std::size_t checks = 0;
  auto run = [&](const std::string& name, std::vector<Tensor4<double>> inputs, const Fn& f) {
    std::size_t elems = 0;
    for (const auto& t : inputs) elems += t.size();
    o.require(elems <= 512, name + " uses more than 512 elements");
    const auto r = check_gradients(inputs, f);
    worst = std::max(worst, r.max_rel);
    checks += r.checked;
    o.require(r.max_rel < 1e-6, name + " max rel " + fmt("%.2e", r.max_rel));
  };
  auto rt = [&](Dims d, double lo = -1, double hi = 1) { return random_tensor<double>(rng, d, lo, hi); };

  const Dims e{1, 2, 3, 3};
  for (auto kind : {BinaryKind::Add, BinaryKind::Sub, BinaryKind::Mul, BinaryKind::Div}) {
    run(detail::binary_name(kind), {rt(e), rt(e, 0.5, 2)},
        [kind](Tape<double>&, const std::vector<Var<double>>& v) { return weighted_sum(ew_binary(v[0], v[1], kind)); });
  }
  run("affine", {rt(e)}, [](Tape<double>&, const std::vector<Var<double>>& v) {
    return weighted_sum(affine(v[0], 1.5, -0.25));
  });
  run("reduce_sum", {rt(e)}, [](Tape<double>&, const std::vector<Var<double>>& v) {
    auto s = reduce_sum(v[0]);
    return mul(s, s);
  });
  {
    const auto s = Conv2dSpec{2, 3, 3, 2, 1, 2, Padding2d{1, 0, 2, 1}, 2, 1, true};
    run("conv2d", {rt(Dims{2, 2, 5, 5}), rt(s.weight_dims()), rt(s.bias_dims())},
        [s](Tape<double>&, const std::vector<Var<double>>& v) {
          return weighted_sum(conv2d(v[0], v[1], std::optional(v[2]), s));
        });
    const auto g = Conv2dSpec::same(4, 4, 3, 2, 4, false);
    run("conv2d depthwise", {rt(Dims{1, 4, 5, 5}), rt(g.weight_dims())},
        [g](Tape<double>&, const std::vector<Var<double>>& v) { return weighted_sum(conv2d(v[0], v[1], kNoBias, g)); });
    const auto a = Conv2dSpec::same(2, 2, 2, 2, 1, true);
    run("conv2d atrous 2x2", {rt(Dims{1, 2, 5, 5}), rt(a.weight_dims()), rt(a.bias_dims())},
        [a](Tape<double>&, const std::vector<Var<double>>& v) {
          return weighted_sum(conv2d(v[0], v[1], std::optional(v[2]), a));
        });
    const SeparableSpec sp{3, 2, 3, 2, true};
    run("separable_conv2d",
        {rt(Dims{1, 3, 5, 5}), rt(sp.depthwise().weight_dims()), rt(sp.pointwise().weight_dims()),
         rt(sp.pointwise().bias_dims())},
        [sp](Tape<double>&, const std::vector<Var<double>>& v) {
          return weighted_sum(separable_conv2d(v[0], v[1], v[2], std::optional(v[3]), sp));
        });
  }
  {
    auto x = rt(Dims{2, 2, 4, 4}, -3, 3);
    separate_ties(x);
    run("relu", {x}, [](Tape<double>&, const std::vector<Var<double>>& v) { return weighted_sum(relu(v[0])); });
    run("sigmoid", {x}, [](Tape<double>&, const std::vector<Var<double>>& v) { return weighted_sum(sigmoid(v[0])); });
    run("maxpool2", {x}, [](Tape<double>&, const std::vector<Var<double>>& v) { return weighted_sum(maxpool2(v[0])); });
    run("upsample_nearest2", {rt(Dims{1, 2, 3, 3})},
        [](Tape<double>&, const std::vector<Var<double>>& v) { return weighted_sum(upsample_nearest2(v[0])); });
    run("concat/slice", {rt(Dims{1, 2, 3, 3}), rt(Dims{1, 1, 3, 3})},
        [](Tape<double>&, const std::vector<Var<double>>& v) {
          return weighted_sum(slice_channels(concat_channels(v[0], v[1]), 1, 2));
        });
  }
  for (auto mode : {BnMode::Train, BnMode::Infer}) {
    run(mode == BnMode::Train ? "batchnorm train" : "batchnorm infer",
        {rt(Dims{3, 2, 3, 3}), rt(Dims{1, 2, 1, 1}, 0.5, 1.5), rt(Dims{1, 2, 1, 1})},
        [mode](Tape<double>&, const std::vector<Var<double>>& v) {
          BnState<double> st("bn", 2);
          st.running_mean[0] = 0.3;
          st.running_var[1] = 2;
          return weighted_sum(batchnorm(v[0], v[1], v[2], st, mode));
        });
  }
  {
    auto y = Tensor4<double>::zeros(Dims{1, 1, 8, 8});
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = rng.uniform() < 0.3 ? 1 : 0;
    for (auto form : {DiceForm::TwoTerm, DiceForm::Classical}) {
      DiceConfig cfg;
      cfg.form = form;
      run(form == DiceForm::TwoTerm ? "dice loss" : "dice loss classical", {rt(Dims{1, 1, 8, 8}, 0.02, 0.98)},
          [&y, cfg](Tape<double>& t, const std::vector<Var<double>>& v) {
            return dice_loss(v[0], t.constant(y), cfg);
          });
    }
  }

  // end to end: 20 sampled parameters of a (1,1,16,16) forward + dice loss
  double e2e = 0;
  {
    auto cfg = ModelConfig::opto_default();
    cfg.height = cfg.width = 16;
    auto m = build_opto_unet<double>(cfg, 5);
    auto x = random_tensor<double>(rng, Dims{1, 1, 16, 16}, 0, 1);
    auto y = Tensor4<double>::zeros(x.dims());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = rng.uniform() < 0.3 ? 1 : 0;
    const auto bn0 = m.registry().bn_states();
    auto loss = [&](Tape<double>& tape, std::vector<Var<double>>* bound) {
      m.registry().bn_states() = bn0;
      return dice_loss(m.forward(tape, tape.constant(x), BnMode::Train, bound), tape.constant(y));
    };
    Tape<double> tape;
    std::vector<Var<double>> bound;
    const auto grads = tape.backward(loss(tape, &bound));
    for (int s = 0; s < 20; ++s) {
      const std::size_t pi = rng.below(m.params().size());
      auto& value = m.params()[pi].value;
      const std::size_t ei = rng.below(value.size());
      const double analytic = grads.contains(bound[pi]) ? grads.at(bound[pi])[ei] : 0.0;
      const double orig = value[ei];
      auto eval = [&](double v) {
        value[ei] = v;
        Tape<double> t;
        return loss(t, nullptr).value()[0];
      };
      const double numeric = (eval(orig + 1e-5) - eval(orig - 1e-5)) / 2e-5;
      value[ei] = orig;
      e2e = std::max(e2e, rel_error(analytic, numeric, 1e-9));
    }
    o.require(e2e < 1e-4, "end-to-end max rel " + fmt("%.2e", e2e));
  }
  const double secs = seconds_since(t0);
  o.note(std::to_string(checks) + " element checks, primitive max rel " + fmt("%.2e", worst) + ", end-to-end max rel " +
         fmt("%.2e", e2e) + ", " + fmt("%.1f s", secs));
  o.require(secs < 120, "suite took >= 2 min");
  return o;
}

Conv2dSpec random_spec(Rng& rng, int kind) {
  Conv2dSpec s;
  s.groups = kind == 1 ? 1 + rng.below(3) : 1;
  s.in_channels = s.groups * (1 + rng.below(3));
  s.out_channels = s.groups * (1 + rng.below(3));
  if (kind == 2) {  // depthwise
    s.in_channels = s.out_channels = s.groups = 1 + rng.below(4);
  }
  s.kh = 1 + rng.below(3);
  s.kw = 1 + rng.below(3);
  s.sh = 1 + rng.below(2);
  s.sw = 1 + rng.below(2);
  s.dilation = kind == 3 ? 2 : 1 + rng.below(3);
  s.padding = Padding2d{rng.below(3), rng.below(3), rng.below(3), rng.below(3)};
  s.has_bias = rng.below(2) == 1;
  return s;
}

/// Randomized conv cases shared by the oracle and thread checks.
struct ConvCase {
  Conv2dSpec spec;
  Tensor4<double> x, w, b;
};

std::vector<ConvCase> conv_cases(std::size_t n) {
  Rng rng(99);
  std::vector<ConvCase> out;
  while (out.size() < n) {
    const auto s = random_spec(rng, static_cast<int>(out.size() % 4));
    const Dims in{1 + rng.below(3), s.in_channels, 4 + rng.below(6), 4 + rng.below(6)};
    if (in.h + s.padding.top + s.padding.bottom < s.kh_eff() || in.w + s.padding.left + s.padding.right < s.kw_eff()) {
      continue;
    }
    out.push_back(ConvCase{s, random_tensor<double>(rng, in), random_tensor<double>(rng, s.weight_dims()),
                           random_tensor<double>(rng, s.bias_dims())});
  }
  return out;
}

Outcome oracle_equivalence() {
  Outcome o;
  double worst = 0;
  std::size_t dilated = 0, grouped = 0;
  const auto cases = conv_cases(64);
  for (const auto& c : cases) {
    const auto* bp = c.spec.has_bias ? &c.b : nullptr;
    const auto y = conv2d_forward(c.x, c.w, bp, c.spec);
    auto wz = zero_inserted_kernel(c.w, c.spec.dilation);
    Conv2dSpec sz = c.spec;
    sz.kh = wz.dims().h;
    sz.kw = wz.dims().w;
    sz.dilation = 1;
    worst = std::max({worst, max_rel_error(y, naive_conv2d(c.x, c.w, bp, c.spec)), max_rel_error(y, naive_conv2d(c.x, wz, bp, sz))});
    dilated += c.spec.dilation == 2;
    grouped += c.spec.groups > 1;
  }
  o.note(std::to_string(cases.size()) + " conv cases (" + std::to_string(dilated) + " with d=2, " +
         std::to_string(grouped) + " grouped), max rel " + fmt("%.2e", worst));
  o.require(worst <= 1e-6, "conv mismatch");
  o.require(dilated > 0 && grouped > 0, "case mix lacks d=2 or grouped convs");

  Rng rng(7);
  Tape<double> tape;
  // maxpool: window max
  auto x = random_tensor<double>(rng, Dims{2, 2, 8, 6});
  auto mp = maxpool2(tape.variable(x));
  bool ok = true;
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 3; ++j) {
          const double m = std::max({x(n, c, 2 * i, 2 * j), x(n, c, 2 * i, 2 * j + 1), x(n, c, 2 * i + 1, 2 * j),
                                     x(n, c, 2 * i + 1, 2 * j + 1)});
          ok &= mp.value()(n, c, i, j) == m;
        }
  o.require(ok, "maxpool differs from window max");
  // upsample: replication
  auto up = upsample_nearest2(tape.variable(x));
  ok = true;
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t i = 0; i < 16; ++i)
        for (std::size_t j = 0; j < 12; ++j) ok &= up.value()(n, c, i, j) == x(n, c, i / 2, j / 2);
  o.require(ok, "upsample differs from replication");
  // batchnorm: direct statistics
  BnState<double> st("bn", 2);
  auto gamma = random_tensor<double>(rng, Dims{1, 2, 1, 1}, 0.5, 2);
  auto beta = random_tensor<double>(rng, Dims{1, 2, 1, 1});
  auto bn = batchnorm(tape.variable(x), tape.variable(gamma), tape.variable(beta), st, BnMode::Train);
  double bn_err = 0;
  const Dims d = x.dims();
  for (std::size_t c = 0; c < 2; ++c) {
    double mean = 0, var = 0;
    for (std::size_t n = 0; n < d.n; ++n)
      for (std::size_t i = 0; i < d.h; ++i)
        for (std::size_t j = 0; j < d.w; ++j) mean += x(n, c, i, j);
    mean /= d.n * d.plane();
    for (std::size_t n = 0; n < d.n; ++n)
      for (std::size_t i = 0; i < d.h; ++i)
        for (std::size_t j = 0; j < d.w; ++j) var += (x(n, c, i, j) - mean) * (x(n, c, i, j) - mean);
    var /= d.n * d.plane();
    for (std::size_t n = 0; n < d.n; ++n)
      for (std::size_t i = 0; i < d.h; ++i)
        for (std::size_t j = 0; j < d.w; ++j) {
          const double ref = gamma[c] * (x(n, c, i, j) - mean) / std::sqrt(var + 1e-5) + beta[c];
          bn_err = std::max(bn_err, rel_error(bn.value()(n, c, i, j), ref));
        }
  }
  o.note("batchnorm max rel " + fmt("%.2e", bn_err));
  o.require(bn_err <= 1e-6, "batchnorm differs from direct formula");
  return o;
}

Outcome dice_values() {
  Outcome o;
  auto dcl = [](std::initializer_list<double> p, std::initializer_list<double> y) {
    Tape<double> tape;
    const Dims d{1, 1, 1, p.size()};
    return dice_coefficient(tape.variable(Tensor4<double>::from_values(d, p)),
                            tape.constant(Tensor4<double>::from_values(d, y)))
        .value()[0];
  };
  const double a = dcl({1, 1, 0, 0}, {1, 0, 1, 0});
  const double b = dcl({1, 0, 1, 0}, {1, 0, 0, 0});
  o.require(a == 0.8, "first example gives " + fmt("%.17g", a));
  o.require(b == 1.0, "second example gives " + fmt("%.17g", b));
  Rng rng(3);
  const Dims d{1, 1, 1000, 1000};
  auto y = Tensor4<double>::zeros(d);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = rng.uniform() < 0.2 ? 1 : 0;
  auto inv = Tensor4<double>::zeros(d);
  inv.array() = 1 - y.array();
  Tape<double> tape;
  const double perfect = dice_loss(tape.variable(y), tape.constant(y)).value()[0];
  const double inverted = dice_loss(tape.variable(inv), tape.constant(y)).value()[0];
  o.note("DCL " + fmt("%.17g", a) + " and " + fmt("%.17g", b) + "; N=1e6 perfect L " + fmt("%.2e", perfect) +
         ", inverted L " + fmt("%.8f", inverted));
  o.require(perfect < 1e-5, "perfect loss too large");
  o.require(inverted > 1 - 1e-3, "inverted loss too small");
  return o;
}

Outcome phantom_training() {
  Outcome o;
  set_thread_count(1);
  const auto data = scratch("train_data");
  const auto out = scratch("train_run");
  PhantomParams p;  // 240 at 128x64
  const auto t0 = Clock::now();
  gen_phantom(42, p, data);
  TrainConfig cfg;
  cfg.seed = 42;
  cfg.epochs = 20;
  cfg.batch_size = 16;
  cfg.lr = 1e-4;
  cfg.data_dir = data;
  cfg.out_dir = out;
  const auto res = train(cfg, &std::cout);
  const auto ck = load_checkpoint<float>(out / kBestCheckpointName);
  const auto test = evaluate(ck, data, Split::Test);
  const auto train_eval = evaluate(ck, data, Split::Train);

  // Dice coefficient over all validation pixels with the selected checkpoint
  auto model = restore_model(ck);
  const auto val = load_split(data, Split::Val);
  double overlap = 0, total = 0, bg_overlap = 0, bg_total = 0;
  ConfusionCounts hard;
  for (std::size_t i = 0; i < val.size(); ++i) {
    const auto prob = infer(model, val.images[i]).probability;
    hard += confusion_counts(prob, val.masks[i]);
    for (std::size_t k = 0; k < prob.size(); ++k) {
      const double pi = prob[k], yi = val.masks[i][k];
      overlap += pi * yi;
      total += pi + yi;
      bg_overlap += (1 - pi) * (1 - yi);
      bg_total += 2 - pi - yi;
    }
  }
  const double val_dcl = (overlap + 1) / (total + 1) + (bg_overlap + 1) / (bg_total + 1);
  // same coefficient on thresholded predictions, reported only
  const double tp = hard.tp, tn = hard.tn, fp = hard.fp, fn = hard.fn;
  const double hard_dcl = (tp + 1) / (2 * tp + fp + fn + 1) + (tn + 1) / (2 * tn + fp + fn + 1);
  const double secs = seconds_since(t0);

  const auto& c = res.curves;
  bool stable = c.size() >= 16 && c[14].train_loss < c[0].train_loss;
  double max_delta = 0;
  for (std::size_t e = 15; e < c.size(); ++e) max_delta = std::max(max_delta, std::abs(c[e].train_loss - c[e - 1].train_loss));
  stable = stable && max_delta < 0.01;

  o.note("test pooled ACC " + fmt("%.4f", *test.pooled.acc) + ", SEN " + fmt("%.4f", test.pooled.sen.value_or(NAN)) +
         ", val DCL " + fmt("%.4f", val_dcl) + " (thresholded " + fmt("%.4f", hard_dcl) + ")" + ", best epoch " + std::to_string(res.best_epoch) + ", train loss e1 " +
         fmt("%.4f", c.front().train_loss) + " e15 " + fmt("%.4f", c.size() >= 15 ? c[14].train_loss : NAN) +
         ", max |delta| after e15 " + fmt("%.4f", max_delta) + ", train ACC " + fmt("%.4f", *train_eval.pooled.acc) +
         ", " + fmt("%.0f s", secs));
  o.require(*test.pooled.acc >= 0.97, "test ACC < 0.97");
  o.require(val_dcl >= 0.9, "validation dice coefficient < 0.9");
  o.require(stable, "loss curve not stable after epoch 15");
  o.require(res.curves.back().train_loss < res.initial_train_loss, "final train loss not below initial");
  o.require(secs <= 1800, "wall clock > 30 min");
  return o;
}

Outcome determinism() {
  Outcome o;
  set_thread_count(1);
  const auto data = scratch("det_data");
  PhantomParams p;
  p.count = 16;
  gen_phantom(11, p, data);
  std::vector<fs::path> runs{scratch("det_a"), scratch("det_b")};
  for (const auto& dir : runs) {
    TrainConfig cfg;
    cfg.seed = 5;
    cfg.epochs = 1;
    cfg.data_dir = data;
    cfg.out_dir = dir;
    train(cfg);
  }
  for (auto name : {kCurvesName, kBestCheckpointName, kLastCheckpointName}) {
    o.require(read_file(runs[0] / name) == read_file(runs[1] / name), std::string(name) + " differs between runs");
  }

  // threaded convolution against serial, forward and all gradients
  std::size_t compared = 0;
  bool equal = true;
  for (const auto& c : conv_cases(64)) {
    std::vector<Tensor4<double>> results[2];
    for (int t = 0; t < 2; ++t) {
      set_thread_count(t == 0 ? 1 : 4);
      const auto* bp = c.spec.has_bias ? &c.b : nullptr;
      auto y = conv2d_forward(c.x, c.w, bp, c.spec);
      Rng g(1);
      auto go = random_tensor<double>(g, y.dims());
      auto gx = Tensor4<double>::zeros(c.x.dims());
      auto gw = Tensor4<double>::zeros(c.w.dims());
      auto gb = Tensor4<double>::zeros(c.b.dims());
      conv2d_backward(c.x, c.w, c.spec, go, &gx, &gw, c.spec.has_bias ? &gb : nullptr);
      results[t] = {y, gx, gw, gb};
    }
    for (std::size_t k = 0; k < 4; ++k) equal &= bitwise_equal(results[0][k], results[1][k]);
    ++compared;
  }
  set_thread_count(1);
  o.note("2 training runs byte-identical; " + std::to_string(compared) + " conv cases compared at 1 vs 4 threads");
  o.require(equal, "threaded conv differs from serial");
  return o;
}

Outcome round_trips() {
  Outcome o;
  const auto dir = scratch("formats");
  const auto small = Tensor4<float>::from_values(Dims{1, 1, 2, 2}, {1, 2, 3, 4});
  save_tensor(dir / "small.ot4", small);
  o.require(fs::file_size(dir / "small.ot4") == 40, "(1,1,2,2) f32 file is not 40 bytes");
  const Bytes sb = read_file(dir / "small.ot4");
  o.require(sb.size() == 40 && std::string(sb.begin(), sb.begin() + 4) == std::string("OT4\0", 4) && sb[4] == 0 &&
                sb[8] == 1 && sb[12] == 1 && sb[16] == 2 && sb[20] == 2,
            "header bytes");

  Rng rng(1);
  const auto td = random_tensor<double>(rng, Dims{2, 3, 4, 5});
  save_tensor(dir / "d.ot4", td);
  o.require(bitwise_equal(load_tensor<double>(dir / "d.ot4"), td), "tensor round trip");
  o.require(encode_tensor(load_tensor<double>(dir / "d.ot4")) == read_file(dir / "d.ot4"), "tensor re-encode");

  auto cfg = ModelConfig::opto_default();
  cfg.height = cfg.width = 16;
  auto m = build_opto_unet<float>(cfg, 2);
  RmspropState<float> opt;
  opt.init(m.params());
  save_checkpoint(dir / "m.ockp", make_checkpoint(m, &opt, 3));
  const auto ck = load_checkpoint<float>(dir / "m.ockp");
  const auto orig = make_checkpoint(m, &opt, 3);
  bool same = ck.tensors.size() == orig.tensors.size();
  for (std::size_t i = 0; same && i < ck.tensors.size(); ++i) {
    same = ck.tensors[i].first == orig.tensors[i].first && bitwise_equal(ck.tensors[i].second, orig.tensors[i].second);
  }
  o.require(same && encode_checkpoint(ck) == read_file(dir / "m.ockp"), "checkpoint round trip");

  GrayImage img{4, 3, {}};
  for (std::size_t i = 0; i < 12; ++i) img.pixels.push_back(static_cast<std::uint8_t>(i * 21));
  save_pgm(dir / "a.pgm", img);
  const auto back = load_pgm(dir / "a.pgm");
  o.require(back.pixels == img.pixels && encode_pgm(back) == read_file(dir / "a.pgm"), "pgm round trip");

  const std::vector<ManifestEntry> entries{{"i0.ot4", "m0.ot4", Split::Train}, {"i1.ot4", "m1.ot4", Split::Test}};
  save_manifest(dir / "manifest.csv", entries);
  const auto text = read_file(dir / "manifest.csv");
  o.require(encode_manifest(load_manifest(dir / "manifest.csv")) == std::string(text.begin(), text.end()),
            "manifest round trip");
  o.note("tensor, checkpoint, PGM and manifest files re-encode to identical bytes; 40-byte tensor header verified");
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance checks"};
  std::vector<int> only, skip;
  app.add_option("--only", only, "Check ids to run")->delimiter(',');
  app.add_option("--skip", skip, "Check ids to leave out")->delimiter(',');
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> checks{
      {"baseline parameter count from the params command", baseline_count},
      {"opto parameter count calibration", opto_count},
      {"tabulated DSC arithmetic", table_dsc},
      {"finite-difference gradient suite", gradient_suite},
      {"conv/pool/upsample/batchnorm oracle equivalence", oracle_equivalence},
      {"dice loss values", dice_values},
      {"phantom training run", phantom_training},
      {"determinism", determinism},
      {"file format round trips", round_trips},
  };
  const std::set<int> only_set(only.begin(), only.end()), skip_set(skip.begin(), skip.end());
  int failures = 0;
  for (std::size_t i = 0; i < checks.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if ((!only_set.empty() && !only_set.count(id)) || skip_set.count(id)) continue;
    Outcome r;
    try {
      r = checks[i].second();
    } catch (const std::exception& e) {
      r.pass = false;
      r.note(std::string("exception: ") + e.what());
    }
    failures += !r.pass;
    std::printf("%s %d %s: %s\n", r.pass ? "PASS" : "FAIL", id, checks[i].first.c_str(), r.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
