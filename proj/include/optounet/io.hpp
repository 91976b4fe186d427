#pragma once

#include <bit>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "optounet/model.hpp"
#include "optounet/model_config.hpp"
#include "optounet/rmsprop.hpp"
#include "optounet/tensor.hpp"

namespace optounet {

namespace fs = std::filesystem;

using Bytes = std::vector<std::uint8_t>;

Bytes read_file(const fs::path& path);
/// Writes via a temporary sibling and rename.
void write_file(const fs::path& path, const Bytes& bytes);

// ---------------------------------------------------------------------------
// Little-endian encoding

class ByteWriter {
 public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16(std::uint16_t v) { put(v, 2); }
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void raw(std::string_view s) { out_.insert(out_.end(), s.begin(), s.end()); }
  void str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s);
  }
  template <typename Scalar>
  void scalars(const Scalar* p, std::size_t n) {
    out_.reserve(out_.size() + n * sizeof(Scalar));
    for (std::size_t i = 0; i < n; ++i) {
      if constexpr (sizeof(Scalar) == 4) put(std::bit_cast<std::uint32_t>(p[i]), 4);
      else put(std::bit_cast<std::uint64_t>(p[i]), 8);
    }
  }
  Bytes take() && { return std::move(out_); }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  Bytes out_;
};

class ByteReader {
 public:
  ByteReader(const Bytes& bytes, std::string what) : b_(bytes), what_(std::move(what)) {}

  std::uint8_t u8() { return static_cast<std::uint8_t>(get(1)); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(get(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  std::string raw(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::string str() { return raw(u32()); }
  template <typename Scalar>
  void scalars(Scalar* p, std::size_t n) {
    need(n * sizeof(Scalar));
    for (std::size_t i = 0; i < n; ++i) {
      if constexpr (sizeof(Scalar) == 4) p[i] = std::bit_cast<Scalar>(static_cast<std::uint32_t>(get(4)));
      else p[i] = std::bit_cast<Scalar>(get(8));
    }
  }
  std::size_t remaining() const { return b_.size() - pos_; }
  void need(std::size_t n) const {
    if (remaining() < n) throw FormatError(what_ + ": truncated payload");
  }

 private:
  std::uint64_t get(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(b_[pos_ + i]) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  const Bytes& b_;
  std::string what_;
  std::size_t pos_ = 0;
};

// ---------------------------------------------------------------------------
// Tensor files: "OT4\0", u8 dtype, u8 0, u16 0, u32 n, c, h, w, payload.

inline constexpr std::string_view kTensorMagic{"OT4\0", 4};

using AnyTensor = std::variant<Tensor4<float>, Tensor4<double>>;

namespace detail {

inline Dims read_dims(ByteReader& r, const std::string& what) {
  Dims d{r.u32(), r.u32(), r.u32(), r.u32()};
  if (d.n == 0 || d.c == 0 || d.h == 0 || d.w == 0) throw FormatError(what + ": zero extent in dims");
  return d;
}

inline void write_dims(ByteWriter& w, const Dims& d) {
  for (std::size_t v : {d.n, d.c, d.h, d.w}) w.u32(static_cast<std::uint32_t>(v));
}

inline DType read_dtype(ByteReader& r, const std::string& what) {
  const auto code = r.u8();
  if (code > 1) throw FormatError(what + ": unknown dtype code " + std::to_string(code));
  return static_cast<DType>(code);
}

template <typename Scalar>
AnyTensor read_payload(ByteReader& r, const Dims& d) {
  auto t = Tensor4<Scalar>::zeros(d);
  r.scalars(t.data(), t.size());
  return t;
}

template <typename Scalar>
Tensor4<Scalar> as_scalar(AnyTensor any) {
  if (auto* t = std::get_if<Tensor4<Scalar>>(&any)) return std::move(*t);
  return std::visit([](const auto& t) { return t.template cast<Scalar>(); }, any);
}

}  // namespace detail

template <typename Scalar>
Bytes encode_tensor(const Tensor4<Scalar>& t) {
  ByteWriter w;
  w.raw(kTensorMagic);
  w.u8(static_cast<std::uint8_t>(t.dtype()));
  w.u8(0);
  w.u16(0);
  detail::write_dims(w, t.dims());
  w.scalars(t.data(), t.size());
  return std::move(w).take();
}

AnyTensor decode_tensor(const Bytes& bytes, const std::string& what = "tensor");

template <typename Scalar>
void save_tensor(const fs::path& path, const Tensor4<Scalar>& t) {
  write_file(path, encode_tensor(t));
}

AnyTensor load_any_tensor(const fs::path& path);

/// Loads and converts to Scalar when the stored dtype differs.
template <typename Scalar>
Tensor4<Scalar> load_tensor(const fs::path& path) {
  return detail::as_scalar<Scalar>(load_any_tensor(path));
}

// ---------------------------------------------------------------------------
// Checkpoints: "OCKP", u32 version, u64 config digest, config text, u32 epoch,
// u32 tensor count, then per tensor: name, u8 dtype, u8 ndim (4), 4 x u32
// dims, payload. Strings are u32-length-prefixed UTF-8.

inline constexpr std::string_view kCheckpointMagic{"OCKP", 4};
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename Scalar>
struct Checkpoint {
  ModelConfig config;
  std::uint32_t epoch = 0;
  std::vector<std::pair<std::string, Tensor4<Scalar>>> tensors;

  const Tensor4<Scalar>* find(const std::string& name) const {
    for (const auto& [n, t] : tensors) {
      if (n == name) return &t;
    }
    return nullptr;
  }
};

inline constexpr std::string_view kRmspropPrefix = "rmsprop.acc.";
inline constexpr std::string_view kRmspropHyper = "rmsprop.hyper";

template <typename Scalar>
Checkpoint<Scalar> make_checkpoint(const Model<Scalar>& model, const RmspropState<Scalar>* opt,
                                   std::uint32_t epoch) {
  Checkpoint<Scalar> ck{model.config(), epoch, {}};
  for (const auto& p : model.params()) ck.tensors.emplace_back(p.name, p.value);
  for (const auto& bn : model.registry().bn_states()) {
    ck.tensors.emplace_back(bn.name + ".running_mean", bn.running_mean);
    ck.tensors.emplace_back(bn.name + ".running_var", bn.running_var);
    ck.tensors.emplace_back(bn.name + ".batches",
                            Tensor4<Scalar>::constant(Dims{1, 1, 1, 1}, static_cast<Scalar>(bn.batches)));
  }
  if (opt && !opt->acc.empty()) {
    ck.tensors.emplace_back(std::string(kRmspropHyper),
                            Tensor4<Scalar>::from_values(Dims{1, 1, 1, 3}, {static_cast<Scalar>(opt->lr),
                                                                            static_cast<Scalar>(opt->rho),
                                                                            static_cast<Scalar>(opt->eps)}));
    for (std::size_t i = 0; i < opt->acc.size(); ++i) {
      ck.tensors.emplace_back(std::string(kRmspropPrefix) + model.params()[i].name, opt->acc[i]);
    }
  }
  return ck;
}

template <typename Scalar>
Bytes encode_checkpoint(const Checkpoint<Scalar>& ck) {
  ByteWriter w;
  w.raw(kCheckpointMagic);
  w.u32(kCheckpointVersion);
  const std::string text = ck.config.canonical();
  w.u64(fnv1a64(text));
  w.str(text);
  w.u32(ck.epoch);
  w.u32(static_cast<std::uint32_t>(ck.tensors.size()));
  for (const auto& [name, t] : ck.tensors) {
    w.str(name);
    w.u8(static_cast<std::uint8_t>(t.dtype()));
    w.u8(4);
    detail::write_dims(w, t.dims());
    w.scalars(t.data(), t.size());
  }
  return std::move(w).take();
}

template <typename Scalar>
Checkpoint<Scalar> decode_checkpoint(const Bytes& bytes) {
  const std::string what = "checkpoint";
  ByteReader r(bytes, what);
  if (r.raw(4) != kCheckpointMagic) throw FormatError("checkpoint: bad magic");
  const auto version = r.u32();
  if (version != kCheckpointVersion) throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  const auto digest = r.u64();
  const std::string text = r.str();
  if (fnv1a64(text) != digest) throw FormatError("checkpoint: config digest does not match config text");
  Checkpoint<Scalar> ck{ModelConfig::parse(text), r.u32(), {}};
  const auto count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.str();
    const DType dt = detail::read_dtype(r, what);
    if (r.u8() != 4) throw FormatError("checkpoint: tensor '" + name + "' is not 4-D");
    const Dims d = detail::read_dims(r, what);
    AnyTensor any = dt == DType::F32 ? detail::read_payload<float>(r, d) : detail::read_payload<double>(r, d);
    ck.tensors.emplace_back(std::move(name), detail::as_scalar<Scalar>(std::move(any)));
  }
  if (r.remaining() != 0) throw FormatError("checkpoint: trailing bytes after last tensor");
  return ck;
}

template <typename Scalar>
void save_checkpoint(const fs::path& path, const Checkpoint<Scalar>& ck) {
  write_file(path, encode_checkpoint(ck));
}

template <typename Scalar>
Checkpoint<Scalar> load_checkpoint(const fs::path& path) {
  return decode_checkpoint<Scalar>(read_file(path));
}

/// Rebuilds the model described by the checkpoint and copies every parameter
/// and running statistic into it.
template <typename Scalar>
Model<Scalar> restore_model(const Checkpoint<Scalar>& ck) {
  Model<Scalar> m = build_model<Scalar>(ck.config, 0, Init::Shapes);
  auto fill = [&](const std::string& name, Tensor4<Scalar>& dst) {
    const auto* src = ck.find(name);
    if (!src) throw FormatError("checkpoint: missing tensor '" + name + "'");
    if (src->dims() != dst.dims()) throw FormatError("checkpoint: tensor '" + name + "' has wrong dims");
    dst = *src;
  };
  for (auto& p : m.params()) fill(p.name, p.value);
  for (auto& bn : m.registry().bn_states()) {
    fill(bn.name + ".running_mean", bn.running_mean);
    fill(bn.name + ".running_var", bn.running_var);
    auto batches = Tensor4<Scalar>::zeros(Dims{1, 1, 1, 1});
    fill(bn.name + ".batches", batches);
    bn.batches = static_cast<std::uint64_t>(batches[0]);
  }
  return m;
}

/// Optimizer state stored in the checkpoint, if any.
template <typename Scalar>
std::optional<RmspropState<Scalar>> restore_rmsprop(const Checkpoint<Scalar>& ck, const Model<Scalar>& model) {
  const auto* hyper = ck.find(std::string(kRmspropHyper));
  if (!hyper) return std::nullopt;
  RmspropState<Scalar> s((*hyper)[0], (*hyper)[1], (*hyper)[2]);
  for (const auto& p : model.params()) {
    const auto* acc = ck.find(std::string(kRmspropPrefix) + p.name);
    if (!acc || acc->dims() != p.value.dims()) {
      throw FormatError("checkpoint: optimizer state for '" + p.name + "' is missing or malformed");
    }
    s.acc.push_back(*acc);
  }
  return s;
}

// ---------------------------------------------------------------------------
// Binary PGM (P5) with 8-bit samples.

struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;  // row-major, height * width
};

Bytes encode_pgm(const GrayImage& img);
GrayImage decode_pgm(const Bytes& bytes);
void save_pgm(const fs::path& path, const GrayImage& img);
GrayImage load_pgm(const fs::path& path);

/// round-half-up(p * 255) of one (h, w) plane.
template <typename Scalar>
GrayImage probability_preview(const Tensor4<Scalar>& prob, std::size_t n = 0, std::size_t c = 0) {
  const Dims& d = prob.dims();
  GrayImage img{d.w, d.h, std::vector<std::uint8_t>(d.plane())};
  for (std::size_t y = 0; y < d.h; ++y) {
    for (std::size_t x = 0; x < d.w; ++x) {
      double v = static_cast<double>(prob(n, c, y, x));
      v = std::min(1.0, std::max(0.0, v));
      img.pixels[y * d.w + x] = static_cast<std::uint8_t>(std::floor(v * 255.0 + 0.5));
    }
  }
  return img;
}

// ---------------------------------------------------------------------------
// Dataset manifest: CSV with header image_path,mask_path,split. Paths are
// relative to the manifest's directory.

enum class Split { Train, Val, Test };

std::string to_string(Split s);
Split parse_split(std::string_view s);

struct ManifestEntry {
  std::string image_path;
  std::string mask_path;
  Split split = Split::Train;
  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

inline constexpr std::string_view kManifestName = "manifest.csv";

std::string encode_manifest(const std::vector<ManifestEntry>& entries);
std::vector<ManifestEntry> decode_manifest(std::string_view text);
void save_manifest(const fs::path& path, const std::vector<ManifestEntry>& entries);
std::vector<ManifestEntry> load_manifest(const fs::path& path);

}  // namespace optounet
