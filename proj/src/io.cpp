#include "optounet/io.hpp"

#include <cctype>
#include <fstream>
#include <sstream>

#include "optounet/kv_config.hpp"

namespace optounet {

Bytes read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string() + " for reading");
  Bytes bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("error reading " + path.string());
  return bytes;
}

void write_file(const fs::path& path, const Bytes& bytes) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("error writing " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

AnyTensor decode_tensor(const Bytes& bytes, const std::string& what) {
  ByteReader r(bytes, what);
  if (bytes.size() < 4 || r.raw(4) != kTensorMagic) throw FormatError(what + ": bad magic");
  const DType dt = detail::read_dtype(r, what);
  r.u8();
  r.u16();
  const Dims d = detail::read_dims(r, what);
  const std::size_t width = dt == DType::F32 ? 4 : 8;
  if (r.remaining() != d.size() * width) {
    if (r.remaining() < d.size() * width) throw FormatError(what + ": truncated payload");
    throw FormatError(what + ": payload longer than dims " + d.str());
  }
  return dt == DType::F32 ? detail::read_payload<float>(r, d) : detail::read_payload<double>(r, d);
}

AnyTensor load_any_tensor(const fs::path& path) { return decode_tensor(read_file(path), path.string()); }

// ---------------------------------------------------------------------------

Bytes encode_pgm(const GrayImage& img) {
  if (img.pixels.size() != img.width * img.height || img.width == 0 || img.height == 0) {
    throw ShapeError("pgm: pixel count does not match " + std::to_string(img.width) + "x" +
                     std::to_string(img.height));
  }
  const std::string header = "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  Bytes out(header.begin(), header.end());
  out.insert(out.end(), img.pixels.begin(), img.pixels.end());
  return out;
}

GrayImage decode_pgm(const Bytes& bytes) {
  std::size_t pos = 0;
  auto token = [&]() {
    while (pos < bytes.size() && std::isspace(bytes[pos])) ++pos;
    std::string t;
    while (pos < bytes.size() && !std::isspace(bytes[pos])) t.push_back(static_cast<char>(bytes[pos++]));
    if (t.empty()) throw FormatError("pgm: truncated header");
    return t;
  };
  if (token() != "P5") throw FormatError("pgm: expected P5 magic");
  GrayImage img;
  try {
    img.width = parse_size("pgm width", token());
    img.height = parse_size("pgm height", token());
  } catch (const ConfigError& e) {
    throw FormatError(e.what());
  }
  if (token() != "255") throw FormatError("pgm: only maxval 255 is supported");
  ++pos;  // single whitespace byte before the raster
  if (bytes.size() < pos || bytes.size() - pos != img.width * img.height) {
    throw FormatError("pgm: raster length does not match header");
  }
  img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.end());
  return img;
}

void save_pgm(const fs::path& path, const GrayImage& img) { write_file(path, encode_pgm(img)); }

GrayImage load_pgm(const fs::path& path) { return decode_pgm(read_file(path)); }

// ---------------------------------------------------------------------------

std::string to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

Split parse_split(std::string_view s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  throw FormatError("manifest: unknown split '" + std::string(s) + "'");
}

namespace {
constexpr std::string_view kManifestHeader = "image_path,mask_path,split";
}

std::string encode_manifest(const std::vector<ManifestEntry>& entries) {
  std::string out(kManifestHeader);
  out += '\n';
  for (const auto& e : entries) {
    if (e.image_path.find_first_of(",\n") != std::string::npos ||
        e.mask_path.find_first_of(",\n") != std::string::npos) {
      throw FormatError("manifest: paths may not contain commas or newlines");
    }
    out += e.image_path + ',' + e.mask_path + ',' + to_string(e.split) + '\n';
  }
  return out;
}

std::vector<ManifestEntry> decode_manifest(std::string_view text) {
  std::vector<ManifestEntry> out;
  bool header = true;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (header) {
      if (line != kManifestHeader) throw FormatError("manifest: expected header '" + std::string(kManifestHeader) + "'");
      header = false;
      continue;
    }
    if (line.empty()) continue;
    const auto c1 = line.find(',');
    const auto c2 = c1 == std::string_view::npos ? c1 : line.find(',', c1 + 1);
    if (c2 == std::string_view::npos || line.find(',', c2 + 1) != std::string_view::npos) {
      throw FormatError("manifest line " + std::to_string(line_no) + ": expected 3 columns");
    }
    out.push_back(ManifestEntry{std::string(line.substr(0, c1)), std::string(line.substr(c1 + 1, c2 - c1 - 1)),
                                parse_split(line.substr(c2 + 1))});
  }
  if (header) throw FormatError("manifest: empty file");
  return out;
}

void save_manifest(const fs::path& path, const std::vector<ManifestEntry>& entries) {
  const std::string text = encode_manifest(entries);
  write_file(path, Bytes(text.begin(), text.end()));
}

std::vector<ManifestEntry> load_manifest(const fs::path& path) {
  const Bytes b = read_file(path);
  return decode_manifest(std::string_view(reinterpret_cast<const char*>(b.data()), b.size()));
}

}  // namespace optounet
