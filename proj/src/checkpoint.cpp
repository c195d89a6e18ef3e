#include "aquags/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <vector>

#include "aquags/errors.hpp"

namespace aquags {

namespace {

constexpr char kMagic[] = "AQGS-CKPT";
constexpr size_t kMagicLen = 9;
constexpr uint32_t kCloudFragment = 1;
constexpr uint32_t kWaterFragment = 2;

class Writer {
 public:
  explicit Writer(std::ostream& os) : os_(os) {}
  void bytes(const void* p, size_t n) { os_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
  void u32(uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    bytes(b, 4);
  }
  void u64(uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    bytes(b, 8);
  }
  void f64(double v) {
    uint64_t bits;
    std::memcpy(&bits, &v, 8);
    u64(bits);
  }

 private:
  std::ostream& os_;
};

class Reader {
 public:
  Reader(std::istream& is, std::string path) : is_(is), path_(std::move(path)) {}
  void bytes(void* p, size_t n) {
    is_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (!is_) throw IoError("truncated checkpoint " + path_);
  }
  uint32_t u32() {
    unsigned char b[4];
    bytes(b, 4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
    return v;
  }
  uint64_t u64() {
    unsigned char b[8];
    bytes(b, 8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
    return v;
  }
  double f64() {
    const uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  const std::string& path() const { return path_; }

 private:
  std::istream& is_;
  std::string path_;
};

void write_header(Writer& w) {
  w.bytes(kMagic, kMagicLen);
  w.u32(kCheckpointVersion);
}

void read_header(Reader& r) {
  char magic[kMagicLen];
  r.bytes(magic, kMagicLen);
  if (std::memcmp(magic, kMagic, kMagicLen) != 0) throw IoError("not a checkpoint: " + r.path());
  const uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw IoError("checkpoint version " + std::to_string(version) + " unsupported in " + r.path());
}

void write_cloud(Writer& w, const GaussianCloud& c) {
  w.u64(c.size());
  for (const auto& v : c.positions)
    for (int i = 0; i < 3; ++i) w.f64(v[i]);
  for (const auto& v : c.rotations)
    for (int i = 0; i < 4; ++i) w.f64(v[i]);
  for (const auto& v : c.log_scales)
    for (int i = 0; i < 3; ++i) w.f64(v[i]);
  for (double v : c.opacity_logits) w.f64(v);
  for (const auto& v : c.colors)
    for (int i = 0; i < 3; ++i) w.f64(v[i]);
}

GaussianCloud read_cloud(Reader& r) {
  const uint64_t n = r.u64();
  if (n > (1ull << 28)) throw IoError("implausible Gaussian count in " + r.path());
  GaussianCloud c;
  c.resize(n);
  for (auto& v : c.positions)
    for (int i = 0; i < 3; ++i) v[i] = r.f64();
  for (auto& v : c.rotations)
    for (int i = 0; i < 4; ++i) v[i] = r.f64();
  for (auto& v : c.log_scales)
    for (int i = 0; i < 3; ++i) v[i] = r.f64();
  for (double& v : c.opacity_logits) v = r.f64();
  for (auto& v : c.colors)
    for (int i = 0; i < 3; ++i) v[i] = r.f64();
  return c;
}

void write_water(Writer& w, const WaterField& f) {
  const auto flat = f.flatten();
  w.u64(flat.size());
  for (double v : flat) w.f64(v);
}

WaterField read_water(Reader& r) {
  WaterField f;
  const uint64_t m = r.u64();
  if (m != f.parameter_count()) throw IoError("water field size mismatch in " + r.path());
  std::vector<double> flat(m);
  for (double& v : flat) v = r.f64();
  f.unflatten(flat);
  return f;
}

template <typename Body>
void write_atomically(const std::string& path, Body&& body) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write " + tmp);
    Writer w(os);
    body(w);
    os.flush();
    if (!os) throw IoError("short write to " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp + " to " + path + ": " + ec.message());
}

std::ifstream open_input(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path);
  return is;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  write_atomically(path, [&](Writer& w) {
    write_header(w);
    w.f64(ckpt.r_max);
    write_cloud(w, ckpt.cloud);
    write_water(w, ckpt.water);
    w.u64(ckpt.config_echo.size());
    w.bytes(ckpt.config_echo.data(), ckpt.config_echo.size());
    w.u64(ckpt.seed);
    w.u64(ckpt.iteration);
  });
}

Checkpoint load_checkpoint(const std::string& path) {
  auto is = open_input(path);
  Reader r(is, path);
  read_header(r);
  Checkpoint c;
  c.r_max = r.f64();
  c.cloud = read_cloud(r);
  c.water = read_water(r);
  const uint64_t len = r.u64();
  if (len > (1u << 24)) throw IoError("implausible config length in " + path);
  c.config_echo.resize(len);
  r.bytes(c.config_echo.data(), len);
  c.seed = r.u64();
  c.iteration = r.u64();
  return c;
}

void save_cloud_fragment(const std::string& path, const GaussianCloud& cloud) {
  write_atomically(path, [&](Writer& w) {
    write_header(w);
    w.u32(kCloudFragment);
    write_cloud(w, cloud);
  });
}

GaussianCloud load_cloud_fragment(const std::string& path) {
  auto is = open_input(path);
  Reader r(is, path);
  read_header(r);
  if (r.u32() != kCloudFragment) throw IoError("not a cloud fragment: " + path);
  return read_cloud(r);
}

void save_water_fragment(const std::string& path, const WaterField& water) {
  write_atomically(path, [&](Writer& w) {
    write_header(w);
    w.u32(kWaterFragment);
    write_water(w, water);
  });
}

WaterField load_water_fragment(const std::string& path) {
  auto is = open_input(path);
  Reader r(is, path);
  read_header(r);
  if (r.u32() != kWaterFragment) throw IoError("not a water fragment: " + path);
  return read_water(r);
}

}  // namespace aquags
