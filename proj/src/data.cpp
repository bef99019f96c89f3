#include "nact/data.hpp"

#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <vector>

namespace nact {
namespace {

void require(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) throw Error(code, what);
}

constexpr int kRecordBytes = 3073;
constexpr int kPixels = 3072;
constexpr int kPlane = 1024;  // 32x32 pixels per color plane
constexpr int kSide = 32;

void read_batch(const std::filesystem::path& file, Dataset& out) {
  std::ifstream in(file, std::ios::binary);
  require(in.good(), ErrorCode::Io, "cannot open " + file.string());
  in.seekg(0, std::ios::end);
  const std::streamoff size = in.tellg();
  require(size > 0 && size % kRecordBytes == 0, ErrorCode::Io,
          file.string() + " is not a whole number of 3073-byte records");
  in.seekg(0, std::ios::beg);
  const std::size_t records = static_cast<std::size_t>(size) / kRecordBytes;
  std::vector<unsigned char> buf(kRecordBytes);
  for (std::size_t r = 0; r < records; ++r) {
    in.read(reinterpret_cast<char*>(buf.data()), kRecordBytes);
    require(in.gcount() == kRecordBytes, ErrorCode::Io,
            "short read from " + file.string());
    require(buf[0] <= 9, ErrorCode::Io,
            "label byte out of range in " + file.string());
    Eigen::VectorXd v(kPixels);
    for (int i = 0; i < kPixels; ++i) v[i] = buf[i + 1] / 255.0;
    out.inputs.push_back(std::move(v));
    out.labels.push_back(buf[0]);
  }
}

}  // namespace

Cifar10 load_cifar10(const std::string& dir) {
  const std::filesystem::path base(dir);
  Cifar10 out;
  for (int b = 1; b <= 5; ++b) {
    read_batch(base / ("data_batch_" + std::to_string(b) + ".bin"), out.train);
  }
  read_batch(base / "test_batch.bin", out.test);

  for (const Eigen::VectorXd& v : out.train.inputs) {
    for (int ch = 0; ch < 3; ++ch) {
      out.channel_mean[ch] += v.segment(ch * kPlane, kPlane).sum();
    }
  }
  const double denom =
      static_cast<double>(out.train.inputs.size()) * static_cast<double>(kPlane);
  for (int ch = 0; ch < 3; ++ch) out.channel_mean[ch] /= denom;
  for (Dataset* split : {&out.train, &out.test}) {
    for (Eigen::VectorXd& v : split->inputs) {
      for (int ch = 0; ch < 3; ++ch) {
        v.segment(ch * kPlane, kPlane).array() -= out.channel_mean[ch];
      }
    }
  }
  return out;
}

Dataset two_moons(int n_per_class, double noise, std::uint64_t seed) {
  require(n_per_class > 0, ErrorCode::InvalidArgument,
          "n_per_class must be positive");
  require(noise >= 0.0 && std::isfinite(noise), ErrorCode::InvalidArgument,
          "noise must be finite and nonnegative");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> angle(0.0, std::numbers::pi);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Dataset data;
  data.inputs.reserve(2 * static_cast<std::size_t>(n_per_class));
  Eigen::Vector2d mean = Eigen::Vector2d::Zero();
  for (int i = 0; i < n_per_class; ++i) {
    const double t0 = angle(rng);
    Eigen::VectorXd p0(2);
    p0 << std::cos(t0) + noise * gauss(rng), std::sin(t0) + noise * gauss(rng);
    data.inputs.push_back(p0);
    data.labels.push_back(0);
    const double t1 = angle(rng);
    Eigen::VectorXd p1(2);
    p1 << 1.0 - std::cos(t1) + noise * gauss(rng),
        0.5 - std::sin(t1) + noise * gauss(rng);
    data.inputs.push_back(p1);
    data.labels.push_back(1);
    mean += p0 + p1;
  }
  mean /= static_cast<double>(data.inputs.size());
  for (Eigen::VectorXd& v : data.inputs) v -= mean;
  return data;
}

Eigen::VectorXd augment_cifar_image(const Eigen::VectorXd& image,
                                    std::mt19937_64& rng) {
  require(image.size() == kPixels, ErrorCode::InvalidArgument,
          "expected a 3072-component image");
  std::uniform_int_distribution<int> shift(0, 8);
  const int dy = shift(rng) - 4;
  const int dx = shift(rng) - 4;
  const bool flip = std::uniform_int_distribution<int>(0, 1)(rng) == 1;
  Eigen::VectorXd out(kPixels);
  for (int ch = 0; ch < 3; ++ch) {
    for (int r = 0; r < kSide; ++r) {
      for (int c = 0; c < kSide; ++c) {
        const int sr = r + dy;
        const int sc = (flip ? kSide - 1 - c : c) + dx;
        const bool inside = sr >= 0 && sr < kSide && sc >= 0 && sc < kSide;
        out[ch * kPlane + r * kSide + c] =
            inside ? image[ch * kPlane + sr * kSide + sc] : 0.0;
      }
    }
  }
  return out;
}

}  // namespace nact
