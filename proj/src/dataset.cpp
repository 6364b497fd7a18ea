#include "spnet/dataset.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

namespace spnet {

template <typename T>
Tensor<T> Dataset::batch(std::span<const std::size_t> indices) const {
  const Shape& s = images.shape();
  const std::size_t sample = static_cast<std::size_t>(s.c) * s.h * s.w;
  Tensor<T> out({static_cast<int>(indices.size()), s.c, s.h, s.w});
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const float* src = images.data() + indices[k] * sample;
    T* dst = out.data() + k * sample;
    for (std::size_t i = 0; i < sample; ++i) dst[i] = static_cast<T>(src[i]);
  }
  return out;
}

template Tensor<float> Dataset::batch<float>(std::span<const std::size_t>) const;
template Tensor<double> Dataset::batch<double>(std::span<const std::size_t>) const;

std::vector<int> Dataset::batch_labels(std::span<const std::size_t> indices) const {
  std::vector<int> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(labels.at(i));
  return out;
}

std::vector<std::uint8_t> Dataset::bytes() const {
  std::vector<std::uint8_t> out(images.size() * sizeof(float) + labels.size() * sizeof(int));
  std::memcpy(out.data(), images.data(), images.size() * sizeof(float));
  std::memcpy(out.data() + images.size() * sizeof(float), labels.data(),
              labels.size() * sizeof(int));
  return out;
}

Dataset make_synthetic(const SyntheticSpec& spec) {
  if (spec.classes < 1 || spec.samples < 1 || spec.channels < 1 || spec.height < 1 ||
      spec.width < 1) {
    throw std::invalid_argument("synthetic dataset dimensions must be positive");
  }
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  const std::size_t plane = static_cast<std::size_t>(spec.height) * spec.width;
  const std::size_t sample = plane * spec.channels;
  std::vector<std::vector<double>> means(spec.classes, std::vector<double>(sample));
  for (auto& m : means) {
    for (int c = 0; c < spec.channels; ++c) {
      const double offset = normal(rng);
      const double fy = 1.0 + 2.0 * uniform(rng);
      const double fx = 1.0 + 2.0 * uniform(rng);
      const double phase = 2.0 * std::numbers::pi * uniform(rng);
      for (int y = 0; y < spec.height; ++y) {
        for (int x = 0; x < spec.width; ++x) {
          const double wave = std::sin(2.0 * std::numbers::pi *
                                           (fy * y / spec.height + fx * x / spec.width) +
                                       phase);
          m[c * plane + y * spec.width + x] = offset + 0.5 * wave;
        }
      }
    }
  }
  Dataset d;
  d.num_classes = spec.classes;
  d.images = Tensor<float>({spec.samples, spec.channels, spec.height, spec.width});
  d.labels.resize(spec.samples);
  for (int n = 0; n < spec.samples; ++n) {
    const int y = n % spec.classes;
    d.labels[n] = y;
    float* dst = d.images.data() + static_cast<std::size_t>(n) * sample;
    for (std::size_t i = 0; i < sample; ++i) {
      dst[i] = static_cast<float>(spec.separation * means[y][i] + spec.noise * normal(rng));
    }
  }
  return d;
}

namespace {

std::uint32_t read_be32(std::istream& in, const std::string& path) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw FormatError(path + ": truncated IDX header");
  return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) |
         std::uint32_t{b[3]};
}

std::ifstream open_binary(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path);
  return in;
}

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  std::ifstream img = open_binary(images_path);
  const std::uint32_t magic = read_be32(img, images_path);
  if (magic != 0x00000803 && magic != 0x00000804) {
    std::ostringstream os;
    os << images_path << ": bad IDX image magic 0x" << std::hex << magic << " (want 0x00000803)";
    throw FormatError(os.str());
  }
  const std::uint32_t n = read_be32(img, images_path);
  std::uint32_t c = 1;
  if (magic == 0x00000804) c = read_be32(img, images_path);
  const std::uint32_t h = read_be32(img, images_path);
  const std::uint32_t w = read_be32(img, images_path);

  std::ifstream lab = open_binary(labels_path);
  const std::uint32_t lmagic = read_be32(lab, labels_path);
  if (lmagic != 0x00000801) {
    std::ostringstream os;
    os << labels_path << ": bad IDX label magic 0x" << std::hex << lmagic << " (want 0x00000801)";
    throw FormatError(os.str());
  }
  const std::uint32_t ln = read_be32(lab, labels_path);
  if (ln != n) {
    throw FormatError(labels_path + ": " + std::to_string(ln) + " labels for " +
                      std::to_string(n) + " images");
  }
  Dataset d;
  d.images = Tensor<float>({static_cast<int>(n), static_cast<int>(c), static_cast<int>(h),
                            static_cast<int>(w)});
  std::vector<unsigned char> buf(d.images.size());
  if (!img.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()))) {
    throw FormatError(images_path + ": truncated pixel data");
  }
  for (std::size_t i = 0; i < buf.size(); ++i) d.images[i] = buf[i] / 255.0f;
  std::vector<unsigned char> lbuf(n);
  if (!lab.read(reinterpret_cast<char*>(lbuf.data()), static_cast<std::streamsize>(n))) {
    throw FormatError(labels_path + ": truncated label data");
  }
  d.labels.assign(lbuf.begin(), lbuf.end());
  for (int y : d.labels) d.num_classes = std::max(d.num_classes, y + 1);
  return d;
}

Dataset load_csv(const std::string& path, int channels, int height, int width) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path);
  const std::size_t sample = static_cast<std::size_t>(channels) * height * width;
  std::vector<float> pixels;
  Dataset d;
  std::string line;
  int row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty() || line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != sample + 1) {
      throw FormatError(path + ": row " + std::to_string(row) + " has " +
                        std::to_string(cells.size() ? cells.size() - 1 : 0) +
                        " pixel values, expected " + std::to_string(sample));
    }
    try {
      std::size_t used = 0;
      const int y = std::stoi(cells[0], &used);
      if (y < 0) throw std::invalid_argument("negative label");
      d.labels.push_back(y);
      d.num_classes = std::max(d.num_classes, y + 1);
      for (std::size_t i = 1; i < cells.size(); ++i) pixels.push_back(std::stof(cells[i]));
    } catch (const std::exception&) {
      throw FormatError(path + ": row " + std::to_string(row) + " is not numeric");
    }
  }
  d.images = Tensor<float>({static_cast<int>(d.labels.size()), channels, height, width},
                           std::move(pixels));
  return d;
}

Dataset load_dataset(const DatasetSource& source) {
  switch (source.kind) {
    case DatasetSource::Kind::synthetic:
      return make_synthetic(source.synthetic);
    case DatasetSource::Kind::idx:
      return load_idx(source.images_path, source.labels_path);
    case DatasetSource::Kind::csv:
      return load_csv(source.images_path, source.synthetic.channels, source.synthetic.height,
                      source.synthetic.width);
  }
  throw std::invalid_argument("unknown dataset kind");
}

}  // namespace spnet
