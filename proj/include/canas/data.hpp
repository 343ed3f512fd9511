#pragma once

#include <filesystem>
#include <fstream>

#include "canas/ops.hpp"
#include "canas/serialize.hpp"

namespace canas {

enum class ShapeKind { Square, Disk, Cross, Ring };

inline std::string_view shape_name(ShapeKind s) {
  switch (s) {
    case ShapeKind::Square: return "square";
    case ShapeKind::Disk: return "disk";
    case ShapeKind::Cross: return "cross";
    case ShapeKind::Ring: return "ring";
  }
  return "?";
}

/// How one class draws its images: a colored shape on a dark background.
struct ClassRecipe {
  ShapeKind shape = ShapeKind::Square;
  std::array<double, 3> color{0.0, 0.0, 0.0};  // in [-1, 1]
  double radius = 0.3;                          // fraction of the image size
  int jitter = 2;                               // max position offset in pixels
  double noise = 0.05;                          // pixel noise stddev

  bool operator==(const ClassRecipe&) const = default;
};

struct ToyDatasetSpec {
  std::size_t classes = 10;
  std::size_t image_size = 32;
  std::size_t samples_per_class = 500;
  int jitter = 2;
  double noise = 0.05;
  std::uint64_t seed = 0;

  /// Shapes cycle every four classes and hues are evenly spaced, so any two
  /// classes differ in shape, color or both.
  std::vector<ClassRecipe> recipes() const {
    std::vector<ClassRecipe> out(classes);
    for (std::size_t k = 0; k < classes; ++k) {
      out[k].shape = static_cast<ShapeKind>(k % 4);
      out[k].color = hsv_color(static_cast<double>(k) / static_cast<double>(classes));
      out[k].jitter = jitter;
      out[k].noise = noise;
    }
    return out;
  }

  void validate() const {
    if (classes == 0) throw std::invalid_argument("data.classes: must be >= 1");
    if (image_size < 4) throw std::invalid_argument("data.image_size: must be >= 4");
    if (samples_per_class == 0) throw std::invalid_argument("data.samples_per_class: must be >= 1");
    if (jitter < 0) throw std::invalid_argument("data.jitter: must be >= 0");
    if (!(noise >= 0.0)) throw std::invalid_argument("data.noise: must be >= 0");
  }

 private:
  static std::array<double, 3> hsv_color(double hue) {
    const double s = 0.8, v = 0.95;
    const double h = hue * 6.0;
    const int i = static_cast<int>(h) % 6;
    const double f = h - std::floor(h);
    const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
    std::array<double, 3> rgb;
    switch (i) {
      case 0: rgb = {v, t, p}; break;
      case 1: rgb = {q, v, p}; break;
      case 2: rgb = {p, v, t}; break;
      case 3: rgb = {p, q, v}; break;
      case 4: rgb = {t, p, v}; break;
      default: rgb = {v, p, q}; break;
    }
    for (double& c : rgb) c = 2.0 * c - 1.0;
    return rgb;
  }
};

/// Images [n, 3, s, s] in [-1, 1] with one class label per row.
struct LabeledImages {
  Tensor images;
  std::vector<std::size_t> labels;
  std::size_t classes = 0;

  std::size_t size() const { return labels.size(); }
  std::size_t image_size() const { return images.dim(2); }

  std::vector<std::size_t> indices_of(std::size_t k) const {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == k) idx.push_back(i);
    return idx;
  }

  LabeledImages subset(std::span<const std::size_t> rows) const {
    Tape untracked(false);
    LabeledImages out{take_rows(untracked, images, rows), {}, classes};
    for (std::size_t r : rows) out.labels.push_back(labels.at(r));
    return out;
  }
};

inline constexpr double kBackground = -0.8;

inline void draw_sample(const ClassRecipe& r, std::size_t size, Rng& rng, std::span<double> pixels) {
  std::uniform_int_distribution<int> shift(-r.jitter, r.jitter);
  std::normal_distribution<double> noise(0.0, 1.0);
  const double cx = (static_cast<double>(size) - 1.0) / 2.0 + shift(rng);
  const double cy = (static_cast<double>(size) - 1.0) / 2.0 + shift(rng);
  const double rad = r.radius * static_cast<double>(size);
  const std::size_t plane = size * size;
  for (std::size_t yy = 0; yy < size; ++yy)
    for (std::size_t xx = 0; xx < size; ++xx) {
      const double dx = std::abs(static_cast<double>(xx) - cx), dy = std::abs(static_cast<double>(yy) - cy);
      const double dist = std::sqrt(dx * dx + dy * dy);
      bool inside = false;
      switch (r.shape) {
        case ShapeKind::Square: inside = dx <= rad && dy <= rad; break;
        case ShapeKind::Disk: inside = dist <= rad; break;
        case ShapeKind::Cross: inside = (dx <= rad / 3 && dy <= rad) || (dy <= rad / 3 && dx <= rad); break;
        case ShapeKind::Ring: inside = dist <= rad && dist >= rad / 2; break;
      }
      for (std::size_t c = 0; c < 3; ++c) {
        double v = inside ? r.color[c] : kBackground;
        if (r.noise > 0.0) v += r.noise * noise(rng);
        pixels[c * plane + yy * size + xx] = std::clamp(v, -1.0, 1.0);
      }
    }
}

/// Class-major synthesis: samples_per_class images for each class in turn.
inline LabeledImages make_toy_dataset(const ToyDatasetSpec& spec) {
  spec.validate();
  const auto recipes = spec.recipes();
  const std::size_t n = spec.classes * spec.samples_per_class, s = spec.image_size, per = 3 * s * s;
  Tensor images({n, 3, s, s});
  LabeledImages out{images, {}, spec.classes};
  out.labels.reserve(n);
  Rng rng = make_rng(spec.seed, 0xda7a);
  for (std::size_t k = 0; k < spec.classes; ++k)
    for (std::size_t i = 0; i < spec.samples_per_class; ++i) {
      const std::size_t row = out.labels.size();
      draw_sample(recipes[k], s, rng, images.values().subspan(row * per, per));
      out.labels.push_back(k);
    }
  return out;
}

/// Epoch-shuffled batches over a labeled set; wraps around when exhausted.
class BatchSampler {
 public:
  BatchSampler(std::vector<std::size_t> pool, Rng rng) : pool_(std::move(pool)), rng_(std::move(rng)) {
    if (pool_.empty()) throw std::invalid_argument("batch sampler: no samples");
    reshuffle();
  }

  std::vector<std::size_t> next(std::size_t batch) {
    std::vector<std::size_t> out;
    out.reserve(batch);
    while (out.size() < batch) {
      if (pos_ == pool_.size()) reshuffle();
      out.push_back(pool_[pos_++]);
    }
    return out;
  }

  std::size_t epochs() const { return epochs_; }

 private:
  void reshuffle() {
    std::shuffle(pool_.begin(), pool_.end(), rng_);
    pos_ = 0;
    ++epochs_;
  }

  std::vector<std::size_t> pool_;
  Rng rng_;
  std::size_t pos_ = 0;
  std::size_t epochs_ = 0;
};

// On-disk layout: <dir>/class_<k>/<index>.ppm (binary P6, 8-bit) plus
// <dir>/manifest.json listing {path, label} for every file.

inline std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround((std::clamp(v, -1.0, 1.0) + 1.0) * 127.5));
}
inline double from_byte(std::uint8_t b) { return static_cast<double>(b) / 127.5 - 1.0; }

inline void write_ppm(const std::filesystem::path& path, std::span<const double> chw, std::size_t size) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "P6\n" << size << ' ' << size << "\n255\n";
  const std::size_t plane = size * size;
  std::vector<char> buf(3 * plane);
  for (std::size_t p = 0; p < plane; ++p)
    for (std::size_t c = 0; c < 3; ++c) buf[3 * p + c] = static_cast<char>(to_byte(chw[c * plane + p]));
  os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

/// Reads a binary PPM into CHW doubles in [-1, 1]; returns the side length.
inline std::size_t read_ppm(const std::filesystem::path& path, std::vector<double>& chw) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + path.string());
  std::string magic;
  std::size_t w = 0, h = 0, maxval = 0;
  is >> magic >> w >> h >> maxval;
  if (magic != "P6" || maxval != 255 || w == 0 || w != h) {
    throw std::runtime_error(path.string() + ": expected a square 8-bit binary PPM");
  }
  is.get();
  const std::size_t plane = w * h;
  std::vector<char> buf(3 * plane);
  if (!is.read(buf.data(), static_cast<std::streamsize>(buf.size()))) {
    throw std::runtime_error(path.string() + ": truncated pixel data");
  }
  chw.assign(3 * plane, 0.0);
  for (std::size_t p = 0; p < plane; ++p)
    for (std::size_t c = 0; c < 3; ++c) chw[c * plane + p] = from_byte(static_cast<std::uint8_t>(buf[3 * p + c]));
  return w;
}

inline void save_dataset(const std::filesystem::path& dir, const LabeledImages& data, const std::string& config_hash) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const std::size_t s = data.image_size(), per = 3 * s * s;
  nlohmann::json files = nlohmann::json::array();
  std::vector<std::size_t> counter(data.classes, 0);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const std::size_t k = data.labels[i];
    char name[64];
    std::snprintf(name, sizeof name, "class_%03zu/%05zu.ppm", k, counter[k]++);
    fs::create_directories(dir / fs::path(name).parent_path());
    write_ppm(dir / name, data.images.values().subspan(i * per, per), s);
    files.push_back({{"path", name}, {"label", k}});
  }
  nlohmann::json manifest = {{"format", "canas-dataset"}, {"version", 1},      {"classes", data.classes},
                             {"image_size", s},           {"files", files}};
  if (!config_hash.empty()) manifest["config_hash"] = config_hash;
  write_text(dir / "manifest.json", dump_json(manifest));
}

struct LoadedDataset {
  LabeledImages data;
  std::string config_hash;
};

/// Loads a dataset directory. With a manifest the listed files are used;
/// otherwise every class_* (or any) subdirectory in sorted order becomes one
/// class and its *.ppm files, sorted by name, its samples.
inline LoadedDataset load_dataset(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw std::runtime_error("dataset directory not found: " + dir.string());
  std::vector<std::pair<fs::path, std::size_t>> files;
  std::size_t classes = 0;
  std::string hash;
  if (fs::exists(dir / "manifest.json")) {
    const auto m = read_json(dir / "manifest.json");
    classes = m.at("classes").get<std::size_t>();
    for (const auto& f : m.at("files")) files.emplace_back(dir / f.at("path").get<std::string>(), f.at("label").get<std::size_t>());
    if (m.contains("config_hash")) hash = m.at("config_hash").get<std::string>();
  } else {
    std::vector<fs::path> subdirs;
    for (const auto& e : fs::directory_iterator(dir))
      if (e.is_directory()) subdirs.push_back(e.path());
    std::sort(subdirs.begin(), subdirs.end());
    classes = subdirs.size();
    for (std::size_t k = 0; k < subdirs.size(); ++k) {
      std::vector<fs::path> imgs;
      for (const auto& e : fs::directory_iterator(subdirs[k]))
        if (e.path().extension() == ".ppm") imgs.push_back(e.path());
      std::sort(imgs.begin(), imgs.end());
      for (auto& p : imgs) files.emplace_back(p, k);
    }
  }
  if (files.empty()) throw std::runtime_error("dataset " + dir.string() + " contains no images");
  std::vector<double> chw;
  const std::size_t s = read_ppm(files.front().first, chw), per = 3 * s * s;
  Tensor images({files.size(), 3, s, s});
  LoadedDataset out{{images, {}, classes}, hash};
  for (std::size_t i = 0; i < files.size(); ++i) {
    if (files[i].second >= classes) throw std::out_of_range("dataset: label out of range in " + files[i].first.string());
    if (read_ppm(files[i].first, chw) != s) throw DimensionError("dataset: mixed image sizes");
    std::copy(chw.begin(), chw.end(), images.values().begin() + static_cast<std::ptrdiff_t>(i * per));
    out.data.labels.push_back(files[i].second);
  }
  return out;
}

}  // namespace canas
