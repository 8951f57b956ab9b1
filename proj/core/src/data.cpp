#include "anatomist/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "anatomist/errors.hpp"

namespace ana {

namespace {

struct EllipseParams {
  double cx, cy, ax, ay, intensity;
};

struct SegmentParams {
  double x0, y0, x1, y1, sigma, intensity;
};

// Soft-edged ellipse: full intensity inside radius 1-w, fading to 0 at 1.
void render_ellipse(Mat& img, const EllipseParams& e, double edge = 0.15) {
  const int rows = static_cast<int>(img.rows()), cols = static_cast<int>(img.cols());
  const int x0 = std::max(0, static_cast<int>(std::floor(e.cx - e.ax - 2)));
  const int x1 = std::min(cols - 1, static_cast<int>(std::ceil(e.cx + e.ax + 2)));
  const int y0 = std::max(0, static_cast<int>(std::floor(e.cy - e.ay - 2)));
  const int y1 = std::min(rows - 1, static_cast<int>(std::ceil(e.cy + e.ay + 2)));
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      const double dx = (x - e.cx) / e.ax;
      const double dy = (y - e.cy) / e.ay;
      const double rho = std::sqrt(dx * dx + dy * dy);
      if (rho >= 1.0) continue;
      double w = 1.0;
      if (rho > 1.0 - edge) {
        const double t = (1.0 - rho) / edge;
        w = t * t * (3.0 - 2.0 * t);
      }
      img(y, x) += e.intensity * w;
    }
}

// Gaussian-profile band along a straight segment.
void render_segment(Mat& img, const SegmentParams& s) {
  const int rows = static_cast<int>(img.rows()), cols = static_cast<int>(img.cols());
  const double reach = 3.0 * s.sigma;
  const int x0 = std::max(0, static_cast<int>(std::floor(std::min(s.x0, s.x1) - reach)));
  const int x1 = std::min(cols - 1, static_cast<int>(std::ceil(std::max(s.x0, s.x1) + reach)));
  const int y0 = std::max(0, static_cast<int>(std::floor(std::min(s.y0, s.y1) - reach)));
  const int y1 = std::min(rows - 1, static_cast<int>(std::ceil(std::max(s.y0, s.y1) + reach)));
  const double vx = s.x1 - s.x0, vy = s.y1 - s.y0;
  const double len_sq = vx * vx + vy * vy;
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      const double t = len_sq > 0 ? std::clamp(((x - s.x0) * vx + (y - s.y0) * vy) / len_sq, 0.0, 1.0) : 0.0;
      const double px = s.x0 + t * vx, py = s.y0 + t * vy;
      const double d_sq = (x - px) * (x - px) + (y - py) * (y - py);
      img(y, x) += s.intensity * std::exp(-0.5 * d_sq / (s.sigma * s.sigma));
    }
}

// Rib arc: gaussian band along a sagging parametric curve from the spine
// side to the lateral lung edge.
void render_arc(Mat& img, double x0, double y0, double x1, double y1, double sag, double sigma,
                double intensity) {
  constexpr int kSamples = 24;
  double px = x0, py = y0;
  for (int i = 1; i <= kSamples; ++i) {
    const double t = static_cast<double>(i) / kSamples;
    const double cx = x0 + t * (x1 - x0);
    const double cy = y0 + t * (y1 - y0) + sag * std::sin(M_PI * t);
    render_segment(img, {px, py, cx, cy, sigma, intensity});
    px = cx;
    py = cy;
  }
}

int clamp_coord(double v, int size) {
  return std::clamp(static_cast<int>(std::lround(v)), 0, size - 1);
}

}  // namespace

void PhantomSpec::validate() const {
  if (image_pixels < 32) throw ConfigError("PhantomSpec: image_pixels must be >= 32");
  if (n_ribs < 0) throw ConfigError("PhantomSpec: n_ribs must be >= 0");
  if (pos_sigma < 0 || scale_sigma < 0 || intensity_sigma < 0 || noise < 0)
    throw ConfigError("PhantomSpec: sigmas must be >= 0");
  // Worst case: lateral lung edge at 3-sigma position and scale jitter.
  const double s = image_pixels;
  const double max_extent = 0.32 * s + 0.16 * s * std::exp(3.0 * scale_sigma) + 3.0 * 1.5 * pos_sigma;
  if (max_extent >= s)
    throw ConfigError("PhantomSpec: structures can leave image bounds at 3-sigma jitter (extent " +
                      std::to_string(max_extent) + " vs size " + std::to_string(s) + ")");
}

const std::vector<std::string>& phantom_landmark_names() {
  static const std::vector<std::string> names = {
      "right_lung_apex",    "left_lung_apex",          "right_costophrenic_angle",
      "left_costophrenic_angle", "right_lung_lateral", "left_lung_lateral",
      "heart_apex",         "heart_top",               "right_clavicle_mid",
      "left_clavicle_mid",  "carina",                  "spine_top",
      "spine_bottom"};
  return names;
}

const std::vector<std::string>& localizability_landmark_names() {
  static const std::vector<std::string> names = {
      "right_lung_apex", "left_lung_apex",   "right_costophrenic_angle", "left_costophrenic_angle",
      "heart_apex",      "heart_top",        "right_clavicle_mid",       "left_clavicle_mid",
      "carina"};
  return names;
}

std::pair<Mat, std::vector<LandmarkAnnotation>> generate_phantom(const PhantomSpec& spec,
                                                                 std::uint64_t patient_seed) {
  spec.validate();
  const double s = spec.image_pixels;
  Rng rng(mix_seed({patient_seed, 0x7068616e746f6dull}));

  // One global shift plus smaller per-structure jitter keeps the relative
  // anatomy consistent across patients.
  const double gx = rng.normal(0.0, spec.pos_sigma);
  const double gy = rng.normal(0.0, spec.pos_sigma);
  auto jitter_pos = [&](double v) { return v + rng.normal(0.0, 0.5 * spec.pos_sigma); };
  auto jitter_scale = [&]() { return std::exp(rng.normal(0.0, spec.scale_sigma)); };
  auto jitter_intensity = [&](double v) { return v * std::exp(rng.normal(0.0, spec.intensity_sigma)); };

  Mat img = Mat::Zero(spec.image_pixels, spec.image_pixels);
  std::vector<LandmarkAnnotation> landmarks;
  auto add_landmark = [&](const std::string& name, double x, double y) {
    landmarks.push_back({"", name, clamp_coord(x, spec.image_pixels), clamp_coord(y, spec.image_pixels)});
  };

  const bool lungs = spec.structures.count(StructureKind::lung_field) > 0;
  const bool heart = spec.structures.count(StructureKind::heart) > 0;
  const bool ribs = spec.structures.count(StructureKind::ribs) > 0;
  const bool clavicles = spec.structures.count(StructureKind::clavicle) > 0;
  const bool spine = spec.structures.count(StructureKind::spine) > 0;

  EllipseParams lung_r{}, lung_l{};
  {
    const double sc_r = jitter_scale();
    lung_r = {gx + jitter_pos(0.32 * s), gy + jitter_pos(0.46 * s), 0.16 * s * sc_r, 0.26 * s * sc_r,
              jitter_intensity(0.38)};
    const double sc_l = jitter_scale();
    lung_l = {gx + jitter_pos(0.68 * s), gy + jitter_pos(0.46 * s), 0.16 * s * sc_l, 0.26 * s * sc_l,
              jitter_intensity(0.38)};
    if (lungs) {
      render_ellipse(img, lung_r);
      render_ellipse(img, lung_l);
      add_landmark("right_lung_apex", lung_r.cx, lung_r.cy - 0.95 * lung_r.ay);
      add_landmark("left_lung_apex", lung_l.cx, lung_l.cy - 0.95 * lung_l.ay);
      add_landmark("right_costophrenic_angle", lung_r.cx - 0.65 * lung_r.ax, lung_r.cy + 0.65 * lung_r.ay);
      add_landmark("left_costophrenic_angle", lung_l.cx + 0.65 * lung_l.ax, lung_l.cy + 0.65 * lung_l.ay);
      add_landmark("right_lung_lateral", lung_r.cx - 0.95 * lung_r.ax, lung_r.cy);
      add_landmark("left_lung_lateral", lung_l.cx + 0.95 * lung_l.ax, lung_l.cy);
    }
  }

  if (heart) {
    const double sc = jitter_scale();
    EllipseParams h{gx + jitter_pos(0.55 * s), gy + jitter_pos(0.62 * s), 0.15 * s * sc, 0.12 * s * sc,
                    jitter_intensity(0.30)};
    render_ellipse(img, h);
    add_landmark("heart_apex", h.cx, h.cy + 0.95 * h.ay);
    add_landmark("heart_top", h.cx, h.cy - 0.95 * h.ay);
  }

  if (clavicles) {
    const double sigma = 0.012 * s;
    SegmentParams cr{gx + jitter_pos(0.18 * s), gy + jitter_pos(0.20 * s), gx + jitter_pos(0.47 * s),
                     gy + jitter_pos(0.16 * s), sigma, jitter_intensity(0.35)};
    SegmentParams cl{gx + jitter_pos(0.53 * s), gy + jitter_pos(0.16 * s), gx + jitter_pos(0.82 * s),
                     gy + jitter_pos(0.20 * s), sigma, jitter_intensity(0.35)};
    render_segment(img, cr);
    render_segment(img, cl);
    add_landmark("right_clavicle_mid", 0.5 * (cr.x0 + cr.x1), 0.5 * (cr.y0 + cr.y1));
    add_landmark("left_clavicle_mid", 0.5 * (cl.x0 + cl.x1), 0.5 * (cl.y0 + cl.y1));
  }

  if (spine) {
    const double cx = gx + jitter_pos(0.50 * s);
    const double y_top = gy + jitter_pos(0.08 * s);
    const double y_bot = gy + jitter_pos(0.92 * s);
    const double len = y_bot - y_top;
    render_segment(img, {cx, y_top, cx, y_bot, 0.035 * s, jitter_intensity(0.25)});
    add_landmark("carina", cx, y_top + 0.42 * len);
    add_landmark("spine_top", cx, y_top + 0.03 * len);
    add_landmark("spine_bottom", cx, y_bot - 0.03 * len);
  }

  if (ribs) {
    for (int side = 0; side < 2; ++side) {
      const EllipseParams& lung = side == 0 ? lung_r : lung_l;
      for (int k = 0; k < spec.n_ribs; ++k) {
        const double frac = (k + 1.0) / (spec.n_ribs + 1.0);
        const double y = lung.cy - lung.ay + 2.0 * lung.ay * frac + rng.normal(0.0, 0.3 * spec.pos_sigma);
        const double half_w = lung.ax * std::sqrt(std::max(0.05, 1.0 - (2.0 * frac - 1.0) * (2.0 * frac - 1.0)));
        const double x_in = side == 0 ? lung.cx + 0.2 * lung.ax : lung.cx - 0.2 * lung.ax;
        const double x_out = side == 0 ? lung.cx - half_w : lung.cx + half_w;
        render_arc(img, x_in, y - 0.03 * s, x_out, y + 0.02 * s, 0.015 * s, 0.008 * s,
                   jitter_intensity(0.12));
      }
    }
  }

  img = img.cwiseMin(1.0).cwiseMax(0.0);
  if (spec.noise > 0.0)
    for (long r = 0; r < img.rows(); ++r)
      for (long c = 0; c < img.cols(); ++c)
        img(r, c) = std::clamp(img(r, c) + rng.normal(0.0, spec.noise), 0.0, 1.0);

  return {img, landmarks};
}

const Image& Dataset::by_id(const std::string& id) const {
  for (const auto& item : items)
    if (item.id == id) return item;
  throw Error("Dataset: no image with id " + id);
}

Dataset make_phantom_dataset(const PhantomSpec& spec, int count, std::uint64_t seed) {
  if (count < 1) throw ConfigError("make_phantom_dataset: count must be >= 1");
  Dataset ds;
  ds.image_pixels = spec.image_pixels;
  ds.registry.target_pixels = spec.image_pixels;
  for (int i = 0; i < count; ++i) {
    auto [img, marks] = generate_phantom(spec, mix_seed({seed, static_cast<std::uint64_t>(i)}));
    char id[16];
    std::snprintf(id, sizeof(id), "p%05d", i);
    Image item;
    item.id = id;
    item.pix = img.cast<float>();
    ds.items.push_back(std::move(item));
    for (auto& m : marks) m.image_id = id;
    ds.landmarks[id] = std::move(marks);
    ds.registry.source[id] = {spec.image_pixels, spec.image_pixels};
  }
  return ds;
}

IngestResult ingest_folder(const std::string& path, const GridSpec& grid) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(path)) throw IoError("ingest_folder: " + path + " is not a directory");

  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(path))
    if (entry.is_regular_file()) files.push_back(entry.path());
  std::sort(files.begin(), files.end());

  IngestResult result;
  result.dataset.image_pixels = grid.image_pixels;
  result.dataset.registry.target_pixels = grid.image_pixels;
  for (const auto& file : files) {
    cv::Mat raw = cv::imread(file.string(), cv::IMREAD_GRAYSCALE);
    if (raw.empty()) {
      result.skipped.push_back(file.filename().string());
      continue;
    }
    Mat img(raw.rows, raw.cols);
    for (int r = 0; r < raw.rows; ++r)
      for (int c = 0; c < raw.cols; ++c) img(r, c) = raw.at<std::uint8_t>(r, c) / 255.0;
    img = resize_bilinear(img, grid.image_pixels, grid.image_pixels);

    // Per-image standardization; dataset-level statistics would couple
    // unrelated folders.
    const double mean = img.mean();
    img.array() -= mean;
    const double var = img.array().square().mean();
    if (var > 1e-12) img /= std::sqrt(var);

    std::string id = file.stem().string();
    for (const auto& existing : result.dataset.items)
      if (existing.id == id)
        throw IoError("ingest_folder: duplicate image id '" + id + "' (filename stems must be unique)");
    Image item;
    item.id = id;
    item.pix = img.cast<float>();
    result.dataset.items.push_back(std::move(item));
    result.dataset.registry.source[id] = {raw.cols, raw.rows};
  }
  if (result.dataset.items.empty())
    throw IoError("ingest_folder: no decodable images in " + path + " (" +
                  std::to_string(result.skipped.size()) + " skipped)");
  return result;
}

void write_ingest_manifest(const IngestResult& result, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("write_ingest_manifest: cannot open " + path);
  out << "loaded " << result.dataset.items.size() << "\n";
  for (const auto& name : result.skipped) out << "skipped " << name << "\n";
}

std::vector<LandmarkAnnotation> load_landmarks(const std::string& csv_path,
                                               const ImageSizeRegistry& registry) {
  std::ifstream in(csv_path);
  if (!in) throw IoError("load_landmarks: cannot open " + csv_path);
  std::string line;
  if (!std::getline(in, line)) throw IoError("load_landmarks: empty file " + csv_path);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "image_id,landmark_name,x,y")
    throw IoError("load_landmarks: bad header '" + line + "', expected 'image_id,landmark_name,x,y'");

  std::vector<LandmarkAnnotation> out;
  std::set<std::pair<std::string, std::string>> seen;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string id, name, xs, ys;
    if (!std::getline(ss, id, ',') || !std::getline(ss, name, ',') || !std::getline(ss, xs, ',') ||
        !std::getline(ss, ys, ','))
      throw IoError("load_landmarks: malformed row at line " + std::to_string(line_no));
    int x = 0, y = 0;
    try {
      std::size_t used = 0;
      x = std::stoi(xs, &used);
      if (used != xs.size()) throw std::invalid_argument(xs);
      y = std::stoi(ys, &used);
      if (used != ys.size()) throw std::invalid_argument(ys);
    } catch (const std::exception&) {
      throw IoError("load_landmarks: non-integer coordinate at line " + std::to_string(line_no));
    }
    auto it = registry.source.find(id);
    if (it == registry.source.end())
      throw IoError("load_landmarks: unknown image_id '" + id + "' at line " + std::to_string(line_no));
    const auto [src_w, src_h] = it->second;
    if (x < 0 || y < 0 || x >= src_w || y >= src_h)
      throw IoError("load_landmarks: coordinate (" + std::to_string(x) + "," + std::to_string(y) +
                    ") outside " + std::to_string(src_w) + "x" + std::to_string(src_h) + " at line " +
                    std::to_string(line_no));
    if (!seen.insert({id, name}).second)
      throw IoError("load_landmarks: duplicate (" + id + ", " + name + ") at line " +
                    std::to_string(line_no));
    if (registry.target_pixels > 0) {
      x = static_cast<int>(std::floor(static_cast<double>(x) * registry.target_pixels / src_w));
      y = static_cast<int>(std::floor(static_cast<double>(y) * registry.target_pixels / src_h));
    }
    out.push_back({id, name, x, y});
  }
  return out;
}

}  // namespace ana
