#pragma once

#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "anatomist/geometry.hpp"
#include "anatomist/image.hpp"
#include "anatomist/rng.hpp"

namespace ana {

// A named anatomical point in source-image pixel coordinates (origin
// top-left, x = column, y = row).
struct LandmarkAnnotation {
  std::string image_id;
  std::string landmark_name;
  int x = 0;
  int y = 0;
};

enum class StructureKind { lung_field, heart, ribs, clavicle, spine };

// Procedural chest-like test image: smooth overlapping structures with
// per-patient jitter and exact analytic landmark coordinates.
struct PhantomSpec {
  int image_pixels = 144;
  std::set<StructureKind> structures = {StructureKind::lung_field, StructureKind::heart,
                                        StructureKind::ribs, StructureKind::clavicle,
                                        StructureKind::spine};
  int n_ribs = 4;             // arcs per lung
  double pos_sigma = 2.5;     // pixels, per-patient position jitter
  double scale_sigma = 0.04;  // log-scale jitter
  double intensity_sigma = 0.08;
  double noise = 0.02;

  // Throws ConfigError when a structure could leave the image bounds at
  // 3-sigma jitter.
  void validate() const;
};

// The 13-point correspondence vocabulary and its 9-point localizability
// subset, in declaration order.
const std::vector<std::string>& phantom_landmark_names();
const std::vector<std::string>& localizability_landmark_names();

// Renders one patient. Intensities lie in [0, 1] before noise; noise is
// clipped back to [0, 1]. Deterministic in (spec, patient_seed).
std::pair<Mat, std::vector<LandmarkAnnotation>> generate_phantom(const PhantomSpec& spec,
                                                                 std::uint64_t patient_seed);

struct ImageSizeRegistry {
  std::map<std::string, std::pair<int, int>> source;  // image_id -> (width, height)
  int target_pixels = 0;                              // 0 = keep source coordinates
};

struct Dataset {
  std::vector<Image> items;  // all at the same resolution
  std::map<std::string, std::vector<LandmarkAnnotation>> landmarks;  // by image_id, target-res coords
  ImageSizeRegistry registry;
  int image_pixels = 0;

  const Image& by_id(const std::string& id) const;
};

Dataset make_phantom_dataset(const PhantomSpec& spec, int count, std::uint64_t seed);

struct IngestResult {
  Dataset dataset;
  std::vector<std::string> skipped;  // undecodable files, in directory order
};

// Loads every decodable raster in `path` (sorted by filename), converts to
// single channel, resizes to the grid resolution and standardizes each image
// to zero mean / unit variance. Throws when nothing decodes.
IngestResult ingest_folder(const std::string& path, const GridSpec& grid);

void write_ingest_manifest(const IngestResult& result, const std::string& path);

// Parses `image_id,landmark_name,x,y` rows, validates coordinates against
// the registry and rescales them to target_pixels (floor after proportional
// scaling). Duplicate (image_id, landmark_name) pairs are an error.
std::vector<LandmarkAnnotation> load_landmarks(const std::string& csv_path,
                                               const ImageSizeRegistry& registry);

}  // namespace ana
