#pragma once

#include <cstdint>

#include "retrofit/dense_map.hpp"

namespace retrofit {

enum class GeometryKind : std::uint8_t { kDepth, kPointmap };

struct SceneSample {
  DenseMap rgb;
  DenseMap gt_geo;  // depth (1 channel) or pointmap (3 channels)
  ValidityMask mask;
  std::uint64_t seed = 0;
};

struct SceneConfig {
  int height = 512;
  int width = 512;
  int n_objects = 24;
  GeometryKind kind = GeometryKind::kDepth;
  // Fronto-parallel: flat background and untilted objects.
  bool flat = false;
  bool rectangles_only = false;
  // Multiplies object extents (not bar widths); lets a large frame hold many
  // objects at the feature size of a small one.
  double object_scale = 1.0;
};

/// Background depth ramp plus rectangles, ellipses and thin bars at distinct
/// depths; rgb is Lambertian shading of the depth surface times a textured
/// per-object albedo.
SceneSample synth_scene(std::uint64_t seed, const SceneConfig& cfg);

// Depth of every pixel: the map itself, or the z channel of a pointmap.
DenseMap depth_channel(const DenseMap& geo);

// Fraction of pixels with a 4-neighbour depth jump above `rel_jump` times the
// depth range.
double boundary_fraction(const DenseMap& depth, double rel_jump = 0.05);

struct BackboneOutput {
  DenseMap coarse_lr;
  DenseMap logits_lr;
  int long_side_used = 0;
};

struct BackboneConfig {
  int long_side = 256;
  int k_bins = 4;
  double noise_sigma = 0.01;
  std::uint64_t seed = 0;
};

/// Behavioural stand-in for a frozen backbone.
///
/// coarse_lr is the area-downsampled ground truth plus Gaussian noise of
/// noise_sigma times the depth range. logits_lr holds, per low-resolution
/// cell, the log of a soft depth histogram of the full-resolution pixels
/// that upsample from that cell. Bins are range / k_bins wide; the grid is
/// shifted by under half a bin so the cell's lower median sits at a bin
/// centre, and every sample is smoothed by a box of +-half a bin.
BackboneOutput synthetic_backbone(const SceneSample& scene, const BackboneConfig& cfg);

// Scene and backbone settings used together.
struct ScenePreset {
  SceneConfig scene;
  BackboneConfig backbone;
};

// 512 x 512, 24 objects, backbone long side 64 (8 x 8 pixel cells).
ScenePreset desk_preset(GeometryKind kind = GeometryKind::kDepth);
// 2048 x 1536, 288 objects at a third of the size, backbone long side 256:
// the same 8 x 8 cells and object density as the desk preset.
ScenePreset preset_2k(GeometryKind kind = GeometryKind::kDepth);

// Throws InvalidArgument unless coarse and logits agree in size, logits have
// at least two channels and the coarse map has a geometry kind.
void validate_backbone(const BackboneOutput& out);

}  // namespace retrofit
