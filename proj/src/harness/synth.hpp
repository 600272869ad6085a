// Copyright 2026 The ETRIS Desk Authors
// SPDX-License-Identifier: Apache-2.0

// Synthetic referring-segmentation scenes: 2-4 coloured shapes on a dark
// background and a templated expression that picks out exactly one of them.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "objective/objective.hpp"

namespace etris::harness {

enum class ShapeKind { circle, square, triangle };

struct ShapeSpec {
  ShapeKind kind = ShapeKind::circle;
  int color = 0;  // index into shape_colors()
  bool large = false;
  double cx = 0, cy = 0, r = 0;
};

struct Rgb {
  std::uint8_t r, g, b;
};

const std::vector<std::string>& color_names();
const std::vector<Rgb>& shape_colors();
std::string shape_name(ShapeKind kind);

// Rasterization rule, tested at pixel centres (x + 0.5, y + 0.5).
bool shape_contains(const ShapeSpec& shape, double px, double py);
// Radius of a circle centred on the shape that encloses it.
double bounding_radius(const ShapeSpec& shape);

struct Sample {
  int image_size = 0;
  std::vector<std::uint8_t> rgb;  // H*W*3, row-major, interleaved
  objective::BinaryMask mask;     // H x W
  std::string expression;
  std::vector<int> tokens;  // padded to max_len
  int eos = 0;
};

struct Scene {
  std::vector<ShapeSpec> shapes;
  int target = 0;
  std::string expression;
};

// Deterministic in (seed, index). Throws InternalError after 100 scenes
// without an unambiguous expression.
Scene generate_scene(std::uint64_t seed, std::uint64_t index, int image_size);
Sample render_scene(const Scene& scene, int image_size, int max_len);
Sample generate_sample(std::uint64_t seed, std::uint64_t index, int image_size, int max_len);

// Every expression the grammar can emit.
std::vector<std::string> grammar_expressions();
std::string grammar_hash();

struct Dataset {
  std::uint64_t seed = 0;
  int image_size = 0;
  int max_len = 0;
  std::vector<Sample> samples;
};

// Writes <dir>/manifest.json and <dir>/NNNNN/{image.ppm, mask.pgm, tokens.json}.
void synth_generate(const std::string& dir, int n, std::uint64_t seed, int image_size, int max_len = 17);
Dataset load_dataset(const std::string& dir);

void write_ppm(const std::string& path, int width, int height, const std::vector<std::uint8_t>& rgb);
std::vector<std::uint8_t> read_ppm(const std::string& path, int& width, int& height);
void write_pgm(const std::string& path, const objective::BinaryMask& mask);
objective::BinaryMask read_pgm(const std::string& path);

}  // namespace etris::harness
